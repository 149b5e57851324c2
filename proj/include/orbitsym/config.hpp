#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace orbitsym {

/// Everything a gen-data / train run needs. Keys in JSON and `--set` match the
/// member names.
struct ExperimentConfig {
  std::string task = "particle";  // particle | rotated-digits
  std::string method = "ps-orbit";
  std::string group = "lorentz13";
  double lambda = 1.0;
  std::string norm = "l1";
  double lr = 3e-3;
  std::size_t epochs = 300;
  std::size_t batch = 200;
  std::uint64_t seed = 0;
  std::size_t samples_train = 1;
  std::size_t samples_val = 1;
  std::size_t samples_eval = 16;
  double clip = 10.0;

  std::vector<std::size_t> base_hidden = {128, 128};
  std::size_t sym_hidden = 128;
  std::size_t sym_depth = 3;
  bool sym_orientation = false;
  bool sym_log_scalars = false;
  bool sym_identity_init = true;
  std::string noise = "uniform-trainable";
  std::size_t d_eps = 10;
  std::string combine = "concat";
  double input_scale = 4.0;
  bool invariant_project = true;

  std::size_t n_train = 2000;
  std::size_t n_val = 500;
  std::size_t n_test = 500;
  double boost_range = 1.0;
  std::string data_dir;      // particle CSVs written by gen-data; empty: generate in memory
  std::string mnist_images;  // IDX pair; empty: synthetic digits
  std::string mnist_labels;
  double point_threshold = 0.2;
  std::size_t point_count = 32;

  std::string out = "runs";
  bool wall_time = false;
};

/// Task defaults, with per-method adjustments (noise, d_eps) applied.
ExperimentConfig default_config(const std::string& task, const std::string& method);

struct ConfigSource {
  std::string key;
  std::string value;   // JSON text
  std::string origin;  // "default", file path, or "--set"
};

struct LoadedConfig {
  ExperimentConfig config;
  std::vector<ConfigSource> provenance;  // one entry per key
};

/// Defaults for the chosen task/method, then the file (if any), then the
/// overrides in order. Unknown keys, malformed values and failed validation
/// raise ConfigError naming the key.
LoadedConfig load_config(const std::string& path, const std::vector<std::string>& overrides);

std::string config_to_json(const ExperimentConfig& config);
ExperimentConfig config_from_json(const std::string& text);

/// Positive counts, known enum strings, and task/group compatibility.
void validate(const ExperimentConfig& config);

std::vector<std::string> config_keys();

}  // namespace orbitsym
