#pragma once

#include <optional>

#include "orbitsym/config.hpp"
#include "orbitsym/symmetrization.hpp"

namespace orbitsym {

struct TaskData {
  Dataset train, val, test;
  /// Rotated digits only: the test images without rotation.
  std::optional<Dataset> test_plain;
};

/// Particle events come from `data_dir` when set (train.csv, val.csv,
/// test.csv) and are generated from the "data" seed stream otherwise. Digits
/// come from the IDX pair when set and from the synthetic generator otherwise;
/// train and val are unrotated, test is rotated by the "transforms" stream.
TaskData load_task_data(const ExperimentConfig& config);

/// Writes the splits for `config` under `dir`: particle CSVs with sidecars,
/// or a digits IDX pair with a sidecar.
void write_task_data(const ExperimentConfig& config, const std::string& dir);

ModelSpec make_model_spec(const ExperimentConfig& config, const Dataset& train);
TrainOptions make_train_options(const ExperimentConfig& config);

struct RunSummary {
  TrainResult training;
  double test_metric = 0.0;
  double test_orbit_loss = 0.0;
  std::optional<double> test_plain_metric;
  double final_val_orbit_loss = 0.0;
};

struct ExperimentRun {
  SymmetrizedModel model;
  RunSummary summary;
};

ExperimentRun run_experiment(const ExperimentConfig& config, const TaskData& data,
                             const EpochCallback& on_epoch = {});

/// Noise streams used for test-set evaluation.
NoiseStreams test_streams(const ExperimentConfig& config);

struct ProbeResult {
  std::size_t transforms = 0;
  std::size_t examples = 0;
  /// |Phi(g.x) - Phi(x)| with independent noise for the two sides, so it
  /// includes Monte Carlo spread.
  double max_defect = 0.0;
  double mean_defect = 0.0;
  /// mean_defect / mean |Phi(x)|
  double mean_relative_defect = 0.0;
  /// Same comparison with the noise shared between the two sides.
  double shared_noise_max_defect = 0.0;
};

/// Moves the first `examples` test points by `transforms` rounds of fresh
/// group elements and compares model outputs (averaged logits for digits).
ProbeResult invariance_probe(const SymmetrizedModel& model, const Dataset& test, const SeparatingInvariant& f,
                             std::size_t samples, std::size_t transforms, std::size_t examples, std::uint64_t seed);

}  // namespace orbitsym
