#include "orbitsym/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "orbitsym/eqnets.hpp"
#include "orbitsym/errors.hpp"
#include "orbitsym/groups.hpp"
#include "orbitsym/invariants.hpp"
#include "orbitsym/symmetrization.hpp"

namespace orbitsym {

namespace {

using json = nlohmann::ordered_json;

struct Field {
  std::string name;
  std::function<json(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const json&)> set;
  bool is_string = false;
};

template <typename T>
Field field(std::string name, T ExperimentConfig::*member) {
  Field f;
  f.name = name;
  f.get = [member](const ExperimentConfig& c) { return json(c.*member); };
  f.set = [member, name](ExperimentConfig& c, const json& v) {
    try {
      // Reject silent conversions such as -1 into an unsigned count or 2.5 into an integer.
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError("expected true or false");
      } else if constexpr (std::is_unsigned_v<T>) {
        if (!v.is_number_unsigned()) throw ConfigError("expected a non-negative integer");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw ConfigError("expected a number");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError("expected a string");
      } else {
        if (!v.is_array()) throw ConfigError("expected a list");
        for (const auto& e : v)
          if (!e.is_number_unsigned()) throw ConfigError("expected a list of non-negative integers");
      }
      c.*member = v.get<T>();
    } catch (const ConfigError& e) {
      throw ConfigError("config key '" + name + "': " + e.what() + ", got " + v.dump());
    }
  };
  f.is_string = std::is_same_v<T, std::string>;
  return f;
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      field("task", &ExperimentConfig::task),
      field("method", &ExperimentConfig::method),
      field("group", &ExperimentConfig::group),
      field("lambda", &ExperimentConfig::lambda),
      field("norm", &ExperimentConfig::norm),
      field("lr", &ExperimentConfig::lr),
      field("epochs", &ExperimentConfig::epochs),
      field("batch", &ExperimentConfig::batch),
      field("seed", &ExperimentConfig::seed),
      field("samples_train", &ExperimentConfig::samples_train),
      field("samples_val", &ExperimentConfig::samples_val),
      field("samples_eval", &ExperimentConfig::samples_eval),
      field("clip", &ExperimentConfig::clip),
      field("base_hidden", &ExperimentConfig::base_hidden),
      field("sym_hidden", &ExperimentConfig::sym_hidden),
      field("sym_depth", &ExperimentConfig::sym_depth),
      field("sym_orientation", &ExperimentConfig::sym_orientation),
      field("sym_log_scalars", &ExperimentConfig::sym_log_scalars),
      field("sym_identity_init", &ExperimentConfig::sym_identity_init),
      field("noise", &ExperimentConfig::noise),
      field("d_eps", &ExperimentConfig::d_eps),
      field("combine", &ExperimentConfig::combine),
      field("input_scale", &ExperimentConfig::input_scale),
      field("invariant_project", &ExperimentConfig::invariant_project),
      field("n_train", &ExperimentConfig::n_train),
      field("n_val", &ExperimentConfig::n_val),
      field("n_test", &ExperimentConfig::n_test),
      field("boost_range", &ExperimentConfig::boost_range),
      field("data_dir", &ExperimentConfig::data_dir),
      field("mnist_images", &ExperimentConfig::mnist_images),
      field("mnist_labels", &ExperimentConfig::mnist_labels),
      field("point_threshold", &ExperimentConfig::point_threshold),
      field("point_count", &ExperimentConfig::point_count),
      field("out", &ExperimentConfig::out),
      field("wall_time", &ExperimentConfig::wall_time),
  };
  return table;
}

const Field& lookup(const std::string& key) {
  for (const Field& f : fields())
    if (f.name == key) return f;
  throw ConfigError("unknown config key '" + key + "'");
}

json parse_value(const Field& f, const std::string& text) {
  if (f.is_string) return json(text);
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    throw ConfigError("config key '" + f.name + "': cannot parse value '" + text + "'");
  }
}

json read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file " + path);
  try {
    json j = json::parse(in);
    if (!j.is_object()) throw ConfigError("config file " + path + " must hold a JSON object");
    return j;
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path + ": " + e.what());
  }
}

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const Field& f : fields()) out.push_back(f.name);
  return out;
}

ExperimentConfig default_config(const std::string& task, const std::string& method) {
  ExperimentConfig c;
  c.task = task;
  c.method = method;
  if (task == "particle") {
    c.group = "lorentz13";
    c.input_scale = 4.0;
    c.d_eps = 10;
    c.noise = "uniform-trainable";
  } else if (task == "rotated-digits") {
    c.group = "so2";
    c.lr = 1e-3;
    c.epochs = 40;
    c.batch = 100;
    c.n_train = 2000;
    c.n_val = 500;
    c.n_test = 1000;
    c.input_scale = 1.0 / 14.0;
    c.sym_orientation = true;
    c.d_eps = 10;
    c.noise = "gaussian";
  } else {
    throw ConfigError("config key 'task': must be particle or rotated-digits, got '" + task + "'");
  }
  if (method == "canonical-orbit") {
    c.noise = "deterministic";
    if (task == "rotated-digits") c.d_eps = 0;
  }
  parse_method(method);
  return c;
}

std::string config_to_json(const ExperimentConfig& config) {
  json j = json::object();
  for (const Field& f : fields()) j[f.name] = f.get(config);
  return j.dump(2);
}

ExperimentConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  const std::string task = j.contains("task") && j["task"].is_string() ? j["task"].get<std::string>() : "particle";
  const std::string method =
      j.contains("method") && j["method"].is_string() ? j["method"].get<std::string>() : "ps-orbit";
  ExperimentConfig c = default_config(task, method);
  for (const auto& [key, value] : j.items()) lookup(key).set(c, value);
  return c;
}

LoadedConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  json file = path.empty() ? json::object() : read_file(path);
  std::vector<std::pair<std::string, std::string>> sets;
  for (const std::string& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + o + "'");
    sets.emplace_back(o.substr(0, eq), o.substr(eq + 1));
    lookup(sets.back().first);
  }
  std::string task = file.contains("task") && file["task"].is_string() ? file["task"].get<std::string>() : "particle";
  std::string method =
      file.contains("method") && file["method"].is_string() ? file["method"].get<std::string>() : "ps-orbit";
  for (const auto& [k, v] : sets) {
    if (k == "task") task = v;
    if (k == "method") method = v;
  }

  LoadedConfig out;
  out.config = default_config(task, method);
  std::map<std::string, std::string> origin;
  for (const auto& [key, value] : file.items()) {
    lookup(key).set(out.config, value);
    origin[key] = path;
  }
  for (const auto& [k, v] : sets) {
    const Field& f = lookup(k);
    f.set(out.config, parse_value(f, v));
    origin[k] = "--set";
  }
  validate(out.config);
  for (const Field& f : fields()) {
    const auto it = origin.find(f.name);
    out.provenance.push_back({f.name, f.get(out.config).dump(), it == origin.end() ? "default" : it->second});
  }
  return out;
}

void validate(const ExperimentConfig& c) {
  auto fail = [](const std::string& key, const std::string& why) {
    throw ConfigError("config key '" + key + "': " + why);
  };
  if (c.task != "particle" && c.task != "rotated-digits") fail("task", "must be particle or rotated-digits");
  try {
    parse_method(c.method);
  } catch (const ConfigError& e) {
    fail("method", e.what());
  }
  GroupSpec group;
  try {
    group = parse_group(c.group);
  } catch (const std::exception& e) {
    fail("group", e.what());
  }
  if (c.task == "particle" && group.n != 4) fail("group", "particle events are 4x4; needs a group acting on R^4");
  if (c.task == "rotated-digits" && group.n != 2) fail("group", "point sets live in R^2; needs a group on R^2");
  try {
    parse_norm(c.norm);
  } catch (const ConfigError& e) {
    fail("norm", e.what());
  }
  try {
    parse_noise(c.noise);
  } catch (const ConfigError& e) {
    fail("noise", e.what());
  }
  try {
    parse_combine(c.combine);
  } catch (const ConfigError& e) {
    fail("combine", e.what());
  }
  if (!(c.lambda >= 0.0)) fail("lambda", "must be non-negative");
  if (!(c.lr > 0.0)) fail("lr", "must be positive");
  if (!(c.clip > 0.0)) fail("clip", "must be positive");
  if (!(c.input_scale > 0.0)) fail("input_scale", "must be positive");
  if (!(c.boost_range >= 0.0)) fail("boost_range", "must be non-negative");
  if (!(c.point_threshold >= 0.0 && c.point_threshold <= 1.0)) fail("point_threshold", "must lie in [0, 1]");
  if (c.batch == 0) fail("batch", "must be positive");
  if (c.samples_train == 0) fail("samples_train", "must be positive");
  if (c.samples_val == 0) fail("samples_val", "must be positive");
  if (c.samples_eval == 0) fail("samples_eval", "must be positive");
  if (c.n_train == 0) fail("n_train", "must be positive");
  if (c.n_val == 0) fail("n_val", "must be positive");
  if (c.n_test == 0) fail("n_test", "must be positive");
  if (c.sym_hidden == 0) fail("sym_hidden", "must be positive");
  if (c.sym_depth < 1) fail("sym_depth", "must be at least 1");
  if (c.point_count == 0) fail("point_count", "must be positive");
  for (std::size_t h : c.base_hidden)
    if (h == 0) fail("base_hidden", "widths must be positive");
  if (c.mnist_images.empty() != c.mnist_labels.empty()) {
    fail(c.mnist_images.empty() ? "mnist_images" : "mnist_labels", "images and labels must be given together");
  }
}

}  // namespace orbitsym
