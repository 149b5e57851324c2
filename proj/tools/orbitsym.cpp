// orbitsym: gen-data | train | eval | check
//
// Exit codes: 0 success, 1 config or usage, 2 numeric failure or failed
// check, 3 IO or file format.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "orbitsym/checks.hpp"
#include "orbitsym/config.hpp"
#include "orbitsym/errors.hpp"
#include "orbitsym/experiments.hpp"
#include "orbitsym/log.hpp"

namespace fs = std::filesystem;
using namespace orbitsym;
using json = nlohmann::ordered_json;

namespace {

enum Exit { kOk = 0, kUsage = 1, kNumeric = 2, kIo = 3 };

struct CommonArgs {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
};

void add_common(CLI::App* cmd, CommonArgs& a) {
  cmd->add_option("--config", a.config, "JSON config file");
  cmd->add_option("--set", a.sets, "Override one key, K=V (repeatable)")->allow_extra_args(false);
  cmd->add_option("--seed", a.seed, "Root seed (same as --set seed=N)");
  cmd->add_option("--out", a.out, "Output directory (same as --set out=DIR)");
}

LoadedConfig resolve(const CommonArgs& a) {
  std::vector<std::string> overrides = a.sets;
  if (a.seed) overrides.push_back("seed=" + std::to_string(*a.seed));
  if (a.out) overrides.push_back("out=" + *a.out);
  LoadedConfig loaded = load_config(a.config, overrides);
  for (ConfigSource& s : loaded.provenance) {
    if (a.seed && s.key == "seed") s.origin = "--seed";
    if (a.out && s.key == "out") s.origin = "--out";
  }
  return loaded;
}

void print_provenance(const LoadedConfig& loaded) {
  std::cerr << "config: task=" << loaded.config.task << " method=" << loaded.config.method
            << " seed=" << loaded.config.seed << "\n";
  // Keys left at their defaults are not listed; a file value equal to the default is not either.
  const json defaults = json::parse(config_to_json(default_config(loaded.config.task, loaded.config.method)));
  for (const ConfigSource& s : loaded.provenance) {
    if (s.origin == "default") continue;
    if (s.origin.rfind("--", 0) != 0 && defaults.contains(s.key) && defaults[s.key] == json::parse(s.value)) continue;
    std::cerr << "  " << s.key << " = " << s.value << "  [" << s.origin << "]\n";
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

int cmd_gen_data(const CommonArgs& a) {
  const LoadedConfig loaded = resolve(a);
  print_provenance(loaded);
  write_task_data(loaded.config, loaded.config.out);
  std::cout << "wrote " << loaded.config.task << " data to " << loaded.config.out << "\n";
  return kOk;
}

int cmd_train(const CommonArgs& a) {
  const LoadedConfig loaded = resolve(a);
  print_provenance(loaded);
  const ExperimentConfig& c = loaded.config;
  const fs::path out(c.out);
  ensure_dir(out);
  write_text(out / "config.json", config_to_json(c) + "\n");

  const TaskData data = load_task_data(c);
  auto progress = [&](const EpochRecord& r) {
    if (r.epoch == 1 || r.epoch % 10 == 0 || r.epoch == c.epochs) {
      std::fprintf(stderr, "epoch %4zu  task %.5g  orbit %.5g  val %.5g  val_orbit %.5g\n", r.epoch, r.task_loss,
                   r.orbit_loss, r.val_metric, r.val_orbit_loss);
    }
  };
  ExperimentRun run = run_experiment(c, data, progress);
  const RunSummary& s = run.summary;
  write_metrics_csv(out / "metrics.csv", s.training.history);
  save_checkpoint(out / "model.osym", run.model);

  json summary;
  summary["task"] = c.task;
  summary["method"] = c.method;
  summary["seed"] = c.seed;
  summary["best_epoch"] = s.training.best_epoch;
  summary["best_val_metric"] = s.training.best_val_metric;
  summary["final_val_orbit_loss"] = s.final_val_orbit_loss;
  summary["test_metric"] = s.test_metric;
  summary["test_orbit_loss"] = s.test_orbit_loss;
  if (s.test_plain_metric) summary["test_plain_metric"] = *s.test_plain_metric;
  write_text(out / "summary.json", summary.dump(2) + "\n");

  const double final_val = s.training.history.empty() ? s.training.best_val_metric
                                                       : s.training.history.back().val_metric;
  std::cout << "final val_metric " << final_val << "  val_orbit_loss " << s.final_val_orbit_loss << "  best_epoch "
            << s.training.best_epoch << "  test_metric " << s.test_metric << "\n";
  return kOk;
}

struct EvalArgs {
  std::string checkpoint;
  std::size_t transforms = 8;
  std::size_t probe_examples = 100;
};

int cmd_eval(const CommonArgs& a, const EvalArgs& e) {
  CommonArgs args = a;
  std::string checkpoint = e.checkpoint;
  // The training run's resolved config describes the data, unless one is given.
  if (args.config.empty()) {
    const fs::path dir = checkpoint.empty() ? fs::path(a.out.value_or("runs")) : fs::path(checkpoint).parent_path();
    if (fs::exists(dir / "config.json")) args.config = (dir / "config.json").string();
  }
  const LoadedConfig loaded = resolve(args);
  print_provenance(loaded);
  const ExperimentConfig& c = loaded.config;
  if (checkpoint.empty()) checkpoint = (fs::path(c.out) / "model.osym").string();

  const SymmetrizedModel model = load_checkpoint(checkpoint);
  const TaskData data = load_task_data(c);
  const SeparatingInvariant f = model.spec().invariant();
  const EvalResult test = evaluate(model, data.test, f, c.samples_eval, test_streams(c));

  json report;
  report["checkpoint"] = checkpoint;
  report["task"] = c.task;
  report["method"] = to_string(model.spec().method);
  report["metric"] = c.task == "particle" ? "mse" : "error_rate";
  report["test_metric"] = test.metric;
  report["test_orbit_loss"] = test.orbit_loss;
  if (data.test_plain) {
    report["test_plain_metric"] = evaluate(model, *data.test_plain, f, c.samples_eval, test_streams(c)).metric;
  }
  if (e.transforms > 0) {
    const ProbeResult p =
        invariance_probe(model, data.test, f, c.samples_eval, e.transforms, e.probe_examples, derive_seed(c.seed, "eval"));
    report["probe"] = {{"transforms", p.transforms},
                       {"examples", p.examples},
                       {"max_defect", p.max_defect},
                       {"mean_defect", p.mean_defect},
                       {"mean_relative_defect", p.mean_relative_defect},
                       {"shared_noise_max_defect", p.shared_noise_max_defect}};
  }
  const std::string text = report.dump(2);
  std::cout << text << "\n";
  ensure_dir(c.out);
  write_text(fs::path(c.out) / "report.json", text + "\n");
  return kOk;
}

struct CheckArgs {
  std::string group;
  std::size_t trials = 1000;
  std::uint64_t seed = 0;
  bool extended = false;
};

int cmd_check(const CheckArgs& a) {
  const GroupSpec group = parse_group(a.group);
  std::vector<CheckRow> rows = group_property_suite(group, a.trials, a.seed);
  if (a.extended) {
    for (auto& r : gradient_suite(20, a.seed)) rows.push_back(std::move(r));
    for (auto& r : equivariance_suite(100, a.seed)) rows.push_back(std::move(r));
  }
  std::cout << format_rows(rows);
  const bool ok = all_passed(rows);
  std::cout << (ok ? "all checks passed\n" : "some checks FAILED\n");
  return ok ? kOk : kNumeric;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"orbitsym: symmetrize models over learned group elements"};
  app.require_subcommand(1);

  CommonArgs gen_args, train_args, eval_args;
  EvalArgs eval_extra;
  CheckArgs check_args;

  auto* gen = app.add_subcommand("gen-data", "Write dataset files for the configured task and seed");
  add_common(gen, gen_args);
  auto* tr = app.add_subcommand("train", "Train, then write checkpoint, metrics CSV and summary");
  add_common(tr, train_args);
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint and probe its invariance");
  add_common(ev, eval_args);
  ev->add_option("--checkpoint", eval_extra.checkpoint, "Checkpoint path (default <out>/model.osym)");
  ev->add_option("--transforms", eval_extra.transforms, "Rounds of fresh group elements in the probe");
  ev->add_option("--probe-examples", eval_extra.probe_examples, "Test examples in the probe");
  auto* ck = app.add_subcommand("check", "Run the property suites for one group");
  ck->add_option("--group", check_args.group, "Group, e.g. so2, o3, lorentz13, sl2, gl2, sym3")->required();
  ck->add_option("--trials", check_args.trials, "Random trials per property");
  ck->add_option("--seed", check_args.seed, "Seed");
  ck->add_flag("--extended", check_args.extended, "Also run the gradient and equivariance suites");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) return cmd_gen_data(gen_args);
    if (*tr) return cmd_train(train_args);
    if (*ev) return cmd_eval(eval_args, eval_extra);
    if (*ck) return cmd_check(check_args);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const DimensionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const NumericError& e) {
    std::string what = e.what();
    if (what.rfind(e.stage() + ": ", 0) == 0) what = what.substr(e.stage().size() + 2);
    std::cerr << "error: numeric failure in stage '" << e.stage() << "': " << what << "\n";
    return kNumeric;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumeric;
  }
  return kUsage;
}
