#include "orbitsym/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "orbitsym/errors.hpp"

namespace orbitsym {

namespace fs = std::filesystem;

namespace {

ImageSet slice_images(const ImageSet& all, std::size_t begin, std::size_t count) {
  ImageSet out;
  out.pixels.assign(all.pixels.begin() + static_cast<std::ptrdiff_t>(begin * 784),
                    all.pixels.begin() + static_cast<std::ptrdiff_t>((begin + count) * 784));
  out.labels.assign(all.labels.begin() + static_cast<std::ptrdiff_t>(begin),
                    all.labels.begin() + static_cast<std::ptrdiff_t>(begin + count));
  return out;
}

ImageSet digit_images(const ExperimentConfig& c) {
  const std::size_t total = c.n_train + c.n_val + c.n_test;
  if (c.mnist_images.empty()) return generate_synthetic_digits(total, derive_seed(c.seed, "data"));
  ImageSet imgs = load_idx_digits(c.mnist_images, c.mnist_labels, total);
  if (imgs.size() < total) {
    throw ConfigError("config key 'n_train': IDX files hold " + std::to_string(imgs.size()) + " images, need " +
                      std::to_string(total));
  }
  return imgs;
}

}  // namespace

TaskData load_task_data(const ExperimentConfig& c) {
  TaskData d;
  if (c.task == "particle") {
    if (!c.data_dir.empty()) {
      const fs::path dir(c.data_dir);
      d.train = read_particle_csv(dir / "train.csv");
      d.val = read_particle_csv(dir / "val.csv");
      d.test = read_particle_csv(dir / "test.csv");
    } else {
      auto splits = generate_particle_dataset(c.n_train, c.n_val, c.n_test, derive_seed(c.seed, "data"), c.boost_range);
      d.train = std::move(splits.train);
      d.val = std::move(splits.val);
      d.test = std::move(splits.test);
    }
    return d;
  }
  ImageSet imgs;
  if (!c.data_dir.empty() && c.mnist_images.empty()) {
    const fs::path dir(c.data_dir);
    imgs = load_idx_digits(dir / "digits-images.idx", dir / "digits-labels.idx", c.n_train + c.n_val + c.n_test);
  } else {
    imgs = digit_images(c);
  }
  if (imgs.size() < c.n_train + c.n_val + c.n_test) throw ConfigError("config key 'n_train': not enough digit images");
  const ImageSet train = slice_images(imgs, 0, c.n_train);
  const ImageSet val = slice_images(imgs, c.n_train, c.n_val);
  const ImageSet test = slice_images(imgs, c.n_train + c.n_val, c.n_test);
  const std::uint64_t rot = derive_seed(c.seed, "transforms");
  d.train = build_rotated_pointset(train, c.point_threshold, c.point_count, false, rot);
  d.val = build_rotated_pointset(val, c.point_threshold, c.point_count, false, rot);
  d.test = build_rotated_pointset(test, c.point_threshold, c.point_count, true, rot);
  d.test_plain = build_rotated_pointset(test, c.point_threshold, c.point_count, false, rot);
  return d;
}

void write_task_data(const ExperimentConfig& c, const std::string& dir_text) {
  const fs::path dir(dir_text);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  if (c.task == "particle") {
    const auto splits = generate_particle_dataset(c.n_train, c.n_val, c.n_test, derive_seed(c.seed, "data"),
                                                  c.boost_range);
    SidecarInfo info;
    info.generator = "orbitsym particle";
    info.seed = c.seed;
    info.n_train = c.n_train;
    info.n_val = c.n_val;
    info.n_test = c.n_test;
    info.boost_range = c.boost_range;
    for (const auto& [name, set] : {std::pair{"train", &splits.train}, {"val", &splits.val}, {"test", &splits.test}}) {
      info.split = name;
      write_particle_csv(dir / (std::string(name) + ".csv"), *set, info);
    }
    return;
  }
  const ImageSet imgs = digit_images(c);
  IdxArray pixels{{imgs.size(), 28, 28}, {}};
  pixels.bytes.reserve(imgs.pixels.size());
  for (double v : imgs.pixels) pixels.bytes.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0)));
  IdxArray labels{{imgs.size()}, {}};
  for (int l : imgs.labels) labels.bytes.push_back(static_cast<std::uint8_t>(l));
  write_idx(dir / "digits-images.idx", pixels);
  write_idx(dir / "digits-labels.idx", labels);
  nlohmann::ordered_json side;
  side["generator"] = c.mnist_images.empty() ? "orbitsym synthetic digits" : "orbitsym idx copy";
  side["version"] = 1;
  side["seed"] = c.seed;
  side["n_train"] = c.n_train;
  side["n_val"] = c.n_val;
  side["n_test"] = c.n_test;
  side["images"] = imgs.size();
  std::ofstream out(dir / "digits.json");
  if (!out) throw IoError("cannot write " + (dir / "digits.json").string());
  out << side.dump(2) << '\n';
}

ModelSpec make_model_spec(const ExperimentConfig& c, const Dataset& train) {
  ModelSpec s;
  s.method = parse_method(c.method);
  s.group = c.group;
  s.task = train.kind;
  s.columns = train.x.dim(2);
  s.invariant_dim = train.invariant.defined() ? train.invariant.dim(1) : 0;
  s.outputs = train.kind == TaskKind::regression ? 1 : 10;
  s.base_hidden = c.base_hidden;
  s.symmetrizer.hidden = c.sym_hidden;
  s.symmetrizer.depth = c.sym_depth;
  s.symmetrizer.orientation = c.sym_orientation;
  s.symmetrizer.log_scalars = c.sym_log_scalars;
  s.symmetrizer.identity_init = c.sym_identity_init;
  s.noise = parse_noise(c.noise);
  s.d_eps = c.d_eps;
  s.combine = parse_combine(c.combine);
  s.input_scale = c.input_scale;
  s.invariant_project = c.invariant_project;
  s.projection_seed = derive_seed(c.seed, "projection");
  s.norm = parse_norm(c.norm);
  if (train.kind == TaskKind::regression) {
    double mean = 0.0, var = 0.0;
    for (double y : train.targets) mean += y;
    mean /= static_cast<double>(train.targets.size());
    for (double y : train.targets) var += (y - mean) * (y - mean);
    var /= static_cast<double>(train.targets.size());
    s.target_mean = mean;
    s.target_scale = var > 0.0 ? std::sqrt(var) : 1.0;
  }
  return s;
}

TrainOptions make_train_options(const ExperimentConfig& c) {
  TrainOptions o;
  o.epochs = c.epochs;
  o.batch = c.batch;
  o.lr = c.lr;
  o.lambda = c.lambda;
  o.samples_train = c.samples_train;
  o.samples_val = c.samples_val;
  o.clip = c.clip;
  o.seed = derive_seed(c.seed, "train");
  o.augment = parse_method(c.method) == Method::base_aug;
  o.wall_time = c.wall_time;
  return o;
}

NoiseStreams test_streams(const ExperimentConfig& c) { return {derive_seed(c.seed, "eval"), kTestTag}; }

ExperimentRun run_experiment(const ExperimentConfig& c, const TaskData& data, const EpochCallback& on_epoch) {
  validate(c);
  ExperimentRun run{SymmetrizedModel(make_model_spec(c, data.train), derive_seed(c.seed, "init")), {}};
  const SeparatingInvariant f = run.model.spec().invariant();
  run.summary.training = train(run.model, data.train, data.val, f, make_train_options(c), on_epoch);
  const auto test = evaluate(run.model, data.test, f, c.samples_eval, test_streams(c));
  run.summary.test_metric = test.metric;
  run.summary.test_orbit_loss = test.orbit_loss;
  if (data.test_plain) {
    run.summary.test_plain_metric = evaluate(run.model, *data.test_plain, f, c.samples_eval, test_streams(c)).metric;
  }
  if (!run.summary.training.history.empty()) {
    run.summary.final_val_orbit_loss = run.summary.training.history.back().val_orbit_loss;
  }
  return run;
}

ProbeResult invariance_probe(const SymmetrizedModel& model, const Dataset& test, const SeparatingInvariant& f,
                             std::size_t samples, std::size_t transforms, std::size_t examples, std::uint64_t seed) {
  ProbeResult r;
  r.transforms = transforms;
  r.examples = std::min(examples, test.size());
  if (transforms == 0 || r.examples == 0) return r;
  std::vector<std::size_t> first(r.examples);
  for (std::size_t i = 0; i < first.size(); ++i) first[i] = i;
  auto as_dataset = [&](const Batch& b) {
    Dataset d;
    d.kind = test.kind;
    d.x = b.x;
    d.invariant = b.invariant;
    d.targets = b.targets;
    d.labels = b.labels;
    return d;
  };
  const Batch base = test.subset(first);
  const Dataset plain = as_dataset(base);
  const NoiseStreams streams{derive_seed(seed, "probe"), 0};
  const auto reference = evaluate(model, plain, f, samples, streams).predictions;
  double mag = 0.0;
  for (double v : reference) mag += std::abs(v);
  mag /= static_cast<double>(reference.size());

  Rng rng(derive_seed(seed, "probe-elements"));
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t t = 0; t < transforms; ++t) {
    std::vector<Mat> elems;
    for (std::size_t i = 0; i < r.examples; ++i) elems.push_back(sample_element(model.group(), rng));
    const Dataset moved = as_dataset(transform(base, elems));
    const auto fresh = evaluate(model, moved, f, samples, {streams.root, t + 1}).predictions;
    const auto shared = evaluate(model, moved, f, samples, streams).predictions;
    for (std::size_t j = 0; j < reference.size(); ++j) {
      const double d = std::abs(fresh[j] - reference[j]);
      r.max_defect = std::max(r.max_defect, d);
      total += d;
      ++count;
      r.shared_noise_max_defect = std::max(r.shared_noise_max_defect, std::abs(shared[j] - reference[j]));
    }
  }
  r.mean_defect = total / static_cast<double>(count);
  r.mean_relative_defect = mag > 0.0 ? r.mean_defect / mag : 0.0;
  return r;
}

}  // namespace orbitsym
