#include "orbitsym/symmetrization.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>

#include <nlohmann/json.hpp>

#include "orbitsym/errors.hpp"
#include "orbitsym/log.hpp"

namespace orbitsym {

Method parse_method(const std::string& text) {
  if (text == "base") return Method::base;
  if (text == "base-aug") return Method::base_aug;
  if (text == "scalar-invariant") return Method::scalar_invariant;
  if (text == "canonical-orbit") return Method::canonical_orbit;
  if (text == "ps-orbit") return Method::ps_orbit;
  throw ConfigError("method must be base, base-aug, scalar-invariant, canonical-orbit or ps-orbit, got '" + text +
                    "'");
}

std::string to_string(Method m) {
  switch (m) {
    case Method::base: return "base";
    case Method::base_aug: return "base-aug";
    case Method::scalar_invariant: return "scalar-invariant";
    case Method::canonical_orbit: return "canonical-orbit";
    case Method::ps_orbit: return "ps-orbit";
  }
  return "?";
}

SeparatingInvariant ModelSpec::invariant() const {
  auto f = SeparatingInvariant::for_group(parse_group(group), derive_seed(projection_seed, "witness"));
  return invariant_project ? f.project(projection_seed) : f;
}

// ---------------------------------------------------------------------------
// Model

SymmetrizedModel::SymmetrizedModel(const ModelSpec& spec, std::uint64_t init_seed)
    : spec_(spec), group_(parse_group(spec.group)) {
  const std::size_t n = group_.n;
  if (spec.columns == 0) throw ConfigError("model needs at least one data column");
  if (spec.outputs == 0) throw ConfigError("model needs at least one output");
  if (!(spec.input_scale > 0.0) || !(spec.target_scale > 0.0)) throw ConfigError("scales must be positive");
  if (spec.output_action == OutputAction::equivariant && spec.outputs % n != 0) {
    throw ConfigError("equivariant output needs a multiple of n outputs");
  }
  metric_ = to_tensor(group_.metric_or_identity());

  std::size_t base_in = n * spec.columns + spec.invariant_dim;
  if (spec.method == Method::scalar_invariant) {
    for (std::size_t i = 0; i < spec.columns; ++i)
      for (std::size_t j = i; j < spec.columns; ++j) gram_upper_.push_back(i * spec.columns + j);
    base_in = gram_upper_.size() + spec.invariant_dim;
  }
  std::vector<std::size_t> dims{base_in};
  dims.insert(dims.end(), spec.base_hidden.begin(), spec.base_hidden.end());
  dims.push_back(spec.outputs);
  Rng base_rng(derive_seed(init_seed, "init.base"));
  base_ = Mlp(dims, spec.base_activation, base_rng);

  if (spec.symmetrized()) {
    if (spec.d_eps > 0) noise_ = NoiseSpec(n, spec.d_eps, spec.noise);
    if (spec.d_eps > 0 && noise_.action() == NoiseAction::trivial && spec.columns != n) {
      throw ConfigError("trivial-action noise is featurized against square data; columns must equal n");
    }
    if (spec.method == Method::canonical_orbit && spec.noise == NoiseDistribution::gaussian && spec.d_eps > 0) {
      throw ConfigError("canonical-orbit needs deterministic noise (or d_eps = 0)");
    }
    std::size_t m = spec.columns;
    if (spec.d_eps > 0 && spec.combine == Combine::concat) m += spec.d_eps;
    if (spec.d_eps > 0 && spec.combine == Combine::add && spec.d_eps != spec.columns) {
      throw ConfigError("combine=add needs d_eps equal to the number of data columns");
    }
    Rng sym_rng(derive_seed(init_seed, "init.symmetrizer"));
    symmetrizer_.emplace(group_, m, spec.invariant_dim, spec.symmetrizer, sym_rng);
  }
}

std::size_t SymmetrizedModel::effective_samples(std::size_t requested) const {
  if (requested == 0) throw ConfigError("sample count must be at least 1");
  if (!symmetrizer_ || spec_.d_eps == 0 || !noise_.stochastic()) return 1;
  return requested;
}

Tensor SymmetrizedModel::base_input(const Tensor& x, const Tensor& invariant) const {
  const std::size_t batch = x.dim(0), k = spec_.columns;
  Tensor feats;
  if (spec_.method == Method::scalar_invariant) {
    feats = gather_columns(reshape(matmul(transpose(x), matmul(metric_, x)), {batch, k * k}), gram_upper_);
  } else {
    feats = reshape(x, {batch, x.dim(1) * k});
  }
  if (spec_.invariant_dim > 0) feats = concat({feats, invariant}, 1);
  return feats;
}

SymmetrizedModel::Output SymmetrizedModel::forward(const Batch& batch, std::size_t samples,
                                                   const NoiseStreams& streams) const {
  const std::size_t n = group_.n;
  if (batch.x.rank() != 3 || batch.x.dim(1) != n || batch.x.dim(2) != spec_.columns) {
    throw DimensionError("model: expected (B," + std::to_string(n) + "," + std::to_string(spec_.columns) +
                         ") inputs, got " + shape_string(batch.x.shape()));
  }
  if (spec_.invariant_dim > 0 &&
      (!batch.invariant.defined() || batch.invariant.dim(0) != batch.size() ||
       batch.invariant.dim(1) != spec_.invariant_dim)) {
    throw DimensionError("model: missing or mis-shaped invariant features");
  }
  const std::size_t b = batch.size();
  const Tensor x = spec_.input_scale == 1.0 ? batch.x : scale(batch.x, spec_.input_scale);
  const Tensor inv = spec_.invariant_dim > 0 ? batch.invariant : Tensor();

  Output out;
  if (!symmetrizer_ && !override_) {
    out.prediction = base_.forward(base_input(x, inv));
    return out;
  }

  const std::size_t s = effective_samples(samples);
  const Tensor xs = s == 1 ? x : concat(std::vector<Tensor>(s, x), 0);
  const Tensor invs = !inv.defined() || s == 1 ? inv : concat(std::vector<Tensor>(s, inv), 0);

  Tensor eps;
  if (spec_.d_eps > 0 && symmetrizer_) {
    std::vector<Rng> rngs;
    rngs.reserve(b);
    for (std::size_t i = 0; i < b; ++i) {
      const std::size_t index = batch.indices.empty() ? i : batch.indices[i];
      rngs.emplace_back(derive_seed(streams.root, streams.tag, index));
    }
    std::vector<Tensor> draws;
    for (std::size_t k = 0; k < s; ++k) draws.push_back(noise_.sample(rngs));
    eps = draws.size() == 1 ? draws.front() : concat(draws, 0);
  }

  const Tensor u = symmetrizer_vectors(xs, eps, noise_.action(), spec_.combine, group_.metric_or_identity());
  out.h = override_ ? override_(u, invs) : symmetrizer_->forward(u, invs);
  const Tensor moved = matmul(approx_inverse(group_, out.h), xs);
  Tensor y = base_.forward(base_input(moved, invs));
  if (spec_.output_action == OutputAction::equivariant) {
    const std::size_t c = spec_.outputs / n;
    y = reshape(matmul(out.h, reshape(y, {s * b, n, c})), {s * b, spec_.outputs});
  }
  if (s == 1) {
    out.prediction = y;
  } else {
    const Tensor per_sample = transpose(reshape(y, {s, b * spec_.outputs}));
    out.prediction = reshape(scale(sum_last(per_sample), 1.0 / static_cast<double>(s)), {b, spec_.outputs});
  }
  return out;
}

std::vector<Tensor> SymmetrizedModel::parameters() const {
  std::vector<Tensor> p = base_.parameters();
  if (symmetrizer_) {
    const auto q = symmetrizer_->parameters();
    p.insert(p.end(), q.begin(), q.end());
    const auto e = noise_.parameters();
    p.insert(p.end(), e.begin(), e.end());
  }
  return p;
}

std::vector<std::vector<double>> SymmetrizedModel::snapshot() const {
  std::vector<std::vector<double>> out;
  for (const Tensor& t : parameters()) out.emplace_back(t.values().begin(), t.values().end());
  return out;
}

void SymmetrizedModel::restore(const std::vector<std::vector<double>>& values) {
  auto params = parameters();
  if (values.size() != params.size()) throw DimensionError("restore: parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto dst = params[i].mutable_values();
    if (dst.size() != values[i].size()) throw DimensionError("restore: parameter size mismatch");
    std::copy(values[i].begin(), values[i].end(), dst.begin());
  }
}

// ---------------------------------------------------------------------------
// Objective

namespace {

Tensor learned_targets(const SymmetrizedModel& model, const Batch& batch) {
  const auto& spec = model.spec();
  if (batch.targets.size() != batch.size()) throw DimensionError("regression batch needs one target per example");
  std::vector<double> t(batch.targets.size());
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = (batch.targets[i] - spec.target_mean) / spec.target_scale;
  const std::size_t count = t.size();
  return Tensor::constant({count, 1}, std::move(t));
}

void require_finite(const Tensor& t, const std::string& stage) {
  for (double v : t.values()) {
    if (!std::isfinite(v)) throw NumericError(stage, "non-finite value");
  }
}

}  // namespace

LossTerms joint_loss(const SymmetrizedModel& model, const Batch& batch, const SeparatingInvariant& f, double lambda,
                     std::size_t samples, const NoiseStreams& streams) {
  if (batch.size() == 0) throw DimensionError("joint_loss: empty batch");
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be non-negative");
  const auto out = model.forward(batch, samples, streams);
  if (out.h.defined()) require_finite(out.h, "symmetrizer");
  require_finite(out.prediction, "forward");
  LossTerms terms;
  if (model.spec().task == TaskKind::regression) {
    terms.task = mse(out.prediction, learned_targets(model, batch));
  } else {
    terms.task = cross_entropy(out.prediction, batch.labels);
  }
  terms.orbit = out.h.defined() ? mean(orbit_loss(f, out.h, model.spec().norm)) : Tensor::scalar(0.0);
  terms.total = add(terms.task, scale(terms.orbit, lambda));
  terms.h = out.h;
  return terms;
}

EvalResult evaluate(const SymmetrizedModel& model, const Dataset& data, const SeparatingInvariant& f,
                    std::size_t samples, const NoiseStreams& streams, std::size_t chunk) {
  EvalResult r;
  const std::size_t total = data.size();
  if (total == 0) throw DimensionError("evaluate: empty dataset");
  if (chunk == 0) chunk = total;
  const bool regression = model.spec().task == TaskKind::regression;
  const std::size_t outputs = model.spec().outputs;
  double err_sum = 0.0, orbit_sum = 0.0;
  std::size_t orbit_count = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < total; start += chunk) {
    const std::size_t end = std::min(total, start + chunk);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const Batch batch = data.subset(idx);
    const auto out = model.forward(batch, samples, streams);
    const auto p = out.prediction.values();
    for (std::size_t i = 0; i < batch.size(); ++i) {
      if (regression) {
        const double y = model.to_data_units(p[i * outputs]);
        r.predictions.push_back(y);
        err_sum += (y - batch.targets[i]) * (y - batch.targets[i]);
      } else {
        const double* row = p.data() + i * outputs;
        r.predictions.insert(r.predictions.end(), row, row + outputs);
        const auto best = static_cast<int>(std::max_element(row, row + outputs) - row);
        err_sum += best != batch.labels[i] ? 1.0 : 0.0;
      }
    }
    if (out.h.defined()) {
      const Tensor losses = orbit_loss(f, out.h.detach(), model.spec().norm);
      for (double v : losses.values()) orbit_sum += v;
      orbit_count += losses.size();
    }
  }
  r.metric = err_sum / static_cast<double>(total);
  r.orbit_loss = orbit_count > 0 ? orbit_sum / static_cast<double>(orbit_count) : 0.0;
  return r;
}

// ---------------------------------------------------------------------------
// Training

TrainResult train(SymmetrizedModel& model, const Dataset& train_set, const Dataset& val_set,
                  const SeparatingInvariant& f, const TrainOptions& options, const EpochCallback& on_epoch) {
  if (options.batch == 0) throw ConfigError("batch must be at least 1");
  if (!(options.lr > 0.0)) throw ConfigError("lr must be positive");
  if (train_set.size() == 0 || val_set.size() == 0) throw ConfigError("train and validation sets must be non-empty");

  TrainResult result;
  result.best_val_metric = std::numeric_limits<double>::infinity();
  std::size_t singular_total = 0, singular_epochs = 0;
  if (options.epochs == 0) return result;

  AdamOptions adam_options;
  adam_options.lr = options.lr;
  Adam optimizer(model.parameters(), adam_options);
  const std::uint64_t noise_root = derive_seed(options.seed, "noise");
  const std::uint64_t shuffle_root = derive_seed(options.seed, "shuffle");
  Rng augment_rng(derive_seed(options.seed, "augment"));
  const double unit2 = model.spec().task == TaskKind::regression
                           ? model.spec().target_scale * model.spec().target_scale
                           : 1.0;
  auto best = model.snapshot();

  const std::size_t n = train_set.size();
  std::vector<std::size_t> order(n);
  for (std::size_t epoch = 1; epoch <= options.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(derive_seed(shuffle_root, epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double task_sum = 0.0, orbit_sum = 0.0;
    std::size_t near_singular = 0, step = 0;
    for (std::size_t start = 0; start < n; start += options.batch, ++step) {
      const std::size_t end = std::min(n, start + options.batch);
      Batch batch = train_set.subset(std::span<const std::size_t>(order.data() + start, end - start));
      if (options.augment) batch = augment(batch, model.group(), augment_rng);
      optimizer.zero_grad();
      LossTerms loss;
      try {
        loss = joint_loss(model, batch, f, options.lambda, options.samples_train, {noise_root, epoch});
      } catch (const NumericError& e) {
        const std::string detail = std::string(e.what()).substr(e.stage().size() + 2);
        throw NumericError(e.stage(), detail + " at epoch " + std::to_string(epoch) + " step " +
                                          std::to_string(step));
      }
      if (!std::isfinite(loss.total.item())) {
        throw NumericError("loss", "non-finite loss at epoch " + std::to_string(epoch) + " step " +
                                       std::to_string(step));
      }
      loss.total.backward();
      const double grad_norm = optimizer.clip_grad_norm(options.clip);
      if (!std::isfinite(grad_norm)) {
        throw NumericError("backward", "non-finite gradient at epoch " + std::to_string(epoch) + " step " +
                                           std::to_string(step));
      }
      optimizer.step();
      if (loss.h.defined()) {
        for (double d : determinant(loss.h.detach()).values()) near_singular += std::abs(d) < 1e-6 ? 1 : 0;
      }
      const double w = static_cast<double>(end - start) / static_cast<double>(n);
      task_sum += w * loss.task.item() * unit2;
      orbit_sum += w * loss.orbit.item();
    }
    if (near_singular > 0 && singular_epochs++ == 0) {
      log_warning("epoch " + std::to_string(epoch) + ": " + std::to_string(near_singular) +
                  " symmetrizer outputs with |det h| < 1e-6");
    }
    singular_total += near_singular;

    const EvalResult val = evaluate(model, val_set, f, options.samples_val, {noise_root, kValidationTag});
    if (!std::isfinite(val.metric)) {
      throw NumericError("validation", "non-finite validation metric at epoch " + std::to_string(epoch));
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    EpochRecord rec{epoch, task_sum, orbit_sum, val.metric, val.orbit_loss, options.wall_time ? seconds : 0.0};
    result.history.push_back(rec);
    result.wall_seconds.push_back(seconds);
    if (val.metric < result.best_val_metric) {
      result.best_val_metric = val.metric;
      result.best_epoch = epoch;
      best = model.snapshot();
    }
    if (on_epoch) on_epoch(rec);
  }
  if (singular_epochs > 1) {
    log_warning(std::to_string(singular_total) + " near-singular symmetrizer outputs over " +
                std::to_string(singular_epochs) + " epochs");
  }
  model.restore(best);
  return result;
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

std::string fmt(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string to_string(Activation a) { return a == Activation::silu ? "silu" : "relu"; }

Activation parse_activation(const std::string& s) {
  if (s == "silu") return Activation::silu;
  if (s == "relu") return Activation::relu;
  throw ConfigError("activation must be silu or relu, got '" + s + "'");
}

void put_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in, const std::string& what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw FormatError("checkpoint truncated reading " + what);
  return std::uint32_t{b[0]} | (std::uint32_t{b[1]} << 8) | (std::uint32_t{b[2]} << 16) | (std::uint32_t{b[3]} << 24);
}

}  // namespace

void write_metrics_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& history) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "epoch,task_loss,orbit_loss,val_metric,val_orbit_loss,seconds\n";
  for (const auto& r : history) {
    out << r.epoch << ',' << fmt(r.task_loss) << ',' << fmt(r.orbit_loss) << ',' << fmt(r.val_metric) << ','
        << fmt(r.val_orbit_loss) << ',' << fmt(r.seconds) << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

std::string model_spec_to_json(const ModelSpec& s) {
  nlohmann::ordered_json j;
  j["method"] = to_string(s.method);
  j["group"] = s.group;
  j["task"] = s.task == TaskKind::regression ? "regression" : "classification";
  j["columns"] = s.columns;
  j["invariant_dim"] = s.invariant_dim;
  j["outputs"] = s.outputs;
  j["base_hidden"] = s.base_hidden;
  j["base_activation"] = to_string(s.base_activation);
  j["symmetrizer"] = {{"hidden", s.symmetrizer.hidden},
                      {"depth", s.symmetrizer.depth},
                      {"orientation", s.symmetrizer.orientation},
                      {"log_scalars", s.symmetrizer.log_scalars},
                      {"identity_init", s.symmetrizer.identity_init},
                      {"activation", to_string(s.symmetrizer.activation)}};
  j["noise"] = to_string(s.noise);
  j["d_eps"] = s.d_eps;
  j["combine"] = to_string(s.combine);
  j["output_action"] = s.output_action == OutputAction::invariant_scalar ? "invariant-scalar" : "equivariant";
  j["input_scale"] = s.input_scale;
  j["target_mean"] = s.target_mean;
  j["target_scale"] = s.target_scale;
  j["invariant_project"] = s.invariant_project;
  j["projection_seed"] = s.projection_seed;
  j["norm"] = to_string(s.norm);
  return j.dump();
}

ModelSpec model_spec_from_json(const std::string& text) {
  ModelSpec s;
  try {
    const auto j = nlohmann::json::parse(text);
    s.method = parse_method(j.at("method").get<std::string>());
    s.group = j.at("group").get<std::string>();
    const auto task = j.at("task").get<std::string>();
    if (task != "regression" && task != "classification") throw FormatError("unknown task '" + task + "'");
    s.task = task == "regression" ? TaskKind::regression : TaskKind::classification;
    s.columns = j.at("columns").get<std::size_t>();
    s.invariant_dim = j.at("invariant_dim").get<std::size_t>();
    s.outputs = j.at("outputs").get<std::size_t>();
    s.base_hidden = j.at("base_hidden").get<std::vector<std::size_t>>();
    s.base_activation = parse_activation(j.at("base_activation").get<std::string>());
    const auto& q = j.at("symmetrizer");
    s.symmetrizer.hidden = q.at("hidden").get<std::size_t>();
    s.symmetrizer.depth = q.at("depth").get<std::size_t>();
    s.symmetrizer.orientation = q.at("orientation").get<bool>();
    s.symmetrizer.log_scalars = q.at("log_scalars").get<bool>();
    s.symmetrizer.identity_init = q.at("identity_init").get<bool>();
    s.symmetrizer.activation = parse_activation(q.at("activation").get<std::string>());
    s.noise = parse_noise(j.at("noise").get<std::string>());
    s.d_eps = j.at("d_eps").get<std::size_t>();
    s.combine = parse_combine(j.at("combine").get<std::string>());
    const auto action = j.at("output_action").get<std::string>();
    s.output_action = action == "equivariant" ? OutputAction::equivariant : OutputAction::invariant_scalar;
    s.input_scale = j.at("input_scale").get<double>();
    s.target_mean = j.at("target_mean").get<double>();
    s.target_scale = j.at("target_scale").get<double>();
    s.invariant_project = j.at("invariant_project").get<bool>();
    s.projection_seed = j.at("projection_seed").get<std::uint64_t>();
    s.norm = parse_norm(j.at("norm").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model header: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("model header: ") + e.what());
  }
  return s;
}

void save_checkpoint(const std::filesystem::path& path, const SymmetrizedModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  const std::string header = model_spec_to_json(model.spec());
  out.write("OSYM", 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(header.size()));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const Tensor& p : model.parameters()) {
    for (double v : p.values()) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, 8);
      unsigned char b[8];
      for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
      out.write(reinterpret_cast<const char*>(b), 8);
    }
  }
  if (!out) throw IoError("write failed for " + path.string());
}

SymmetrizedModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "OSYM", 4) != 0) {
    throw FormatError(path.string() + ": not a checkpoint (bad magic)");
  }
  const std::uint32_t version = get_u32(in, "version");
  if (version != kCheckpointVersion) {
    throw FormatError(path.string() + ": checkpoint version " + std::to_string(version) + ", expected " +
                      std::to_string(kCheckpointVersion));
  }
  const std::uint32_t length = get_u32(in, "header length");
  std::string header(length, '\0');
  if (!in.read(header.data(), length)) throw FormatError(path.string() + ": truncated header");
  SymmetrizedModel model(model_spec_from_json(header), 0);
  std::vector<std::vector<double>> values;
  for (const Tensor& p : model.parameters()) {
    std::vector<double> v(p.size());
    for (double& d : v) {
      unsigned char b[8];
      if (!in.read(reinterpret_cast<char*>(b), 8)) throw FormatError(path.string() + ": truncated parameters");
      std::uint64_t bits = 0;
      for (int i = 0; i < 8; ++i) bits |= std::uint64_t{b[i]} << (8 * i);
      std::memcpy(&d, &bits, 8);
    }
    values.push_back(std::move(v));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError(path.string() + ": trailing bytes");
  model.restore(values);
  return model;
}

}  // namespace orbitsym
