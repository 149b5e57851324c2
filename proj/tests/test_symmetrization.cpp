#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "orbitsym/errors.hpp"
#include "orbitsym/experiments.hpp"
#include "orbitsym/symmetrization.hpp"

using namespace orbitsym;
namespace fs = std::filesystem;

namespace {

ModelSpec particle_spec(Method method) {
  ModelSpec s;
  s.method = method;
  s.group = "lorentz13";
  s.columns = 4;
  s.base_hidden = {16, 16};
  s.symmetrizer.hidden = 16;
  s.d_eps = 4;
  s.input_scale = 4.0;
  return s;
}

Tensor identity_batch(std::size_t b, std::size_t n) {
  std::vector<double> v(b * n * n, 0.0);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < n; ++j) v[(i * n + j) * n + j] = 1.0;
  return Tensor::constant({b, n, n}, std::move(v));
}

double grad_norm(const std::vector<Tensor>& params) {
  double s = 0;
  for (const Tensor& p : params)
    for (double g : p.grad()) s += g * g;
  return std::sqrt(s);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "orbitsym_test_sym";
  fs::create_directories(dir);
  return dir / name;
}

// Spearman rank correlation; no ties expected.
double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
    std::vector<double> r(v.size());
    for (std::size_t k = 0; k < idx.size(); ++k) r[idx[k]] = static_cast<double>(k);
    return r;
  };
  const auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  double d2 = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) d2 += (ra[i] - rb[i]) * (ra[i] - rb[i]);
  return 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
}

}  // namespace

TEST(Method, ParseRoundTrip) {
  for (auto m : {Method::base, Method::base_aug, Method::scalar_invariant, Method::canonical_orbit, Method::ps_orbit}) {
    EXPECT_EQ(parse_method(to_string(m)), m);
  }
  EXPECT_THROW(parse_method("orbit"), ConfigError);
}

TEST(Model, IdentitySymmetrizerReducesToBase) {
  auto spec = particle_spec(Method::ps_orbit);
  SymmetrizedModel model(spec, 3);
  model.override_symmetrizer([](const Tensor& u, const Tensor&) { return identity_batch(u.dim(0), 4); });
  const auto d = generate_particle_dataset(8, 1, 1, 2);
  const Batch b = d.train.all();
  const Tensor p = model.forward(b, 4, {1, 2}).prediction;
  const Tensor direct = model.base().forward(reshape(scale(b.x, spec.input_scale), {8, 16}));
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(p[i], direct[i]);
}

TEST(Model, LorentzInvarianceWithSharedNoise) {
  SymmetrizedModel model(particle_spec(Method::ps_orbit), 5);
  // Give the noise some spread so the draws matter.
  model.noise().parameters()[1].mutable_values()[0] = 0.7;
  const auto d = generate_particle_dataset(16, 1, 1, 4);
  const Batch b = d.train.all();
  Rng rng(9);
  std::vector<Mat> g;
  for (std::size_t i = 0; i < b.size(); ++i) g.push_back(sample_element(model.group(), rng));
  const Tensor p = model.forward(b, 3, {7, 1}).prediction;
  const Tensor q = model.forward(transform(b, g), 3, {7, 1}).prediction;
  for (std::size_t i = 0; i < b.size(); ++i) EXPECT_LE(std::abs(p[i] - q[i]), 1e-6 * std::max(1.0, std::abs(p[i])));
}

TEST(Model, CanonicalSo2PointSetInvariance) {
  ModelSpec s;
  s.method = Method::canonical_orbit;
  s.group = "so2";
  s.task = TaskKind::classification;
  s.columns = 12;
  s.invariant_dim = 12;
  s.outputs = 10;
  s.noise = NoiseDistribution::deterministic;
  s.d_eps = 0;
  s.symmetrizer.hidden = 16;
  s.symmetrizer.orientation = true;
  s.base_hidden = {16};
  SymmetrizedModel model(s, 1);
  const ImageSet imgs = generate_synthetic_digits(5, 3);
  const Dataset plain = build_rotated_pointset(imgs, 0.2, 12, false, 1);
  const Dataset turned = build_rotated_pointset(imgs, 0.2, 12, true, 1);
  const Tensor p = model.forward(plain.all(), 1, {}).prediction;
  const Tensor q = model.forward(turned.all(), 1, {}).prediction;
  EXPECT_EQ(model.effective_samples(16), 1u);
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(p[i], q[i], 1e-6);
}

TEST(Model, EquivariantOutputPath) {
  // rho_out(h) = h on an R^3 output: Phi(g x) = g Phi(x) for g in SO(3).
  ModelSpec s;
  s.method = Method::canonical_orbit;
  s.group = "so3";
  s.columns = 3;
  s.outputs = 3;
  s.noise = NoiseDistribution::deterministic;
  s.output_action = OutputAction::equivariant;
  s.d_eps = 3;
  s.symmetrizer.hidden = 16;
  s.base_hidden = {16};
  SymmetrizedModel model(s, 2);
  Rng rng(3);
  Dataset d;
  std::vector<double> xv(4 * 9);
  for (double& v : xv) v = standard_normal(rng);
  d.x = Tensor::constant({4, 3, 3}, xv);
  d.targets.assign(4, 0.0);
  const Batch b = d.all();
  std::vector<Mat> g;
  for (int i = 0; i < 4; ++i) g.push_back(sample_element(model.group(), rng));
  const Tensor p = model.forward(b, 1, {}).prediction;
  const Tensor q = model.forward(transform(b, g), 1, {}).prediction;
  for (std::size_t i = 0; i < 4; ++i) {
    Eigen::Vector3d pv(p[3 * i], p[3 * i + 1], p[3 * i + 2]);
    const Eigen::Vector3d gp = g[i] * pv;
    for (int r = 0; r < 3; ++r) EXPECT_NEAR(q[3 * i + r], gp(r), 1e-6);
  }
}

TEST(Model, MonteCarloVarianceShrinksWithSamples) {
  SymmetrizedModel model(particle_spec(Method::ps_orbit), 6);
  model.noise().parameters()[1].mutable_values()[0] = 1.0;
  const auto d = generate_particle_dataset(4, 1, 1, 5);
  const Batch b = d.train.all();
  auto spread = [&](std::size_t samples) {
    double total = 0;
    for (std::size_t e = 0; e < 4; ++e) {
      std::vector<double> ys;
      for (std::uint64_t tag = 0; tag < 40; ++tag) ys.push_back(model.forward(b, samples, {11, tag}).prediction[e]);
      const double mu = std::accumulate(ys.begin(), ys.end(), 0.0) / ys.size();
      for (double y : ys) total += (y - mu) * (y - mu);
    }
    return total;
  };
  const double v1 = spread(1), v16 = spread(16);
  EXPECT_GT(v1, 0.0);
  EXPECT_LT(v16, 0.25 * v1);
}

TEST(Model, NoiseStreamsIgnoreChunking) {
  SymmetrizedModel model(particle_spec(Method::ps_orbit), 6);
  model.noise().parameters()[1].mutable_values()[0] = 0.5;
  const auto d = generate_particle_dataset(1, 10, 1, 5);
  const auto f = model.spec().invariant();
  const auto whole = evaluate(model, d.val, f, 4, {3, kTestTag}, 10);
  const auto pieces = evaluate(model, d.val, f, 4, {3, kTestTag}, 3);
  EXPECT_EQ(whole.predictions, pieces.predictions);
  EXPECT_DOUBLE_EQ(whole.metric, pieces.metric);
}

TEST(Model, RejectsBadConfigurations) {
  auto s = particle_spec(Method::ps_orbit);
  s.columns = 3;  // trivial-action noise needs square data
  EXPECT_THROW(SymmetrizedModel(s, 0), ConfigError);
  s = particle_spec(Method::canonical_orbit);
  s.noise = NoiseDistribution::gaussian;
  EXPECT_THROW(SymmetrizedModel(s, 0), ConfigError);
  s = particle_spec(Method::ps_orbit);
  s.group = "sl2";
  s.columns = 2;
  EXPECT_THROW(SymmetrizedModel(s, 0), ConfigError);
}

TEST(JointLoss, LambdaZeroIsTaskExactly) {
  SymmetrizedModel model(particle_spec(Method::ps_orbit), 1);
  const auto d = generate_particle_dataset(8, 1, 1, 1);
  const auto f = model.spec().invariant();
  const auto terms = joint_loss(model, d.train.all(), f, 0.0, 1, {1, 1});
  EXPECT_EQ(terms.total.item(), terms.task.item());
  EXPECT_GT(terms.orbit.item(), 0.0);
}

TEST(JointLoss, ExactGroupElementsHaveNoOrbitLoss) {
  SymmetrizedModel model(particle_spec(Method::ps_orbit), 1);
  Rng rng(2);
  std::vector<Mat> elems;
  for (int i = 0; i < 8; ++i) elems.push_back(sample_element(model.group(), rng));
  model.override_symmetrizer([&](const Tensor&, const Tensor&) { return stack_mats(elems); });
  const auto d = generate_particle_dataset(8, 1, 1, 1);
  const auto f = model.spec().invariant();
  const auto terms = joint_loss(model, d.train.all(), f, 1.0, 1, {1, 1});
  EXPECT_LE(terms.orbit.item(), 1e-9);
  EXPECT_NEAR(terms.total.item(), terms.task.item(), 1e-9);
}

TEST(JointLoss, GradientReachesEveryPart) {
  SymmetrizedModel model(particle_spec(Method::ps_orbit), 4);
  const auto d = generate_particle_dataset(16, 1, 1, 3);
  const auto f = model.spec().invariant();
  auto terms = joint_loss(model, d.train.all(), f, 1.0, 1, {1, 1});
  terms.total.backward();
  EXPECT_GT(grad_norm(model.base().parameters()), 0.0);
  EXPECT_GT(grad_norm(model.symmetrizer()->parameters()), 0.0);
  EXPECT_GT(grad_norm(model.noise().parameters()), 0.0);
}

TEST(JointLoss, ClassificationUsesCrossEntropy) {
  ModelSpec s;
  s.method = Method::base;
  s.group = "so2";
  s.task = TaskKind::classification;
  s.columns = 3;
  s.outputs = 4;
  s.base_hidden = {8};
  SymmetrizedModel model(s, 0);
  model.base().parameters().back().mutable_values()[0] = 0.0;
  Dataset d;
  d.kind = TaskKind::classification;
  d.x = Tensor::zeros({2, 2, 3});
  d.labels = {0, 3};
  const auto f = s.invariant();
  const auto terms = joint_loss(model, d.all(), f, 1.0, 1, {});
  EXPECT_EQ(terms.orbit.item(), 0.0);
  EXPECT_GT(terms.task.item(), 0.0);
}

TEST(Train, ZeroEpochsKeepsInitialWeights) {
  SymmetrizedModel model(particle_spec(Method::ps_orbit), 1);
  const auto before = model.snapshot();
  const auto d = generate_particle_dataset(10, 5, 1, 1);
  TrainOptions o;
  o.epochs = 0;
  const auto r = train(model, d.train, d.val, model.spec().invariant(), o);
  EXPECT_TRUE(r.history.empty());
  EXPECT_EQ(r.best_epoch, 0u);
  EXPECT_EQ(model.snapshot(), before);
}

TEST(Train, SameSeedSameHistoryAndCsv) {
  const auto d = generate_particle_dataset(60, 20, 1, 2);
  TrainOptions o;
  o.epochs = 3;
  o.batch = 20;
  o.seed = 8;
  auto run = [&](const std::string& name) {
    SymmetrizedModel model(particle_spec(Method::ps_orbit), 8);
    const auto r = train(model, d.train, d.val, model.spec().invariant(), o);
    write_metrics_csv(scratch(name), r.history);
    return std::make_pair(slurp(scratch(name)), model.snapshot());
  };
  const auto a = run("a.csv"), b = run("b.csv");
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
  EXPECT_EQ(a.first.substr(0, a.first.find('\n')), "epoch,task_loss,orbit_loss,val_metric,val_orbit_loss,seconds");
}

TEST(Train, KeepsBestValidationEpoch) {
  const auto d = generate_particle_dataset(60, 20, 1, 2);
  TrainOptions o;
  o.epochs = 4;
  o.batch = 20;
  SymmetrizedModel model(particle_spec(Method::base), 8);
  const auto r = train(model, d.train, d.val, model.spec().invariant(), o);
  const auto best = std::min_element(r.history.begin(), r.history.end(),
                                     [](const auto& x, const auto& y) { return x.val_metric < y.val_metric; });
  EXPECT_EQ(r.best_epoch, best->epoch);
  EXPECT_DOUBLE_EQ(evaluate(model, d.val, model.spec().invariant(), 1, {}).metric, best->val_metric);
}

TEST(Train, IdentitySymmetrizerMatchesDirectMlpTraining) {
  // With h := I the symmetrized pipeline must reproduce a plain MLP + Adam run.
  const auto d = generate_particle_dataset(50, 10, 1, 6);
  TrainOptions o;
  o.epochs = 3;
  o.batch = 16;
  o.seed = 4;
  auto spec = particle_spec(Method::ps_orbit);
  SymmetrizedModel model(spec, 12);
  model.override_symmetrizer([](const Tensor& u, const Tensor&) { return identity_batch(u.dim(0), 4); });
  const auto r = train(model, d.train, d.val, spec.invariant(), o);

  Rng init(derive_seed(12, "init.base"));
  Mlp mlp({16, 16, 16, 1}, Activation::silu, init);
  Adam adam(mlp.parameters(), AdamOptions{o.lr});
  const std::size_t n = d.train.size();
  std::vector<std::size_t> order(n);
  for (std::size_t epoch = 1; epoch <= o.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle(derive_seed(derive_seed(o.seed, "shuffle"), epoch));
    std::shuffle(order.begin(), order.end(), shuffle);
    double task = 0;
    for (std::size_t start = 0; start < n; start += o.batch) {
      const std::size_t end = std::min(n, start + o.batch);
      const Batch b = d.train.subset(std::span<const std::size_t>(order.data() + start, end - start));
      adam.zero_grad();
      const Tensor y = mlp.forward(reshape(scale(b.x, 4.0), {b.size(), 16}));
      Tensor loss = mse(y, Tensor::constant({b.size(), 1}, b.targets));
      loss.backward();
      adam.clip_grad_norm(o.clip);
      adam.step();
      task += static_cast<double>(end - start) / static_cast<double>(n) * loss.item();
    }
    EXPECT_EQ(task, r.history[epoch - 1].task_loss) << "epoch " << epoch;
  }
}

TEST(Train, OrbitLossTrendsDownOnParticles) {
  const auto d = generate_particle_dataset(400, 50, 1, 3);
  auto spec = particle_spec(Method::ps_orbit);
  spec.symmetrizer.identity_init = true;
  SymmetrizedModel model(spec, 2);
  TrainOptions o;
  o.epochs = 40;
  o.batch = 50;
  const auto r = train(model, d.train, d.val, spec.invariant(), o);
  auto window = [&](std::size_t last) {
    double s = 0;
    for (std::size_t e = last - 10; e < last; ++e) s += r.history[e].orbit_loss;
    return s / 10.0;
  };
  EXPECT_LE(window(o.epochs), window(10));
}

TEST(Train, InvarianceGapFollowsOrbitLoss) {
  const auto d = generate_particle_dataset(400, 50, 40, 5);
  auto spec = particle_spec(Method::ps_orbit);
  spec.symmetrizer.identity_init = true;
  spec.noise = NoiseDistribution::gaussian;
  SymmetrizedModel model(spec, 3);
  const auto f = spec.invariant();
  TrainOptions o;
  o.epochs = 4;
  o.batch = 50;
  std::vector<double> orbit, gap;
  for (int stage = 1; stage <= 6; ++stage) {
    o.seed = static_cast<std::uint64_t>(stage);
    train(model, d.train, d.val, f, o);
    orbit.push_back(evaluate(model, d.test, f, 4, {9, 1}).orbit_loss);
    gap.push_back(invariance_probe(model, d.test, f, 4, 4, 40, 9).mean_defect);
  }
  EXPECT_GT(spearman(orbit, gap), 0.0);
}

TEST(Train, NonFiniteLossAbortsWithEpoch) {
  auto spec = particle_spec(Method::base);
  SymmetrizedModel model(spec, 1);
  model.base().parameters()[0].mutable_values()[0] = std::nan("");
  const auto d = generate_particle_dataset(10, 5, 1, 1);
  TrainOptions o;
  o.epochs = 1;
  try {
    train(model, d.train, d.val, spec.invariant(), o);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 1"), std::string::npos);
  }
}

TEST(Persistence, CheckpointRoundTrip) {
  auto spec = particle_spec(Method::ps_orbit);
  spec.symmetrizer.log_scalars = true;
  spec.projection_seed = 77;
  SymmetrizedModel model(spec, 3);
  const fs::path path = scratch("m.osym");
  save_checkpoint(path, model);
  const SymmetrizedModel back = load_checkpoint(path);
  EXPECT_EQ(back.snapshot(), model.snapshot());
  EXPECT_EQ(model_spec_to_json(back.spec()), model_spec_to_json(spec));
  const auto d = generate_particle_dataset(4, 1, 1, 1);
  const Tensor p = model.forward(d.train.all(), 2, {1, 1}).prediction;
  const Tensor q = back.forward(d.train.all(), 2, {1, 1}).prediction;
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(p[i], q[i]);
}

TEST(Persistence, CorruptCheckpointsRejected) {
  SymmetrizedModel model(particle_spec(Method::base), 3);
  const fs::path path = scratch("m2.osym");
  save_checkpoint(path, model);
  std::string bytes = slurp(path);

  std::string wrong_version = bytes;
  wrong_version[4] = 9;
  std::ofstream(scratch("v.osym"), std::ios::binary) << wrong_version;
  EXPECT_THROW(load_checkpoint(scratch("v.osym")), FormatError);

  std::ofstream(scratch("t.osym"), std::ios::binary) << bytes.substr(0, bytes.size() - 5);
  EXPECT_THROW(load_checkpoint(scratch("t.osym")), FormatError);

  std::ofstream(scratch("m.osym.bad"), std::ios::binary) << "XXXX";
  EXPECT_THROW(load_checkpoint(scratch("m.osym.bad")), FormatError);
  EXPECT_THROW(load_checkpoint(scratch("absent.osym")), IoError);
}
