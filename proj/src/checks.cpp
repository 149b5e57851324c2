#include "orbitsym/checks.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "orbitsym/eqnets.hpp"
#include "orbitsym/errors.hpp"
#include "orbitsym/gradcheck.hpp"
#include "orbitsym/symmetrization.hpp"

namespace orbitsym {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Mat gaussian_mat(std::size_t rows, std::size_t cols, Rng& rng, double s = 1.0) {
  Mat m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = s * standard_normal(rng);
  return m;
}

Tensor gaussian_tensor(Shape shape, Rng& rng, double s = 1.0) {
  std::vector<double> v(shape_size(shape));
  for (double& x : v) x = s * standard_normal(rng);
  return Tensor::constant(std::move(shape), std::move(v));
}

double max_abs(const Mat& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

/// The quantity is_member compares against its tolerance, where one exists.
double membership_residual(const GroupSpec& g, const Mat& m) {
  const auto n = static_cast<Eigen::Index>(g.n);
  const Mat eye = Mat::Identity(n, n);
  switch (g.family) {
    case GroupFamily::orthogonal:
      return max_abs(m.transpose() * m - eye);
    case GroupFamily::special_orthogonal:
      return std::max(max_abs(m.transpose() * m - eye), std::abs(m.determinant() - 1.0));
    case GroupFamily::lorentz:
      return max_abs(m.transpose() * *g.metric * m - *g.metric);
    case GroupFamily::special_linear:
      return std::abs(m.determinant() - 1.0);
    case GroupFamily::general_linear:
      return std::abs(m.determinant()) > 0.0 ? 0.0 : kInf;
    case GroupFamily::symmetric: {
      double worst = 0.0;
      for (Eigen::Index i = 0; i < m.size(); ++i) {
        const double v = m.data()[i];
        worst = std::max(worst, std::min(std::abs(v), std::abs(v - 1.0)));
      }
      return is_member(g, m, 0.5) ? worst : kInf;
    }
  }
  return kInf;
}

CheckRow row(std::string suite, std::string property, std::size_t trials, double defect, double bound, bool passed,
             std::string note = {}) {
  return {std::move(suite), std::move(property), trials, defect, bound, passed, std::move(note)};
}

/// sum(out * w) with fixed random w, so every output entry carries gradient.
Tensor contract(const Tensor& out, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(out, gaussian_tensor(out.shape(), rng)));
}

Tensor away_from_zero(Shape shape, Rng& rng, double margin = 0.2) {
  std::vector<double> v(shape_size(shape));
  for (double& x : v) {
    const double u = standard_normal(rng);
    x = (u < 0 ? -1.0 : 1.0) * (margin + std::abs(u));
  }
  return Tensor::constant(std::move(shape), std::move(v));
}

Tensor positive(Shape shape, Rng& rng) {
  std::vector<double> v(shape_size(shape));
  for (double& x : v) x = 0.5 + uniform01(rng) * 2.0;
  return Tensor::constant(std::move(shape), std::move(v));
}

Tensor well_conditioned(std::size_t n, Rng& rng, std::size_t batch = 0) {
  const std::size_t count = batch == 0 ? 1 : batch;
  std::vector<double> v;
  for (std::size_t b = 0; b < count; ++b) {
    Mat m = Mat::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n)) * 2.0 +
            gaussian_mat(n, n, rng, 0.4);
    v.insert(v.end(), m.data(), m.data() + m.size());
  }
  return batch == 0 ? Tensor::constant({n, n}, std::move(v)) : Tensor::constant({batch, n, n}, std::move(v));
}

}  // namespace

SeparatingInvariant standard_invariant(const GroupSpec& group, std::uint64_t seed) {
  return SeparatingInvariant::for_group(group, derive_seed(seed, "witness")).project(derive_seed(seed, "projection"));
}

Mat random_domain_matrix(const SeparatingInvariant& f, Rng& rng) {
  const std::size_t n = f.group().n;
  for (int attempt = 0; attempt < 100; ++attempt) {
    Mat m = gaussian_mat(n, n, rng);
    if (f.domain() == SeparationDomain::all || std::abs(m.determinant()) >= 0.1) return m;
  }
  throw SamplingError("no well-conditioned draw in 100 tries");
}

std::vector<CheckRow> metric_axiom_suite(const GroupSpec& group, std::size_t trials, std::uint64_t seed, Norm norm) {
  const std::string suite = "metric/" + group.name();
  const SeparatingInvariant f = standard_invariant(group, seed);
  Rng rng(derive_seed(seed, "metric"));
  std::vector<Mat> a, b, c, ga;
  for (std::size_t t = 0; t < trials; ++t) {
    a.push_back(random_domain_matrix(f, rng));
    b.push_back(random_domain_matrix(f, rng));
    c.push_back(random_domain_matrix(f, rng));
    ga.push_back(sample_element(group, rng) * a.back());
  }
  const Tensor ta = stack_mats(a), tb = stack_mats(b), tc = stack_mats(c), tga = stack_mats(ga);
  const auto dab = orbit_distance(f, ta, tb, norm), dba = orbit_distance(f, tb, ta, norm);
  const auto dbc = orbit_distance(f, tb, tc, norm), dac = orbit_distance(f, ta, tc, norm);
  const auto intra = orbit_distance(f, ta, tga, norm);

  double negative = 0.0, asym = 0.0, triangle = -kInf, intra_worst = 0.0, inter_min = kInf;
  for (std::size_t t = 0; t < trials; ++t) {
    for (double d : {dab[t], dba[t], dbc[t], dac[t], intra[t]}) negative = std::max(negative, -d);
    asym = std::max(asym, std::abs(dab[t] - dba[t]));
    triangle = std::max(triangle, dac[t] - (dab[t] + dbc[t]));
    intra_worst = std::max(intra_worst, intra[t]);
    inter_min = std::min(inter_min, dab[t]);
  }
  return {row(suite, "non-negativity (max -d)", trials, negative, 0.0, negative <= 0.0),
          row(suite, "symmetry (max |d(a,b)-d(b,a)|, bitwise)", trials, asym, 0.0, asym == 0.0),
          row(suite, "triangle (max d(a,c)-d(a,b)-d(b,c))", trials, triangle, 1e-9, triangle <= 1e-9),
          row(suite, "intra-orbit (max d(h,g.h))", trials, intra_worst, 1e-9, intra_worst <= 1e-9),
          row(suite, "inter-orbit (min d(a,b)) > bound", trials, inter_min, 1e-6, inter_min > 1e-6,
              group.family == GroupFamily::general_linear ? "left multiplication is transitive on full-rank matrices"
                                                          : "")};
}

CheckRow invariance_check(const GroupSpec& group, std::size_t trials, std::uint64_t seed) {
  const SeparatingInvariant f = standard_invariant(group, seed);
  Rng rng(derive_seed(seed, "invariance"));
  std::vector<Mat> h, gh;
  for (std::size_t t = 0; t < trials; ++t) {
    h.push_back(random_domain_matrix(f, rng));
    gh.push_back(sample_element(group, rng) * h.back());
  }
  const Tensor fh = f.evaluate(stack_mats(h)), fgh = f.evaluate(stack_mats(gh));
  const std::size_t k = f.k();
  double worst = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    double diff = 0.0, mag = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      diff += std::abs(fh[t * k + j] - fgh[t * k + j]);
      mag += std::abs(fh[t * k + j]);
    }
    worst = std::max(worst, diff / (1.0 + mag));
  }
  return row("invariance/" + group.name(), "f(g.h) = f(h) (relative L1)", trials, worst, 1e-9, worst <= 1e-9);
}

CheckRow exact_element_check(const GroupSpec& group, std::size_t trials, std::uint64_t seed) {
  const SeparatingInvariant f = standard_invariant(group, seed);
  Rng rng(derive_seed(seed, "elements"));
  std::vector<Mat> g;
  for (std::size_t t = 0; t < trials; ++t) g.push_back(sample_element(group, rng));
  const Tensor loss = orbit_loss(f, stack_mats(g), Norm::l1);
  double worst = 0.0;
  for (double v : loss.values()) worst = std::max(worst, v);
  return row("orbit-loss/" + group.name(), "orbit_loss(sampled element)", trials, worst, 1e-9, worst <= 1e-9);
}

CheckRow zero_loss_membership_check(const GroupSpec& group, std::size_t starts, std::uint64_t seed) {
  const std::string suite = "orbit-loss/" + group.name();
  const std::string property = "loss <= 1e-9 implies member (tol 1e-4)";
  const SeparatingInvariant f = standard_invariant(group, seed);
  const std::size_t n = group.n, k = f.k();
  const auto fi = f.at_identity().values();
  Rng rng(derive_seed(seed, "gauss-newton"));

  auto residual = [&](const Mat& h) {
    const Tensor out = f.evaluate(to_tensor(h));
    Eigen::VectorXd r(static_cast<Eigen::Index>(k));
    for (std::size_t j = 0; j < k; ++j) r(static_cast<Eigen::Index>(j)) = out[j] - fi[j];
    return r;
  };
  auto jacobian = [&](const Mat& h) {
    Eigen::MatrixXd jac(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n * n));
    for (std::size_t j = 0; j < k; ++j) {
      Tensor p = Tensor::parameter({n, n}, std::vector<double>(h.data(), h.data() + h.size()));
      std::vector<double> pick(k, 0.0);
      pick[j] = 1.0;
      Tensor s = sum(mul(f.evaluate(p), Tensor::constant({k}, pick)));
      s.backward();
      const auto g = p.grad();
      for (std::size_t i = 0; i < n * n; ++i) jac(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = g[i];
    }
    return jac;
  };

  std::size_t found = 0;
  double worst = 0.0;
  bool ok = true;
  for (std::size_t s = 0; s < starts; ++s) {
    // Discrete groups: start near a random element, otherwise near the identity.
    Mat h = (group.family == GroupFamily::symmetric ? sample_element(group, rng)
                                                    : Mat::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n))) +
            gaussian_mat(n, n, rng, group.family == GroupFamily::symmetric ? 0.1 : 0.5);
    if (group.family == GroupFamily::special_orthogonal || group.family == GroupFamily::special_linear) {
      if (h.determinant() < 0) h.col(0) *= -1.0;
    }
    Eigen::VectorXd r = residual(h);
    for (int it = 0; it < 100 && r.lpNorm<1>() > 1e-13; ++it) {
      const Eigen::MatrixXd jac = jacobian(h);
      const Eigen::VectorXd step = jac.completeOrthogonalDecomposition().solve(-r);
      double t = 1.0;
      bool improved = false;
      for (int halving = 0; halving < 30; ++halving, t *= 0.5) {
        Mat trial = h;
        for (std::size_t i = 0; i < n * n; ++i) trial.data()[i] += t * step(static_cast<Eigen::Index>(i));
        const Eigen::VectorXd rt = residual(trial);
        if (rt.lpNorm<1>() < r.lpNorm<1>()) {
          h = trial;
          r = rt;
          improved = true;
          break;
        }
      }
      if (!improved) break;
    }
    if (r.lpNorm<1>() <= 1e-9) {
      ++found;
      const double res = membership_residual(group, h);
      worst = std::max(worst, res);
      ok = ok && is_member(group, h, 1e-4);
    }
  }
  std::ostringstream note;
  note << found << " of " << starts << " starts reached loss <= 1e-9";
  return row(suite, property, found, worst, 1e-4, ok && found > 0, note.str());
}

std::vector<CheckRow> projection_suite(const GroupSpec& group, std::size_t pairs, std::uint64_t seed) {
  const std::string suite = "projection/" + group.name();
  const SeparatingInvariant raw = SeparatingInvariant::for_group(group, derive_seed(seed, "witness"));
  const SeparatingInvariant f = raw.project(derive_seed(seed, "projection"));
  if (!f.projected()) {
    return {row(suite, "projection", 0, 0.0, 0.0, true,
                "k = " + std::to_string(raw.k()) + " <= 2n^2+1; no projection applied")};
  }
  Rng rng(derive_seed(seed, "projection-pairs"));
  std::vector<Mat> a, b, ga;
  for (std::size_t t = 0; t < pairs; ++t) {
    a.push_back(random_domain_matrix(f, rng));
    b.push_back(random_domain_matrix(f, rng));
    ga.push_back(sample_element(group, rng) * a.back());
  }
  const Tensor ta = stack_mats(a);
  const auto intra = orbit_distance(f, ta, stack_mats(ga), Norm::l1);
  const auto inter = orbit_distance(f, ta, stack_mats(b), Norm::l1);
  double intra_worst = 0.0, inter_min = kInf;
  for (std::size_t t = 0; t < pairs; ++t) {
    intra_worst = std::max(intra_worst, intra[t]);
    inter_min = std::min(inter_min, inter[t]);
  }
  const std::string dims = std::to_string(raw.k()) + " -> " + std::to_string(f.k()) + " components";
  return {row(suite, "projected intra-orbit (max d)", pairs, intra_worst, 1e-9, intra_worst <= 1e-9, dims),
          row(suite, "projected inter-orbit (min d) > bound", pairs, inter_min, 1e-6, inter_min > 1e-6, dims)};
}

std::vector<CheckRow> membership_suite(const GroupSpec& group, std::size_t trials, std::uint64_t seed) {
  const std::string suite = "membership/" + group.name();
  Rng rng(derive_seed(seed, "membership"));
  double sample_worst = 0.0, product_worst = 0.0, inverse_worst = 0.0;
  bool samples_ok = true, products_ok = true;
  const auto n = static_cast<Eigen::Index>(group.n);
  for (std::size_t t = 0; t < trials; ++t) {
    const Mat g = sample_element(group, rng), h = sample_element(group, rng);
    samples_ok = samples_ok && is_member(group, g, 1e-8);
    sample_worst = std::max(sample_worst, membership_residual(group, g));
    const Mat gh = g * h;
    // Products of sampled SL/GL elements are badly scaled; compare relative to their size.
    const double scale = group.family == GroupFamily::special_linear ? std::max(1.0, std::pow(gh.norm(), 2.0 * static_cast<double>(group.n)) * 1e-14 / 1e-8) : 1.0;
    products_ok = products_ok && is_member(group, gh, 1e-8 * scale);
    product_worst = std::max(product_worst, membership_residual(group, gh) / scale);
    inverse_worst = std::max(inverse_worst, max_abs(approx_inverse(group, g) * g - Mat::Identity(n, n)) /
                                                std::max(1.0, g.norm() * approx_inverse(group, g).norm() * 1e-6));
  }
  return {row(suite, "sampled elements are members", trials, sample_worst, 1e-8, samples_ok),
          row(suite, "closure under products", trials, product_worst, 1e-8, products_ok),
          row(suite, "approx_inverse(g) g = I", trials, inverse_worst, 1e-9, inverse_worst <= 1e-9)};
}

std::vector<CheckRow> group_property_suite(const GroupSpec& group, std::size_t trials, std::uint64_t seed) {
  std::vector<CheckRow> rows = metric_axiom_suite(group, trials, seed);
  rows.push_back(invariance_check(group, trials, seed));
  rows.push_back(exact_element_check(group, trials, seed));
  rows.push_back(zero_loss_membership_check(group, std::min<std::size_t>(trials, 100), seed));
  for (auto& r : projection_suite(group, std::min<std::size_t>(trials, 100), seed)) rows.push_back(std::move(r));
  for (auto& r : membership_suite(group, trials, seed)) rows.push_back(std::move(r));
  return rows;
}

// ---------------------------------------------------------------------------
// Gradient suite

namespace {

struct GradCase {
  std::string name;
  /// Draws fresh inputs and returns the scalar function to differentiate.
  std::function<std::pair<ScalarFn, std::vector<Tensor>>(Rng&)> make;
};

GradCase unary_case(std::string name, std::function<Tensor(const Tensor&)> op,
                    std::function<Tensor(Rng&)> input) {
  return {std::move(name), [op, input](Rng& rng) {
            const std::uint64_t w = rng();
            ScalarFn fn = [op, w](const std::vector<Tensor>& in) { return contract(op(in[0]), w); };
            return std::make_pair(fn, std::vector<Tensor>{input(rng)});
          }};
}

GradCase binary_case(std::string name, std::function<Tensor(const Tensor&, const Tensor&)> op,
                     std::function<Tensor(Rng&)> left, std::function<Tensor(Rng&)> right) {
  return {std::move(name), [op, left, right](Rng& rng) {
            const std::uint64_t w = rng();
            ScalarFn fn = [op, w](const std::vector<Tensor>& in) { return contract(op(in[0], in[1]), w); };
            return std::make_pair(fn, std::vector<Tensor>{left(rng), right(rng)});
          }};
}

/// Central differences over every parameter entry, compared as one vector.
/// Per-tensor ratios are dominated by rounding when a tensor's gradient is
/// tiny next to the loss (saturated units), so the composite loss uses this.
double whole_gradient_error(const std::function<Tensor()>& loss, std::vector<Tensor> params, double step = 1e-6) {
  for (Tensor& p : params) p.zero_grad();
  Tensor out = loss();
  out.backward();
  double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
  for (Tensor& p : params) {
    const auto g = p.grad();
    std::vector<double> analytic(g.begin(), g.end());
    analytic.resize(p.size(), 0.0);
    auto values = p.mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      const double up = loss().item();
      values[i] = saved - step;
      const double down = loss().item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      diff2 += (analytic[i] - numeric) * (analytic[i] - numeric);
      a2 += analytic[i] * analytic[i];
      n2 += numeric * numeric;
    }
  }
  for (Tensor& p : params) p.zero_grad();
  return std::sqrt(diff2) / std::max({std::sqrt(a2), std::sqrt(n2), 1e-8});
}

std::function<Tensor(Rng&)> normal(Shape shape, double s = 1.0) {
  return [shape, s](Rng& rng) { return gaussian_tensor(shape, rng, s); };
}

std::vector<GradCase> gradient_cases() {
  std::vector<GradCase> cases;
  cases.push_back(binary_case("matmul", [](const Tensor& a, const Tensor& b) { return matmul(a, b); },
                              normal({3, 4}), normal({4, 2})));
  cases.push_back(binary_case("matmul batched", [](const Tensor& a, const Tensor& b) { return matmul(a, b); },
                              normal({2, 3, 4}), normal({2, 4, 2})));
  cases.push_back(binary_case("matmul broadcast", [](const Tensor& a, const Tensor& b) { return matmul(a, b); },
                              normal({3, 3}), normal({2, 3, 2})));
  cases.push_back(unary_case("transpose", [](const Tensor& a) { return transpose(a); }, normal({2, 3, 4})));
  cases.push_back(unary_case("determinant", [](const Tensor& a) { return determinant(a); },
                             [](Rng& rng) { return well_conditioned(4, rng); }));
  cases.push_back(unary_case("determinant batched", [](const Tensor& a) { return determinant(a); },
                             [](Rng& rng) { return well_conditioned(3, rng, 3); }));
  cases.push_back(unary_case("inverse", [](const Tensor& a) { return inverse(a); },
                             [](Rng& rng) { return well_conditioned(3, rng); }));
  cases.push_back(unary_case("inverse batched", [](const Tensor& a) { return inverse(a); },
                             [](Rng& rng) { return well_conditioned(4, rng, 2); }));
  cases.push_back(unary_case("reshape", [](const Tensor& a) { return reshape(a, {6, 2}); }, normal({3, 4})));
  cases.push_back(binary_case("concat axis 0", [](const Tensor& a, const Tensor& b) { return concat({a, b}, 0); },
                              normal({2, 3}), normal({1, 3})));
  cases.push_back(binary_case("concat axis 1", [](const Tensor& a, const Tensor& b) { return concat({a, b}, 1); },
                              normal({2, 3}), normal({2, 2})));
  cases.push_back(unary_case("gather_columns", [](const Tensor& a) { return gather_columns(a, {4, 0, 0, 2}); },
                             normal({3, 5})));
  cases.push_back(unary_case("slice_rows", [](const Tensor& a) { return slice_rows(a, 1, 3); }, normal({4, 2})));
  for (auto [name, op] : std::vector<std::pair<std::string, Tensor (*)(const Tensor&, const Tensor&)>>{
           {"add", add}, {"sub", sub}, {"mul", mul}}) {
    cases.push_back(binary_case(name, op, normal({3, 4}), normal({3, 4})));
    cases.push_back(binary_case(name + " broadcast", op, normal({2, 3, 4}), normal({4})));
  }
  cases.push_back(binary_case("div", [](const Tensor& a, const Tensor& b) { return div(a, b); }, normal({3, 4}),
                              [](Rng& rng) { return away_from_zero({3, 4}, rng, 0.5); }));
  cases.push_back(unary_case("scale", [](const Tensor& a) { return scale(a, -1.7); }, normal({5})));
  cases.push_back(unary_case("add_scalar", [](const Tensor& a) { return add_scalar(a, 0.3); }, normal({5})));
  cases.push_back(unary_case("neg", [](const Tensor& a) { return neg(a); }, normal({5})));
  cases.push_back(unary_case("square", [](const Tensor& a) { return square(a); }, normal({5})));
  cases.push_back(unary_case("abs", [](const Tensor& a) { return abs(a); },
                             [](Rng& rng) { return away_from_zero({6}, rng); }));
  cases.push_back(unary_case("silu", [](const Tensor& a) { return silu(a); }, normal({6}, 2.0)));
  cases.push_back(unary_case("relu", [](const Tensor& a) { return relu(a); },
                             [](Rng& rng) { return away_from_zero({6}, rng); }));
  cases.push_back(unary_case("signed_log1p", [](const Tensor& a) { return signed_log1p(a); },
                             [](Rng& rng) { return away_from_zero({6}, rng, 0.05); }));
  cases.push_back(unary_case("power", [](const Tensor& a) { return power(a, -0.25); },
                             [](Rng& rng) { return positive({6}, rng); }));
  cases.push_back(binary_case("scale_examples", [](const Tensor& a, const Tensor& s) { return scale_examples(a, s); },
                              normal({3, 2, 2}), normal({3})));
  cases.push_back(unary_case("sum", [](const Tensor& a) { return sum(a); }, normal({3, 4})));
  cases.push_back(unary_case("mean", [](const Tensor& a) { return mean(a); }, normal({3, 4})));
  cases.push_back(unary_case("sum_last", [](const Tensor& a) { return sum_last(a); }, normal({3, 4})));
  cases.push_back(unary_case("l1_norm", [](const Tensor& a) { return l1_norm(a); },
                             [](Rng& rng) { return away_from_zero({3, 4}, rng); }));
  cases.push_back(unary_case("l2_norm", [](const Tensor& a) { return l2_norm(a); }, normal({3, 4})));
  cases.push_back(unary_case("softmax", [](const Tensor& a) { return softmax(a); }, normal({3, 5})));
  cases.push_back({"cross_entropy", [](Rng& rng) {
                     std::vector<int> labels{static_cast<int>(rng() % 5), static_cast<int>(rng() % 5),
                                             static_cast<int>(rng() % 5)};
                     ScalarFn fn = [labels](const std::vector<Tensor>& in) { return cross_entropy(in[0], labels); };
                     return std::make_pair(fn, std::vector<Tensor>{gaussian_tensor({3, 5}, rng)});
                   }});
  cases.push_back({"mse", [](Rng& rng) {
                     ScalarFn fn = [](const std::vector<Tensor>& in) { return mse(in[0], in[1]); };
                     return std::make_pair(fn, std::vector<Tensor>{gaussian_tensor({4, 2}, rng),
                                                                   gaussian_tensor({4, 2}, rng)});
                   }});
  cases.push_back(unary_case("power_sums",
                             [](const Tensor& h) { return power_sums(h, multi_indices(3, 3)); }, normal({2, 3, 3})));

  for (const char* name : {"so2", "so3", "o3", "lorentz13", "sl2", "sym3"}) {
    for (Norm norm : {Norm::l1, Norm::l2}) {
      const GroupSpec g = parse_group(name);
      const SeparatingInvariant f = standard_invariant(g, 5);
      const std::size_t n = g.n;
      cases.push_back({"orbit_loss " + std::string(name) + " " + to_string(norm), [f, n, norm](Rng& rng) {
                         ScalarFn fn = [f, norm](const std::vector<Tensor>& in) {
                           return mean(orbit_loss(f, in[0], norm));
                         };
                         return std::make_pair(fn, std::vector<Tensor>{gaussian_tensor({3, n, n}, rng)});
                       }});
    }
  }
  for (const char* name : {"lorentz13", "sl3", "so3"}) {
    const GroupSpec g = parse_group(name);
    cases.push_back(unary_case("approx_inverse " + std::string(name),
                               [g](const Tensor& h) { return approx_inverse(g, h); },
                               [n = g.n](Rng& rng) { return well_conditioned(n, rng, 2); }));
  }
  cases.push_back({"featurize_noise", [](Rng& rng) {
                     ScalarFn fn = [w = rng()](const std::vector<Tensor>& in) {
                       return contract(featurize_noise(in[0], in[1], minkowski_metric(4)), w);
                     };
                     return std::make_pair(fn, std::vector<Tensor>{well_conditioned(4, rng, 2),
                                                                   gaussian_tensor({2, 4, 3}, rng)});
                   }});
  for (bool orientation : {false, true}) {
    cases.push_back({std::string("symmetrizer forward so2") + (orientation ? " oriented" : ""),
                     [orientation](Rng& rng) {
                       SymmetrizerOptions o;
                       o.hidden = 8;
                       o.orientation = orientation;
                       Rng init(rng());
                       auto net = std::make_shared<ScalarEquivariantNet>(parse_group("so2"), 3, 2, o, init);
                       ScalarFn fn = [net, w = rng()](const std::vector<Tensor>& in) {
                         return contract(net->forward(in[0], in[1]), w);
                       };
                       return std::make_pair(fn, std::vector<Tensor>{gaussian_tensor({2, 2, 3}, rng),
                                                                     gaussian_tensor({2, 2}, rng)});
                     }});
  }
  return cases;
}

}  // namespace

std::vector<CheckRow> gradient_suite(std::size_t points, std::uint64_t seed) {
  std::vector<CheckRow> rows;
  Rng rng(derive_seed(seed, "gradients"));
  for (const GradCase& c : gradient_cases()) {
    double worst = 0.0;
    for (std::size_t p = 0; p < points; ++p) {
      auto [fn, inputs] = c.make(rng);
      worst = std::max(worst, check_gradient(fn, inputs).max_relative_error);
    }
    rows.push_back(row("gradient", c.name, points, worst, 1e-5, worst <= 1e-5));
  }

  // GL: the invariant is constant on its domain, so the exact gradient is zero.
  {
    const SeparatingInvariant f = standard_invariant(parse_group("gl2"), 5);
    double worst = 0.0;
    for (std::size_t p = 0; p < points; ++p) {
      const Tensor start = well_conditioned(2, rng, 2);
      Tensor h = Tensor::parameter({2, 2, 2}, std::vector<double>(start.values().begin(), start.values().end()));
      Tensor loss = mean(orbit_loss(f, h));
      loss.backward();
      for (double g : h.grad()) worst = std::max(worst, std::abs(g));
    }
    rows.push_back(row("gradient", "orbit_loss gl2 (constant; |grad| absolute)", points, worst, 1e-9, worst <= 1e-9));
  }

  // Joint loss through base model, symmetrizer, featurization and trainable noise.
  {
    double worst = 0.0;
    for (std::size_t p = 0; p < points; ++p) {
      ModelSpec spec;
      spec.method = Method::ps_orbit;
      spec.base_hidden = {8};
      spec.symmetrizer.hidden = 8;
      spec.d_eps = 2;
      spec.columns = 4;
      spec.input_scale = 4.0;
      SymmetrizedModel model(spec, rng());
      // Give the noise a spread so its gradient is exercised.
      for (double& v : model.noise().parameters()[1].mutable_values()) v = 0.3;
      const auto data = generate_particle_dataset(4, 1, 1, rng());
      const Batch batch = data.train.all();
      const SeparatingInvariant f = spec.invariant();
      const std::uint64_t root = rng();
      auto loss = [&] { return joint_loss(model, batch, f, 1.0, 2, {root, 1}).total; };
      worst = std::max(worst, whole_gradient_error(loss, model.parameters()));
    }
    rows.push_back(row("gradient", "joint_loss (all parameters as one vector)", points, worst, 1e-5, worst <= 1e-5));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Equivariance suite

std::vector<CheckRow> equivariance_suite(std::size_t trials, std::uint64_t seed) {
  std::vector<CheckRow> rows;
  Rng rng(derive_seed(seed, "equivariance"));

  struct NetCase {
    std::string name;
    std::string group;
    bool orientation;
    std::size_t vectors;
  };
  for (const NetCase& c : {NetCase{"so2", "so2", false, 3}, NetCase{"so2 oriented", "so2", true, 3},
                           NetCase{"o2", "o2", false, 3}, NetCase{"so3", "so3", false, 4},
                           NetCase{"o3", "o3", false, 4}, NetCase{"lorentz13", "lorentz13", false, 5}}) {
    const GroupSpec g = parse_group(c.group);
    SymmetrizerOptions o;
    o.hidden = 32;
    o.orientation = c.orientation;
    Rng init(rng());
    ScalarEquivariantNet net(g, c.vectors, 0, o, init);
    double worst = 0.0;
    for (std::size_t t = 0; t < trials; ++t) {
      const Tensor u = gaussian_tensor({1, g.n, c.vectors}, rng, 0.5);
      const Mat e = sample_element(g, rng);
      const Tensor lhs = net.forward(act(g, e, u), Tensor());
      const Tensor rhs = act(g, e, net.forward(u, Tensor()));
      double scale = 1.0, diff = 0.0;
      for (std::size_t i = 0; i < lhs.size(); ++i) {
        diff = std::max(diff, std::abs(lhs[i] - rhs[i]));
        scale = std::max(scale, std::abs(rhs[i]));
      }
      worst = std::max(worst, diff / scale);
    }
    rows.push_back(row("equivariance", "q(g.u) = g.q(u) " + c.name, trials, worst, 1e-6, worst <= 1e-6));
  }

  // Lorentz symmetrizer with trivial-action noise featurized against x.
  {
    const GroupSpec g = parse_group("lorentz13");
    SymmetrizerOptions o;
    o.hidden = 32;
    Rng init(rng());
    ScalarEquivariantNet net(g, 8, 0, o, init);
    double worst = 0.0, round_trip = 0.0;
    const Mat metric = minkowski_metric(4);
    for (std::size_t t = 0; t < trials; ++t) {
      const Tensor x = gaussian_tensor({1, 4, 4}, rng, 0.5);
      const Tensor eps = gaussian_tensor({1, 4, 4}, rng);
      const Mat e = sample_element(g, rng);
      auto q = [&](const Tensor& xx) {
        return net.forward(symmetrizer_vectors(xx, eps, NoiseAction::trivial, Combine::concat, metric), Tensor());
      };
      const Tensor lhs = q(act(g, e, x));
      const Tensor rhs = act(g, e, q(x));
      double scale = 1.0, diff = 0.0;
      for (std::size_t i = 0; i < lhs.size(); ++i) {
        diff = std::max(diff, std::abs(lhs[i] - rhs[i]));
        scale = std::max(scale, std::abs(rhs[i]));
      }
      worst = std::max(worst, diff / scale);
      const Mat xm = to_mat(reshape(x, {4, 4}));
      const Mat z = to_mat(reshape(featurize_noise(x, eps, metric), {4, 4}));
      const Mat back = xm.transpose() * metric * z;
      round_trip = std::max(round_trip, max_abs(back - to_mat(reshape(eps, {4, 4}))));
    }
    rows.push_back(row("equivariance", "q(g.x, eps) = g.q(x, eps) lorentz13 featurized", trials, worst, 1e-6,
                       worst <= 1e-6));
    rows.push_back(row("equivariance", "featurization round trip x^T Lambda z = eps", trials, round_trip, 1e-10,
                       round_trip <= 1e-10));
  }

  // Phi invariance with shared noise: the learned (untrained) q on the particle
  // model, and an exact q (polar factor) on o3.
  {
    ModelSpec spec;
    spec.method = Method::ps_orbit;
    spec.base_hidden = {16};
    spec.symmetrizer.hidden = 16;
    spec.d_eps = 4;
    spec.input_scale = 4.0;
    SymmetrizedModel model(spec, rng());
    for (double& v : model.noise().parameters()[1].mutable_values()) v = 0.5;
    const auto data = generate_particle_dataset(trials, 1, 1, rng());
    const Batch batch = data.train.all();
    std::vector<Mat> elems;
    const GroupSpec g = model.group();
    for (std::size_t t = 0; t < trials; ++t) elems.push_back(sample_element(g, rng));
    const Tensor p = model.forward(batch, 4, {7, 7}).prediction;
    const Tensor q = model.forward(transform(batch, elems), 4, {7, 7}).prediction;
    double worst = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) worst = std::max(worst, std::abs(p[i] - q[i]) / std::max(1.0, std::abs(p[i])));
    rows.push_back(row("equivariance", "Phi(g.x) = Phi(x) lorentz13, learned q, shared eps", trials, worst, 1e-6,
                       worst <= 1e-6));
  }
  {
    ModelSpec spec;
    spec.method = Method::ps_orbit;
    spec.group = "o3";
    spec.columns = 3;
    spec.base_hidden = {16};
    spec.symmetrizer.hidden = 8;
    spec.d_eps = 3;
    SymmetrizedModel model(spec, rng());
    model.override_symmetrizer([](const Tensor& u, const Tensor&) {
      // Polar factor of the data block: an exact, equivariant element of O(3).
      const std::size_t b = u.dim(0), m = u.dim(2);
      std::vector<Mat> out;
      for (std::size_t i = 0; i < b; ++i) {
        Mat x(3, 3);
        for (int r = 0; r < 3; ++r)
          for (int c = 0; c < 3; ++c) x(r, c) = u[(i * 3 + static_cast<std::size_t>(r)) * m + static_cast<std::size_t>(c)];
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(x.transpose() * x);
        out.push_back(x * es.operatorInverseSqrt());
      }
      return stack_mats(out);
    });
    Dataset d;
    d.x = gaussian_tensor({trials, 3, 3}, rng);
    d.targets.assign(trials, 0.0);
    const Batch batch = d.all();
    const GroupSpec g = model.group();
    std::vector<Mat> elems;
    for (std::size_t t = 0; t < trials; ++t) elems.push_back(sample_element(g, rng));
    const Tensor p = model.forward(batch, 4, {3, 3}).prediction;
    const Tensor q = model.forward(transform(batch, elems), 4, {3, 3}).prediction;
    double worst = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) worst = std::max(worst, std::abs(p[i] - q[i]) / std::max(1.0, std::abs(p[i])));
    const auto f = spec.invariant();
    double loss = 0.0;
    for (double v : orbit_loss(f, model.forward(batch, 1, {3, 3}).h).values()) loss = std::max(loss, v);
    std::ostringstream note;
    note << "max orbit loss of q " << loss;
    rows.push_back(row("equivariance", "Phi(g.x) = Phi(x) o3, exact q, shared eps", trials, worst, 1e-6,
                       worst <= 1e-6, note.str()));
  }
  return rows;
}

std::string format_rows(const std::vector<CheckRow>& rows) {
  std::ostringstream out;
  char line[512];
  for (const CheckRow& r : rows) {
    std::snprintf(line, sizeof line, "%-4s %-26s %-52s trials=%-5zu defect=%-12.4g bound=%-8.2g%s%s\n",
                  r.passed ? "PASS" : "FAIL", r.suite.c_str(), r.property.c_str(), r.trials, r.defect, r.bound,
                  r.note.empty() ? "" : "  ", r.note.c_str());
    out << line;
  }
  return out.str();
}

bool all_passed(const std::vector<CheckRow>& rows) {
  return std::all_of(rows.begin(), rows.end(), [](const CheckRow& r) { return r.passed; });
}

}  // namespace orbitsym
