#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "orbitsym/errors.hpp"
#include "orbitsym/gradcheck.hpp"
#include "orbitsym/invariants.hpp"

using namespace orbitsym;

namespace {

Mat randn_mat(std::size_t n, Rng& rng) {
  Mat m(n, n);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = standard_normal(rng);
  return m;
}

std::vector<double> vec(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

std::size_t binomial(std::size_t n, std::size_t k) {
  std::size_t r = 1;
  for (std::size_t i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

}  // namespace

TEST(Invariant, OutputDimensionPerFamily) {
  for (std::size_t n = 2; n <= 4; ++n) {
    EXPECT_EQ(SeparatingInvariant::for_group(make_group(GroupFamily::orthogonal, n)).k(), n * n);
    EXPECT_EQ(SeparatingInvariant::for_group(make_group(GroupFamily::special_orthogonal, n)).k(), n * n + 1);
    EXPECT_EQ(SeparatingInvariant::for_group(make_group(GroupFamily::special_linear, n)).k(), 1u);
    EXPECT_EQ(SeparatingInvariant::for_group(make_group(GroupFamily::general_linear, n)).k(), 2 * n * n + 1);
    EXPECT_EQ(SeparatingInvariant::for_group(make_group(GroupFamily::symmetric, n)).k(), binomial(2 * n, n));
  }
  EXPECT_EQ(SeparatingInvariant::for_group(make_group(GroupFamily::lorentz, 4)).k(), 16u);
}

TEST(Invariant, SeparationDomains) {
  EXPECT_EQ(SeparatingInvariant::for_group(make_group(GroupFamily::orthogonal, 2)).domain(), SeparationDomain::all);
  EXPECT_EQ(SeparatingInvariant::for_group(make_group(GroupFamily::general_linear, 2)).domain(),
            SeparationDomain::full_rank_only);
}

TEST(Invariant, RotationMapsToIdentityGramAndUnitDet) {
  const auto f = SeparatingInvariant::for_group(make_group(GroupFamily::special_orthogonal, 2));
  for (double theta : {0.0, 0.3, 2.0, 5.9}) {
    const auto v = vec(f.evaluate(to_tensor(rotation2d(theta))));
    const std::vector<double> expected = {1, 0, 0, 1, 1};
    for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(v[i], expected[i], 1e-15);
  }
}

TEST(Invariant, LorentzAtIdentityIsMetric) {
  const auto f = SeparatingInvariant::for_group(make_group(GroupFamily::lorentz, 4));
  const auto v = vec(f.evaluate(Tensor::eye(4)));
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(v[i * 4 + j], i != j ? 0.0 : (i == 0 ? 1.0 : -1.0));
}

TEST(Invariant, PowerSumsHandValuesAndRowSwap) {
  const auto f = SeparatingInvariant::for_group(make_group(GroupFamily::symmetric, 2));
  const auto& alphas = f.multi_indices();
  const auto idx = [&](std::vector<int> a) {
    return static_cast<std::size_t>(std::find(alphas.begin(), alphas.end(), a) - alphas.begin());
  };
  const auto v = vec(f.evaluate(Tensor::constant({2, 2}, {1, 2, 3, 4})));
  const auto swapped = vec(f.evaluate(Tensor::constant({2, 2}, {3, 4, 1, 2})));
  EXPECT_EQ(v[idx({1, 0})], 4.0);
  EXPECT_EQ(v[idx({0, 1})], 6.0);
  EXPECT_EQ(v[idx({0, 0})], 2.0);
  EXPECT_EQ(v[idx({1, 1})], 1.0 * 2 + 3.0 * 4);
  EXPECT_EQ(v, swapped);
}

TEST(Invariant, MultiIndicesAreLexicographic) {
  const auto a = multi_indices(2, 2);
  const std::vector<std::vector<int>> expected = {{0, 0}, {0, 1}, {0, 2}, {1, 0}, {1, 1}, {2, 0}};
  EXPECT_EQ(a, expected);
  const auto four = multi_indices(4, 4);
  EXPECT_TRUE(std::is_sorted(four.begin(), four.end()));
}

TEST(Invariant, GlAtIdentityIsSquaredWitnessDeterminant) {
  const auto f = SeparatingInvariant::for_group(make_group(GroupFamily::general_linear, 2), 17);
  const auto v = vec(f.evaluate(Tensor::eye(2)));
  ASSERT_EQ(v.size(), f.witnesses().size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double d = f.witnesses()[i].determinant();
    EXPECT_NEAR(v[i], d * d, 1e-12 * std::max(1.0, d * d));
  }
}

TEST(Invariant, GlRejectsRankDeficientInput) {
  const auto f = SeparatingInvariant::for_group(make_group(GroupFamily::general_linear, 2));
  EXPECT_THROW(f.evaluate(Tensor::constant({2, 2}, {1, 2, 2, 4})), DomainError);
}

TEST(Invariant, WrongInputShapeThrows) {
  const auto f = SeparatingInvariant::for_group(make_group(GroupFamily::orthogonal, 3));
  EXPECT_THROW(f.evaluate(Tensor::zeros({2, 2})), DimensionError);
}

TEST(Invariant, BatchedEvaluationMatchesSingle) {
  for (const char* name : {"so3", "o2", "lorentz13", "sl2", "gl2", "sym3"}) {
    const GroupSpec g = parse_group(name);
    const auto f = SeparatingInvariant::for_group(g, 5);
    Rng rng(10);
    std::vector<Mat> hs = {randn_mat(g.n, rng), randn_mat(g.n, rng), randn_mat(g.n, rng)};
    const auto batched = vec(f.evaluate(stack_mats(hs)));
    for (std::size_t b = 0; b < hs.size(); ++b) {
      const auto single = vec(f.evaluate(to_tensor(hs[b])));
      for (std::size_t i = 0; i < f.k(); ++i) EXPECT_DOUBLE_EQ(batched[b * f.k() + i], single[i]) << name;
    }
  }
}

TEST(Invariant, InvariantUnderGroupAction) {
  for (const char* name : {"so2", "so3", "o2", "o3", "lorentz13", "sl2", "sl3", "gl2", "gl3", "sym3", "sym4"}) {
    const GroupSpec g = parse_group(name);
    const auto f = SeparatingInvariant::for_group(g, 3);
    Rng rng(derive_seed(11, name));
    for (int t = 0; t < 100; ++t) {
      const Mat h = randn_mat(g.n, rng);
      const Mat e = sample_element(g, rng);
      const auto a = vec(f.evaluate(to_tensor(h)));
      const auto b = vec(f.evaluate(to_tensor(e * h)));
      double num = 0, den = 0;
      for (std::size_t i = 0; i < a.size(); ++i) {
        num = std::max(num, std::abs(a[i] - b[i]));
        den = std::max(den, std::abs(a[i]));
      }
      EXPECT_LE(num, 1e-9 * std::max(den, 1.0)) << name;
    }
  }
}

TEST(Projection, SymmetricFourReducesToThirtyThree) {
  const auto f = SeparatingInvariant::for_group(make_group(GroupFamily::symmetric, 4));
  EXPECT_EQ(f.k(), 70u);
  const auto p = f.project(123);
  EXPECT_EQ(p.k(), 33u);
  EXPECT_EQ(p.raw_k(), 70u);
  EXPECT_TRUE(p.projected());
  EXPECT_EQ(p.projection_seed(), 123u);
}

TEST(Projection, NoOpWhenAlreadySmall) {
  const auto f = SeparatingInvariant::for_group(make_group(GroupFamily::special_orthogonal, 3));
  const auto p = f.project(1);
  EXPECT_FALSE(p.projected());
  EXPECT_EQ(p.k(), f.k());
}

TEST(Projection, IsLinearInRawInvariant) {
  const auto f = SeparatingInvariant::for_group(make_group(GroupFamily::symmetric, 3));
  const auto p = f.project(9);
  Rng rng(12);
  const Tensor h = to_tensor(randn_mat(3, rng));
  const auto raw = vec(f.evaluate(h));
  const auto proj = vec(p.evaluate(h));
  ASSERT_EQ(proj.size(), 19u);
  Rng coeff(9);
  Mat w(19, 20);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = standard_normal(coeff);
  for (Eigen::Index j = 0; j < 19; ++j) {
    double acc = 0;
    for (Eigen::Index i = 0; i < 20; ++i) acc += w(j, i) * raw[static_cast<std::size_t>(i)];
    EXPECT_NEAR(proj[static_cast<std::size_t>(j)], acc, 1e-10 * std::max(1.0, std::abs(acc)));
  }
}

TEST(OrbitDistance, HandValues) {
  const auto f = SeparatingInvariant::for_group(make_group(GroupFamily::special_orthogonal, 2));
  const Tensor reflect = Tensor::constant({2, 2}, {1, 0, 0, -1});
  EXPECT_EQ(orbit_distance(f, reflect, Tensor::eye(2), Norm::l1).item(), 2.0);
  EXPECT_EQ(orbit_distance(f, reflect, Tensor::eye(2), Norm::l2).item(), 2.0);
  Rng rng(13);
  const Tensor h = to_tensor(randn_mat(2, rng));
  EXPECT_EQ(orbit_distance(f, h, h, Norm::l1).item(), 0.0);
}

TEST(OrbitLoss, HandValues) {
  const auto sl2 = SeparatingInvariant::for_group(make_group(GroupFamily::special_linear, 2));
  EXPECT_DOUBLE_EQ(orbit_loss(sl2, Tensor::constant({2, 2}, {2, 0, 0, 2})).item(), 3.0);
  const GroupSpec l = make_group(GroupFamily::lorentz, 4);
  const auto fl = SeparatingInvariant::for_group(l);
  Rng rng(14);
  for (int i = 0; i < 100; ++i) EXPECT_LE(orbit_loss(fl, to_tensor(sample_element(l, rng))).item(), 1e-9);
}

TEST(OrbitLoss, RandomMatrixBandForLorentz) {
  const auto f = SeparatingInvariant::for_group(make_group(GroupFamily::lorentz, 4));
  Rng rng(15);
  std::vector<double> losses;
  for (int i = 0; i < 1000; ++i) losses.push_back(orbit_loss(f, to_tensor(randn_mat(4, rng))).item());
  std::nth_element(losses.begin(), losses.begin() + 500, losses.end());
  EXPECT_GE(losses[500], 10.0);
  EXPECT_LE(losses[500], 200.0);
}

TEST(OrbitLoss, BatchedShape) {
  const auto f = SeparatingInvariant::for_group(make_group(GroupFamily::orthogonal, 3));
  Rng rng(16);
  const Tensor hs = stack_mats({randn_mat(3, rng), randn_mat(3, rng)});
  EXPECT_EQ(orbit_loss(f, hs).shape(), (Shape{2}));
}

TEST(OrbitLoss, GradientMatchesFiniteDifferences) {
  for (const char* name : {"so2", "so3", "o3", "lorentz13", "sl2", "sym3"}) {
    const GroupSpec g = parse_group(name);
    const auto f = SeparatingInvariant::for_group(g, 4).project(4);
    Rng rng(derive_seed(17, name));
    for (int p = 0; p < 20; ++p) {
      const Tensor h = to_tensor(randn_mat(g.n, rng));
      for (Norm norm : {Norm::l1, Norm::l2}) {
        const auto r = check_gradient([&](const std::vector<Tensor>& in) { return orbit_loss(f, in[0], norm); }, {h});
        EXPECT_LE(r.max_relative_error, 1e-5) << name << " " << to_string(norm);
      }
    }
  }
}

// Left multiplication by GL(n) is transitive on full-rank square matrices, so
// the GL invariant is the constant det(W_i)^2 there and its gradient vanishes.
TEST(OrbitLoss, GlInvariantIsConstantOnFullRankSquareInput) {
  const GroupSpec g = make_group(GroupFamily::general_linear, 2);
  const auto f = SeparatingInvariant::for_group(g, 4);
  Rng rng(19);
  for (int p = 0; p < 20; ++p) {
    Tensor h = Tensor::parameter({2, 2}, vec(to_tensor(randn_mat(2, rng))));
    const Tensor w = Tensor::constant({f.k()}, std::vector<double>(f.k(), 1.0));
    Tensor out = sum(mul(f.evaluate(h), w));
    out.backward();
    EXPECT_NEAR(out.item(), sum(mul(f.at_identity(), w)).item(), 1e-9 * std::abs(out.item()));
    for (double gi : h.grad()) EXPECT_LE(std::abs(gi), 1e-8);
  }
}

TEST(PowerSums, GradientMatchesFiniteDifferences) {
  const auto alphas = multi_indices(3, 3);
  Rng rng(18);
  for (int p = 0; p < 20; ++p) {
    Mat a(6, 3);
    for (Eigen::Index k = 0; k < a.size(); ++k) a.data()[k] = standard_normal(rng);
    const Tensor h = reshape(to_tensor(a), {2, 3, 3});
    Mat w(2, alphas.size());
    for (Eigen::Index k = 0; k < w.size(); ++k) w.data()[k] = standard_normal(rng);
    const Tensor wt = to_tensor(w);
    const auto r = check_gradient(
        [&](const std::vector<Tensor>& in) { return sum(mul(power_sums(in[0], alphas), wt)); }, {h});
    EXPECT_LE(r.max_relative_error, 1e-5);
  }
}

TEST(Norm, ParseRoundTrip) {
  EXPECT_EQ(parse_norm("l1"), Norm::l1);
  EXPECT_EQ(parse_norm(to_string(Norm::l2)), Norm::l2);
  EXPECT_THROW(parse_norm("linf"), ConfigError);
}
