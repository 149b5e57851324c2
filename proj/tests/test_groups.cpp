#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "orbitsym/errors.hpp"
#include "orbitsym/groups.hpp"

using namespace orbitsym;

namespace {

std::vector<GroupSpec> all_groups() {
  return {make_group(GroupFamily::special_orthogonal, 2), make_group(GroupFamily::special_orthogonal, 3),
          make_group(GroupFamily::orthogonal, 2),         make_group(GroupFamily::orthogonal, 4),
          make_group(GroupFamily::lorentz, 4),            make_group(GroupFamily::special_linear, 2),
          make_group(GroupFamily::special_linear, 3),     make_group(GroupFamily::general_linear, 2),
          make_group(GroupFamily::symmetric, 3),          make_group(GroupFamily::symmetric, 4)};
}

double max_abs(const Mat& m) { return m.cwiseAbs().maxCoeff(); }

Mat identity(std::size_t n) { return Mat::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n)); }

}  // namespace

TEST(ParseGroup, AcceptedSpellings) {
  EXPECT_EQ(parse_group("so2").family, GroupFamily::special_orthogonal);
  EXPECT_EQ(parse_group("so3").n, 3u);
  EXPECT_EQ(parse_group("o2").family, GroupFamily::orthogonal);
  const GroupSpec l = parse_group("lorentz13");
  EXPECT_EQ(l.family, GroupFamily::lorentz);
  EXPECT_EQ(l.n, 4u);
  EXPECT_EQ(parse_group("sl 3").family, GroupFamily::special_linear);
  EXPECT_EQ(parse_group("gl2").family, GroupFamily::general_linear);
  EXPECT_EQ(parse_group("sym 4").n, 4u);
}

TEST(ParseGroup, RejectsUnsupported) {
  EXPECT_THROW(parse_group("so99"), ConfigError);
  EXPECT_THROW(parse_group("su2"), ConfigError);
  EXPECT_THROW(parse_group(""), ConfigError);
  EXPECT_THROW(parse_group("sym"), ConfigError);
}

TEST(GroupSpec, MetricIsSymmetricAndInvolutive) {
  for (const auto& g : all_groups()) {
    if (!g.metric) continue;
    const Mat& m = *g.metric;
    EXPECT_EQ(max_abs(m - m.transpose()), 0.0) << g.name();
    EXPECT_EQ(max_abs(m * m - identity(g.n)), 0.0) << g.name();
  }
  EXPECT_FALSE(make_group(GroupFamily::special_linear, 2).metric.has_value());
  const Mat lam = *make_group(GroupFamily::lorentz, 4).metric;
  EXPECT_EQ(lam(0, 0), 1.0);
  EXPECT_EQ(lam(3, 3), -1.0);
}

TEST(Sampling, EverySampleIsMember) {
  for (const auto& g : all_groups()) {
    Rng rng(derive_seed(1, g.name()));
    for (int i = 0; i < 200; ++i) EXPECT_TRUE(is_member(g, sample_element(g, rng), 1e-10)) << g.name();
  }
}

TEST(Sampling, LorentzDefiningRelationAndSlDeterminant) {
  const GroupSpec l = make_group(GroupFamily::lorentz, 4);
  const GroupSpec sl = make_group(GroupFamily::special_linear, 3);
  Rng rng(2);
  for (int i = 0; i < 200; ++i) {
    const Mat g = sample_element(l, rng);
    EXPECT_LE(max_abs(g.transpose() * *l.metric * g - *l.metric), 1e-10);
    EXPECT_LE(std::abs(sample_element(sl, rng).determinant() - 1.0), 1e-10);
  }
}

TEST(Sampling, QuarterTurn) {
  const Mat r = rotation2d(std::numbers::pi / 2);
  EXPECT_NEAR(r(0, 0), 0.0, 1e-16);
  EXPECT_EQ(r(0, 1), -1.0);
  EXPECT_EQ(r(1, 0), 1.0);
  const Tensor e1 = Tensor::constant({2, 1}, {1, 0});
  const Tensor out = act(make_group(GroupFamily::special_orthogonal, 2), r, e1);
  EXPECT_NEAR(out[0], 0.0, 1e-16);
  EXPECT_EQ(out[1], 1.0);
}

TEST(Sampling, LorentzHitsAllFourComponents) {
  const GroupSpec l = make_group(GroupFamily::lorentz, 4);
  Rng rng(3);
  int seen[2][2] = {{0, 0}, {0, 0}};
  for (int i = 0; i < 1000; ++i) {
    const Mat g = sample_element(l, rng);
    seen[g.determinant() > 0][g(0, 0) > 0]++;
  }
  for (auto& row : seen)
    for (int c : row) EXPECT_GT(c, 0);
}

TEST(Sampling, DeterministicGivenSeed) {
  for (const auto& g : all_groups()) {
    Rng a(9), b(9);
    EXPECT_EQ(max_abs(sample_element(g, a) - sample_element(g, b)), 0.0) << g.name();
  }
}

TEST(Membership, HandCases) {
  const GroupSpec so2 = make_group(GroupFamily::special_orthogonal, 2);
  EXPECT_TRUE(is_member(so2, identity(2)));
  Mat reflect = identity(2);
  reflect(1, 1) = -1.0;
  EXPECT_FALSE(is_member(so2, reflect));
  EXPECT_TRUE(is_member(make_group(GroupFamily::orthogonal, 2), reflect));
  EXPECT_TRUE(is_member(make_group(GroupFamily::lorentz, 4), lorentz_boost(4, 1, 0.7)));
  EXPECT_FALSE(is_member(make_group(GroupFamily::lorentz, 4), 2.0 * identity(4)));
  EXPECT_FALSE(is_member(make_group(GroupFamily::general_linear, 2), Mat::Zero(2, 2)));
  Mat perm = Mat::Zero(3, 3);
  perm(0, 2) = perm(1, 0) = perm(2, 1) = 1.0;
  EXPECT_TRUE(is_member(make_group(GroupFamily::symmetric, 3), perm));
  perm(2, 1) = 0.0;
  perm(2, 2) = 1.0;  // column 2 now has two ones
  EXPECT_FALSE(is_member(make_group(GroupFamily::symmetric, 3), perm));
}

TEST(Membership, DimensionMismatchThrows) {
  EXPECT_THROW(is_member(make_group(GroupFamily::orthogonal, 3), identity(2)), DimensionError);
}

TEST(Closure, ProductsOfSamplesStayInGroup) {
  for (const auto& g : all_groups()) {
    Rng rng(derive_seed(4, g.name()));
    for (int i = 0; i < 100; ++i) {
      const Mat a = sample_element(g, rng), b = sample_element(g, rng);
      EXPECT_TRUE(is_member(g, a * b, 1e-8)) << g.name();
    }
  }
}

TEST(ApproxInverse, ExactOnSampledElements) {
  for (const auto& g : all_groups()) {
    Rng rng(derive_seed(5, g.name()));
    for (int i = 0; i < 100; ++i) {
      const Mat e = sample_element(g, rng);
      EXPECT_LE(max_abs(approx_inverse(g, e) * e - identity(g.n)), 1e-10) << g.name();
    }
  }
}

TEST(ApproxInverse, SoTwoWithinMachinePrecision) {
  const GroupSpec so2 = make_group(GroupFamily::special_orthogonal, 2);
  Rng rng(6);
  const Mat g = sample_element(so2, rng);
  EXPECT_LE(max_abs(approx_inverse(so2, g) * g - identity(2)), 1e-12);
}

TEST(ApproxInverse, FirstOrderBoundUnderPerturbation) {
  const GroupSpec l = make_group(GroupFamily::lorentz, 4);
  Rng rng(7);
  for (int i = 0; i < 200; ++i) {
    const Mat g = sample_element(l, rng);
    Mat e(4, 4);
    for (Eigen::Index k = 0; k < e.size(); ++k) e.data()[k] = standard_normal(rng);
    e *= 1e-3 / e.norm();
    const Mat h = g + e;
    // Error is Lambda E^T Lambda h + Lambda g^T Lambda E, i.e. O(||g|| ||E||).
    const double bound = 2e-3 * g.norm() + 1e-6;
    EXPECT_LE((approx_inverse(l, h) * h - identity(4)).norm(), std::max(1e-2, bound));
  }
}

TEST(ApproxInverse, TensorVersionMatchesMatrixVersion) {
  for (const auto& g : all_groups()) {
    Rng rng(derive_seed(8, g.name()));
    Mat h(g.n, g.n);
    for (Eigen::Index k = 0; k < h.size(); ++k) h.data()[k] = standard_normal(rng);
    const Mat ref = approx_inverse(g, h);
    const Mat got = to_mat(approx_inverse(g, to_tensor(h)));
    EXPECT_LE(max_abs(ref - got), 1e-12) << g.name();
  }
}

TEST(ApproxInverse, ExactLuRejectsSingular) {
  EXPECT_THROW(approx_inverse(make_group(GroupFamily::general_linear, 2), Mat::Zero(2, 2)), InvertibilityError);
}

TEST(Act, IdentityAndAssociativity) {
  for (const auto& g : all_groups()) {
    Rng rng(derive_seed(9, g.name()));
    Mat xm(g.n, 5);
    for (Eigen::Index k = 0; k < xm.size(); ++k) xm.data()[k] = standard_normal(rng);
    const Tensor x = to_tensor(xm);
    EXPECT_EQ(max_abs(to_mat(act(g, identity(g.n), x)) - xm), 0.0);
    const Mat a = sample_element(g, rng), b = sample_element(g, rng);
    const Mat lhs = to_mat(act(g, a, act(g, b, x)));
    const Mat rhs = to_mat(act(g, a * b, x));
    EXPECT_LE(max_abs(lhs - rhs), 1e-12 * std::max(1.0, max_abs(rhs))) << g.name();
  }
}

TEST(Act, DimensionMismatchThrows) {
  EXPECT_THROW(act(make_group(GroupFamily::orthogonal, 3), identity(3), Tensor::zeros({2, 4})), DimensionError);
}
