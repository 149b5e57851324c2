#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

#include <Eigen/Dense>

#include "orbitsym/rng.hpp"
#include "orbitsym/tensor.hpp"

namespace orbitsym {

/// Row-major so a Mat maps 1:1 onto a rank-2 Tensor's storage.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class GroupFamily { special_orthogonal, orthogonal, lorentz, special_linear, general_linear, symmetric };

enum class InverseRule { transpose, metric_conjugate_transpose, exact_lu, permutation_transpose };

/// A matrix group acting on R^{n x n} by left multiplication. The
/// representation is the identity: group elements act as themselves.
struct GroupSpec {
  GroupFamily family = GroupFamily::special_orthogonal;
  std::size_t n = 2;
  /// Lambda: identity for SO/O, diag(+1,-1,...,-1) for Lorentz, absent otherwise.
  std::optional<Mat> metric;
  InverseRule inverse_rule = InverseRule::transpose;
  /// Rapidity half-width for Lorentz boost sampling.
  double boost_range = 1.0;

  std::string name() const;
  /// Metric if present, identity otherwise.
  Mat metric_or_identity() const;
};

GroupSpec make_group(GroupFamily family, std::size_t n, double boost_range = 1.0);

/// Accepts "so2", "so3", "o2", "o<n>", "lorentz13" (or "lorentz1<k>"),
/// "sl<n>", "gl<n>", "sym<n>", with an optional space before n.
/// Throws ConfigError for anything else, including n outside 1..8.
GroupSpec parse_group(std::string_view text);

Mat sample_element(const GroupSpec& spec, Rng& rng);

bool is_member(const GroupSpec& spec, const Mat& m, double tol = 1e-8);

/// Group-specific inverse that is exact on group elements and cheap off them:
/// h^T (SO/O/S_n), Lambda h^T Lambda (Lorentz), LU inverse (SL/GL).
Mat approx_inverse(const GroupSpec& spec, const Mat& h);
/// Differentiable version on (n,n) or (B,n,n).
Tensor approx_inverse(const GroupSpec& spec, const Tensor& h);

/// rho(g) x for x of shape (n,m) or (B,n,m).
Tensor act(const GroupSpec& spec, const Mat& g, const Tensor& x);

Mat rotation2d(double theta);
/// Boost mixing time (index 0) with spatial `axis` (1..n-1).
Mat lorentz_boost(std::size_t n, std::size_t axis, double rapidity);
Mat minkowski_metric(std::size_t n);

Tensor to_tensor(const Mat& m);
Mat to_mat(const Tensor& t);
/// Stack of matrices as a (B,n,m) constant.
Tensor stack_mats(const std::vector<Mat>& mats);

}  // namespace orbitsym
