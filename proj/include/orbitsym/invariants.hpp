#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "orbitsym/groups.hpp"
#include "orbitsym/tensor.hpp"

namespace orbitsym {

enum class InvariantKind { gram, gram_det, metric_gram, det_only, gl_rational, power_sums };
enum class SeparationDomain { all, full_rank_only };
enum class Norm { l1, l2 };

Norm parse_norm(const std::string& text);
std::string to_string(Norm norm);
std::string to_string(InvariantKind kind);

/// Orbit-separating invariant f: R^{n x n} -> R^k for one group action.
///
///   O(n)        vec(h^T h)                          k = n^2
///   SO(n)       [vec(h^T h), det h]                 k = n^2 + 1
///   O(1,n-1)    vec(h^T Lambda h)                   k = n^2
///   SL(n)       [det h]                             k = 1
///   GL(n)       det(h W_i)^2 / det(h h^T), i<2n^2+1 k = 2n^2 + 1
///   S_n         row power sums, |alpha| <= n         k = C(2n, n)
///
/// Immutable once built; witnesses and projections are frozen at creation.
class SeparatingInvariant {
 public:
  /// `witness_seed` draws the GL witnesses W_i; unused for other families.
  static SeparatingInvariant for_group(const GroupSpec& group, std::uint64_t witness_seed = 0);

  /// Random linear reduction to 2n^2+1 components with iid N(0,1)
  /// coefficients. Returns *this unchanged when k <= 2n^2+1 already.
  SeparatingInvariant project(std::uint64_t seed) const;

  /// (n,n) -> (k); (B,n,n) -> (B,k). Differentiable.
  /// Full-rank-only invariants assume full-rank input (not checked), except
  /// GL, which throws DomainError when det(h h^T) < 1e-12.
  Tensor evaluate(const Tensor& h) const;

  /// f(I), computed once.
  const Tensor& at_identity() const { return at_identity_; }

  const GroupSpec& group() const { return group_; }
  InvariantKind kind() const { return kind_; }
  std::size_t k() const { return projection_ ? projection_->rows() : raw_k_; }
  std::size_t raw_k() const { return raw_k_; }
  SeparationDomain domain() const { return domain_; }
  bool projected() const { return projection_.has_value(); }
  std::optional<std::uint64_t> projection_seed() const { return projection_seed_; }
  const std::vector<Mat>& witnesses() const { return witnesses_; }
  const std::vector<std::vector<int>>& multi_indices() const { return multi_indices_; }

 private:
  SeparatingInvariant() = default;
  Tensor evaluate_raw(const Tensor& hb) const;
  void refresh_identity();

  GroupSpec group_;
  InvariantKind kind_ = InvariantKind::gram;
  std::size_t raw_k_ = 0;
  SeparationDomain domain_ = SeparationDomain::all;
  std::vector<Mat> witnesses_;
  std::vector<std::vector<int>> multi_indices_;
  std::optional<Mat> projection_;
  Tensor projection_t_;
  std::optional<std::uint64_t> projection_seed_;
  Tensor at_identity_;
};

/// All alpha in Z^n_{>=0} with |alpha| <= degree, lexicographic order.
std::vector<std::vector<int>> multi_indices(std::size_t n, int degree);

/// phi_alpha(h) = sum_j prod_k h_{jk}^{alpha_k} for each alpha; (B,n,n) -> (B,K).
Tensor power_sums(const Tensor& h, const std::vector<std::vector<int>>& alphas);

/// ||f(h) - f(h2)|| under the chosen norm: scalar, or (B) for batched input.
Tensor orbit_distance(const SeparatingInvariant& f, const Tensor& h, const Tensor& h2, Norm norm);

/// ||f(h) - f(I)||: zero exactly on valid group representations.
Tensor orbit_loss(const SeparatingInvariant& f, const Tensor& h, Norm norm = Norm::l1);

}  // namespace orbitsym
