#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "orbitsym/groups.hpp"
#include "orbitsym/nn.hpp"
#include "orbitsym/rng.hpp"
#include "orbitsym/tensor.hpp"

namespace orbitsym {

enum class NoiseDistribution { gaussian, uniform_trainable, deterministic };
/// How a group element acts on the noise columns.
enum class NoiseAction { trivial, standard };
/// How featurized noise joins the data columns.
enum class Combine { concat, add };

NoiseDistribution parse_noise(const std::string& text);
std::string to_string(NoiseDistribution d);
Combine parse_combine(const std::string& text);
std::string to_string(Combine c);

/// Noise eps of shape (n, d) per example.
///
///   gaussian           iid N(0,1); paired with the standard action (it is
///                      rotation invariant in distribution)
///   uniform_trainable  eps = a + b * u, u ~ U[0,1]; trivial action
///   deterministic      eps = a (canonicalization); trivial action
///
/// a starts at 1 and b at 0, so the uniform family begins deterministic and
/// learns its own spread.
class NoiseSpec {
 public:
  NoiseSpec() = default;
  NoiseSpec(std::size_t n, std::size_t d, NoiseDistribution distribution);

  std::size_t n() const { return n_; }
  std::size_t d() const { return d_; }
  NoiseDistribution distribution() const { return distribution_; }
  NoiseAction action() const {
    return distribution_ == NoiseDistribution::gaussian ? NoiseAction::standard : NoiseAction::trivial;
  }
  bool stochastic() const { return distribution_ != NoiseDistribution::deterministic; }

  /// One (n, d) draw per stream, stacked to (B, n, d). Differentiable in a, b.
  Tensor sample(std::span<Rng> streams) const;
  /// B draws from one stream, example by example.
  Tensor sample(std::size_t batch, Rng& rng) const;

  /// Trainable tensors: {a, b} for uniform, {a} for deterministic, none for gaussian.
  std::vector<Tensor> parameters() const;
  const Tensor& offset() const { return offset_; }
  const Tensor& spread() const { return spread_; }

 private:
  Tensor draw(std::size_t batch, const std::function<double(std::size_t)>& unit) const;

  std::size_t n_ = 0;
  std::size_t d_ = 0;
  NoiseDistribution distribution_ = NoiseDistribution::gaussian;
  Tensor offset_;
  Tensor spread_;
};

/// z = (x^T Lambda)^{-1} eps for square x of shape (n,n) or (B,n,n); eps is
/// (n,d) or (B,n,d). Satisfies x^T Lambda z = eps and featurize(gx, eps) =
/// g featurize(x, eps) for g preserving Lambda. An example whose x^T Lambda
/// exceeds the condition ceiling is retried once with ridge x + delta I,
/// delta = 1e-6 ||x||_F, and a warning is logged.
Tensor featurize_noise(const Tensor& x, const Tensor& eps, const Mat& metric, double condition_ceiling = 1e12);

struct SymmetrizerOptions {
  std::size_t hidden = 128;
  /// Number of linear layers in the scalar MLP.
  std::size_t depth = 3;
  /// SO(2) only: add J U as output basis and U^T J U as scalars.
  bool orientation = false;
  /// Apply sign(s) log(1 + |s|) to every scalar feature.
  bool log_scalars = false;
  /// Add the identity to the coefficients of the first n input vectors, so
  /// the net starts at h = u_{1..n} instead of near zero.
  bool identity_init = false;
  Activation activation = Activation::silu;
};

/// Equivariant map from n-vectors U = [u_1 .. u_m] (plus optional invariant
/// scalars) to an n x n matrix: h = U C(S) (+ J U C'(S)), where S collects
/// the invariant inner products u_i^T Lambda u_j (i <= j) and C is the output
/// of an MLP on S. Defined for groups that preserve a metric (O, SO, Lorentz).
class ScalarEquivariantNet {
 public:
  ScalarEquivariantNet() = default;
  ScalarEquivariantNet(const GroupSpec& group, std::size_t m, std::size_t extra_scalars, SymmetrizerOptions options,
                       Rng& rng);

  /// u: (B, n, m); extra: (B, extra_scalars) or undefined. Returns (B, n, n).
  Tensor forward(const Tensor& u, const Tensor& extra = Tensor()) const;
  /// Invariant features fed to the MLP, (B, scalar_count()).
  Tensor scalars(const Tensor& u, const Tensor& extra = Tensor()) const;

  std::size_t m() const { return m_; }
  std::size_t scalar_count() const { return mlp_.input_dim(); }
  std::size_t extra_scalars() const { return extra_; }
  const SymmetrizerOptions& options() const { return options_; }
  const GroupSpec& group() const { return group_; }
  std::vector<Tensor> parameters() const { return mlp_.parameters(); }
  void zero_output_layer() { mlp_.zero_output_layer(); }

 private:
  GroupSpec group_;
  std::size_t m_ = 0;
  std::size_t extra_ = 0;
  SymmetrizerOptions options_;
  Tensor metric_;
  Tensor rot90_;
  Tensor identity_coeffs_;  // (m, n), set with identity_init
  std::vector<std::size_t> upper_;         // i <= j in a flattened m x m
  std::vector<std::size_t> strict_upper_;  // i < j
  Mlp mlp_;
};

/// Builds the symmetrizer's vector input from data columns x (B,n,k) and
/// noise eps (B,n,d). Standard-action noise is appended as is; trivial-action
/// noise is first featurized against x (which must then be square) so the
/// result still transforms with the group. `combine` = add requires d = k.
Tensor symmetrizer_vectors(const Tensor& x, const Tensor& eps, NoiseAction action, Combine combine,
                           const Mat& metric);

struct PointSet {
  Tensor values;  // (1, m)
  Tensor coords;  // (2, m)
};

/// Image (28,28) in [0,1] to its m brightest pixels at or above threshold t,
/// brightest first (ties by raster order), zero padded. Coordinates use
/// linspace(-14, 14, 28): x grows with the column, y with decreasing row.
PointSet preprocess_pointset(std::span<const double> image, double t = 0.2, std::size_t m = 200);

}  // namespace orbitsym
