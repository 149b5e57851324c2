#include "orbitsym/invariants.hpp"

#include <cmath>

#include "orbitsym/errors.hpp"

namespace orbitsym {

namespace {

constexpr double kGlDenominatorFloor = 1e-12;

std::size_t reduced_dim(std::size_t n) { return 2 * n * n + 1; }

void enumerate(std::size_t pos, int remaining, std::vector<int>& cur, std::vector<std::vector<int>>& out) {
  if (pos == cur.size()) {
    out.push_back(cur);
    return;
  }
  for (int a = 0; a <= remaining; ++a) {
    cur[pos] = a;
    enumerate(pos + 1, remaining - a, cur, out);
  }
  cur[pos] = 0;
}

Tensor as_batch(const Tensor& h, std::size_t n) {
  if (h.rank() == 2 && h.dim(0) == n && h.dim(1) == n) return reshape(h, {1, n, n});
  if (h.rank() == 3 && h.dim(1) == n && h.dim(2) == n) return h;
  throw DimensionError("invariant: expected (" + std::to_string(n) + "," + std::to_string(n) + ") input, got " +
                       shape_string(h.shape()));
}

}  // namespace

Norm parse_norm(const std::string& text) {
  if (text == "l1") return Norm::l1;
  if (text == "l2") return Norm::l2;
  throw ConfigError("norm must be l1 or l2, got '" + text + "'");
}

std::string to_string(Norm norm) { return norm == Norm::l1 ? "l1" : "l2"; }

std::string to_string(InvariantKind kind) {
  switch (kind) {
    case InvariantKind::gram: return "gram";
    case InvariantKind::gram_det: return "gram-det";
    case InvariantKind::metric_gram: return "metric-gram";
    case InvariantKind::det_only: return "det-only";
    case InvariantKind::gl_rational: return "gl-rational";
    case InvariantKind::power_sums: return "power-sums";
  }
  return "?";
}

std::vector<std::vector<int>> multi_indices(std::size_t n, int degree) {
  std::vector<std::vector<int>> out;
  std::vector<int> cur(n, 0);
  enumerate(0, degree, cur, out);
  return out;
}

Tensor power_sums(const Tensor& h, const std::vector<std::vector<int>>& alphas) {
  if (h.rank() != 3 || h.dim(1) != h.dim(2)) throw DimensionError("power_sums: expected (B,n,n)");
  const std::size_t batch = h.dim(0), n = h.dim(1), s = n * n, K = alphas.size();
  const auto hv = h.values();
  auto monomial = [n](const double* row, const std::vector<int>& alpha) {
    double p = 1.0;
    for (std::size_t k = 0; k < n; ++k)
      for (int e = 0; e < alpha[k]; ++e) p *= row[k];
    return p;
  };
  std::vector<double> out(batch * K, 0.0);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t a = 0; a < K; ++a) {
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += monomial(hv.data() + b * s + j * n, alphas[a]);
      out[b * K + a] = acc;
    }
  return Tensor::make_result({batch, K}, std::move(out), {h},
                             [h, alphas, batch, n, s, K](std::span<const double> g) mutable {
                               const auto hv = h.values();
                               auto gh = h.grad_buffer();
                               for (std::size_t b = 0; b < batch; ++b)
                                 for (std::size_t a = 0; a < K; ++a) {
                                   const double ga = g[b * K + a];
                                   if (ga == 0.0) continue;
                                   const auto& alpha = alphas[a];
                                   for (std::size_t j = 0; j < n; ++j) {
                                     const double* row = hv.data() + b * s + j * n;
                                     for (std::size_t k = 0; k < n; ++k) {
                                       if (alpha[k] == 0) continue;
                                       double d = static_cast<double>(alpha[k]);
                                       for (std::size_t l = 0; l < n; ++l) {
                                         const int e = l == k ? alpha[l] - 1 : alpha[l];
                                         for (int r = 0; r < e; ++r) d *= row[l];
                                       }
                                       gh[b * s + j * n + k] += ga * d;
                                     }
                                   }
                                 }
                             });
}

SeparatingInvariant SeparatingInvariant::for_group(const GroupSpec& group, std::uint64_t witness_seed) {
  SeparatingInvariant f;
  f.group_ = group;
  const std::size_t n = group.n;
  switch (group.family) {
    case GroupFamily::orthogonal:
      f.kind_ = InvariantKind::gram;
      f.raw_k_ = n * n;
      break;
    case GroupFamily::special_orthogonal:
      f.kind_ = InvariantKind::gram_det;
      f.raw_k_ = n * n + 1;
      break;
    case GroupFamily::lorentz:
      f.kind_ = InvariantKind::metric_gram;
      f.raw_k_ = n * n;
      f.domain_ = SeparationDomain::full_rank_only;
      break;
    case GroupFamily::special_linear:
      f.kind_ = InvariantKind::det_only;
      f.raw_k_ = 1;
      f.domain_ = SeparationDomain::full_rank_only;
      break;
    case GroupFamily::general_linear: {
      f.kind_ = InvariantKind::gl_rational;
      f.raw_k_ = reduced_dim(n);
      f.domain_ = SeparationDomain::full_rank_only;
      Rng rng(witness_seed);
      for (std::size_t i = 0; i < f.raw_k_; ++i) {
        Mat w(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
        for (Eigen::Index e = 0; e < w.size(); ++e) w.data()[e] = standard_normal(rng);
        f.witnesses_.push_back(std::move(w));
      }
      break;
    }
    case GroupFamily::symmetric:
      f.kind_ = InvariantKind::power_sums;
      f.multi_indices_ = orbitsym::multi_indices(n, static_cast<int>(n));
      f.raw_k_ = f.multi_indices_.size();
      break;
  }
  f.refresh_identity();
  return f;
}

SeparatingInvariant SeparatingInvariant::project(std::uint64_t seed) const {
  const std::size_t target = reduced_dim(group_.n);
  if (raw_k_ <= target) return *this;
  SeparatingInvariant f = *this;
  Rng rng(seed);
  Mat w(static_cast<Eigen::Index>(target), static_cast<Eigen::Index>(raw_k_));
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = standard_normal(rng);
  f.projection_t_ = to_tensor(w.transpose());
  f.projection_ = std::move(w);
  f.projection_seed_ = seed;
  f.refresh_identity();
  return f;
}

void SeparatingInvariant::refresh_identity() {
  at_identity_ = evaluate(Tensor::eye(group_.n)).detach();
}

Tensor SeparatingInvariant::evaluate_raw(const Tensor& hb) const {
  const std::size_t batch = hb.dim(0), n = group_.n;
  switch (kind_) {
    case InvariantKind::gram:
      return reshape(matmul(transpose(hb), hb), {batch, n * n});
    case InvariantKind::gram_det:
      return concat({reshape(matmul(transpose(hb), hb), {batch, n * n}), reshape(determinant(hb), {batch, 1})}, 1);
    case InvariantKind::metric_gram:
      return reshape(matmul(matmul(transpose(hb), to_tensor(*group_.metric)), hb), {batch, n * n});
    case InvariantKind::det_only:
      return reshape(determinant(hb), {batch, 1});
    case InvariantKind::gl_rational: {
      // det(h h^T) equals det(h)^2 for square h; the product form avoids
      // squaring the condition number of h.
      const Tensor det_h = determinant(hb);
      const Tensor denom = square(det_h);
      for (double v : denom.values()) {
        if (!(v >= kGlDenominatorFloor)) {
          throw DomainError("GL invariant: det(h h^T) below 1e-12; input outside the separation domain");
        }
      }
      std::vector<Tensor> parts;
      parts.reserve(witnesses_.size());
      for (const Mat& w : witnesses_) {
        const Tensor num = square(determinant(matmul(hb, to_tensor(w))));
        parts.push_back(reshape(div(num, denom), {batch, 1}));
      }
      return concat(parts, 1);
    }
    case InvariantKind::power_sums:
      return power_sums(hb, multi_indices_);
  }
  throw DimensionError("unknown invariant kind");
}

Tensor SeparatingInvariant::evaluate(const Tensor& h) const {
  const Tensor hb = as_batch(h, group_.n);
  Tensor out = evaluate_raw(hb);
  if (projection_) out = matmul(out, projection_t_);
  if (h.rank() == 2) return reshape(out, {k()});
  return out;
}

namespace {

Tensor apply_norm(const Tensor& v, Norm norm) { return norm == Norm::l1 ? l1_norm(v) : l2_norm(v); }

}  // namespace

Tensor orbit_distance(const SeparatingInvariant& f, const Tensor& h, const Tensor& h2, Norm norm) {
  return apply_norm(sub(f.evaluate(h), f.evaluate(h2)), norm);
}

Tensor orbit_loss(const SeparatingInvariant& f, const Tensor& h, Norm norm) {
  return apply_norm(sub(f.evaluate(h), f.at_identity()), norm);
}

}  // namespace orbitsym
