#include "orbitsym/eqnets.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "orbitsym/errors.hpp"
#include "orbitsym/log.hpp"

namespace orbitsym {

NoiseDistribution parse_noise(const std::string& text) {
  if (text == "gaussian") return NoiseDistribution::gaussian;
  if (text == "uniform-trainable") return NoiseDistribution::uniform_trainable;
  if (text == "deterministic") return NoiseDistribution::deterministic;
  throw ConfigError("noise must be gaussian, uniform-trainable or deterministic, got '" + text + "'");
}

std::string to_string(NoiseDistribution d) {
  switch (d) {
    case NoiseDistribution::gaussian: return "gaussian";
    case NoiseDistribution::uniform_trainable: return "uniform-trainable";
    case NoiseDistribution::deterministic: return "deterministic";
  }
  return "?";
}

Combine parse_combine(const std::string& text) {
  if (text == "concat") return Combine::concat;
  if (text == "add") return Combine::add;
  throw ConfigError("combine must be concat or add, got '" + text + "'");
}

std::string to_string(Combine c) { return c == Combine::concat ? "concat" : "add"; }

// ---------------------------------------------------------------------------
// Noise

NoiseSpec::NoiseSpec(std::size_t n, std::size_t d, NoiseDistribution distribution)
    : n_(n), d_(d), distribution_(distribution) {
  if (distribution_ != NoiseDistribution::gaussian) {
    offset_ = Tensor::parameter({n, d}, std::vector<double>(n * d, 1.0));
    if (distribution_ == NoiseDistribution::uniform_trainable) {
      spread_ = Tensor::parameter({n, d}, std::vector<double>(n * d, 0.0));
    }
  }
}

Tensor NoiseSpec::draw(std::size_t batch, const std::function<double(std::size_t)>& unit) const {
  const std::size_t per = n_ * d_;
  if (distribution_ == NoiseDistribution::deterministic) {
    return add(Tensor::zeros({batch, n_, d_}), offset_);
  }
  std::vector<double> u(batch * per);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < per; ++i) u[b * per + i] = unit(b);
  const Tensor ut = Tensor::constant({batch, n_, d_}, std::move(u));
  if (distribution_ == NoiseDistribution::gaussian) return ut;
  return add(mul(ut, spread_), offset_);
}

Tensor NoiseSpec::sample(std::span<Rng> streams) const {
  const bool gaussian = distribution_ == NoiseDistribution::gaussian;
  return draw(streams.size(), [&](std::size_t b) { return gaussian ? standard_normal(streams[b]) : uniform01(streams[b]); });
}

Tensor NoiseSpec::sample(std::size_t batch, Rng& rng) const {
  const bool gaussian = distribution_ == NoiseDistribution::gaussian;
  return draw(batch, [&](std::size_t) { return gaussian ? standard_normal(rng) : uniform01(rng); });
}

std::vector<Tensor> NoiseSpec::parameters() const {
  std::vector<Tensor> out;
  if (offset_.defined()) out.push_back(offset_);
  if (spread_.defined()) out.push_back(spread_);
  return out;
}

// ---------------------------------------------------------------------------
// Featurization

namespace {

Tensor lifted_inverse(const Tensor& x, const Tensor& lam, double ceiling) {
  return inverse(matmul(transpose(x), lam), ceiling);
}

}  // namespace

Tensor featurize_noise(const Tensor& x, const Tensor& eps, const Mat& metric, double condition_ceiling) {
  const bool single = x.rank() == 2;
  const Tensor xb = single ? reshape(x, {1, x.dim(0), x.dim(1)}) : x;
  const Tensor eb = eps.rank() == 2 ? reshape(eps, {1, eps.dim(0), eps.dim(1)}) : eps;
  const std::size_t n = xb.dim(1);
  if (xb.dim(2) != n) throw DimensionError("featurize_noise: x must be square, got " + shape_string(x.shape()));
  if (eb.dim(1) != n || eb.dim(0) != xb.dim(0)) {
    throw DimensionError("featurize_noise: eps " + shape_string(eps.shape()) + " does not match x " +
                         shape_string(x.shape()));
  }
  if (static_cast<std::size_t>(metric.rows()) != n) throw DimensionError("featurize_noise: metric size");
  const Tensor lam = to_tensor(metric);

  Tensor inv;
  try {
    inv = lifted_inverse(xb, lam, condition_ceiling);
  } catch (const InvertibilityError&) {
    std::vector<Tensor> parts;
    const std::size_t batch = xb.dim(0);
    for (std::size_t b = 0; b < batch; ++b) {
      const Tensor xs = slice_rows(xb, b, b + 1);
      try {
        parts.push_back(lifted_inverse(xs, lam, condition_ceiling));
      } catch (const InvertibilityError& e) {
        double norm2 = 0.0;
        for (double v : xs.values()) norm2 += v * v;
        const double delta = 1e-6 * std::sqrt(norm2);
        log_warning("featurize_noise: example " + std::to_string(b) + " ill-conditioned (condition " +
                    std::to_string(e.condition()) + "); retrying with ridge " + std::to_string(delta));
        const Tensor ridge = scale(reshape(Tensor::eye(n), {1, n, n}), delta);
        parts.push_back(lifted_inverse(add(xs, ridge), lam, condition_ceiling));
      }
    }
    inv = concat(parts, 0);
  }
  Tensor z = matmul(inv, eb);
  return single ? reshape(z, {n, eps.dim(1)}) : z;
}

Tensor symmetrizer_vectors(const Tensor& x, const Tensor& eps, NoiseAction action, Combine combine,
                           const Mat& metric) {
  if (!eps.defined() || eps.dim(-1) == 0) return x;
  const Tensor noise = action == NoiseAction::standard ? eps : featurize_noise(x, eps, metric);
  if (combine == Combine::add) {
    if (noise.shape() != x.shape()) {
      throw DimensionError("combine=add needs noise columns equal to data columns: " + shape_string(x.shape()) +
                           " vs " + shape_string(noise.shape()));
    }
    return add(x, noise);
  }
  return concat({x, noise}, static_cast<int>(x.rank()) - 1);
}

// ---------------------------------------------------------------------------
// Scalar equivariant network

ScalarEquivariantNet::ScalarEquivariantNet(const GroupSpec& group, std::size_t m, std::size_t extra_scalars,
                                           SymmetrizerOptions options, Rng& rng)
    : group_(group), m_(m), extra_(extra_scalars), options_(options) {
  if (group.family != GroupFamily::orthogonal && group.family != GroupFamily::special_orthogonal &&
      group.family != GroupFamily::lorentz) {
    throw ConfigError("scalar equivariant net needs a metric-preserving group, got " + group.name());
  }
  if (options.orientation && !(group.family == GroupFamily::special_orthogonal && group.n == 2)) {
    throw ConfigError("orientation channels are defined for so2 only");
  }
  if (m == 0) throw DimensionError("scalar equivariant net needs at least one input vector");
  if (options.depth < 1) throw ConfigError("symmetrizer depth must be at least 1");
  metric_ = to_tensor(group.metric_or_identity());
  if (options.orientation) rot90_ = Tensor::constant({2, 2}, {0, -1, 1, 0});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i; j < m; ++j) {
      upper_.push_back(i * m + j);
      if (j > i) strict_upper_.push_back(i * m + j);
    }
  const std::size_t n_scalars = upper_.size() + (options.orientation ? strict_upper_.size() : 0) + extra_;
  const std::size_t n_out = m * group.n * (options.orientation ? 2 : 1);
  std::vector<std::size_t> dims{n_scalars};
  for (std::size_t l = 0; l + 1 < options.depth; ++l) dims.push_back(options.hidden);
  dims.push_back(n_out);
  mlp_ = Mlp(dims, options.activation, rng);
  if (options.identity_init) {
    if (m < group.n) throw ConfigError("identity_init needs at least n input vectors");
    std::vector<double> e(m * group.n, 0.0);
    for (std::size_t i = 0; i < group.n; ++i) e[i * group.n + i] = 1.0;
    identity_coeffs_ = Tensor::constant({m, group.n}, std::move(e));
  }
}

Tensor ScalarEquivariantNet::scalars(const Tensor& u, const Tensor& extra) const {
  if (u.rank() != 3 || u.dim(1) != group_.n || u.dim(2) != m_) {
    throw DimensionError("symmetrizer: expected (B," + std::to_string(group_.n) + "," + std::to_string(m_) +
                         ") vectors, got " + shape_string(u.shape()));
  }
  const std::size_t batch = u.dim(0);
  const Tensor ut = transpose(u);
  std::vector<Tensor> parts;
  parts.push_back(gather_columns(reshape(matmul(ut, matmul(metric_, u)), {batch, m_ * m_}), upper_));
  if (options_.orientation) {
    parts.push_back(gather_columns(reshape(matmul(ut, matmul(rot90_, u)), {batch, m_ * m_}), strict_upper_));
  }
  if (extra_ > 0) {
    if (!extra.defined() || extra.rank() != 2 || extra.dim(0) != batch || extra.dim(1) != extra_) {
      throw DimensionError("symmetrizer: expected (" + std::to_string(batch) + "," + std::to_string(extra_) +
                           ") extra scalars");
    }
    parts.push_back(extra);
  }
  Tensor s = parts.size() == 1 ? parts.front() : concat(parts, 1);
  return options_.log_scalars ? signed_log1p(s) : s;
}

Tensor ScalarEquivariantNet::forward(const Tensor& u, const Tensor& extra) const {
  const std::size_t batch = u.dim(0), n = group_.n;
  const Tensor coeffs = mlp_.forward(scalars(u, extra));
  const std::size_t block = m_ * n;
  auto shifted = [&](const Tensor& c) { return identity_coeffs_.defined() ? add(c, identity_coeffs_) : c; };
  if (!options_.orientation) return matmul(u, shifted(reshape(coeffs, {batch, m_, n})));
  std::vector<std::size_t> first(block), second(block);
  std::iota(first.begin(), first.end(), 0);
  std::iota(second.begin(), second.end(), block);
  const Tensor c = shifted(reshape(gather_columns(coeffs, first), {batch, m_, n}));
  const Tensor c_rot = reshape(gather_columns(coeffs, second), {batch, m_, n});
  return add(matmul(u, c), matmul(matmul(rot90_, u), c_rot));
}

// ---------------------------------------------------------------------------
// Point sets

PointSet preprocess_pointset(std::span<const double> image, double t, std::size_t m) {
  constexpr std::size_t side = 28;
  if (image.size() != side * side) throw DimensionError("preprocess_pointset: expected a 28x28 image");
  std::vector<std::size_t> order(side * side);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return image[a] > image[b]; });
  auto coordinate = [](std::size_t i) { return -14.0 + 28.0 * static_cast<double>(i) / 27.0; };
  std::vector<double> values(m, 0.0), coords(2 * m, 0.0);
  for (std::size_t k = 0; k < m && k < order.size(); ++k) {
    const std::size_t p = order[k];
    if (!(image[p] >= t)) break;
    const std::size_t row = p / side, col = p % side;
    values[k] = image[p];
    coords[k] = coordinate(col);
    coords[m + k] = -coordinate(row);
  }
  return {Tensor::constant({1, m}, std::move(values)), Tensor::constant({2, m}, std::move(coords))};
}

}  // namespace orbitsym
