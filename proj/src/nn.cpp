#include "orbitsym/nn.hpp"

#include <cmath>

#include "orbitsym/errors.hpp"

namespace orbitsym {

Mlp::Mlp(std::vector<std::size_t> dims, Activation activation, Rng& rng)
    : dims_(std::move(dims)), activation_(activation) {
  if (dims_.size() < 2) throw DimensionError("Mlp needs at least input and output dims");
  for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
    const std::size_t in = dims_[l], out = dims_[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> w(in * out), b(out);
    for (double& v : w) v = dist(rng);
    for (double& v : b) v = dist(rng);
    weights_.push_back(Tensor::parameter({in, out}, std::move(w)));
    biases_.push_back(Tensor::parameter({out}, std::move(b)));
  }
}

Tensor Mlp::forward(const Tensor& x) const {
  if (x.rank() != 2 || x.dim(1) != input_dim()) {
    throw DimensionError("Mlp: expected (B, " + std::to_string(input_dim()) + "), got " + shape_string(x.shape()));
  }
  Tensor h = x;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    h = add(matmul(h, weights_[l]), biases_[l]);
    if (l + 1 < weights_.size()) h = activation_ == Activation::silu ? silu(h) : relu(h);
  }
  return h;
}

std::vector<Tensor> Mlp::parameters() const {
  std::vector<Tensor> out;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    out.push_back(weights_[l]);
    out.push_back(biases_[l]);
  }
  return out;
}

void Mlp::zero_output_layer() {
  for (double& v : weights_.back().mutable_values()) v = 0.0;
  for (double& v : biases_.back().mutable_values()) v = 0.0;
}

Adam::Adam(std::vector<Tensor> params, AdamOptions options) : params_(std::move(params)), options_(options) {
  for (const Tensor& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void Adam::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

double Adam::clip_grad_norm(double max_norm) {
  double sq = 0.0;
  for (const Tensor& p : params_)
    for (double g : p.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (Tensor& p : params_)
      for (double& g : p.grad_buffer()) g *= s;
  }
  return norm;
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& p = params_[k];
    const auto g = p.grad();
    if (g.empty()) continue;
    auto w = p.mutable_values();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = options_.beta1 * m[i] + (1.0 - options_.beta1) * g[i];
      v[i] = options_.beta2 * v[i] + (1.0 - options_.beta2) * g[i] * g[i];
      w[i] -= options_.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + options_.eps);
    }
  }
}

}  // namespace orbitsym
