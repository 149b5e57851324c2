#pragma once

#include <cstddef>
#include <vector>

#include "orbitsym/rng.hpp"
#include "orbitsym/tensor.hpp"

namespace orbitsym {

enum class Activation { silu, relu };

/// Fully connected network: Linear -> act -> ... -> Linear. Weights are
/// stored (in, out) so a batch (B, in) maps to (B, out) with one matmul.
class Mlp {
 public:
  Mlp() = default;
  /// `dims` = {in, hidden..., out}; uniform(+-1/sqrt(in)) init for weights and biases.
  Mlp(std::vector<std::size_t> dims, Activation activation, Rng& rng);

  Tensor forward(const Tensor& x) const;

  std::vector<Tensor> parameters() const;
  std::size_t input_dim() const { return dims_.front(); }
  std::size_t output_dim() const { return dims_.back(); }
  const std::vector<std::size_t>& dims() const { return dims_; }
  Activation activation() const { return activation_; }

  /// Sets the last layer's weights and bias to zero.
  void zero_output_layer();

 private:
  std::vector<std::size_t> dims_;
  Activation activation_ = Activation::silu;
  std::vector<Tensor> weights_;
  std::vector<Tensor> biases_;
};

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamOptions options);

  void zero_grad();
  /// Global L2 norm of all gradients; rescales them in place when above `max_norm`.
  double clip_grad_norm(double max_norm);
  void step();

  std::size_t steps() const { return t_; }
  const AdamOptions& options() const { return options_; }
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  AdamOptions options_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::size_t t_ = 0;
};

}  // namespace orbitsym
