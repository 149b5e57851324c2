#pragma once

// Dense float64 tensors with tape-based reverse-mode differentiation.
//
// Every result records its parents and a backward closure. Nodes carry a
// global creation sequence number; backward() replays the reachable nodes in
// reverse creation order, which is a valid topological order because a node
// is always created after its inputs. Supported layouts are plain matrices
// and matrices with one leading batch dimension.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace orbitsym {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

class Tensor;

/// Receives the gradient of the result and accumulates into the parents.
using BackwardFn = std::function<void(std::span<const double> grad_out)>;

class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Shape shape, std::vector<double> values);
  static Tensor parameter(Shape shape, std::vector<double> values);
  static Tensor zeros(Shape shape);
  static Tensor ones(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor eye(std::size_t n);

  /// Builds an op result. The closure is dropped when no parent needs a gradient.
  static Tensor make_result(Shape shape, std::vector<double> values, std::vector<Tensor> parents,
                            BackwardFn backward);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(int axis) const;
  std::size_t size() const;

  std::span<const double> values() const;
  /// Writable storage; only leaves may be written (optimizer updates, initialisation).
  std::span<double> mutable_values();
  double item() const;
  double operator[](std::size_t flat) const { return values()[flat]; }

  bool requires_grad() const;
  bool is_leaf() const;
  std::span<const double> grad() const;
  /// Gradient buffer, allocated with zeros on first use.
  std::span<double> grad_buffer() const;
  void zero_grad();

  /// Reverse pass from a scalar result. Leaf gradients accumulate across
  /// calls; interior gradients are reset first, so replaying the same graph
  /// after zero_grad() on the leaves reproduces the same gradients.
  void backward();

  /// Copy of the values with no graph attached; never receives gradient.
  Tensor detach() const;

  std::uint64_t sequence() const;

 private:
  struct Node;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  std::shared_ptr<Node> node_;
};

// Linear algebra ------------------------------------------------------------

/// (m,k)x(k,p); batched (B,m,k)x(B,k,p); a shared 2-D operand broadcasts over the batch.
Tensor matmul(const Tensor& a, const Tensor& b);
/// Swaps the last two axes.
Tensor transpose(const Tensor& a);
/// Determinant of (n,n) -> scalar or (B,n,n) -> (B). Singular input returns 0;
/// differentiating through a singular input throws GradientError.
Tensor determinant(const Tensor& a);
/// Matrix inverse of (n,n) or (B,n,n). Throws InvertibilityError when singular
/// or when the 1-norm condition number exceeds `condition_ceiling`.
Tensor inverse(const Tensor& a, double condition_ceiling = 1e12);

// Shape manipulation --------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, int axis);
/// Columns `indices` of a rank-2 tensor: out[b, j] = a[b, indices[j]].
Tensor gather_columns(const Tensor& a, std::vector<std::size_t> indices);
/// Rows [begin, end) of the leading axis.
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);

// Elementwise ---------------------------------------------------------------
// Binary ops accept equal shapes, a scalar right operand, or a right operand
// whose shape equals the trailing axes of the left (broadcast over the rest).

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double offset);
Tensor neg(const Tensor& a);
Tensor square(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor silu(const Tensor& a);
Tensor relu(const Tensor& a);
/// sign(x) * log(1 + |x|)
Tensor signed_log1p(const Tensor& a);
/// x^p elementwise; callers keep x positive when p is fractional.
Tensor power(const Tensor& a, double p);
/// Example b of a (B,...) multiplied by s[b].
Tensor scale_examples(const Tensor& a, const Tensor& s);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

// Reductions ----------------------------------------------------------------

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Sum over the last axis.
Tensor sum_last(const Tensor& a);
/// L1 norm over the last axis. Backward uses sign(x) with sign(0) = 0.
Tensor l1_norm(const Tensor& a);
/// L2 norm over the last axis.
Tensor l2_norm(const Tensor& a);
/// Softmax over the last axis.
Tensor softmax(const Tensor& a);

// Losses --------------------------------------------------------------------

/// Mean cross entropy of logits (B,C) against integer labels.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);
/// Mean squared error over all elements.
Tensor mse(const Tensor& prediction, const Tensor& target);

}  // namespace orbitsym
