#include "orbitsym/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "orbitsym/errors.hpp"

namespace orbitsym {

namespace {

std::atomic<std::uint64_t> g_sequence{0};

}  // namespace

struct Tensor::Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  bool leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;
  std::uint64_t seq = g_sequence.fetch_add(1, std::memory_order_relaxed);
};

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

// ---------------------------------------------------------------------------
// Tensor core

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
  for (std::size_t d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive: " + shape_string(shape));
  }
  if (values.size() != shape_size(shape)) {
    throw DimensionError("value count " + std::to_string(values.size()) + " does not match shape " +
                         shape_string(shape));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  return Tensor(std::move(node));
}

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  Tensor t = constant(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  return t;
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }
Tensor Tensor::ones(Shape shape) { return full(std::move(shape), 1.0); }

Tensor Tensor::full(Shape shape, double value) {
  const std::size_t n = shape_size(shape);
  return constant(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return constant({}, {value}); }

Tensor Tensor::eye(std::size_t n) {
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  return constant({n, n}, std::move(v));
}

Tensor Tensor::make_result(Shape shape, std::vector<double> values, std::vector<Tensor> parents,
                           BackwardFn backward) {
  Tensor out = constant(std::move(shape), std::move(values));
  bool needs = false;
  for (const Tensor& p : parents) needs = needs || p.requires_grad();
  if (needs) {
    out.node_->requires_grad = true;
    out.node_->leaf = false;
    out.node_->backward = std::move(backward);
    out.node_->parents.reserve(parents.size());
    for (Tensor& p : parents) out.node_->parents.push_back(std::move(p.node_));
  }
  return out;
}

const Shape& Tensor::shape() const {
  if (!node_) throw DimensionError("undefined tensor");
  return node_->shape;
}

std::size_t Tensor::dim(int axis) const {
  const Shape& s = shape();
  const int r = static_cast<int>(s.size());
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) throw DimensionError("axis out of range for shape " + shape_string(s));
  return s[static_cast<std::size_t>(a)];
}

std::size_t Tensor::size() const { return node_ ? node_->value.size() : 0; }

std::span<const double> Tensor::values() const {
  if (!node_) throw DimensionError("undefined tensor");
  return node_->value;
}

std::span<double> Tensor::mutable_values() {
  if (!node_ || !node_->leaf) throw DimensionError("only leaf tensors may be written");
  return node_->value;
}

double Tensor::item() const {
  if (size() != 1) throw DimensionError("item() on non-scalar tensor " + shape_string(shape()));
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
bool Tensor::is_leaf() const { return !node_ || node_->leaf; }

std::span<const double> Tensor::grad() const {
  if (!node_) return {};
  return node_->grad;
}

std::span<double> Tensor::grad_buffer() const {
  if (node_->grad.size() != node_->value.size()) node_->grad.assign(node_->value.size(), 0.0);
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_ && !node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

std::uint64_t Tensor::sequence() const { return node_ ? node_->seq : 0; }

Tensor Tensor::detach() const { return constant(shape(), node_->value); }

void Tensor::backward() {
  if (size() != 1) throw DimensionError("backward() needs a scalar result, got " + shape_string(shape()));
  if (!node_->requires_grad) return;

  std::vector<Node*> tape;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{node_.get()};
  seen.insert(node_.get());
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    tape.push_back(n);
    for (const auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  std::sort(tape.begin(), tape.end(), [](const Node* a, const Node* b) { return a->seq > b->seq; });

  for (Node* n : tape) {
    if (!n->leaf) n->grad.assign(n->value.size(), 0.0);
    else if (n->grad.size() != n->value.size()) n->grad.assign(n->value.size(), 0.0);
  }
  node_->grad[0] += 1.0;
  for (Node* n : tape) {
    if (!n->leaf && n->backward) n->backward(n->grad);
  }
}

// ---------------------------------------------------------------------------
// Helpers

namespace {

struct MatDims {
  std::size_t batch = 1;
  std::size_t rows = 0;
  std::size_t cols = 0;
  bool batched = false;
};

MatDims mat_dims(const Tensor& t, const char* op) {
  const Shape& s = t.shape();
  if (s.size() == 2) return {1, s[0], s[1], false};
  if (s.size() == 3) return {s[0], s[1], s[2], true};
  throw DimensionError(std::string(op) + ": expected a matrix or batch of matrices, got " + shape_string(s));
}

Shape mat_shape(const MatDims& d, std::size_t rows, std::size_t cols) {
  if (d.batched) return {d.batch, rows, cols};
  return {rows, cols};
}

// c += a(m,k) * b(k,p)
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t p) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * p;
    const double* ai = a + i * k;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = ai[kk];
      if (av == 0.0) continue;
      const double* bk = b + kk * p;
      for (std::size_t j = 0; j < p; ++j) ci[j] += av * bk[j];
    }
  }
}

// c(m,k) += g(m,p) * b(k,p)^T
void gemm_nt(const double* g, const double* b, double* c, std::size_t m, std::size_t k, std::size_t p) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* gi = g + i * p;
    double* ci = c + i * k;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double* bk = b + kk * p;
      double acc = 0.0;
      for (std::size_t j = 0; j < p; ++j) acc += gi[j] * bk[j];
      ci[kk] += acc;
    }
  }
}

// c(k,p) += a(m,k)^T * g(m,p)
void gemm_tn(const double* a, const double* g, double* c, std::size_t m, std::size_t k, std::size_t p) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* gi = g + i * p;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = ai[kk];
      if (av == 0.0) continue;
      double* ck = c + kk * p;
      for (std::size_t j = 0; j < p; ++j) ck[j] += av * gi[j];
    }
  }
}

struct Lu {
  std::vector<double> lu;
  std::vector<std::size_t> perm;
  double sign = 1.0;
  bool singular = false;
};

Lu lu_factor(const double* a, std::size_t n) {
  Lu f;
  f.lu.assign(a, a + n * n);
  f.perm.resize(n);
  std::iota(f.perm.begin(), f.perm.end(), std::size_t{0});
  auto& m = f.lu;
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    double best = std::abs(m[col * n + col]);
    for (std::size_t r = col + 1; r < n; ++r) {
      const double v = std::abs(m[r * n + col]);
      if (v > best) {
        best = v;
        piv = r;
      }
    }
    if (best == 0.0) {
      f.singular = true;
      continue;
    }
    if (piv != col) {
      for (std::size_t j = 0; j < n; ++j) std::swap(m[col * n + j], m[piv * n + j]);
      std::swap(f.perm[col], f.perm[piv]);
      f.sign = -f.sign;
    }
    const double d = m[col * n + col];
    for (std::size_t r = col + 1; r < n; ++r) {
      const double factor = m[r * n + col] / d;
      m[r * n + col] = factor;
      if (factor == 0.0) continue;
      for (std::size_t j = col + 1; j < n; ++j) m[r * n + j] -= factor * m[col * n + j];
    }
  }
  return f;
}

double lu_det(const Lu& f, std::size_t n) {
  if (f.singular) return 0.0;
  double d = f.sign;
  for (std::size_t i = 0; i < n; ++i) d *= f.lu[i * n + i];
  return d;
}

// Inverse from a nonsingular factorization: solve L U X = P.
void lu_inverse(const Lu& f, std::size_t n, double* out) {
  const auto& m = f.lu;
  std::vector<double> col(n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < n; ++i) col[i] = (f.perm[i] == j) ? 1.0 : 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double s = col[i];
      for (std::size_t k = 0; k < i; ++k) s -= m[i * n + k] * col[k];
      col[i] = s;
    }
    for (std::size_t ii = n; ii-- > 0;) {
      double s = col[ii];
      for (std::size_t k = ii + 1; k < n; ++k) s -= m[ii * n + k] * col[k];
      col[ii] = s / m[ii * n + ii];
    }
    for (std::size_t i = 0; i < n; ++i) out[i * n + j] = col[i];
  }
}

double norm1(const double* a, std::size_t n) {
  double best = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += std::abs(a[i * n + j]);
    best = std::max(best, s);
  }
  return best;
}

// Right operand index period for broadcasting binary ops.
std::size_t broadcast_period(const Tensor& a, const Tensor& b, const char* op) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa == sb) return a.size();
  if (sb.empty()) return 1;
  if (sb.size() <= sa.size() && std::equal(sb.begin(), sb.end(), sa.end() - static_cast<long>(sb.size()))) {
    return b.size();
  }
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_string(sa) + " and " +
                       shape_string(sb));
}

template <class Fwd, class Da, class Db>
Tensor binary(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, Da da, Db db) {
  const std::size_t period = broadcast_period(a, b, name);
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i], bv[i % period]);
  return Tensor::make_result(a.shape(), std::move(out), {a, b},
                             [a, b, period, da, db](std::span<const double> g) mutable {
                               const auto x = a.values();
                               const auto y = b.values();
                               if (a.requires_grad()) {
                                 auto ga = a.grad_buffer();
                                 for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * da(x[i], y[i % period]);
                               }
                               if (b.requires_grad()) {
                                 auto gb = b.grad_buffer();
                                 for (std::size_t i = 0; i < g.size(); ++i)
                                   gb[i % period] += g[i] * db(x[i], y[i % period]);
                               }
                             });
}

// Unary op; `deriv(x, y)` gives dy/dx from input and output values.
template <class Fwd, class Deriv>
Tensor unary(const Tensor& a, Fwd fwd, Deriv deriv) {
  const auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  auto result_values = out;
  return Tensor::make_result(a.shape(), std::move(out), {a},
                             [a, y = std::move(result_values), deriv](std::span<const double> g) mutable {
                               const auto x = a.values();
                               auto ga = a.grad_buffer();
                               for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * deriv(x[i], y[i]);
                             });
}

double sign0(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

Shape drop_last(const Shape& s) { return Shape(s.begin(), s.end() - 1); }

}  // namespace

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  const MatDims da = mat_dims(a, "matmul");
  const MatDims db = mat_dims(b, "matmul");
  if (da.cols != db.rows) {
    throw DimensionError("matmul: inner dimensions differ: " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  if (da.batched && db.batched && da.batch != db.batch) {
    throw DimensionError("matmul: batch sizes differ: " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  const bool batched = da.batched || db.batched;
  const std::size_t batch = da.batched ? da.batch : db.batch;
  const std::size_t m = da.rows, k = da.cols, p = db.cols;
  const std::size_t sa = da.batched ? m * k : 0;
  const std::size_t sb = db.batched ? k * p : 0;
  const std::size_t sc = m * p;

  std::vector<double> out(batch * sc, 0.0);
  const double* av = a.values().data();
  const double* bv = b.values().data();
  for (std::size_t t = 0; t < batch; ++t) gemm_nn(av + t * sa, bv + t * sb, out.data() + t * sc, m, k, p);

  Shape shape = batched ? Shape{batch, m, p} : Shape{m, p};
  return Tensor::make_result(std::move(shape), std::move(out), {a, b},
                             [a, b, batch, m, k, p, sa, sb, sc](std::span<const double> g) mutable {
                               const double* av = a.values().data();
                               const double* bv = b.values().data();
                               if (a.requires_grad()) {
                                 double* ga = a.grad_buffer().data();
                                 for (std::size_t t = 0; t < batch; ++t)
                                   gemm_nt(g.data() + t * sc, bv + t * sb, ga + t * sa, m, k, p);
                               }
                               if (b.requires_grad()) {
                                 double* gb = b.grad_buffer().data();
                                 for (std::size_t t = 0; t < batch; ++t)
                                   gemm_tn(av + t * sa, g.data() + t * sc, gb + t * sb, m, k, p);
                               }
                             });
}

Tensor transpose(const Tensor& a) {
  const MatDims d = mat_dims(a, "transpose");
  const std::size_t r = d.rows, c = d.cols, s = r * c;
  const auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t t = 0; t < d.batch; ++t)
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) out[t * s + j * r + i] = av[t * s + i * c + j];
  return Tensor::make_result(mat_shape(d, c, r), std::move(out), {a},
                             [a, d, r, c, s](std::span<const double> g) mutable {
                               auto ga = a.grad_buffer();
                               for (std::size_t t = 0; t < d.batch; ++t)
                                 for (std::size_t i = 0; i < r; ++i)
                                   for (std::size_t j = 0; j < c; ++j) ga[t * s + i * c + j] += g[t * s + j * r + i];
                             });
}

Tensor determinant(const Tensor& a) {
  const MatDims d = mat_dims(a, "determinant");
  if (d.rows != d.cols) throw DimensionError("determinant: matrix is not square: " + shape_string(a.shape()));
  const std::size_t n = d.rows;
  if (n > 8) throw DimensionError("determinant: supported for n <= 8, got n = " + std::to_string(n));
  const std::size_t s = n * n;
  const auto av = a.values();

  std::vector<double> dets(d.batch);
  // det(A) * A^{-T} per matrix, from the same factorization; empty when singular.
  auto adjugate_t = std::make_shared<std::vector<double>>(a.requires_grad() ? d.batch * s : 0);
  auto singular = std::make_shared<std::vector<char>>(d.batch, 0);
  std::vector<double> inv(s);
  for (std::size_t t = 0; t < d.batch; ++t) {
    const Lu f = lu_factor(av.data() + t * s, n);
    dets[t] = lu_det(f, n);
    (*singular)[t] = f.singular ? 1 : 0;
    if (a.requires_grad() && !f.singular) {
      lu_inverse(f, n, inv.data());
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) (*adjugate_t)[t * s + i * n + j] = dets[t] * inv[j * n + i];
    }
  }
  Shape shape = d.batched ? Shape{d.batch} : Shape{};
  return Tensor::make_result(std::move(shape), std::move(dets), {a},
                             [a, d, s, adjugate_t, singular](std::span<const double> g) mutable {
                               auto ga = a.grad_buffer();
                               for (std::size_t t = 0; t < d.batch; ++t) {
                                 if ((*singular)[t]) {
                                   throw GradientError("determinant: gradient undefined at a singular matrix");
                                 }
                                 for (std::size_t i = 0; i < s; ++i) ga[t * s + i] += g[t] * (*adjugate_t)[t * s + i];
                               }
                             });
}

Tensor inverse(const Tensor& a, double condition_ceiling) {
  const MatDims d = mat_dims(a, "inverse");
  if (d.rows != d.cols) throw DimensionError("inverse: matrix is not square: " + shape_string(a.shape()));
  const std::size_t n = d.rows, s = n * n;
  const auto av = a.values();
  std::vector<double> out(d.batch * s);
  for (std::size_t t = 0; t < d.batch; ++t) {
    const Lu f = lu_factor(av.data() + t * s, n);
    if (f.singular) {
      throw InvertibilityError("inverse: matrix is singular", std::numeric_limits<double>::infinity());
    }
    lu_inverse(f, n, out.data() + t * s);
    const double cond = norm1(av.data() + t * s, n) * norm1(out.data() + t * s, n);
    if (!(cond <= condition_ceiling)) {
      std::ostringstream msg;
      msg << "inverse: condition estimate " << cond << " exceeds ceiling " << condition_ceiling;
      throw InvertibilityError(msg.str(), cond);
    }
  }
  auto inv = out;
  return Tensor::make_result(a.shape(), std::move(out), {a},
                             [a, d, n, s, inv = std::move(inv)](std::span<const double> g) mutable {
                               // dA = -A^{-T} G A^{-T}
                               auto ga = a.grad_buffer();
                               std::vector<double> tmp(s);
                               for (std::size_t t = 0; t < d.batch; ++t) {
                                 const double* iv = inv.data() + t * s;
                                 const double* gt = g.data() + t * s;
                                 // tmp = G * A^{-T}
                                 std::fill(tmp.begin(), tmp.end(), 0.0);
                                 gemm_nt(gt, iv, tmp.data(), n, n, n);
                                 // ga -= A^{-T} * tmp
                                 for (std::size_t i = 0; i < n; ++i)
                                   for (std::size_t k = 0; k < n; ++k) {
                                     const double v = iv[k * n + i];
                                     for (std::size_t j = 0; j < n; ++j) ga[t * s + i * n + j] -= v * tmp[k * n + j];
                                   }
                               }
                             });
}

// ---------------------------------------------------------------------------
// Shape manipulation

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_size(shape) != a.size()) {
    throw DimensionError("reshape: cannot view " + shape_string(a.shape()) + " as " + shape_string(shape));
  }
  std::vector<double> out(a.values().begin(), a.values().end());
  return Tensor::make_result(std::move(shape), std::move(out), {a}, [a](std::span<const double> g) mutable {
    auto ga = a.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw DimensionError("concat: no operands");
  const Shape& first = parts.front().shape();
  const int r = static_cast<int>(first.size());
  const int ax = axis < 0 ? axis + r : axis;
  if (ax < 0 || ax >= r) throw DimensionError("concat: axis out of range for " + shape_string(first));
  const auto uax = static_cast<std::size_t>(ax);
  Shape out_shape = first;
  out_shape[uax] = 0;
  for (const Tensor& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size()) throw DimensionError("concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != uax && s[i] != first[i]) {
        throw DimensionError("concat: shapes " + shape_string(first) + " and " + shape_string(s) + " differ");
      }
    }
    out_shape[uax] += s[uax];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < uax; ++i) outer *= first[i];
  for (std::size_t i = uax + 1; i < first.size(); ++i) inner *= first[i];
  const std::size_t row = out_shape[uax] * inner;

  std::vector<double> out(shape_size(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    const std::size_t chunk = p.shape()[uax] * inner;
    const auto pv = p.values();
    for (std::size_t o = 0; o < outer; ++o) std::copy_n(pv.data() + o * chunk, chunk, out.data() + o * row + offset);
    offsets.push_back(offset);
    offset += chunk;
  }
  return Tensor::make_result(std::move(out_shape), std::move(out), parts,
                             [parts, offsets, outer, inner, row, uax](std::span<const double> g) mutable {
                               for (std::size_t k = 0; k < parts.size(); ++k) {
                                 const Tensor& p = parts[k];
                                 if (!p.requires_grad()) continue;
                                 const std::size_t chunk = p.shape()[uax] * inner;
                                 auto gp = p.grad_buffer();
                                 for (std::size_t o = 0; o < outer; ++o)
                                   for (std::size_t i = 0; i < chunk; ++i) gp[o * chunk + i] += g[o * row + offsets[k] + i];
                               }
                             });
}

Tensor gather_columns(const Tensor& a, std::vector<std::size_t> indices) {
  if (a.rank() != 2) throw DimensionError("gather_columns: expected rank 2, got " + shape_string(a.shape()));
  const std::size_t rows = a.dim(0), cols = a.dim(1), out_cols = indices.size();
  for (std::size_t idx : indices) {
    if (idx >= cols) throw DimensionError("gather_columns: index out of range");
  }
  const auto av = a.values();
  std::vector<double> out(rows * out_cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < out_cols; ++j) out[i * out_cols + j] = av[i * cols + indices[j]];
  return Tensor::make_result({rows, out_cols}, std::move(out), {a},
                             [a, rows, cols, out_cols, idx = std::move(indices)](std::span<const double> g) mutable {
                               auto ga = a.grad_buffer();
                               for (std::size_t i = 0; i < rows; ++i)
                                 for (std::size_t j = 0; j < out_cols; ++j) ga[i * cols + idx[j]] += g[i * out_cols + j];
                             });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  if (a.rank() < 1 || begin >= end || end > a.dim(0)) {
    throw DimensionError("slice_rows: bad range for shape " + shape_string(a.shape()));
  }
  const std::size_t stride = a.size() / a.dim(0);
  Shape shape = a.shape();
  shape[0] = end - begin;
  std::vector<double> out(a.values().begin() + static_cast<long>(begin * stride),
                          a.values().begin() + static_cast<long>(end * stride));
  return Tensor::make_result(std::move(shape), std::move(out), {a},
                             [a, offset = begin * stride](std::span<const double> g) mutable {
                               auto ga = a.grad_buffer();
                               for (std::size_t i = 0; i < g.size(); ++i) ga[offset + i] += g[i];
                             });
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "div", [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(
      a, [factor](double x) { return factor * x; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double offset) {
  return unary(
      a, [offset](double x) { return x + offset; }, [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor square(const Tensor& a) {
  return unary(
      a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor abs(const Tensor& a) {
  return unary(
      a, [](double x) { return std::abs(x); }, [](double x, double) { return sign0(x); });
}

Tensor silu(const Tensor& a) {
  return unary(
      a, [](double x) { return x / (1.0 + std::exp(-x)); },
      [](double x, double) {
        const double s = 1.0 / (1.0 + std::exp(-x));
        return s * (1.0 + x * (1.0 - s));
      });
}

Tensor relu(const Tensor& a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor signed_log1p(const Tensor& a) {
  return unary(
      a, [](double x) { return sign0(x) * std::log1p(std::abs(x)); },
      [](double x, double) { return 1.0 / (1.0 + std::abs(x)); });
}

Tensor power(const Tensor& a, double p) {
  return unary(
      a, [p](double x) { return std::pow(x, p); }, [p](double x, double) { return p * std::pow(x, p - 1.0); });
}

Tensor scale_examples(const Tensor& a, const Tensor& s) {
  if (a.rank() < 1 || s.rank() != 1 || s.dim(0) != a.dim(0)) {
    throw DimensionError("scale_examples: expected (B,...) and (B), got " + shape_string(a.shape()) + " and " +
                         shape_string(s.shape()));
  }
  const std::size_t batch = a.dim(0), block = a.size() / batch;
  const auto av = a.values();
  const auto sv = s.values();
  std::vector<double> out(av.size());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < block; ++i) out[b * block + i] = sv[b] * av[b * block + i];
  return Tensor::make_result(a.shape(), std::move(out), {a, s}, [a, s, batch, block](std::span<const double> g) {
    const auto av = a.values();
    const auto sv = s.values();
    if (a.requires_grad()) {
      auto ga = a.grad_buffer();
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < block; ++i) ga[b * block + i] += sv[b] * g[b * block + i];
    }
    if (s.requires_grad()) {
      auto gs = s.grad_buffer();
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < block; ++i) gs[b] += av[b * block + i] * g[b * block + i];
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  return Tensor::make_result({}, {s}, {a}, [a](std::span<const double> g) mutable {
    auto ga = a.grad_buffer();
    for (double& v : ga) v += g[0];
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

namespace {

// Reduction over the last axis: out[o] = reduce(row o); grad via per-element weight.
template <class Reduce, class Weight>
Tensor reduce_last(const Tensor& a, const char* name, Reduce reduce, Weight weight) {
  if (a.rank() < 1) throw DimensionError(std::string(name) + ": needs rank >= 1");
  const std::size_t inner = a.dim(-1);
  if (inner == 0) throw DimensionError(std::string(name) + ": empty last axis");
  const std::size_t outer = a.size() / inner;
  const auto av = a.values();
  std::vector<double> out(outer);
  for (std::size_t o = 0; o < outer; ++o) out[o] = reduce(av.subspan(o * inner, inner));
  auto out_copy = out;
  return Tensor::make_result(drop_last(a.shape()), std::move(out), {a},
                             [a, inner, outer, r = std::move(out_copy), weight](std::span<const double> g) mutable {
                               const auto x = a.values();
                               auto ga = a.grad_buffer();
                               for (std::size_t o = 0; o < outer; ++o)
                                 for (std::size_t i = 0; i < inner; ++i)
                                   ga[o * inner + i] += g[o] * weight(x[o * inner + i], r[o]);
                             });
}

}  // namespace

Tensor sum_last(const Tensor& a) {
  return reduce_last(
      a, "sum_last",
      [](std::span<const double> row) {
        double s = 0.0;
        for (double v : row) s += v;
        return s;
      },
      [](double, double) { return 1.0; });
}

Tensor l1_norm(const Tensor& a) {
  return reduce_last(
      a, "l1_norm",
      [](std::span<const double> row) {
        double s = 0.0;
        for (double v : row) s += std::abs(v);
        return s;
      },
      [](double x, double) { return sign0(x); });
}

Tensor l2_norm(const Tensor& a) {
  return reduce_last(
      a, "l2_norm",
      [](std::span<const double> row) {
        double s = 0.0;
        for (double v : row) s += v * v;
        return std::sqrt(s);
      },
      [](double x, double norm) { return norm > 0.0 ? x / norm : 0.0; });
}

Tensor softmax(const Tensor& a) {
  if (a.rank() < 1) throw DimensionError("softmax: needs rank >= 1");
  const std::size_t inner = a.dim(-1);
  const std::size_t outer = a.size() / inner;
  const auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t o = 0; o < outer; ++o) {
    const double* x = av.data() + o * inner;
    double* y = out.data() + o * inner;
    const double mx = *std::max_element(x, x + inner);
    double z = 0.0;
    for (std::size_t i = 0; i < inner; ++i) z += (y[i] = std::exp(x[i] - mx));
    for (std::size_t i = 0; i < inner; ++i) y[i] /= z;
  }
  auto y = out;
  return Tensor::make_result(a.shape(), std::move(out), {a},
                             [a, inner, outer, y = std::move(y)](std::span<const double> g) mutable {
                               auto ga = a.grad_buffer();
                               for (std::size_t o = 0; o < outer; ++o) {
                                 double dot = 0.0;
                                 for (std::size_t i = 0; i < inner; ++i) dot += g[o * inner + i] * y[o * inner + i];
                                 for (std::size_t i = 0; i < inner; ++i)
                                   ga[o * inner + i] += y[o * inner + i] * (g[o * inner + i] - dot);
                               }
                             });
}

// ---------------------------------------------------------------------------
// Losses

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw DimensionError("cross_entropy: logits " + shape_string(logits.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  const auto lv = logits.values();
  std::vector<double> probs(lv.size());
  double loss = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const int label = labels[b];
    if (label < 0 || static_cast<std::size_t>(label) >= classes) throw DimensionError("cross_entropy: label out of range");
    const double* x = lv.data() + b * classes;
    const double mx = *std::max_element(x, x + classes);
    double z = 0.0;
    for (std::size_t c = 0; c < classes; ++c) z += std::exp(x[c] - mx);
    const double lse = mx + std::log(z);
    loss += lse - x[label];
    for (std::size_t c = 0; c < classes; ++c) probs[b * classes + c] = std::exp(x[c] - lse);
  }
  loss /= static_cast<double>(batch);
  std::vector<int> lab(labels.begin(), labels.end());
  return Tensor::make_result({}, {loss}, {logits},
                             [logits, batch, classes, probs = std::move(probs), lab = std::move(lab)](
                                 std::span<const double> g) mutable {
                               auto gl = logits.grad_buffer();
                               const double w = g[0] / static_cast<double>(batch);
                               for (std::size_t b = 0; b < batch; ++b)
                                 for (std::size_t c = 0; c < classes; ++c) {
                                   const double onehot = static_cast<int>(c) == lab[b] ? 1.0 : 0.0;
                                   gl[b * classes + c] += w * (probs[b * classes + c] - onehot);
                                 }
                             });
}

Tensor mse(const Tensor& prediction, const Tensor& target) {
  if (prediction.size() != target.size()) {
    throw DimensionError("mse: sizes differ: " + shape_string(prediction.shape()) + " vs " +
                         shape_string(target.shape()));
  }
  const auto p = prediction.values();
  const auto t = target.values();
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] - t[i]) * (p[i] - t[i]);
  const double inv_n = 1.0 / static_cast<double>(p.size());
  return Tensor::make_result({}, {s * inv_n}, {prediction, target},
                             [prediction, target, inv_n](std::span<const double> g) mutable {
                               const auto p = prediction.values();
                               const auto t = target.values();
                               if (prediction.requires_grad()) {
                                 auto gp = prediction.grad_buffer();
                                 for (std::size_t i = 0; i < p.size(); ++i) gp[i] += g[0] * 2.0 * inv_n * (p[i] - t[i]);
                               }
                               if (target.requires_grad()) {
                                 auto gt = target.grad_buffer();
                                 for (std::size_t i = 0; i < p.size(); ++i) gt[i] -= g[0] * 2.0 * inv_n * (p[i] - t[i]);
                               }
                             });
}

}  // namespace orbitsym
