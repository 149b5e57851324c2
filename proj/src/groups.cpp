#include "orbitsym/groups.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numbers>
#include <numeric>

#include "orbitsym/errors.hpp"

namespace orbitsym {

namespace {

constexpr int kMaxTries = 100;
constexpr std::size_t kMaxDim = 8;

Mat gaussian(std::size_t n, Rng& rng) {
  Mat m(n, n);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = standard_normal(rng);
  return m;
}

Mat sample_special_orthogonal(std::size_t n, Rng& rng) {
  if (n == 1) return Mat::Identity(1, 1);
  if (n == 2) return rotation2d(2.0 * std::numbers::pi * uniform01(rng));
  const Mat a = gaussian(n, rng);
  Eigen::HouseholderQR<Mat> qr(a);
  Mat q = qr.householderQ();
  const Mat r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (std::size_t j = 0; j < n; ++j) {
    if (r(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j)) < 0.0) q.col(static_cast<Eigen::Index>(j)) *= -1.0;
  }
  if (q.determinant() < 0.0) q.col(0) *= -1.0;
  return q;
}

bool coin(Rng& rng) { return uniform01(rng) < 0.5; }

double max_abs(const Mat& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

}  // namespace

std::string GroupSpec::name() const {
  const std::string ns = std::to_string(n);
  switch (family) {
    case GroupFamily::special_orthogonal: return "so" + ns;
    case GroupFamily::orthogonal: return "o" + ns;
    case GroupFamily::lorentz: return "lorentz1" + std::to_string(n - 1);
    case GroupFamily::special_linear: return "sl" + ns;
    case GroupFamily::general_linear: return "gl" + ns;
    case GroupFamily::symmetric: return "sym" + ns;
  }
  return "?";
}

Mat GroupSpec::metric_or_identity() const {
  return metric ? *metric : Mat(Mat::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n)));
}

Mat minkowski_metric(std::size_t n) {
  Mat m = -Mat::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  m(0, 0) = 1.0;
  return m;
}

GroupSpec make_group(GroupFamily family, std::size_t n, double boost_range) {
  if (n < 1 || n > kMaxDim) throw ConfigError("group dimension must be in 1..8, got " + std::to_string(n));
  GroupSpec spec;
  spec.family = family;
  spec.n = n;
  spec.boost_range = boost_range;
  const auto en = static_cast<Eigen::Index>(n);
  switch (family) {
    case GroupFamily::special_orthogonal:
    case GroupFamily::orthogonal:
      spec.metric = Mat::Identity(en, en);
      spec.inverse_rule = InverseRule::transpose;
      break;
    case GroupFamily::lorentz:
      if (n < 2) throw ConfigError("Lorentz group needs n >= 2");
      spec.metric = minkowski_metric(n);
      spec.inverse_rule = InverseRule::metric_conjugate_transpose;
      break;
    case GroupFamily::special_linear:
    case GroupFamily::general_linear:
      spec.inverse_rule = InverseRule::exact_lu;
      break;
    case GroupFamily::symmetric:
      spec.inverse_rule = InverseRule::permutation_transpose;
      break;
  }
  return spec;
}

GroupSpec parse_group(std::string_view text) {
  std::string s;
  for (char c : text) {
    if (!std::isspace(static_cast<unsigned char>(c))) s.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  auto number_after = [&](std::string_view prefix) -> std::optional<std::size_t> {
    if (s.size() <= prefix.size() || s.compare(0, prefix.size(), prefix) != 0) return std::nullopt;
    const std::string digits = s.substr(prefix.size());
    if (digits.size() > 2 || !std::all_of(digits.begin(), digits.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
      return std::nullopt;
    }
    return static_cast<std::size_t>(std::stoul(digits));
  };
  auto checked = [&](GroupFamily f, std::optional<std::size_t> n) {
    if (!n || *n < 1 || *n > kMaxDim) throw ConfigError("unsupported group: '" + std::string(text) + "'");
    return make_group(f, *n);
  };
  if (s.rfind("lorentz", 0) == 0) {
    // "lorentz1k" names O(1,k), acting on R^{k+1}.
    const auto tail = number_after("lorentz1");
    if (!tail || *tail < 1) throw ConfigError("unsupported group: '" + std::string(text) + "'");
    return checked(GroupFamily::lorentz, *tail + 1);
  }
  if (s.rfind("sym", 0) == 0) return checked(GroupFamily::symmetric, number_after("sym"));
  if (s.rfind("so", 0) == 0) return checked(GroupFamily::special_orthogonal, number_after("so"));
  if (s.rfind("sl", 0) == 0) return checked(GroupFamily::special_linear, number_after("sl"));
  if (s.rfind("gl", 0) == 0) return checked(GroupFamily::general_linear, number_after("gl"));
  if (s.rfind("o", 0) == 0) return checked(GroupFamily::orthogonal, number_after("o"));
  throw ConfigError("unsupported group: '" + std::string(text) + "'");
}

Mat rotation2d(double theta) {
  Mat r(2, 2);
  r << std::cos(theta), -std::sin(theta), std::sin(theta), std::cos(theta);
  return r;
}

Mat lorentz_boost(std::size_t n, std::size_t axis, double rapidity) {
  if (axis == 0 || axis >= n) throw DimensionError("lorentz_boost: axis must be spatial");
  Mat b = Mat::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  const auto a = static_cast<Eigen::Index>(axis);
  b(0, 0) = b(a, a) = std::cosh(rapidity);
  b(0, a) = b(a, 0) = std::sinh(rapidity);
  return b;
}

Mat sample_element(const GroupSpec& spec, Rng& rng) {
  const std::size_t n = spec.n;
  const auto en = static_cast<Eigen::Index>(n);
  switch (spec.family) {
    case GroupFamily::special_orthogonal:
      return sample_special_orthogonal(n, rng);
    case GroupFamily::orthogonal: {
      Mat q = sample_special_orthogonal(n, rng);
      if (coin(rng)) q.col(0) *= -1.0;
      return q;
    }
    case GroupFamily::lorentz: {
      Mat rot = Mat::Identity(en, en);
      rot.bottomRightCorner(en - 1, en - 1) = sample_special_orthogonal(n - 1, rng);
      Mat g = rot;
      std::uniform_real_distribution<double> rapidity(-spec.boost_range, spec.boost_range);
      for (std::size_t axis = 1; axis < n; ++axis) g = g * lorentz_boost(n, axis, rapidity(rng));
      if (coin(rng)) {
        Mat parity = Mat::Identity(en, en);
        parity(1, 1) = -1.0;
        g = g * parity;
      }
      if (coin(rng)) {
        Mat time_reversal = Mat::Identity(en, en);
        time_reversal(0, 0) = -1.0;
        g = g * time_reversal;
      }
      return g;
    }
    case GroupFamily::symmetric: {
      std::vector<std::size_t> perm(n);
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      for (std::size_t i = n; i-- > 1;) {
        std::uniform_int_distribution<std::size_t> pick(0, i);
        std::swap(perm[i], perm[pick(rng)]);
      }
      Mat p = Mat::Zero(en, en);
      for (std::size_t i = 0; i < n; ++i) p(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(perm[i])) = 1.0;
      return p;
    }
    case GroupFamily::special_linear:
      for (int attempt = 0; attempt < kMaxTries; ++attempt) {
        Mat a = gaussian(n, rng);
        const double d = a.determinant();
        if (d <= 1e-6) continue;
        return a * std::pow(d, -1.0 / static_cast<double>(n));
      }
      throw SamplingError("SL sampling: no positive-determinant draw in 100 tries");
    case GroupFamily::general_linear:
      for (int attempt = 0; attempt < kMaxTries; ++attempt) {
        Mat a = gaussian(n, rng);
        if (std::abs(a.determinant()) >= 1e-3) return a;
      }
      throw SamplingError("GL sampling: no full-rank draw in 100 tries");
  }
  throw SamplingError("unsupported group family");
}

bool is_member(const GroupSpec& spec, const Mat& m, double tol) {
  const auto en = static_cast<Eigen::Index>(spec.n);
  if (m.rows() != en || m.cols() != en) {
    throw DimensionError("is_member: expected " + std::to_string(spec.n) + "x" + std::to_string(spec.n) + " matrix");
  }
  const Mat eye = Mat::Identity(en, en);
  switch (spec.family) {
    case GroupFamily::orthogonal:
      return max_abs(m.transpose() * m - eye) <= tol;
    case GroupFamily::special_orthogonal:
      return max_abs(m.transpose() * m - eye) <= tol && std::abs(m.determinant() - 1.0) <= tol;
    case GroupFamily::lorentz: {
      const Mat& metric = *spec.metric;
      return max_abs(m.transpose() * metric * m - metric) <= tol;
    }
    case GroupFamily::special_linear:
      return std::abs(m.determinant() - 1.0) <= tol;
    case GroupFamily::general_linear:
      return std::abs(m.determinant()) > tol;
    case GroupFamily::symmetric: {
      for (Eigen::Index i = 0; i < m.size(); ++i) {
        const double v = m.data()[i];
        if (std::abs(v) > tol && std::abs(v - 1.0) > tol) return false;
      }
      auto is_one = [&](double v) { return std::abs(v - 1.0) <= tol; };
      for (Eigen::Index i = 0; i < en; ++i) {
        int row_ones = 0, col_ones = 0;
        for (Eigen::Index j = 0; j < en; ++j) {
          row_ones += is_one(m(i, j));
          col_ones += is_one(m(j, i));
        }
        if (row_ones != 1 || col_ones != 1) return false;
      }
      return true;
    }
  }
  return false;
}

Mat approx_inverse(const GroupSpec& spec, const Mat& h) {
  switch (spec.inverse_rule) {
    case InverseRule::transpose:
    case InverseRule::permutation_transpose:
      return h.transpose();
    case InverseRule::metric_conjugate_transpose:
      return (*spec.metric) * h.transpose() * (*spec.metric);
    case InverseRule::exact_lu:
      return to_mat(inverse(to_tensor(h)));
  }
  return h;
}

Tensor approx_inverse(const GroupSpec& spec, const Tensor& h) {
  switch (spec.inverse_rule) {
    case InverseRule::transpose:
    case InverseRule::permutation_transpose:
      return transpose(h);
    case InverseRule::metric_conjugate_transpose: {
      const Tensor metric = to_tensor(*spec.metric);
      // Lambda h^T Lambda, with Lambda diagonal this is a sign pattern on h^T.
      return matmul(matmul(metric, transpose(h)), metric);
    }
    case InverseRule::exact_lu:
      return inverse(h);
  }
  return h;
}

Tensor act(const GroupSpec& spec, const Mat& g, const Tensor& x) {
  if (static_cast<std::size_t>(g.rows()) != spec.n || x.dim(x.rank() == 3 ? 1 : 0) != spec.n) {
    throw DimensionError("act: group element and operand dimensions differ");
  }
  return matmul(to_tensor(g), x);
}

Tensor to_tensor(const Mat& m) {
  return Tensor::constant({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())},
                          std::vector<double>(m.data(), m.data() + m.size()));
}

Mat to_mat(const Tensor& t) {
  if (t.rank() != 2) throw DimensionError("to_mat: expected rank 2, got " + shape_string(t.shape()));
  Mat m(static_cast<Eigen::Index>(t.dim(0)), static_cast<Eigen::Index>(t.dim(1)));
  std::copy(t.values().begin(), t.values().end(), m.data());
  return m;
}

Tensor stack_mats(const std::vector<Mat>& mats) {
  if (mats.empty()) throw DimensionError("stack_mats: empty");
  const auto r = static_cast<std::size_t>(mats[0].rows()), c = static_cast<std::size_t>(mats[0].cols());
  std::vector<double> v;
  v.reserve(mats.size() * r * c);
  for (const Mat& m : mats) {
    if (static_cast<std::size_t>(m.rows()) != r || static_cast<std::size_t>(m.cols()) != c) {
      throw DimensionError("stack_mats: shapes differ");
    }
    v.insert(v.end(), m.data(), m.data() + m.size());
  }
  return Tensor::constant({mats.size(), r, c}, std::move(v));
}

}  // namespace orbitsym
