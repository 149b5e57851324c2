#include "orbitsym/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "orbitsym/errors.hpp"

namespace orbitsym {

GradCheckResult check_gradient(const ScalarFn& fn, const std::vector<Tensor>& inputs, double step, double floor) {
  std::vector<Tensor> params;
  params.reserve(inputs.size());
  for (const Tensor& t : inputs) {
    const auto v = t.values();
    params.push_back(Tensor::parameter(t.shape(), std::vector<double>(v.begin(), v.end())));
  }
  Tensor out = fn(params);
  if (out.size() != 1) throw DimensionError("check_gradient: function must return a scalar");
  out.backward();

  GradCheckResult result;
  result.evaluations = 1;
  for (std::size_t p = 0; p < params.size(); ++p) {
    const auto g = params[p].grad();
    std::vector<double> analytic(params[p].size(), 0.0);
    if (!g.empty()) std::copy(g.begin(), g.end(), analytic.begin());

    std::vector<Tensor> probe;
    for (const Tensor& t : params) {
      const auto v = t.values();
      probe.push_back(Tensor::parameter(t.shape(), std::vector<double>(v.begin(), v.end())));
    }
    auto values = probe[p].mutable_values();
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      const double up = fn(probe).item();
      values[i] = saved - step;
      const double down = fn(probe).item();
      values[i] = saved;
      result.evaluations += 2;
      const double numeric = (up - down) / (2.0 * step);
      diff2 += (analytic[i] - numeric) * (analytic[i] - numeric);
      a2 += analytic[i] * analytic[i];
      n2 += numeric * numeric;
    }
    const double denom = std::max({std::sqrt(a2), std::sqrt(n2), floor});
    result.max_relative_error = std::max(result.max_relative_error, std::sqrt(diff2) / denom);
  }
  return result;
}

GradCheckResult check_parameter_gradient(const std::function<Tensor()>& loss, const std::vector<Tensor>& params,
                                         double step, double floor) {
  std::vector<Tensor> ps = params;
  for (Tensor& p : ps) p.zero_grad();
  Tensor out = loss();
  if (out.size() != 1) throw DimensionError("check_parameter_gradient: loss must be a scalar");
  out.backward();

  GradCheckResult result;
  result.evaluations = 1;
  for (Tensor& p : ps) {
    const auto g = p.grad();
    std::vector<double> analytic(p.size(), 0.0);
    if (!g.empty()) std::copy(g.begin(), g.end(), analytic.begin());
    auto values = p.mutable_values();
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      const double up = loss().item();
      values[i] = saved - step;
      const double down = loss().item();
      values[i] = saved;
      result.evaluations += 2;
      const double numeric = (up - down) / (2.0 * step);
      diff2 += (analytic[i] - numeric) * (analytic[i] - numeric);
      a2 += analytic[i] * analytic[i];
      n2 += numeric * numeric;
    }
    const double denom = std::max({std::sqrt(a2), std::sqrt(n2), floor});
    result.max_relative_error = std::max(result.max_relative_error, std::sqrt(diff2) / denom);
  }
  for (Tensor& p : ps) p.zero_grad();
  return result;
}

}  // namespace orbitsym
