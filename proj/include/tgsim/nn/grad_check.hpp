#pragma once

#include "tgsim/nn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

namespace tgsim::nn {

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
  bool passed = false;
};

/// Compares the taped gradient of a scalar function against central finite
/// differences for every entry of every parameter. `model_fn` must rebuild
/// the graph on each call and be deterministic.
///
/// The relative error of one entry is |a - n| / max(|a|, |n|, floor), so
/// entries whose gradient is numerically zero are judged on absolute error.
inline GradCheckReport grad_check(const std::function<Var()>& model_fn, const ParamList& params,
                                  double tolerance, double step = 1e-6, double floor = 1e-6) {
  zero_grad(params);
  backward(model_fn());
  std::vector<Tensor> analytic;
  for (const auto& p : params) {
    analytic.push_back(p.var->has_grad() ? p.var->grad
                                         : Tensor(p.var->value.rows(), p.var->value.cols()));
  }
  zero_grad(params);

  GradCheckReport report;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& value = params[k].var->value;
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double saved = value[i];
      value[i] = saved + step;
      const double up = model_fn()->value[0];
      value[i] = saved - step;
      const double down = model_fn()->value[0];
      value[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[k][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      const double rel = std::abs(a - numeric) / denom;
      ++report.checked;
      if (rel > report.max_relative_error) {
        report.max_relative_error = rel;
        report.worst_param = params[k].name;
        report.worst_index = i;
        report.analytic = a;
        report.numeric = numeric;
      }
    }
  }
  report.passed = report.max_relative_error < tolerance;
  return report;
}

}  // namespace tgsim::nn
