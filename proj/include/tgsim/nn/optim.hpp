#pragma once

#include "tgsim/nn/layers.hpp"

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace tgsim::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Moments are kept in parameter order.
class Adam {
 public:
  Adam() = default;
  Adam(const ParamList& params, AdamConfig cfg) : cfg_(cfg) {
    for (const auto& p : params) {
      first_.emplace_back(p.var->value.rows(), p.var->value.cols());
      second_.emplace_back(p.var->value.rows(), p.var->value.cols());
    }
  }

  void step(const ParamList& params) {
    if (params.size() != first_.size()) throw std::invalid_argument("Adam: parameter count changed");
    ++step_;
    const double t = static_cast<double>(step_);
    const double c1 = 1.0 - std::pow(cfg_.beta1, t);
    const double c2 = 1.0 - std::pow(cfg_.beta2, t);
    for (std::size_t k = 0; k < params.size(); ++k) {
      Node& p = *params[k].var;
      if (!first_[k].same_shape(p.value)) throw std::invalid_argument("Adam: shape mismatch");
      auto m = first_[k].map().array();
      auto v = second_[k].map().array();
      if (p.has_grad()) {
        const auto g = p.grad.map().array();
        m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
        v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g * g;
      } else {
        m *= cfg_.beta1;
        v *= cfg_.beta2;
      }
      p.value.map().array() -= cfg_.lr * (m / c1) / ((v / c2).sqrt() + cfg_.eps);
    }
  }

  std::int64_t step_count() const { return step_; }
  const AdamConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }

  std::vector<Tensor>& first_moments() { return first_; }
  std::vector<Tensor>& second_moments() { return second_; }
  const std::vector<Tensor>& first_moments() const { return first_; }
  const std::vector<Tensor>& second_moments() const { return second_; }
  void set_step_count(std::int64_t s) { step_ = s; }

 private:
  AdamConfig cfg_{};
  std::vector<Tensor> first_;
  std::vector<Tensor> second_;
  std::int64_t step_ = 0;
};

/// Rescales all gradients so their joint L2 norm is at most max_norm.
/// Returns the norm before clipping.
inline double clip_grad_norm(const ParamList& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (p.var->has_grad()) sq += p.var->grad.map().squaredNorm();
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0) {
    const double s = max_norm / norm;
    for (const auto& p : params) {
      if (p.var->has_grad()) p.var->grad.map() *= s;
    }
  }
  return norm;
}

}  // namespace tgsim::nn
