#pragma once

#include "tgsim/nn/autodiff.hpp"

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace tgsim::nn {

using Rng = std::mt19937_64;

/// Independent stream for (seed, counter), e.g. one per training iteration so
/// a resumed run replays the same draws.
inline Rng derive_rng(std::uint64_t seed, std::uint64_t counter) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(counter), static_cast<std::uint32_t>(counter >> 32)};
  return Rng(seq);
}

struct NamedParam {
  std::string name;
  Var var;
};
using ParamList = std::vector<NamedParam>;

enum class Mode { train, eval };

inline Tensor uniform_tensor(std::size_t rows, std::size_t cols, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(rows, cols);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

inline void zero_grad(const ParamList& params) {
  for (const auto& p : params) p.var->grad = Tensor();
}

/// Fully connected layer. weight is (out x in), bias (out x 1); rows of the
/// input are independent samples.
class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    weight = parameter(uniform_tensor(out, in, bound, rng));
    bias = parameter(uniform_tensor(out, 1, bound, rng));
  }

  Var forward(const Var& x) const { return nn::linear(x, weight, bias); }

  std::size_t in_features() const { return weight->value.cols(); }
  std::size_t out_features() const { return weight->value.rows(); }

  void collect(ParamList& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
  }

  Var weight;
  Var bias;
};

/// Linear layer with learned factorized Gaussian weight noise:
/// W = mu_w + sigma_w * (f(eps_out) f(eps_in)^T), f(u) = sign(u) sqrt(|u|).
class NoisyLinear {
 public:
  NoisyLinear() = default;
  NoisyLinear(std::size_t in, std::size_t out, Rng& rng) {
    const double fan_in = static_cast<double>(in);
    const double bound = 1.0 / std::sqrt(fan_in);
    weight_mu = parameter(uniform_tensor(out, in, bound, rng));
    bias_mu = parameter(uniform_tensor(out, 1, bound, rng));
    weight_sigma = parameter(Tensor(out, in, 0.5 / std::sqrt(fan_in)));
    bias_sigma = parameter(Tensor(out, 1, 0.5 / std::sqrt(fan_in)));
    epsilon_w = Tensor(out, in);
    epsilon_b = Tensor(out, 1);
    reset_noise(rng);
  }

  void reset_noise(Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    auto scaled = [&] {
      const double u = normal(rng);
      return (u < 0 ? -1.0 : 1.0) * std::sqrt(std::abs(u));
    };
    const std::size_t out = epsilon_w.rows();
    const std::size_t in = epsilon_w.cols();
    std::vector<double> e_in(in), e_out(out);
    for (double& v : e_in) v = scaled();
    for (double& v : e_out) v = scaled();
    for (std::size_t r = 0; r < out; ++r) {
      for (std::size_t c = 0; c < in; ++c) epsilon_w(r, c) = e_out[r] * e_in[c];
      epsilon_b[r] = e_out[r];
    }
  }

  /// Train mode draws fresh noise when an rng is supplied, otherwise reuses
  /// the current epsilon. Eval mode uses the mean weights only.
  Var forward(const Var& x, Mode mode, Rng* rng = nullptr) {
    if (mode == Mode::eval) return nn::linear(x, weight_mu, bias_mu);
    if (rng != nullptr) reset_noise(*rng);
    const Var w = add(weight_mu, mul_const(weight_sigma, epsilon_w));
    const Var b = add(bias_mu, mul_const(bias_sigma, epsilon_b));
    return nn::linear(x, w, b);
  }

  std::size_t in_features() const { return weight_mu->value.cols(); }
  std::size_t out_features() const { return weight_mu->value.rows(); }

  void collect(ParamList& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight_mu", weight_mu});
    out.push_back({prefix + ".weight_sigma", weight_sigma});
    out.push_back({prefix + ".bias_mu", bias_mu});
    out.push_back({prefix + ".bias_sigma", bias_sigma});
  }

  Var weight_mu, weight_sigma, bias_mu, bias_sigma;
  Tensor epsilon_w, epsilon_b;
};

struct LstmState {
  Var h;
  Var c;
};

/// Long short-term memory cell; gate blocks are stacked as [input, forget,
/// candidate, output] in the 4H rows of the weights.
class LstmCell {
 public:
  LstmCell() = default;
  LstmCell(std::size_t in, std::size_t hidden, Rng& rng) : hidden_(hidden) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
    weight_ih = parameter(uniform_tensor(4 * hidden, in, bound, rng));
    weight_hh = parameter(uniform_tensor(4 * hidden, hidden, bound, rng));
    bias = parameter(uniform_tensor(4 * hidden, 1, bound, rng));
  }

  std::size_t hidden_size() const { return hidden_; }
  std::size_t input_size() const { return weight_ih->value.cols(); }

  LstmState zero_state(std::size_t batch) const {
    return {constant(Tensor(batch, hidden_)), constant(Tensor(batch, hidden_))};
  }

  LstmState step(const Var& x, const LstmState& s) const {
    const Var gates = add(nn::linear(x, weight_ih, bias), matmul_nt(s.h, weight_hh));
    const std::size_t h = hidden_;
    const Var i = sigmoid(slice_cols(gates, 0, h));
    const Var f = sigmoid(slice_cols(gates, h, 2 * h));
    const Var g = nn::tanh(slice_cols(gates, 2 * h, 3 * h));
    const Var o = sigmoid(slice_cols(gates, 3 * h, 4 * h));
    const Var c = add(mul(f, s.c), mul(i, g));
    return {mul(o, nn::tanh(c)), c};
  }

  void collect(ParamList& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight_ih", weight_ih});
    out.push_back({prefix + ".weight_hh", weight_hh});
    out.push_back({prefix + ".bias", bias});
  }

  Var weight_ih, weight_hh, bias;

 private:
  static Var matmul_nt(const Var& a, const Var& w) { return nn::linear(a, w, nullptr); }

  std::size_t hidden_ = 0;
};

}  // namespace tgsim::nn
