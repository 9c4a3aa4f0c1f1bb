#pragma once

#include "tgsim/env.hpp"
#include "tgsim/nn/optim.hpp"
#include "tgsim/nn/weights.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace tgsim {

using nn::Tensor;
using nn::Var;

/// Q(s, .) = V(s) + A(s, .) - mean_a A(s, a), row per sample.
inline Var dueling_combine(const Var& value, const Var& advantage) {
  const Var centered = nn::add_col_broadcast(advantage, nn::scale(nn::row_mean(advantage), -1.0));
  return nn::add_col_broadcast(centered, value);
}

/// Two noisy ReLU layers feeding linear value and advantage heads.
class QNetwork {
 public:
  QNetwork() = default;
  QNetwork(std::size_t obs_dim, std::size_t hidden, nn::Rng& rng)
      : l1(obs_dim, hidden, rng), l2(hidden, hidden, rng), value(hidden, 1, rng), advantage(hidden, kActionCount, rng) {}

  /// Rows of `obs` are observations; returns (rows x 3). Train mode uses the
  /// current noise sample; eval mode the mean weights.
  Var forward(const Var& obs, nn::Mode mode) {
    if (obs->value.cols() != l1.in_features()) {
      throw std::invalid_argument("QNetwork: expected observations of length " + std::to_string(l1.in_features()) +
                                  ", got " + std::to_string(obs->value.cols()));
    }
    const Var h1 = nn::relu(l1.forward(obs, mode));
    const Var h2 = nn::relu(l2.forward(h1, mode));
    return dueling_combine(value.forward(h2), advantage.forward(h2));
  }

  std::vector<double> q_values(const Observation& obs, nn::Mode mode) {
    nn::NoGradGuard guard;
    const Var q = forward(nn::constant(Tensor(1, obs.size(), obs)), mode);
    return {q->value.data().begin(), q->value.data().end()};
  }

  void reset_noise(nn::Rng& rng) {
    l1.reset_noise(rng);
    l2.reset_noise(rng);
  }

  nn::ParamList parameters() const {
    nn::ParamList out;
    l1.collect(out, "l1");
    l2.collect(out, "l2");
    value.collect(out, "value");
    advantage.collect(out, "advantage");
    return out;
  }

  /// Deep copy of weights and noise.
  void copy_from(const QNetwork& other) {
    const auto dst = parameters();
    const auto src = other.parameters();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k].var->value = src[k].var->value;
    l1.epsilon_w = other.l1.epsilon_w;
    l1.epsilon_b = other.l1.epsilon_b;
    l2.epsilon_w = other.l2.epsilon_w;
    l2.epsilon_b = other.l2.epsilon_b;
  }

  std::size_t obs_dim() const { return l1.in_features(); }
  std::size_t hidden() const { return l1.out_features(); }

  nn::NoisyLinear l1, l2;
  nn::Linear value, advantage;
};

/// Index of the largest value; ties go to the lowest index.
inline int argmax_lowest(const std::vector<double>& q) {
  int best = 0;
  for (int a = 1; a < static_cast<int>(q.size()); ++a) {
    if (q[a] > q[best]) best = a;
  }
  return best;
}

/// y = r for terminal rows, else r + gamma Q_target(s', argmax_a Q_online(s', a)).
inline std::vector<double> td_targets(const std::vector<double>& rewards, const std::vector<bool>& done,
                                      const Tensor& q_online_next, const Tensor& q_target_next, double gamma) {
  std::vector<double> y(rewards.size());
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    if (done[i]) {
      y[i] = rewards[i];
      continue;
    }
    std::vector<double> row(q_online_next.cols());
    for (std::size_t a = 0; a < row.size(); ++a) row[a] = q_online_next(i, a);
    y[i] = rewards[i] + gamma * q_target_next(i, static_cast<std::size_t>(argmax_lowest(row)));
  }
  return y;
}

/// Binary sum tree over a fixed number of leaves. Parents are recomputed from
/// their children on every update so the root never drifts.
class SumTree {
 public:
  explicit SumTree(std::size_t capacity) : leaves_(1) {
    if (capacity == 0) throw std::invalid_argument("SumTree: capacity must be > 0");
    while (leaves_ < capacity) leaves_ *= 2;
    nodes_.assign(2 * leaves_, 0.0);
    capacity_ = capacity;
  }

  void set(std::size_t i, double value) {
    if (i >= capacity_) throw std::out_of_range("SumTree: index out of range");
    if (!(value >= 0) || !std::isfinite(value)) throw std::invalid_argument("SumTree: value must be finite and >= 0");
    std::size_t k = i + leaves_;
    nodes_[k] = value;
    for (k /= 2; k >= 1; k /= 2) nodes_[k] = nodes_[2 * k] + nodes_[2 * k + 1];
  }

  double get(std::size_t i) const { return nodes_[i + leaves_]; }
  double total() const { return nodes_[1]; }
  std::size_t capacity() const { return capacity_; }

  /// Leaf whose cumulative range contains `mass` in [0, total).
  std::size_t find(double mass) const {
    std::size_t k = 1;
    while (k < leaves_) {
      if (mass < nodes_[2 * k] || nodes_[2 * k + 1] == 0.0) {
        k = 2 * k;
      } else {
        mass -= nodes_[2 * k];
        k = 2 * k + 1;
      }
    }
    return std::min(k - leaves_, capacity_ - 1);
  }

 private:
  std::size_t leaves_;
  std::size_t capacity_ = 0;
  std::vector<double> nodes_;
};

struct Transition {
  Observation state;
  Action action = Action::keep;
  double reward = 0.0;
  Observation next_state;
  bool done = false;
};

struct SampledBatch {
  std::vector<std::size_t> indices;
  std::vector<double> weights;  ///< importance weights, max 1
  std::vector<double> probabilities;
  Tensor states, next_states;
  std::vector<std::size_t> actions;
  std::vector<double> rewards;
  std::vector<bool> done;
};

/// Ring buffer with proportional prioritization. Stored leaf values are
/// p^alpha; new transitions enter at the largest priority seen so far.
class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t capacity, std::size_t obs_dim, double alpha, double priority_eps = 1e-6)
      : tree_(capacity), obs_dim_(obs_dim), alpha_(alpha), eps_(priority_eps) {
    if (alpha < 0) throw std::invalid_argument("ReplayBuffer: alpha must be >= 0");
    if (!(priority_eps > 0)) throw std::invalid_argument("ReplayBuffer: priority epsilon must be > 0");
    data_.resize(capacity);
  }

  void add(Transition t) {
    if (t.state.size() != obs_dim_ || t.next_state.size() != obs_dim_) {
      throw std::invalid_argument("ReplayBuffer: observation length mismatch");
    }
    data_[next_] = std::move(t);
    tree_.set(next_, std::pow(max_priority_, alpha_));
    next_ = (next_ + 1) % data_.size();
    size_ = std::min(size_ + 1, data_.size());
  }

  std::size_t size() const { return size_; }
  std::size_t capacity() const { return data_.size(); }
  double alpha() const { return alpha_; }
  const Transition& at(std::size_t i) const { return data_[i]; }
  const SumTree& tree() const { return tree_; }
  double max_priority() const { return max_priority_; }

  double probability(std::size_t i) const { return tree_.get(i) / tree_.total(); }

  /// Stratified proportional sample of `batch` transitions.
  SampledBatch sample(std::size_t batch, double beta, nn::Rng& rng) const {
    if (size_ < batch || batch == 0) {
      throw std::logic_error("ReplayBuffer: need at least " + std::to_string(batch) + " transitions, have " +
                             std::to_string(size_));
    }
    SampledBatch b;
    b.states = Tensor(batch, obs_dim_);
    b.next_states = Tensor(batch, obs_dim_);
    const double total = tree_.total();
    const double segment = total / static_cast<double>(batch);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    double max_w = 0.0;
    for (std::size_t k = 0; k < batch; ++k) {
      const double mass = std::min((static_cast<double>(k) + unit(rng)) * segment, std::nextafter(total, 0.0));
      std::size_t i = tree_.find(mass);
      if (i >= size_) i = size_ - 1;
      const double p = tree_.get(i) / total;
      const double w = std::pow(static_cast<double>(size_) * p, -beta);
      max_w = std::max(max_w, w);
      b.indices.push_back(i);
      b.probabilities.push_back(p);
      b.weights.push_back(w);
      const Transition& t = data_[i];
      for (std::size_t c = 0; c < obs_dim_; ++c) {
        b.states(k, c) = t.state[c];
        b.next_states(k, c) = t.next_state[c];
      }
      b.actions.push_back(static_cast<std::size_t>(t.action));
      b.rewards.push_back(t.reward);
      b.done.push_back(t.done);
    }
    for (double& w : b.weights) w /= max_w;
    return b;
  }

  /// priority = |td error| + eps.
  void update_priorities(const std::vector<std::size_t>& indices, const std::vector<double>& td_errors) {
    for (std::size_t k = 0; k < indices.size(); ++k) {
      const double p = std::abs(td_errors[k]) + eps_;
      max_priority_ = std::max(max_priority_, p);
      tree_.set(indices[k], std::pow(p, alpha_));
    }
  }

 private:
  SumTree tree_;
  std::vector<Transition> data_;
  std::size_t obs_dim_;
  double alpha_;
  double eps_;
  double max_priority_ = 1.0;
  std::size_t next_ = 0;
  std::size_t size_ = 0;
};

struct AgentConfig {
  std::size_t hidden = 256;
  double gamma = 0.95;
  double lr = 1e-4;
  std::size_t batch_size = 64;
  std::size_t capacity = 100000;
  long sync_period = 2000;  ///< updates between target-network copies
  double alpha = 0.6;
  double beta_start = 0.4;
  double beta_end = 1.0;
  long beta_steps = 100000;  ///< updates over which beta is annealed
  long warmup = 1000;        ///< transitions stored before the first update
  double grad_clip = 10.0;
  double huber_delta = 1.0;
  double priority_eps = 1e-6;

  void validate() const {
    if (!(gamma > 0 && gamma <= 1)) throw std::invalid_argument("agent: gamma must be in (0, 1]");
    if (!(lr > 0)) throw std::invalid_argument("agent: lr must be > 0");
    if (hidden == 0 || batch_size == 0) throw std::invalid_argument("agent: hidden and batch_size must be > 0");
    if (capacity < batch_size) throw std::invalid_argument("agent: capacity must be >= batch_size");
    if (sync_period < 1 || beta_steps < 1) throw std::invalid_argument("agent: periods must be >= 1");
    if (warmup < static_cast<long>(batch_size)) throw std::invalid_argument("agent: warmup must be >= batch_size");
    if (alpha < 0 || beta_start < 0 || beta_end < beta_start || beta_end > 1) {
      throw std::invalid_argument("agent: need alpha >= 0 and 0 <= beta_start <= beta_end <= 1");
    }
    if (!(grad_clip > 0 && huber_delta > 0)) throw std::invalid_argument("agent: grad_clip, huber_delta must be > 0");
  }

  /// FNV-1a over the printed fields; stored with checkpoints.
  std::string hash() const {
    char buf[512];
    std::snprintf(buf, sizeof buf, "%zu|%.17g|%.17g|%zu|%zu|%ld|%.17g|%.17g|%.17g|%ld|%ld|%.17g|%.17g|%.17g", hidden,
                  gamma, lr, batch_size, capacity, sync_period, alpha, beta_start, beta_end, beta_steps, warmup,
                  grad_clip, huber_delta, priority_eps);
    std::uint64_t h = 1469598103934665603ULL;
    for (const char* p = buf; *p; ++p) {
      h ^= static_cast<unsigned char>(*p);
      h *= 1099511628211ULL;
    }
    char out[17];
    std::snprintf(out, sizeof out, "%016llx", static_cast<unsigned long long>(h));
    return out;
  }
};

struct TrainStepStats {
  double loss = 0.0;
  double mean_abs_td = 0.0;
  double beta = 0.0;
};

class NonFiniteAgentLoss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DqnAgent {
 public:
  DqnAgent(AgentConfig cfg, std::size_t obs_dim, std::uint64_t seed)
      : cfg_(cfg), rng_(nn::derive_rng(seed, 0)), buffer_(cfg.capacity, obs_dim, cfg.alpha, cfg.priority_eps) {
    cfg_.validate();
    online_ = QNetwork(obs_dim, cfg_.hidden, rng_);
    target_ = QNetwork(obs_dim, cfg_.hidden, rng_);
    target_.copy_from(online_);
    adam_ = nn::Adam(online_.parameters(), {cfg_.lr});
  }

  /// Greedy action over the noisy network; a fresh noise sample is drawn per
  /// call in train mode, eval mode uses the mean weights.
  Action select_action(const Observation& obs, nn::Mode mode = nn::Mode::train) {
    if (mode == nn::Mode::train) online_.reset_noise(rng_);
    return static_cast<Action>(argmax_lowest(online_.q_values(obs, mode)));
  }

  void observe(Transition t) { buffer_.add(std::move(t)); }

  bool ready() const { return static_cast<long>(buffer_.size()) >= cfg_.warmup; }

  double beta() const {
    const double f = std::min(1.0, static_cast<double>(updates_) / static_cast<double>(cfg_.beta_steps));
    return cfg_.beta_start + f * (cfg_.beta_end - cfg_.beta_start);
  }

  /// One prioritized double-Q update with importance-weighted Huber loss.
  TrainStepStats train_step() {
    if (!ready()) {
      throw std::logic_error("agent: train_step before warmup (" + std::to_string(buffer_.size()) + " of " +
                             std::to_string(cfg_.warmup) + " transitions)");
    }
    TrainStepStats stats;
    stats.beta = beta();
    const SampledBatch b = buffer_.sample(cfg_.batch_size, stats.beta, rng_);
    online_.reset_noise(rng_);
    target_.reset_noise(rng_);
    std::vector<double> y;
    {
      nn::NoGradGuard guard;
      const Var next = nn::constant(b.next_states);
      const Tensor q_online_next = online_.forward(next, nn::Mode::train)->value;
      const Tensor q_target_next = target_.forward(next, nn::Mode::train)->value;
      y = td_targets(b.rewards, b.done, q_online_next, q_target_next, cfg_.gamma);
    }
    const auto params = online_.parameters();
    const Var q = online_.forward(nn::constant(b.states), nn::Mode::train);
    const Var q_sa = nn::pick_cols(q, b.actions);
    const Var td = nn::sub(q_sa, nn::constant(Tensor(y.size(), 1, y)));
    const Var loss = nn::mean(nn::mul_const(nn::huber(td, cfg_.huber_delta), Tensor(b.weights.size(), 1, b.weights)));
    stats.loss = loss->value[0];
    if (!std::isfinite(stats.loss)) {
      throw NonFiniteAgentLoss("agent: non-finite loss at update " + std::to_string(updates_));
    }
    nn::zero_grad(params);
    nn::backward(loss);
    nn::clip_grad_norm(params, cfg_.grad_clip);
    adam_.step(params);
    nn::zero_grad(params);

    const std::vector<double> errors(td->value.data().begin(), td->value.data().end());
    for (double e : errors) stats.mean_abs_td += std::abs(e) / static_cast<double>(errors.size());
    buffer_.update_priorities(b.indices, errors);
    ++updates_;
    if (updates_ % cfg_.sync_period == 0) target_.copy_from(online_);
    return stats;
  }

  nn::WeightFile checkpoint(const std::string& mode) const {
    nn::WeightFile f;
    f.add(online_.parameters(), "online.");
    f.add(target_.parameters(), "target.");
    f.metadata["kind"] = "agent_checkpoint";
    f.metadata["config_hash"] = cfg_.hash();
    f.metadata["iteration"] = std::to_string(iterations_);
    f.metadata["updates"] = std::to_string(updates_);
    f.metadata["mode"] = mode;
    f.metadata["obs_dim"] = std::to_string(online_.obs_dim());
    f.metadata["hidden"] = std::to_string(online_.hidden());
    return f;
  }

  /// Loads online weights (target copied from them), empties the replay
  /// buffer and restarts the optimizer. Shape mismatches are listed per field.
  void transfer_init(const nn::WeightFile& file) {
    const auto it = file.metadata.find("kind");
    if (it != file.metadata.end() && it->second != "agent_checkpoint") {
      throw nn::WeightFormatError("expected an agent checkpoint, found kind=" + it->second);
    }
    nn::load_into(online_.parameters(), file, "online.");
    target_.copy_from(online_);
    buffer_ = ReplayBuffer(cfg_.capacity, online_.obs_dim(), cfg_.alpha, cfg_.priority_eps);
    adam_ = nn::Adam(online_.parameters(), {cfg_.lr});
    updates_ = 0;
  }

  /// Counts environment interactions; kept by the training loop.
  void count_iteration() { ++iterations_; }

  const AgentConfig& config() const { return cfg_; }
  QNetwork& online() { return online_; }
  QNetwork& target() { return target_; }
  const ReplayBuffer& buffer() const { return buffer_; }
  const nn::Adam& optimizer() const { return adam_; }
  long updates() const { return updates_; }
  long iterations() const { return iterations_; }

 private:
  AgentConfig cfg_;
  nn::Rng rng_;
  QNetwork online_, target_;
  nn::Adam adam_;
  ReplayBuffer buffer_;
  long updates_ = 0;
  long iterations_ = 0;
};

}  // namespace tgsim
