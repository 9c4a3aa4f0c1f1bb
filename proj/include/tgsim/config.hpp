#pragma once

#include "tgsim/agent.hpp"
#include "tgsim/env.hpp"
#include "tgsim/gan.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

namespace tgsim {

/// Settings of the train-gan pipeline beyond the network itself.
struct GanPipelineConfig {
  int kmeans_k = 0;  ///< 0 selects ceil(vehicles / 12)
  long segment_frames = 100;
  double holdout_fraction = 0.2;
  long log_every = 50;
  long checkpoint_every = 500;
  int synthetic_episodes = 20;  ///< rule-driver episodes when no dataset is given
  int synthetic_ticks = 300;

  void validate() const {
    if (segment_frames < 1) throw std::invalid_argument("gan: segment_frames must be >= 1");
    if (!(holdout_fraction > 0 && holdout_fraction < 1)) throw std::invalid_argument("gan: holdout_fraction in (0,1)");
    if (log_every < 1 || checkpoint_every < 1) throw std::invalid_argument("gan: log/checkpoint periods must be >= 1");
    if (synthetic_episodes < 1 || synthetic_ticks < 1) throw std::invalid_argument("gan: synthetic sizes must be >= 1");
  }
};

struct AgentTrainingConfig {
  long train_steps = 100000;    ///< environment steps
  long transfer_steps = 30000;  ///< environment steps after transfer
  long eval_every = 5000;
  int eval_episodes = 20;
  int train_every = 1;          ///< environment steps per update

  void validate() const {
    if (train_steps < 0 || transfer_steps < 0) throw std::invalid_argument("agent: step counts must be >= 0");
    if (eval_every < 1 || eval_episodes < 1 || train_every < 1) {
      throw std::invalid_argument("agent: eval_every, eval_episodes and train_every must be >= 1");
    }
  }
};

struct EvalConfig {
  int episodes = 100;
  std::uint64_t first_seed = 1000000;  ///< evaluation seeds are first_seed + k

  void validate() const {
    if (episodes < 1) throw std::invalid_argument("eval: episodes must be >= 1");
  }
};

struct RunConfig {
  EnvConfig env;
  GanConfig gan;
  GanPipelineConfig gan_pipeline;
  AgentConfig agent;
  AgentTrainingConfig training;
  EvalConfig eval;
  std::uint64_t seed = 1;
  std::string out_dir = "out";

  void validate() const {
    env.validate();
    gan.validate();
    gan_pipeline.validate();
    agent.validate();
    training.validate();
    eval.validate();
  }
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

static_assert(std::is_same_v<std::size_t, std::uint64_t>, "seeds are stored as size_t fields");
using FieldRef = std::variant<double*, int*, long*, std::size_t*, std::string*>;

struct Field {
  const char* section;  ///< "" for top-level keys
  const char* key;
  FieldRef ref;
  bool published;  ///< false: committed default without a published value
};

inline std::vector<Field> fields(RunConfig& c) {
  ScenarioConfig& s = c.env.traffic.scenario;
  TrafficConfig& t = c.env.traffic;
  return {
      {"", "seed", &c.seed, false},
      {"", "out_dir", &c.out_dir, false},

      {"scenario", "d_delta", &s.d_delta, true},
      {"scenario", "d_long", &s.d_long, true},
      {"scenario", "v_des_ego", &s.v_des_ego, true},
      {"scenario", "d_max", &s.d_max, true},
      {"scenario", "v_des_min", &s.v_des_range.min, true},
      {"scenario", "v_des_max", &s.v_des_range.max, true},
      {"scenario", "v0_rear_min", &s.v0_rear_range.min, true},
      {"scenario", "v0_rear_max", &s.v0_rear_range.max, true},
      {"scenario", "v0_front_min", &s.v0_front_range.min, true},
      {"scenario", "v0_front_max", &s.v0_front_range.max, true},
      {"scenario", "v0_ego_min", &s.v0_ego_range.min, true},
      {"scenario", "v0_ego_max", &s.v0_ego_range.max, true},
      {"scenario", "m", &s.m, true},
      {"scenario", "n", &s.n, true},
      {"scenario", "sim_dt", &s.sim_dt, true},
      {"scenario", "vehicle_length", &s.vehicle_length, true},
      {"scenario", "vehicle_width", &s.vehicle_width, true},
      {"scenario", "lane_width", &s.lane_width, false},
      {"scenario", "soft_gap", &s.soft_gap, false},
      {"scenario", "soft_ttc", &s.soft_ttc, false},
      {"scenario", "l_f", &s.bicycle.l_f, false},
      {"scenario", "l_r", &s.bicycle.l_r, false},
      {"scenario", "max_steer", &s.bicycle.max_steer, false},
      {"scenario", "steer_near_distance", &t.steering.near_distance, false},
      {"scenario", "steer_far_distance", &t.steering.far_distance, false},
      {"scenario", "steer_k_near", &t.steering.k_near, false},
      {"scenario", "steer_k_far", &t.steering.k_far, false},
      {"scenario", "steer_k_heading", &t.steering.k_heading, false},
      {"scenario", "steer_max", &t.steering.max_steer, false},
      {"scenario", "ticks_per_decision", &t.ticks_per_decision, false},
      {"scenario", "lane_change_duration", &t.lane_change_duration, false},
      {"scenario", "obs_ds_max", &c.env.limits.ds_max, false},
      {"scenario", "obs_v_max", &c.env.limits.v_max, false},
      {"scenario", "max_steps", &c.env.max_steps, false},
      {"scenario", "reward_speed_floor", &c.env.reward.speed_floor, true},
      {"scenario", "reward_harsh_accel", &c.env.reward.harsh_accel, false},
      {"scenario", "reward_lane_change", &c.env.reward.lane_change, true},
      {"scenario", "reward_out_of_road", &c.env.reward.out_of_road, true},
      {"scenario", "reward_hard_crash", &c.env.reward.hard_crash, true},
      {"scenario", "reward_soft_crash", &c.env.reward.soft_crash, true},
      {"scenario", "reward_goal", &c.env.reward.goal, true},

      {"idm", "d_0", &t.idm.d_0, true},
      {"idm", "T", &t.idm.T, true},
      {"idm", "b", &t.idm.b, true},
      {"idm", "d_max_gap", &t.idm.d_max_gap, true},
      {"idm", "a_min", &t.idm.a_min, true},
      {"idm", "a_max", &t.idm.a_max, true},
      {"idm", "delta", &t.idm.delta_exp, true},

      {"mobil", "a_th", &t.mobil.a_th, true},
      {"mobil", "q_rear", &t.mobil.q_rear, true},
      {"mobil", "p_side", &t.mobil.p_side, true},
      {"mobil", "b_safe", &t.mobil.b_safe, true},

      {"gan", "o_l", &c.gan.o_l, true},
      {"gan", "p_l", &c.gan.p_l, true},
      {"gan", "embed_dim", &c.gan.embed_dim, true},
      {"gan", "hidden_dim", &c.gan.hidden_dim, false},
      {"gan", "pool_dim", &c.gan.pool_dim, false},
      {"gan", "z_dim", &c.gan.z_dim, false},
      {"gan", "position_scale", &c.gan.position_scale, false},
      {"gan", "batch_size", &c.gan.batch_size, false},
      {"gan", "lr_g", &c.gan.lr_g, false},
      {"gan", "lr_d", &c.gan.lr_d, false},
      {"gan", "lambda_adv", &c.gan.lambda_adv, false},
      {"gan", "k_v", &c.gan.k_v, false},
      {"gan", "iterations", &c.gan.iterations, false},
      {"gan", "grad_clip", &c.gan.grad_clip, false},
      {"gan", "kmeans_k", &c.gan_pipeline.kmeans_k, false},
      {"gan", "segment_frames", &c.gan_pipeline.segment_frames, false},
      {"gan", "holdout_fraction", &c.gan_pipeline.holdout_fraction, false},
      {"gan", "log_every", &c.gan_pipeline.log_every, false},
      {"gan", "checkpoint_every", &c.gan_pipeline.checkpoint_every, false},
      {"gan", "synthetic_episodes", &c.gan_pipeline.synthetic_episodes, false},
      {"gan", "synthetic_ticks", &c.gan_pipeline.synthetic_ticks, false},
      {"gan", "sr_lc", &t.sr_lc, false},
      {"gan", "t_m_override", &t.t_m_override, false},
      {"gan", "duration_mean", &t.durations.mean, false},
      {"gan", "duration_std", &t.durations.std, false},
      {"gan", "duration_min", &t.durations.clip_min, false},
      {"gan", "duration_max", &t.durations.clip_max, false},
      {"gan", "accel_min", &t.gan_accel_min, false},
      {"gan", "accel_max", &t.gan_accel_max, false},

      {"agent", "hidden", &c.agent.hidden, true},
      {"agent", "gamma", &c.agent.gamma, false},
      {"agent", "lr", &c.agent.lr, false},
      {"agent", "batch_size", &c.agent.batch_size, false},
      {"agent", "capacity", &c.agent.capacity, false},
      {"agent", "sync_period", &c.agent.sync_period, false},
      {"agent", "alpha", &c.agent.alpha, false},
      {"agent", "beta_start", &c.agent.beta_start, false},
      {"agent", "beta_end", &c.agent.beta_end, false},
      {"agent", "beta_steps", &c.agent.beta_steps, false},
      {"agent", "warmup", &c.agent.warmup, false},
      {"agent", "grad_clip", &c.agent.grad_clip, false},
      {"agent", "huber_delta", &c.agent.huber_delta, false},
      {"agent", "priority_eps", &c.agent.priority_eps, false},
      {"agent", "train_steps", &c.training.train_steps, false},
      {"agent", "transfer_steps", &c.training.transfer_steps, false},
      {"agent", "eval_every", &c.training.eval_every, false},
      {"agent", "eval_episodes", &c.training.eval_episodes, false},
      {"agent", "train_every", &c.training.train_every, false},

      {"eval", "episodes", &c.eval.episodes, false},
      {"eval", "first_seed", &c.eval.first_seed, false},
  };
}

inline std::string format_value(const FieldRef& ref) {
  char buf[64];
  if (auto* d = std::get_if<double*>(&ref)) {
    std::snprintf(buf, sizeof buf, "%.17g", **d);
    return buf;
  }
  if (auto* i = std::get_if<int*>(&ref)) return std::to_string(**i);
  if (auto* l = std::get_if<long*>(&ref)) return std::to_string(**l);
  if (auto* z = std::get_if<std::size_t*>(&ref)) return std::to_string(**z);
  return *std::get<std::string*>(ref);
}

template <class T, class F>
T parse_whole(const std::string& text, F convert, const std::string& where) {
  std::size_t used = 0;
  T v{};
  try {
    v = static_cast<T>(convert(text, &used));
  } catch (const std::exception&) {
    throw ConfigError(where + ": cannot parse '" + text + "'");
  }
  if (used != text.size()) throw ConfigError(where + ": trailing characters in '" + text + "'");
  return v;
}

inline void assign_value(const FieldRef& ref, const std::string& text, const std::string& where) {
  if (auto* d = std::get_if<double*>(&ref)) {
    **d = parse_whole<double>(text, [](const std::string& s, std::size_t* n) { return std::stod(s, n); }, where);
  } else if (auto* i = std::get_if<int*>(&ref)) {
    **i = parse_whole<int>(text, [](const std::string& s, std::size_t* n) { return std::stoi(s, n); }, where);
  } else if (auto* l = std::get_if<long*>(&ref)) {
    **l = parse_whole<long>(text, [](const std::string& s, std::size_t* n) { return std::stol(s, n); }, where);
  } else if (auto* z = std::get_if<std::size_t*>(&ref)) {
    if (!text.empty() && text[0] == '-') throw ConfigError(where + ": must be non-negative");
    **z = parse_whole<std::size_t>(text, [](const std::string& s, std::size_t* n) { return std::stoull(s, n); }, where);
  } else {
    *std::get<std::string*>(ref) = text;
  }
}

}  // namespace detail

/// INI text with top-level `seed` / `out_dir` and sections scenario, idm,
/// mobil, gan, agent, eval. Keys absent from the text keep their defaults;
/// unknown sections or keys are errors. The result is validated.
inline RunConfig parse_run_config(const std::string& text) {
  boost::property_tree::ptree tree;
  std::istringstream in(text);
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  RunConfig c;
  const auto fields = detail::fields(c);
  auto lookup = [&](const std::string& section, const std::string& key) -> const detail::Field* {
    for (const auto& f : fields) {
      if (section == f.section && key == f.key) return &f;
    }
    return nullptr;
  };
  for (const auto& [name, node] : tree) {
    bool known_section = false;
    for (const auto& f : fields) known_section = known_section || name == f.section;
    if (node.empty() && !(known_section && node.data().empty())) {
      const detail::Field* f = lookup("", name);
      if (f == nullptr) throw ConfigError("config: unknown top-level key '" + name + "'");
      detail::assign_value(f->ref, node.data(), name);
      continue;
    }
    if (!known_section) throw ConfigError("config: unknown section [" + name + "]");
    for (const auto& [key, leaf] : node) {
      const detail::Field* f = lookup(name, key);
      if (f == nullptr) throw ConfigError("config: unknown key '" + key + "' in [" + name + "]");
      detail::assign_value(f->ref, leaf.data(), name + "." + key);
    }
  }
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str());
}

/// Every field; committed defaults carry a provenance comment.
inline std::string serialize_run_config(RunConfig c) {
  std::ostringstream out;
  std::string section = "";
  for (const auto& f : detail::fields(c)) {
    if (section != f.section) {
      section = f.section;
      out << "\n[" << section << "]\n";
    }
    if (!f.published) out << "# provenance = \"invented\"\n";
    out << f.key << " = " << detail::format_value(f.ref) << "\n";
  }
  return out.str();
}

}  // namespace tgsim
