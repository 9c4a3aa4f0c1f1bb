#pragma once

#include "tgsim/agent.hpp"
#include "tgsim/config.hpp"
#include "tgsim/env.hpp"
#include "tgsim/gan.hpp"
#include "tgsim/trajectory_data.hpp"
#include "tgsim/traffic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <memory>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace tgsim {

inline std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

/// Seed of training episode k in a run seeded with `seed`.
inline std::uint64_t episode_seed(std::uint64_t seed, std::uint64_t k) { return nn::derive_rng(seed, k + 1)(); }

// Simulation dump

/// Runs `steps` physics ticks with the ego driven by IDM + MOBIL and writes
/// one row per vehicle after every tick.
inline void simulate(const TrafficConfig& cfg, TrafficMode mode, std::uint64_t seed, long steps,
                     const Generator* generator, std::ostream& out) {
  if (steps < 0) throw std::invalid_argument("simulate: steps must be >= 0");
  TrafficWorld world(cfg, mode, generator);
  world.reset(seed);
  out << kScenarioDumpHeader << "\n";
  for (long k = 0; k < steps; ++k) {
    if (k % cfg.ticks_per_decision == 0 && !world.ego_changing_lanes()) {
      const LaneDecision d = mobil_decision(world, world.ego_index());
      if (d != LaneDecision::stay) world.request_lane_change(world.ego_index(), d == LaneDecision::left ? 1 : -1);
    }
    world.tick();
    write_scenario_rows(out, world.scenario());
  }
}

// Datasets

struct DatasetSummary {
  std::size_t records = 0;
  std::size_t vehicles = 0;
  std::size_t windows = 0;
  LaneChangeCounts lane_changes;
  double lane_change_rate = 0.0;  ///< per vehicle per km
};

inline std::vector<TrajectoryRecord> synthetic_dataset(const RunConfig& cfg, std::uint64_t seed) {
  return generate_synthetic_trajectories(cfg.env.traffic, cfg.gan_pipeline.synthetic_episodes,
                                         cfg.gan_pipeline.synthetic_ticks, seed);
}

inline std::vector<SceneWindow> dataset_windows(const RunConfig& cfg, const std::vector<TrajectoryRecord>& records,
                                                std::uint64_t seed) {
  const auto seqs = resample(records, cfg.env.traffic.scenario.sim_dt);
  return grouped_windows(seqs, cfg.gan.o_l, cfg.gan.p_l, cfg.env.traffic.scenario.sim_dt, seed,
                         cfg.gan_pipeline.kmeans_k, cfg.gan_pipeline.segment_frames);
}

inline DatasetSummary summarize_dataset(const RunConfig& cfg, const std::vector<TrajectoryRecord>& records,
                                        std::uint64_t seed) {
  DatasetSummary s;
  s.records = records.size();
  const auto seqs = resample(records, cfg.env.traffic.scenario.sim_dt);
  s.vehicles = seqs.size();
  s.windows = dataset_windows(cfg, records, seed).size();
  s.lane_changes = count_lane_changes(seqs, cfg.env.traffic.scenario.lane_width);
  if (s.lane_changes.q > 0 && s.lane_changes.L > 0) {
    s.lane_change_rate = mean_lane_change_rate(s.lane_changes.n, s.lane_changes.q, s.lane_changes.L);
  }
  return s;
}

/// Deterministic shuffle, then the last `holdout_fraction` becomes the
/// held-out split (at least one window each side).
inline std::pair<std::vector<SceneWindow>, std::vector<SceneWindow>> split_windows(std::vector<SceneWindow> windows,
                                                                                   double holdout_fraction,
                                                                                   std::uint64_t seed) {
  if (windows.size() < 2) throw std::invalid_argument("split_windows: need at least two windows");
  nn::Rng rng = nn::derive_rng(seed, 0x5EED);
  std::shuffle(windows.begin(), windows.end(), rng);
  auto held = static_cast<std::size_t>(std::llround(holdout_fraction * static_cast<double>(windows.size())));
  held = std::clamp<std::size_t>(held, 1, windows.size() - 1);
  std::vector<SceneWindow> test(windows.end() - static_cast<long>(held), windows.end());
  windows.resize(windows.size() - held);
  return {std::move(windows), std::move(test)};
}

// GAN training

inline constexpr const char* kGanMetricsHeader = "iter,loss_g,loss_d,ade,fde";

struct GanRunResult {
  DisplacementErrors untrained;
  DisplacementErrors trained;
  long iterations = 0;
};

/// Trains until `until` iterations, logging every log_every iterations
/// (losses of that iteration, ADE/FDE on the held-out split) and calling
/// `on_checkpoint` every checkpoint_every iterations.
inline GanRunResult train_gan(GanTrainer& trainer, const std::vector<SceneWindow>& train,
                              const std::vector<SceneWindow>& holdout, long until, const GanPipelineConfig& pipe,
                              std::ostream* metrics,
                              const std::function<void(const GanTrainer&)>& on_checkpoint = {}) {
  GanRunResult r;
  const std::uint64_t eval_seed = trainer.seed() ^ 0xE7A1ULL;
  r.untrained = evaluate_generator(trainer.gen, holdout, eval_seed);
  while (trainer.iteration() < until) {
    const GanStepMetrics m = trainer.train_iteration(train);
    const long it = trainer.iteration();
    if (metrics && (it % pipe.log_every == 0 || it == until)) {
      const DisplacementErrors de = evaluate_generator(trainer.gen, holdout, eval_seed);
      *metrics << it << "," << fmt("%.10g", m.loss_g) << "," << fmt("%.10g", m.loss_d) << ","
               << fmt("%.10g", de.ade) << "," << fmt("%.10g", de.fde) << "\n" << std::flush;
    }
    if (on_checkpoint && (it % pipe.checkpoint_every == 0 || it == until)) on_checkpoint(trainer);
  }
  r.trained = evaluate_generator(trainer.gen, holdout, eval_seed);
  r.iterations = trainer.iteration();
  return r;
}

// Episodes and policies

using Policy = std::function<Action(const Observation&, const HighwayEnv&)>;

struct EpisodeOutcome {
  std::uint64_t seed = 0;
  double reward = 0.0;
  int steps = 0;
  int hard_crashes = 0;
  int soft_crashes = 0;
  DoneReason reason = DoneReason::none;
  std::uint64_t scenario_hash = 0;  ///< hash of the initial scenario
};

inline EpisodeOutcome run_episode(HighwayEnv& env, TrafficMode mode, std::uint64_t seed, const Policy& policy,
                                  int episode_index = 0, std::ostream* log = nullptr) {
  EpisodeOutcome o;
  o.seed = seed;
  Observation obs = env.reset(mode, seed);
  std::ostringstream dump;
  write_scenario_rows(dump, env.world().scenario());
  o.scenario_hash = fnv1a(dump.str());
  while (!env.done()) {
    const Action a = policy(obs, env);
    const StepResult r = env.step(a);
    o.reward += r.reward.total;
    if (r.info.crash == CrashKind::hard) ++o.hard_crashes;
    if (r.info.crash == CrashKind::soft) ++o.soft_crashes;
    if (log) write_episode_log_row(*log, episode_index, a, r, env.world().scenario().ego());
    obs = r.observation;
    o.steps = r.info.step;
    o.reason = r.info.reason;
  }
  return o;
}

inline Policy mobil_policy() {
  return [](const Observation&, const HighwayEnv& env) { return env.mobil_action(); };
}

inline Policy random_policy(std::uint64_t seed) {
  auto rng = std::make_shared<nn::Rng>(nn::derive_rng(seed, 0xA11));
  return [rng](const Observation&, const HighwayEnv&) {
    return action_from_index(std::uniform_int_distribution<int>(0, kActionCount - 1)(*rng));
  };
}

/// Greedy on the mean weights of the noisy network.
inline Policy greedy_policy(DqnAgent& agent) {
  return [&agent](const Observation& obs, const HighwayEnv&) { return agent.select_action(obs, nn::Mode::eval); };
}

struct PolicySummary {
  std::string name;
  int episodes = 0;
  int hard_crashes = 0;
  int soft_crashes = 0;
  double mean_reward = 0.0;
  double reward_std = 0.0;
  double normalized_vs_mobil = 0.0;  ///< percent
  std::vector<EpisodeOutcome> outcomes;

  double standard_error() const { return episodes > 1 ? reward_std / std::sqrt(static_cast<double>(episodes)) : 0.0; }
};

inline PolicySummary evaluate_policy(const std::string& name, HighwayEnv& env, TrafficMode mode,
                                     const std::vector<std::uint64_t>& seeds, const Policy& policy,
                                     std::ostream* log = nullptr) {
  if (seeds.empty()) throw std::invalid_argument("evaluate: need at least one episode");
  PolicySummary s;
  s.name = name;
  for (std::size_t k = 0; k < seeds.size(); ++k) {
    s.outcomes.push_back(run_episode(env, mode, seeds[k], policy, static_cast<int>(k), log));
  }
  s.episodes = static_cast<int>(seeds.size());
  double sum = 0.0;
  for (const auto& o : s.outcomes) {
    sum += o.reward;
    s.hard_crashes += o.hard_crashes;
    s.soft_crashes += o.soft_crashes;
  }
  s.mean_reward = sum / s.episodes;
  double sq = 0.0;
  for (const auto& o : s.outcomes) sq += (o.reward - s.mean_reward) * (o.reward - s.mean_reward);
  s.reward_std = s.episodes > 1 ? std::sqrt(sq / (s.episodes - 1)) : 0.0;
  return s;
}

inline std::vector<std::uint64_t> evaluation_seeds(std::uint64_t first, int episodes) {
  std::vector<std::uint64_t> seeds(static_cast<std::size_t>(episodes));
  std::iota(seeds.begin(), seeds.end(), first);
  return seeds;
}

/// Percent of the paired MOBIL mean reward; MOBIL must be the first entry.
inline void normalize_against_mobil(std::vector<PolicySummary>& report) {
  if (report.empty()) return;
  const double base = report.front().mean_reward;
  for (auto& p : report) p.normalized_vs_mobil = base != 0.0 ? 100.0 * p.mean_reward / base : std::nan("");
}

inline constexpr const char* kEvaluationHeader =
    "policy,episodes,hard_crashes,soft_crashes,mean_reward,reward_std,normalized_vs_mobil";

inline void write_evaluation_csv(std::ostream& out, const std::vector<PolicySummary>& report) {
  out << kEvaluationHeader << "\n";
  for (const auto& p : report) {
    out << p.name << "," << p.episodes << "," << p.hard_crashes << "," << p.soft_crashes << ","
        << fmt("%.10g", p.mean_reward) << "," << fmt("%.10g", p.reward_std) << ","
        << fmt("%.6g", p.normalized_vs_mobil) << "\n";
  }
}

inline void write_evaluation_table(std::ostream& out, const std::vector<PolicySummary>& report, TrafficMode mode) {
  char line[256];
  std::snprintf(line, sizeof line, "%-16s %8s %6s %6s %22s %10s\n", to_string(mode), "episodes", "hard", "soft",
                "reward (mean +- std)", "% MOBIL");
  out << line;
  for (const auto& p : report) {
    std::snprintf(line, sizeof line, "%-16s %8d %6d %6d %11.2f +- %7.2f %9.2f%%\n", p.name.c_str(), p.episodes,
                  p.hard_crashes, p.soft_crashes, p.mean_reward, p.reward_std, p.normalized_vs_mobil);
    out << line;
  }
}

// Agent training

inline constexpr const char* kRewardCurveHeader = "step,episodes,mean_reward,reward_std,hard_crashes,soft_crashes";

struct AgentRunResult {
  long steps = 0;
  long episodes = 0;
  long updates = 0;
  PolicySummary last_eval;
};

/// Interacts for `steps` environment steps in `mode`, storing transitions and
/// updating every train_every steps once warm. Every eval_every steps the
/// greedy policy is scored on eval_episodes fixed seeds and a curve row is
/// written.
inline AgentRunResult train_agent(DqnAgent& agent, const RunConfig& cfg, TrafficMode mode, const Generator* generator,
                                  long steps, std::uint64_t seed, std::ostream* curve) {
  HighwayEnv env(cfg.env, generator);
  HighwayEnv eval_env(cfg.env, generator);
  const auto eval_seeds = evaluation_seeds(cfg.eval.first_seed + 500000, cfg.training.eval_episodes);
  AgentRunResult r;
  Observation obs = env.reset(mode, episode_seed(seed, 0));
  for (long k = 1; k <= steps; ++k) {
    const Action a = agent.select_action(obs, nn::Mode::train);
    const StepResult s = env.step(a);
    agent.observe({obs, a, s.reward.total, s.observation, s.done});
    agent.count_iteration();
    if (s.done) {
      ++r.episodes;
      obs = env.reset(mode, episode_seed(seed, static_cast<std::uint64_t>(r.episodes)));
    } else {
      obs = s.observation;
    }
    if (agent.ready() && k % cfg.training.train_every == 0) agent.train_step();
    if (k % cfg.training.eval_every == 0 || k == steps) {
      r.last_eval = evaluate_policy("agent", eval_env, mode, eval_seeds, greedy_policy(agent));
      if (curve) {
        *curve << k << "," << r.last_eval.episodes << "," << fmt("%.10g", r.last_eval.mean_reward) << ","
               << fmt("%.10g", r.last_eval.reward_std) << "," << r.last_eval.hard_crashes << ","
               << r.last_eval.soft_crashes << "\n" << std::flush;
      }
    }
  }
  r.steps = steps;
  r.updates = agent.updates();
  return r;
}

/// Agent shaped by a checkpoint's metadata, weights loaded.
inline DqnAgent load_agent(const nn::WeightFile& file, AgentConfig cfg, std::size_t expected_obs_dim,
                           std::uint64_t seed) {
  const auto kind = file.metadata.find("kind");
  if (kind == file.metadata.end() || kind->second != "agent_checkpoint") {
    throw nn::WeightFormatError("not an agent checkpoint");
  }
  const std::size_t obs_dim = std::stoul(file.metadata.at("obs_dim"));
  if (obs_dim != expected_obs_dim) {
    throw nn::WeightFormatError("agent expects observations of length " + std::to_string(obs_dim) +
                                ", environment produces " + std::to_string(expected_obs_dim));
  }
  cfg.hidden = std::stoul(file.metadata.at("hidden"));
  DqnAgent agent(cfg, obs_dim, seed);
  agent.transfer_init(file);
  return agent;
}

}  // namespace tgsim
