// tgsim command line: simulate | ingest | train-gan | train-agent | evaluate

#include "tgsim/harness.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>

using namespace tgsim;
namespace fs = std::filesystem;

namespace {

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
};

RunConfig effective_config(const Globals& g) {
  RunConfig c = g.config_path.empty() ? RunConfig{} : load_run_config(g.config_path);
  if (g.seed) c.seed = *g.seed;
  if (!g.out.empty()) c.out_dir = g.out;
  c.validate();
  fs::create_directories(c.out_dir);
  std::ofstream(fs::path(c.out_dir) / "run_config.ini") << serialize_run_config(c);
  return c;
}

std::ofstream open_out(const RunConfig& c, const std::string& name) {
  const fs::path p = fs::path(c.out_dir) / name;
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  return f;
}

TrajectoryFormat parse_format(const std::string& s) {
  if (s == "ngsim") return TrajectoryFormat::ngsim;
  if (s == "native") return TrajectoryFormat::native;
  throw std::invalid_argument("unknown trajectory format '" + s + "' (ngsim or native)");
}

std::vector<TrajectoryRecord> load_records(const RunConfig& c, const std::string& input, const std::string& format,
                                           bool swap_axes) {
  if (input.empty()) return synthetic_dataset(c, c.seed);
  ParseOptions opt;
  opt.swap_axes = swap_axes;
  auto records = parse_trajectories(input, parse_format(format), opt);
  if (records.empty()) throw std::runtime_error("dataset " + input + " has no trajectory records");
  return records;
}

std::unique_ptr<Generator> load_generator_file(const RunConfig& c, const std::string& path) {
  if (path.empty()) return nullptr;
  nn::Rng rng = nn::derive_rng(0, 0);
  auto gen = std::make_unique<Generator>(c.gan, rng);
  load_generator(*gen, nn::load_weights(path));
  return gen;
}

void require_generator(TrafficMode mode, const Generator* gen) {
  if (mode == TrafficMode::gan && gen == nullptr) {
    throw std::invalid_argument("traffic_gan needs --generator weights from train-gan");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Highway traffic simulation, trajectory GAN and lane-change DQN"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "INI run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "master seed (overrides the config)");
  app.add_option("--out", g.out, "output directory (overrides the config)");

  // simulate
  auto* sim = app.add_subcommand("simulate", "run traffic and dump every tick to simulation.csv");
  std::string sim_mode = "idm", sim_gen;
  long sim_steps = 100;
  sim->add_option("--mode", sim_mode, "idm or gan");
  sim->add_option("--steps", sim_steps, "physics ticks");
  sim->add_option("--generator", sim_gen, "generator weights (gan mode)");

  // ingest
  auto* ing = app.add_subcommand("ingest", "resample a trajectory dataset to trajectories.csv and summarize it");
  std::string ing_input, ing_format = "ngsim";
  bool ing_swap = false;
  ing->add_option("--input", ing_input, "dataset path; omitted = synthetic rule-driver episodes");
  ing->add_option("--format", ing_format, "ngsim or native");
  ing->add_flag("--swap-axes", ing_swap, "ngsim: longitudinal axis is Local_Y");

  // train-gan
  auto* tg = app.add_subcommand("train-gan", "train the trajectory generator");
  std::string tg_data, tg_format = "native", tg_resume;
  bool tg_swap = false;
  std::optional<long> tg_iters;
  tg->add_option("--data", tg_data, "dataset path; omitted = synthetic rule-driver episodes");
  tg->add_option("--format", tg_format, "ngsim or native");
  tg->add_flag("--swap-axes", tg_swap, "ngsim: longitudinal axis is Local_Y");
  tg->add_option("--iterations", tg_iters, "total iterations (default from config)");
  tg->add_option("--resume", tg_resume, "gan checkpoint to continue from")->check(CLI::ExistingFile);

  // train-agent
  auto* ta = app.add_subcommand("train-agent", "train the lane-change agent");
  std::string ta_mode = "idm", ta_gen, ta_transfer;
  std::optional<long> ta_steps;
  ta->add_option("--mode", ta_mode, "idm or gan");
  ta->add_option("--generator", ta_gen, "generator weights (gan mode)");
  ta->add_option("--transfer-from", ta_transfer, "agent checkpoint to start from")->check(CLI::ExistingFile);
  ta->add_option("--steps", ta_steps, "environment steps (default from config)");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "score agents against the MOBIL baseline on paired seeds");
  std::string ev_mode = "idm", ev_gen;
  std::vector<std::string> ev_agents;
  std::optional<int> ev_episodes;
  bool ev_random = false, ev_log = false;
  ev->add_option("--mode", ev_mode, "idm or gan");
  ev->add_option("--generator", ev_gen, "generator weights (gan mode)");
  ev->add_option("--agent", ev_agents, "NAME=CHECKPOINT, repeatable");
  ev->add_option("--episodes", ev_episodes, "episodes per policy (default from config)");
  ev->add_flag("--random", ev_random, "also score a uniform random policy");
  ev->add_flag("--episode-log", ev_log, "write per-step logs for every policy");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    const RunConfig c = effective_config(g);

    if (sim->parsed()) {
      const TrafficMode mode = parse_traffic_mode(sim_mode);
      const auto gen = load_generator_file(c, sim_gen);
      require_generator(mode, gen.get());
      auto out = open_out(c, "simulation.csv");
      simulate(c.env.traffic, mode, c.seed, sim_steps, gen.get(), out);
    } else if (ing->parsed()) {
      const auto records = load_records(c, ing_input, ing_format, ing_swap);
      const auto seqs = resample(records, c.env.traffic.scenario.sim_dt);
      std::vector<TrajectoryRecord> resampled;
      for (const auto& s : seqs) {
        for (std::size_t k = 0; k < s.points.size(); ++k) {
          const double t = static_cast<double>(s.first_frame + static_cast<long>(k)) * c.env.traffic.scenario.sim_dt;
          resampled.push_back({s.vehicle_id, t, s.points[k].x, s.points[k].y});
        }
      }
      auto traj = open_out(c, "trajectories.csv");
      write_native(traj, resampled);
      const DatasetSummary s = summarize_dataset(c, records, c.seed);
      auto sum = open_out(c, "ingest_summary.csv");
      sum << "records,vehicles,windows,lane_changes,extent_m,lane_changes_per_vehicle_km\n"
          << s.records << "," << s.vehicles << "," << s.windows << "," << s.lane_changes.n << ","
          << fmt("%.10g", s.lane_changes.L) << "," << fmt("%.10g", s.lane_change_rate) << "\n";
      std::cout << s.vehicles << " vehicles, " << s.windows << " windows, " << s.lane_changes.n
                << " lane changes\n";
    } else if (tg->parsed()) {
      const auto records = load_records(c, tg_data, tg_format, tg_swap);
      auto windows = dataset_windows(c, records, c.seed);
      if (windows.size() < 2) throw std::runtime_error("dataset yields fewer than two scene windows");
      const auto [train, holdout] = split_windows(std::move(windows), c.gan_pipeline.holdout_fraction, c.seed);
      GanTrainer trainer(c.gan, c.seed);
      if (!tg_resume.empty()) trainer.restore(nn::load_weights(tg_resume));
      const long until = tg_iters.value_or(c.gan.iterations);
      auto metrics = open_out(c, "gan_metrics.csv");
      metrics << kGanMetricsHeader << "\n";
      const std::string ckpt = (fs::path(c.out_dir) / "gan_checkpoint.tgw").string();
      const GanRunResult r = train_gan(trainer, train, holdout, until, c.gan_pipeline, &metrics,
                                       [&](const GanTrainer& t) { nn::save_weights(ckpt, t.checkpoint()); });
      nn::save_weights((fs::path(c.out_dir) / "generator.tgw").string(), generator_weights(trainer.gen));
      auto sum = open_out(c, "gan_summary.csv");
      sum << "iterations,train_windows,holdout_windows,untrained_ade,untrained_fde,ade,fde\n"
          << r.iterations << "," << train.size() << "," << holdout.size() << "," << fmt("%.10g", r.untrained.ade)
          << "," << fmt("%.10g", r.untrained.fde) << "," << fmt("%.10g", r.trained.ade) << ","
          << fmt("%.10g", r.trained.fde) << "\n";
      std::cout << "held-out ADE " << fmt("%.4f", r.trained.ade) << " m (untrained " << fmt("%.4f", r.untrained.ade)
                << "), FDE " << fmt("%.4f", r.trained.fde) << " m\n";
    } else if (ta->parsed()) {
      const TrafficMode mode = parse_traffic_mode(ta_mode);
      const auto gen = load_generator_file(c, ta_gen);
      require_generator(mode, gen.get());
      const std::size_t obs_dim = observation_size(c.env.traffic.scenario.m);
      DqnAgent agent = ta_transfer.empty() ? DqnAgent(c.agent, obs_dim, c.seed)
                                           : load_agent(nn::load_weights(ta_transfer), c.agent, obs_dim, c.seed);
      const long steps = ta_steps.value_or(ta_transfer.empty() ? c.training.train_steps : c.training.transfer_steps);
      const std::string tag = to_string(mode);
      auto curve = open_out(c, "reward_curve_" + tag + ".csv");
      curve << kRewardCurveHeader << "\n";
      const AgentRunResult r = train_agent(agent, c, mode, gen.get(), steps, c.seed, &curve);
      nn::save_weights((fs::path(c.out_dir) / ("agent_" + tag + ".tgw")).string(), agent.checkpoint(tag));
      std::cout << r.steps << " steps, " << r.episodes << " episodes, " << r.updates << " updates; last eval "
                << fmt("%.3f", r.last_eval.mean_reward) << "\n";
    } else if (ev->parsed()) {
      const TrafficMode mode = parse_traffic_mode(ev_mode);
      const auto gen = load_generator_file(c, ev_gen);
      require_generator(mode, gen.get());
      HighwayEnv env(c.env, gen.get());
      const auto seeds = evaluation_seeds(c.eval.first_seed, ev_episodes.value_or(c.eval.episodes));
      const std::string tag = to_string(mode);

      std::vector<std::pair<std::string, DqnAgent>> agents;
      for (const auto& entry : ev_agents) {
        const auto eq = entry.find('=');
        if (eq == std::string::npos || eq == 0) throw std::invalid_argument("--agent expects NAME=CHECKPOINT");
        const std::string path = entry.substr(eq + 1);
        try {
          agents.emplace_back(entry.substr(0, eq), load_agent(nn::load_weights(path), c.agent, env.observation_dim(), c.seed));
        } catch (const std::exception& e) {
          throw std::runtime_error(path + ": " + e.what());
        }
      }

      std::vector<std::pair<std::string, Policy>> policies{{"mobil", mobil_policy()}};
      if (ev_random) policies.emplace_back("random", random_policy(c.seed));
      for (auto& [name, agent] : agents) policies.emplace_back(name, greedy_policy(agent));

      std::vector<PolicySummary> report;
      for (const auto& [name, policy] : policies) {
        std::ofstream log;
        if (ev_log) {
          log = open_out(c, "episode_log_" + tag + "_" + name + ".csv");
          log << kEpisodeLogHeader << "\n";
        }
        report.push_back(evaluate_policy(name, env, mode, seeds, policy, ev_log ? &log : nullptr));
      }
      normalize_against_mobil(report);

      auto csv = open_out(c, "evaluation_" + tag + ".csv");
      write_evaluation_csv(csv, report);
      auto hashes = open_out(c, "scenario_hashes_" + tag + ".csv");
      hashes << "policy,episode,seed,scenario_hash\n";
      for (const auto& p : report) {
        for (std::size_t k = 0; k < p.outcomes.size(); ++k) {
          hashes << p.name << "," << k << "," << p.outcomes[k].seed << "," << p.outcomes[k].scenario_hash << "\n";
        }
      }
      std::ostringstream table;
      write_evaluation_table(table, report, mode);
      auto txt = open_out(c, "evaluation_" + tag + ".txt");
      txt << table.str();
      std::cout << table.str();
    }
  } catch (const std::exception& e) {
    std::cerr << "tgsim: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
