#include "tgsim/harness.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <sstream>

using namespace tgsim;

namespace {

RunConfig small_run() {
  RunConfig c;
  c.env.traffic.scenario.m = 5;
  c.env.traffic.scenario.d_max = 1000.0;
  c.gan.embed_dim = 8;
  c.gan.hidden_dim = 8;
  c.gan.pool_dim = 8;
  c.gan.z_dim = 4;
  c.gan.batch_size = 4;
  c.gan.k_v = 2;
  c.gan_pipeline.synthetic_episodes = 2;
  c.gan_pipeline.synthetic_ticks = 120;
  c.gan_pipeline.log_every = 5;
  c.gan_pipeline.checkpoint_every = 10;
  c.agent.hidden = 16;
  c.agent.batch_size = 8;
  c.agent.warmup = 16;
  c.agent.capacity = 1000;
  c.training.eval_every = 50;
  c.training.eval_episodes = 2;
  return c;
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST(Simulate, RowsAreStepsTimesVehicles) {
  const TrafficConfig cfg;
  std::ostringstream out;
  simulate(cfg, TrafficMode::idm, 3, 100, nullptr, out);
  EXPECT_EQ(count_lines(out.str()), 1u + 900u);
}

TEST(Simulate, ZeroStepsIsHeaderOnly) {
  std::ostringstream out;
  simulate(TrafficConfig{}, TrafficMode::idm, 3, 0, nullptr, out);
  EXPECT_EQ(out.str(), std::string(kScenarioDumpHeader) + "\n");
}

TEST(Simulate, RepeatedSeedIsIdentical) {
  std::ostringstream a, b, c;
  simulate(TrafficConfig{}, TrafficMode::idm, 5, 200, nullptr, a);
  simulate(TrafficConfig{}, TrafficMode::idm, 5, 200, nullptr, b);
  simulate(TrafficConfig{}, TrafficMode::idm, 6, 200, nullptr, c);
  EXPECT_EQ(a.str(), b.str());
  EXPECT_NE(a.str(), c.str());
}

TEST(Simulate, GanModeNeedsGenerator) {
  std::ostringstream out;
  EXPECT_THROW(simulate(TrafficConfig{}, TrafficMode::gan, 1, 10, nullptr, out), std::invalid_argument);
}

TEST(Dataset, SplitIsDisjointAndDeterministic) {
  const RunConfig cfg = small_run();
  const auto windows = dataset_windows(cfg, synthetic_dataset(cfg, 4), 4);
  ASSERT_GE(windows.size(), 5u);
  const auto [train, test] = split_windows(windows, 0.2, 9);
  EXPECT_EQ(train.size() + test.size(), windows.size());
  EXPECT_GE(test.size(), 1u);
  const auto again = split_windows(windows, 0.2, 9);
  ASSERT_EQ(again.second.size(), test.size());
  for (std::size_t k = 0; k < test.size(); ++k) EXPECT_EQ(again.second[k].vehicle_ids, test[k].vehicle_ids);
  EXPECT_THROW(split_windows({windows[0]}, 0.2, 1), std::invalid_argument);
}

TEST(Dataset, SummaryCountsVehicles) {
  const RunConfig cfg = small_run();
  const auto s = summarize_dataset(cfg, synthetic_dataset(cfg, 4), 4);
  EXPECT_EQ(s.vehicles, 10u);
  EXPECT_EQ(s.lane_changes.q, 10);
  EXPECT_GT(s.windows, 0u);
}

TEST(GanRun, LogsOneRowPerLoggedIteration) {
  const RunConfig cfg = small_run();
  const auto [train, test] = split_windows(dataset_windows(cfg, synthetic_dataset(cfg, 2), 2), 0.2, 2);
  GanTrainer trainer(cfg.gan, 2);
  std::ostringstream metrics;
  int checkpoints = 0;
  const auto r = train_gan(trainer, train, test, 23, cfg.gan_pipeline, &metrics, [&](const GanTrainer&) { ++checkpoints; });
  EXPECT_EQ(r.iterations, 23);
  EXPECT_EQ(count_lines(metrics.str()), 5u);  // 5, 10, 15, 20, 23
  EXPECT_EQ(checkpoints, 3);                  // 10, 20, 23
}

TEST(GanRun, ResumeReproducesLosses) {
  const RunConfig cfg = small_run();
  const auto [train, test] = split_windows(dataset_windows(cfg, synthetic_dataset(cfg, 2), 2), 0.2, 2);
  GanTrainer full(cfg.gan, 2);
  std::ostringstream full_log;
  train_gan(full, train, test, 20, cfg.gan_pipeline, &full_log);

  GanTrainer first(cfg.gan, 2);
  std::ostringstream head;
  nn::WeightFile saved;
  train_gan(first, train, test, 10, cfg.gan_pipeline, &head, [&](const GanTrainer& t) { saved = t.checkpoint(); });
  GanTrainer resumed(cfg.gan, 99);
  resumed.restore(nn::deserialize_weights(nn::serialize_weights(saved)));
  std::ostringstream tail;
  train_gan(resumed, train, test, 20, cfg.gan_pipeline, &tail);
  EXPECT_EQ(head.str() + tail.str(), full_log.str());
}

TEST(Evaluate, MobilAgainstItselfIsHundredPercent) {
  const RunConfig cfg = small_run();
  HighwayEnv env(cfg.env);
  const auto seeds = evaluation_seeds(10, 3);
  std::vector<PolicySummary> report;
  report.push_back(evaluate_policy("mobil", env, TrafficMode::idm, seeds, mobil_policy()));
  report.push_back(evaluate_policy("mobil_again", env, TrafficMode::idm, seeds, mobil_policy()));
  normalize_against_mobil(report);
  EXPECT_EQ(report[0].episodes, 3);
  EXPECT_DOUBLE_EQ(report[0].normalized_vs_mobil, 100.0);
  EXPECT_DOUBLE_EQ(report[1].normalized_vs_mobil, 100.0);
  for (int k = 0; k < 3; ++k) EXPECT_EQ(report[0].outcomes[k].scenario_hash, report[1].outcomes[k].scenario_hash);
  std::ostringstream csv, table;
  write_evaluation_csv(csv, report);
  write_evaluation_table(table, report, TrafficMode::idm);
  EXPECT_EQ(count_lines(csv.str()), 3u);
  EXPECT_NE(table.str().find("mobil_again"), std::string::npos);
}

TEST(Evaluate, PoliciesSeeIdenticalScenarios) {
  const RunConfig cfg = small_run();
  HighwayEnv env(cfg.env);
  const auto seeds = evaluation_seeds(40, 4);
  const auto a = evaluate_policy("mobil", env, TrafficMode::idm, seeds, mobil_policy());
  const auto b = evaluate_policy("random", env, TrafficMode::idm, seeds, random_policy(1));
  for (int k = 0; k < 4; ++k) EXPECT_EQ(a.outcomes[k].scenario_hash, b.outcomes[k].scenario_hash);
  EXPECT_NE(a.outcomes[0].scenario_hash, a.outcomes[1].scenario_hash);
  EXPECT_THROW(evaluate_policy("none", env, TrafficMode::idm, {}, mobil_policy()), std::invalid_argument);
}

TEST(AgentRun, CurveIsDeterministicAndTransferKeepsPolicy) {
  const RunConfig cfg = small_run();
  HighwayEnv env(cfg.env);
  auto run = [&](std::string& curve) {
    DqnAgent agent(cfg.agent, env.observation_dim(), 7);
    std::ostringstream out;
    const auto r = train_agent(agent, cfg, TrafficMode::idm, nullptr, 200, 7, &out);
    curve = out.str();
    EXPECT_GT(r.updates, 0);
    return agent.checkpoint("traffic_idm");
  };
  std::string c1, c2;
  const nn::WeightFile w1 = run(c1);
  run(c2);
  EXPECT_EQ(c1, c2);
  EXPECT_EQ(count_lines(c1), 4u);

  DqnAgent original(cfg.agent, env.observation_dim(), 1);
  original.transfer_init(w1);
  DqnAgent loaded = load_agent(w1, cfg.agent, env.observation_dim(), 123);
  const auto seeds = evaluation_seeds(3, 2);
  const auto a = evaluate_policy("a", env, TrafficMode::idm, seeds, greedy_policy(original));
  const auto b = evaluate_policy("b", env, TrafficMode::idm, seeds, greedy_policy(loaded));
  EXPECT_EQ(a.mean_reward, b.mean_reward);
  EXPECT_THROW(load_agent(w1, cfg.agent, env.observation_dim() + 3, 1), nn::WeightFormatError);
}
