#include "tgsim/config.hpp"

#include <gtest/gtest.h>

using namespace tgsim;

TEST(RunConfig, DefaultsMatchTables) {
  const RunConfig c;
  EXPECT_EQ(c.env.traffic.scenario.m, 9);
  EXPECT_EQ(c.env.traffic.scenario.d_max, 5000.0);
  EXPECT_EQ(c.env.traffic.idm.T, 1.6);
  EXPECT_EQ(c.env.traffic.mobil.b_safe, 4.0);
  EXPECT_EQ(c.gan.o_l, 8);
  EXPECT_EQ(c.agent.hidden, 256u);
}

TEST(RunConfig, RoundTripIsIdentity) {
  RunConfig c;
  c.seed = 42;
  c.out_dir = "runs/a b";
  c.env.traffic.idm.T = 0.1 + 0.2;
  c.agent.lr = 3.0e-5;
  c.gan.iterations = 1234;
  c.eval.first_seed = 18446744073709551615ULL;
  const std::string text = serialize_run_config(c);
  const RunConfig back = parse_run_config(text);
  EXPECT_EQ(serialize_run_config(back), text);
  EXPECT_EQ(back.env.traffic.idm.T, 0.1 + 0.2);
  EXPECT_EQ(back.out_dir, "runs/a b");
  EXPECT_EQ(back.eval.first_seed, 18446744073709551615ULL);
}

TEST(RunConfig, InventedDefaultsAreFlagged) {
  const std::string text = serialize_run_config(RunConfig{});
  const auto at = text.find("\ngamma = ");
  ASSERT_NE(at, std::string::npos);
  EXPECT_EQ(text.rfind("# provenance = \"invented\"", at), at - std::string("# provenance = \"invented\"").size());
  const auto d0 = text.find("\nd_0 = ");
  EXPECT_EQ(text.substr(d0 - 9, 9).find("invented"), std::string::npos);
}

TEST(RunConfig, PartialTextKeepsDefaults) {
  const RunConfig c = parse_run_config("seed = 7\n[scenario]\nm = 5\n[eval]\n");
  EXPECT_EQ(c.seed, 7u);
  EXPECT_EQ(c.env.traffic.scenario.m, 5);
  EXPECT_EQ(c.env.traffic.scenario.n, 3);
}

TEST(RunConfig, RejectsUnknownKeysAndSections) {
  EXPECT_THROW(parse_run_config("[scenario]\nlanes = 3\n"), ConfigError);
  EXPECT_THROW(parse_run_config("[physics]\ndt = 0.1\n"), ConfigError);
  EXPECT_THROW(parse_run_config("verbose = 1\n"), ConfigError);
}

TEST(RunConfig, RejectsBadValues) {
  EXPECT_THROW(parse_run_config("[scenario]\nm = nine\n"), ConfigError);
  EXPECT_THROW(parse_run_config("[scenario]\nm = 9x\n"), ConfigError);
  EXPECT_THROW(parse_run_config("[scenario]\nm = 8\n"), ConfigError);
  EXPECT_THROW(parse_run_config("[agent]\ncapacity = -5\n"), ConfigError);
  EXPECT_THROW(parse_run_config("[agent]\ngamma = 1.5\n"), ConfigError);
  EXPECT_THROW(parse_run_config("[idm]\nT = 1\nT = 2\n"), ConfigError);
}
