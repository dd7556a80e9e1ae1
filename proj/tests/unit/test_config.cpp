#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "tbp/io/commands.hpp"
#include "tbp/io/config.hpp"

using namespace tbp;
using namespace tbp::io;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  auto d = fs::temp_directory_path() / ("tbp_test_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

int run_cli(const std::string& args) { return std::system((std::string(TBP_CLI_PATH) + " " + args + " 2>/dev/null").c_str()); }

}  // namespace

TEST(Config, MinimalModel2FillsDefaults) {
  auto c = parse_config_string("[model]\npreset = model2\n");
  EXPECT_EQ(c.model.k, 1);
  EXPECT_DOUBLE_EQ(c.model.delta, 1.0);
  EXPECT_DOUBLE_EQ(c.model.Delta, 100.0);
  EXPECT_EQ(c.run.command, "simulate");
  EXPECT_EQ(c.psi.d_psi, 1);
  EXPECT_EQ(c.verify.samples, 100000u);
}

TEST(Config, NegativeDeltaNamesTheKey) {
  try {
    parse_config_string("[model]\ndelta = -1\n");
    FAIL();
  } catch (const SchemaError& e) {
    ASSERT_FALSE(e.violations.empty());
    EXPECT_NE(e.violations.front().find("model.delta"), std::string::npos);
  }
}

TEST(Config, UnknownKeysAndAllViolationsReported) {
  try {
    parse_config_string("[model]\nDelta_typo = 3\nk = x\n[run]\nreplicates = 0\n[bogus]\na = 1\n");
    FAIL();
  } catch (const SchemaError& e) {
    std::string all;
    for (const auto& v : e.violations) all += v + "\n";
    EXPECT_NE(all.find("Delta_typo"), std::string::npos);
    EXPECT_NE(all.find("model.k"), std::string::npos);
    EXPECT_NE(all.find("run.replicates"), std::string::npos);
    EXPECT_NE(all.find("bogus"), std::string::npos);
    EXPECT_GE(e.violations.size(), 4u);
  }
}

TEST(Config, RoundTripAndHash) {
  auto c = parse_config_string(
      "[model]\npreset = model1\nk = 2\ngamma = 0.25\nbirth.kind = constant\nbirth.coeffs = 1.5\n"
      "[run]\nt_grid = 1, 2, 3.5\nseed = 99\nthreads = 3\n");
  auto back = parse_config_string(to_ini(c));
  EXPECT_EQ(back.model, c.model);
  EXPECT_EQ(back.run.t_grid, c.run.t_grid);
  EXPECT_EQ(config_hash(back), config_hash(c));
  auto t = c;
  t.run.threads = 11;
  EXPECT_EQ(config_hash(t), config_hash(c));
  t.run.seed = 100;
  EXPECT_NE(config_hash(t), config_hash(c));
}

TEST(Config, MissingFileIsAnError) { EXPECT_THROW(parse_config("/nonexistent/x.ini"), ConfigurationError); }

TEST(Cli, SimulateWithZeroBirthRateWritesOneAliveRow) {
  auto d = scratch("zero");
  std::ofstream(d / "c.ini") << "[model]\npreset = model2\nbirth.kind = constant\nbirth.coeffs = 0\n[run]\nhorizon = 3\n";
  ASSERT_EQ(run_cli("--config " + (d / "c.ini").string() + " --out " + (d / "out").string()), 0);
  auto cfg = parse_config((d / "c.ini").string());
  fs::path run = run_directory(cfg, (d / "out").string());
  auto alive = slurp(run / "alive.csv");
  EXPECT_EQ(std::count(alive.begin(), alive.end(), '\n'), 2);
  EXPECT_TRUE(fs::exists(run / "manifest.json"));
  EXPECT_TRUE(fs::exists(run / "events.csv"));
}

TEST(Cli, SameSeedGivesIdenticalOutputs) {
  auto d = scratch("repro");
  std::ofstream(d / "c.ini") << "[model]\npreset = model2\n[run]\ncommand = estimate\nhorizon = 3\nreplicates = 200\n"
                                "init_length = 5\n";
  const std::string cfg = "--config " + (d / "c.ini").string();
  ASSERT_EQ(run_cli(cfg + " --out " + (d / "a").string() + " --threads 1"), 0);
  ASSERT_EQ(run_cli(cfg + " --out " + (d / "b").string() + " --threads 4"), 0);
  auto c = parse_config((d / "c.ini").string());
  auto ra = fs::path(run_directory(c, (d / "a").string())), rb = fs::path(run_directory(c, (d / "b").string()));
  EXPECT_EQ(slurp(ra / "estimates.csv"), slurp(rb / "estimates.csv"));
  EXPECT_EQ(slurp(ra / "report.json"), slurp(rb / "report.json"));
  EXPECT_EQ(slurp(ra / "manifest.json"), slurp(rb / "manifest.json"));
  // seed override changes the run directory
  ASSERT_EQ(run_cli(cfg + " --out " + (d / "a").string() + " --seed 2"), 0);
  EXPECT_EQ(std::distance(fs::directory_iterator(d / "a" / "estimate"), fs::directory_iterator{}), 2);
}

TEST(Cli, ExitCodes) {
  auto d = scratch("exit");
  std::ofstream(d / "bad.ini") << "[model]\ndelta = -1\n";
  EXPECT_EQ(WEXITSTATUS(run_cli("--config " + (d / "bad.ini").string() + " --out " + d.string())), 1);
  std::ofstream(d / "hard.ini") << "[model]\npreset = model2\n[run]\ncommand = verify-assumptions\n"
                                   "[verify]\nepsilon0_target = 3.9\nsamples = 2000\npoints = 3\n";
  EXPECT_EQ(WEXITSTATUS(run_cli("--config " + (d / "hard.ini").string() + " --out " + d.string())), 2);
}

TEST(Cli, BellmanHarrisWritesMeanAndDensity) {
  auto d = scratch("bh");
  std::ofstream(d / "c.ini") << "[model]\npreset = model2\nbirth.kind = constant\nbirth.coeffs = 1\n"
                                "[run]\ncommand = bellman-harris\nhorizon = 2\ndt = 0.01\n";
  RunConfig c = parse_config((d / "c.ini").string());
  std::ostringstream log;
  ASSERT_EQ(run_command(c, (d / "out").string(), log), 0);
  fs::path run = run_directory(c, (d / "out").string());
  auto mean = slurp(run / "bh_mean.csv");
  EXPECT_EQ(mean.substr(0, mean.find('\n')), "t,mean");
  EXPECT_NE(slurp(run / "report.json").find("malthusian_alpha"), std::string::npos);
}
