#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "delaycast/cli.hpp"

namespace dc = delaycast;
namespace cli = delaycast::cli;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string log, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "delaycast");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream log, err;
  const int code = cli::run_cli(static_cast<int>(argv.size()), argv.data(), log, err);
  return {code, log.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("delaycast_cli_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    config_ = (dir_ / "run.json").string();
    std::ofstream(config_) << R"({
  // small scenario and a short constant-delay fit
  "scenario": {"n_times": 30, "delay_horizon": 2, "maturity": 4, "present_day": 28,
               "iota": 3.4, "season_period": 12, "seed": 4},
  "model": {"delay_horizon": 2, "time_varying_delay": false, "alpha_basis": 5,
            "season_period": 12, "max_forecast_horizon": 4},
  "sampler": {"chains": 2, "iterations": 400, "burn_in": 200, "seed": 8, "threads": 1},
  "data": {"format": "auto"}
})";
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  void simulate_and_fit() {
    ASSERT_EQ(run({"simulate", "--config", config_, "--out", path("sim")}).code, cli::kExitOk);
    ASSERT_EQ(run({"fit", "--config", config_, "--data", path("sim/data_long.csv"), "--out", path("fit")}).code,
              cli::kExitOk);
  }

  fs::path dir_;
  std::string config_;
};

}  // namespace

TEST_F(CliTest, SimulateWritesDataAndTruth) {
  const auto r = run({"simulate", "--config", config_, "--out", path("sim")});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  for (const char* f : {"data_long.csv", "triangle.csv", "truth.json", "resolved_config.json"})
    EXPECT_TRUE(fs::exists(dir_ / "sim" / f)) << f;
  const auto truth = dc::read_json_file(path("sim/truth.json"));
  EXPECT_EQ(truth["y"].size(), 30u);
}

TEST_F(CliTest, FullPipeline) {
  simulate_and_fit();
  EXPECT_TRUE(fs::exists(dir_ / "fit" / "meta.json"));
  EXPECT_TRUE(fs::exists(dir_ / "fit" / "data.csv"));

  auto r = run({"nowcast", "--fit", path("fit"), "--levels", "0.5,0.9", "--out", path("now")});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  EXPECT_NE(slurp(dir_ / "now" / "nowcast.csv").find("time"), std::string::npos);

  r = run({"forecast", "--fit", path("fit"), "--horizon", "3", "--out", path("fc")});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  std::istringstream fc(slurp(dir_ / "fc" / "forecast.csv"));
  int lines = 0;
  for (std::string line; std::getline(fc, line);) ++lines;
  EXPECT_EQ(lines, 4);

  r = run({"check", "--fit", path("fit"), "--replicate-draws", "100", "--out", path("chk")});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  const auto check = dc::read_json_file(path("chk/check.json"));
  EXPECT_LE(check["replicates"].get<int>(), 100);
  EXPECT_GE(check["replicates"].get<int>(), 50);
  EXPECT_LT(check["covariance"]["max_identity_gap"].get<double>(), 1e-9);
  EXPECT_TRUE(check.contains("coverage_multinomial"));

  r = run({"diagnose", "--fit", path("fit"), "--out", path("diag")});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  const auto diag = dc::read_json_file(path("diag/diagnostics.json"));
  EXPECT_EQ(diag["chains"], 2);
  EXPECT_TRUE(fs::exists(dir_ / "diag" / "ess.csv"));

  r = run({"select-delay", "--data", path("sim/data_long.csv"), "--threshold", "0.8", "--out", path("sel")});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  const auto sel = dc::read_json_file(path("sel/selection.json"));
  EXPECT_GE(sel["delay_horizon"].get<int>(), 1);
  EXPECT_LE(sel["delay_horizon"].get<int>(), 4);
}

TEST_F(CliTest, SameSeedGivesIdenticalFiles) {
  simulate_and_fit();
  ASSERT_EQ(run({"fit", "--config", config_, "--data", path("sim/data_long.csv"), "--out", path("fit2")}).code,
            cli::kExitOk);
  for (const auto& e : fs::directory_iterator(dir_ / "fit")) {
    if (e.path().filename() == "resolved_config.json") continue;
    EXPECT_EQ(slurp(e.path()), slurp(dir_ / "fit2" / e.path().filename())) << e.path().filename();
  }
  ASSERT_EQ(run({"nowcast", "--fit", path("fit"), "--out", path("n1")}).code, cli::kExitOk);
  ASSERT_EQ(run({"nowcast", "--fit", path("fit2"), "--out", path("n2")}).code, cli::kExitOk);
  EXPECT_EQ(slurp(dir_ / "n1" / "nowcast.csv"), slurp(dir_ / "n2" / "nowcast.csv"));
}

TEST_F(CliTest, ResolvedConfigReproducesRun) {
  simulate_and_fit();
  const auto resolved = path("fit/resolved_config.json");
  auto j = dc::read_json_file(resolved);
  EXPECT_EQ(j["sampler"]["seed"], 8);
  EXPECT_EQ(j["data"]["path"], path("sim/data_long.csv"));
  ASSERT_EQ(run({"fit", "--config", resolved, "--out", path("again")}).code, cli::kExitOk);
  EXPECT_EQ(slurp(dir_ / "fit" / "data.csv"), slurp(dir_ / "again" / "data.csv"));
  EXPECT_EQ(slurp(dir_ / "fit" / "meta.json"), slurp(dir_ / "again" / "meta.json"));
}

TEST_F(CliTest, FlagsOverrideConfig) {
  simulate_and_fit();
  ASSERT_EQ(run({"fit", "--config", config_, "--data", path("sim/data_long.csv"), "--iterations", "100", "--seed", "9",
                 "--out", path("short")})
                .code,
            cli::kExitOk);
  const auto j = dc::read_json_file(path("short/resolved_config.json"));
  EXPECT_EQ(j["sampler"]["iterations"], 100);
  EXPECT_EQ(j["sampler"]["burn_in"], 50);
  EXPECT_EQ(j["sampler"]["seed"], 9);
}

TEST_F(CliTest, InvalidInputsExitTwo) {
  simulate_and_fit();
  const auto data = path("sim/data_long.csv");
  EXPECT_EQ(run({"fit", "--config", config_, "--data", data, "--iterations", "0"}).code, cli::kExitInvalid);
  EXPECT_EQ(run({"fit", "--config", config_}).code, cli::kExitInvalid);
  EXPECT_EQ(run({"fit", "--config", config_, "--data", data, "--variant", "XYZ"}).code, cli::kExitInvalid);
  EXPECT_EQ(run({"nowcast"}).code, cli::kExitInvalid);
  EXPECT_EQ(run({"nowcast", "--fit", path("fit"), "--levels", "1.5", "--out", path("x")}).code, cli::kExitInvalid);
  EXPECT_EQ(run({"forecast", "--fit", path("fit"), "--horizon", "5", "--out", path("x")}).code, cli::kExitInvalid);
  EXPECT_EQ(run({"bogus"}).code, cli::kExitInvalid);
  EXPECT_EQ(run({}).code, cli::kExitInvalid);
  EXPECT_EQ(run({"fit", "--data", path("missing.csv"), "--out", path("x")}).code, cli::kExitInvalid);

  std::ofstream(path("bad.json")) << R"({"sampler": {"iteratons": 10}})";
  const auto r = run({"fit", "--config", path("bad.json"), "--data", data});
  EXPECT_EQ(r.code, cli::kExitInvalid);
  EXPECT_NE(r.err.find("iteratons"), std::string::npos);
}

TEST_F(CliTest, StrictGateExitsThree) {
  simulate_and_fit();
  // A handful of draws cannot pass the gate.
  const auto r = run({"fit", "--config", config_, "--data", path("sim/data_long.csv"), "--iterations", "20",
                      "--burn-in", "0", "--thin", "1", "--strict", "--out", path("tiny")});
  EXPECT_EQ(r.code, cli::kExitGate) << r.log << r.err;
  EXPECT_EQ(run({"diagnose", "--fit", path("tiny"), "--strict", "--out", path("d")}).code, cli::kExitGate);
  EXPECT_EQ(run({"diagnose", "--fit", path("tiny"), "--out", path("d")}).code, cli::kExitOk);
}

TEST_F(CliTest, OutputRootFromEnvironment) {
  ::setenv(cli::kOutputRootEnv, dir_.c_str(), 1);
  const auto r = run({"simulate", "--config", config_, "--out", "relative/sim"});
  ::unsetenv(cli::kOutputRootEnv);
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  EXPECT_TRUE(fs::exists(dir_ / "relative" / "sim" / "truth.json"));
}

TEST_F(CliTest, HelpExitsZero) { EXPECT_EQ(run({"--help"}).code, cli::kExitOk); }
