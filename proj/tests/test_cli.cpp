#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "reduction/cli.hpp"

using namespace reduction;
using cli::json;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("reduction_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_args(std::vector<std::string> args, std::string* out_text = nullptr,
             std::string* err_text = nullptr) {
  args.insert(args.begin(), "reduction");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  if (out_text) *out_text = out.str();
  if (err_text) *err_text = err.str();
  return code;
}

std::string config_error(cli::Mode mode, const json& doc) {
  try {
    cli::parse_config(mode, doc);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

const std::string kConfigs = std::string(REDUCTION_SOURCE_DIR) + "/configs/";

}  // namespace

TEST(Config, UnknownKeyIsRejectedByName) {
  const auto msg = config_error(cli::Mode::kSimulate, {{"start", {0.5, 0.5}}, {"trajectoris", 10}});
  EXPECT_NE(msg.find("'trajectoris'"), std::string::npos) << msg;
}

TEST(Config, StartSumReportsTheValue) {
  const auto msg = config_error(cli::Mode::kSimulate, {{"start", {0.5, 0.3, 0.3}}});
  EXPECT_NE(msg.find("'start'"), std::string::npos) << msg;
  EXPECT_NE(msg.find("1.1"), std::string::npos) << msg;
}

TEST(Config, TypeAndConsistencyErrors) {
  EXPECT_NE(config_error(cli::Mode::kSimulate, {{"start", {0.5, 0.5}}, {"trajectories", -3}})
                .find("'trajectories'"),
            std::string::npos);
  EXPECT_NE(config_error(cli::Mode::kSimulate, {{"start", {0.5, 0.5}}, {"n", 3}}).find("'n'"),
            std::string::npos);
  EXPECT_NE(config_error(cli::Mode::kSimulate, {}).find("'start'"), std::string::npos);
  EXPECT_NE(config_error(cli::Mode::kSimulate, {{"start", {0.5, 0.5}}, {"regime", "weird"}})
                .find("'regime'"),
            std::string::npos);
  EXPECT_NE(config_error(cli::Mode::kOracle, {{"mode", "simulate"}}).find("'mode'"),
            std::string::npos);
  EXPECT_NE(config_error(cli::Mode::kOracle, {{"alpha", {1.5}}}).find("'alpha'"),
            std::string::npos);
  EXPECT_NE(config_error(cli::Mode::kScaling, {{"n_values", {3, 2}}}).find("'n_values'"),
            std::string::npos);
  EXPECT_NE(config_error(cli::Mode::kTheoremSuite,
                         {{"n_values", {3}}, {"starts", {{0.5, 0.5}}}})
                .find("'n_values'"),
            std::string::npos);
  cli::Overrides over;
  over.seed = 3;
  EXPECT_THROW(cli::parse_config(cli::Mode::kOracle, json::object(), over), ConfigError);
}

TEST(Config, DefaultsAreEchoed) {
  const auto cfg = cli::parse_config(cli::Mode::kSimulate, {{"start", {0.5, 0.3, 0.2}}});
  const auto& p = cfg.params;
  EXPECT_EQ(p["seed"], 1);
  EXPECT_EQ(p["trajectories"], 100000);
  EXPECT_EQ(p["n"], 3);
  EXPECT_EQ(p["regime"], "isotropic");
  EXPECT_EQ(p["expected"], "theorem");
  EXPECT_DOUBLE_EQ(p["dt"].get<double>(), 2e-4);
  EXPECT_EQ(cfg.format, "both");

  const auto inh = cli::parse_config(cli::Mode::kSimulate,
                                     {{"start", {0.5, 0.5}}, {"regime", "inhomogeneous"}});
  EXPECT_EQ(inh.params["expected"], "oracle");
  EXPECT_DOUBLE_EQ(inh.params["dt"].get<double>(), 1e-4);

  const auto suite = cli::parse_config(cli::Mode::kTheoremSuite, json::object());
  EXPECT_EQ(suite.params["starts"],
            json::parse("[[0.3,0.7],[0.5,0.3,0.2],[0.4,0.3,0.2,0.1]]"));
  // The echo is itself a valid config that reproduces the same parameters.
  EXPECT_EQ(cli::parse_config(cli::Mode::kSimulate, cfg.params).params, cfg.params);
}

TEST(Config, FlagsOverrideTheFile) {
  cli::Overrides over;
  over.seed = 99;
  over.trajectories = 50;
  over.dt = 1e-3;
  const auto cfg = cli::parse_config(cli::Mode::kSimulate,
                                     {{"start", {0.5, 0.5}}, {"seed", 4}, {"trajectories", 7}},
                                     over);
  EXPECT_EQ(cfg.params["seed"], 99);
  EXPECT_EQ(cfg.params["trajectories"], 50);
  EXPECT_EQ(cfg.params["dt"], 1e-3);
}

TEST(Simulate, RerunIsByteIdenticalAndWorkerIndependent) {
  const auto a = scratch("sim_a"), b = scratch("sim_b");
  const auto cfg = scratch("sim_cfg") / "c.json";
  std::ofstream(cfg) << R"({"start": [0.5, 0.3, 0.2], "trajectories": 2000, "dt": 1e-3})";
  ASSERT_EQ(run_args({"simulate", "--config", cfg.string(), "--out", a.string()}), 0);
  ASSERT_EQ(run_args({"simulate", "--config", cfg.string(), "--out", b.string(), "--workers", "4"}),
            0);
  EXPECT_EQ(slurp(a / "results.csv"), slurp(b / "results.csv"));
  const auto csv = slurp(a / "results.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "vertex,count,frequency,wilson_lo,wilson_hi,expected");

  // report.json differs only in the echoed worker count.
  auto ra = json::parse(slurp(a / "report.json"));
  auto rb = json::parse(slurp(b / "report.json"));
  EXPECT_EQ(ra["results"], rb["results"]);
  EXPECT_EQ(ra["tool"], "reduction");
  EXPECT_EQ(ra["status"], "pass");
  EXPECT_EQ(ra["config"]["trajectories"], 2000);
}

TEST(Simulate, AnisotropicTheoremCheckIsReportedNotEnforced) {
  const auto out = scratch("sim_aniso");
  const int code = run_args({"simulate", "--out", out.string(), "--format", "report",
                             "--trajectories", "500", "--dt", "1e-3"},
                            nullptr, nullptr);
  EXPECT_EQ(code, 1);  // start is required
  const auto cfg = scratch("sim_aniso_cfg") / "c.json";
  std::ofstream(cfg) << R"({"start": [0.4, 0.3, 0.3], "regime": "anisotropic"})";
  EXPECT_EQ(run_args({"simulate", "--config", cfg.string(), "--out", out.string(), "--format",
                      "report", "--trajectories", "500", "--dt", "1e-3"}),
            0);
  EXPECT_FALSE(fs::exists(out / "results.csv"));
  const auto r = json::parse(slurp(out / "report.json"));
  EXPECT_EQ(r["results"]["expected"]["pass_expected"], false);
}

TEST(Oracle, InhomogeneousValueAndAgreement) {
  const auto out = scratch("oracle");
  const auto cfg = scratch("oracle_cfg") / "c.json";
  std::ofstream(cfg) << R"({"profile": {"kind": "linear"}, "alpha": [0, 0.5, 1]})";
  std::string text;
  ASSERT_EQ(run_args({"oracle", "--config", cfg.string(), "--out", out.string()}, &text), 0)
      << text;
  const auto r = json::parse(slurp(out / "report.json"));
  const auto& mid = r["results"]["rows"][1];
  const double expected = std::log(1.5) / std::log(2.0);
  EXPECT_NEAR(mid["ode"].get<double>(), expected, 1e-6);
  EXPECT_NEAR(mid["flux"].get<double>(), expected, 1e-4);
  EXPECT_NEAR(mid["green"].get<double>(), expected, 1e-4);
  EXPECT_EQ(r["results"]["rows"][0]["ode"], 0.0);
  EXPECT_EQ(r["results"]["rows"][2]["ode"], 1.0);
  EXPECT_EQ(r["results"]["cross_oracle_agreement"], true);
}

TEST(Oracle, DriftUsesTheOdeOnly) {
  const auto out = scratch("oracle_drift");
  const auto cfg = scratch("oracle_drift_cfg") / "c.json";
  std::ofstream(cfg) << R"({"profile": {"kind": "constant"}, "nu": 1.0, "alpha": [0.5]})";
  ASSERT_EQ(run_args({"oracle", "--config", cfg.string(), "--out", out.string()}), 0);
  const auto r = json::parse(slurp(out / "report.json"));
  EXPECT_NEAR(r["results"]["rows"][0]["ode"].get<double>(), fp::biased_closed_form(1, 1, 0.5),
              1e-6);
  EXPECT_FALSE(r["results"]["rows"][0].contains("flux"));
}

TEST(TheoremSuite, ExpandsToAMatrix) {
  const auto out = scratch("suite");
  std::string text;
  const int code = run_args({"theorem-suite", "--out", out.string(), "--trajectories", "300",
                             "--dt", "2e-3", "--workers", "2"},
                            &text);
  EXPECT_TRUE(code == 0 || code == 2);
  const auto r = json::parse(slurp(out / "report.json"));
  EXPECT_EQ(r["results"]["rows"].size(), 12u);  // 3 starts x 4 regimes
  EXPECT_EQ(r["results"]["matrix"].size(), 4u);
  EXPECT_EQ(r["results"]["matrix"]["anisotropic"][0], "n/a");
  EXPECT_NE(text.find("isotropic"), std::string::npos);
  EXPECT_EQ(code == 0, r["results"]["all_as_expected"].get<bool>());
  const auto csv = slurp(out / "results.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 13);
}

TEST(Scaling, WritesOneRowPerDimension) {
  const auto out = scratch("scaling");
  std::string text;
  const auto cfg = scratch("scaling_cfg") / "c.json";
  std::ofstream(cfg) << R"({"n_values": [2, 3, 5], "trajectories": 5000, "dt": 1e-3})";
  ASSERT_EQ(run_args({"scaling", "--config", cfg.string(), "--out", out.string()}, &text), 0)
      << text;
  const auto r = json::parse(slurp(out / "report.json"));
  EXPECT_EQ(r["results"]["rows"].size(), 3u);
  EXPECT_EQ(r["results"]["rows"][2]["n"], 5);
  EXPECT_EQ(r["results"]["strictly_increasing"], true);
}

TEST(QuantumDemo, BornFrequenciesAndCollapse) {
  const auto out = scratch("quantum");
  std::string text;
  ASSERT_EQ(run_args({"quantum-demo", "--config", kConfigs + "quantum_demo.json", "--out",
                      out.string(), "--trajectories", "400", "--dt", "1e-3"},
                     &text),
            0)
      << text;
  const auto r = json::parse(slurp(out / "report.json"));
  EXPECT_EQ(r["results"]["counts"].size(), 3u);
  EXPECT_LE(r["results"]["max_deviation_from_direct_collapse"].get<double>(), 1e-8);
  const auto born = r["results"]["born_probabilities"].get<std::vector<double>>();
  EXPECT_NEAR(born[0], 0.5, 1e-12);
  EXPECT_NEAR(born[1], 0.3, 1e-12);
  const Fixture finals = load_fixture((out / "final_states.fixture").string());
  EXPECT_EQ(finals.matrices.size(), 400u);
}

TEST(QuantumDemo, MissingFixtureIsAnError) {
  const auto cfg = scratch("quantum_missing") / "c.json";
  std::ofstream(cfg) << R"({"fixture": "nope.fixture"})";
  std::string err;
  EXPECT_EQ(run_args({"quantum-demo", "--config", cfg.string(), "--out",
                      cfg.parent_path().string()},
                     nullptr, &err),
            1);
  EXPECT_NE(err.find("nope.fixture"), std::string::npos);
}

TEST(Binary, ExitCodes) {
  const std::string bin = REDUCTION_CLI_PATH;
  const auto out = scratch("binary");
  auto status = [](const std::string& cmd) {
    const int raw = std::system((cmd + " > /dev/null 2>&1").c_str());
    return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  };
  EXPECT_EQ(status(bin + " --version"), 0);
  EXPECT_EQ(status(bin + " frobnicate"), 1);
  EXPECT_EQ(status(bin + " oracle --config /does/not/exist.json"), 1);
  EXPECT_EQ(status(bin + " oracle --config " + kConfigs + "oracle.json --out " + out.string()), 0);

  // Oracles that cannot agree within an impossible tolerance exit 2.
  const auto cfg = out / "tight.json";
  std::ofstream(cfg) << R"({"profile": {"kind": "linear"}, "alpha": [0.5], "tolerance": 1e-14})";
  EXPECT_EQ(status(bin + " oracle --config " + cfg.string() + " --out " + out.string()), 2);
}
