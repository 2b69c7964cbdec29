#include "irtvi/cli.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

namespace {

using namespace irtvi;

struct Outcome {
  int code;
  std::string log;
  std::string err;
};

Outcome invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "irtvi");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream log, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), log, err);
  return {code, log.str(), err.str()};
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::string> data_lines(const std::string& path) {
  std::vector<std::string> out;
  std::istringstream in(slurp(path));
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line[0] != '#') out.push_back(line);
  }
  return out;
}

// Small synthetic problem shared by the fit and evaluate tests.
std::vector<std::string> small(std::vector<std::string> extra) {
  std::vector<std::string> base{"--n", "150", "--m", "12", "--seed", "3"};
  base.insert(base.end(), extra.begin(), extra.end());
  return base;
}

std::vector<std::string> with(std::vector<std::string> head, const std::vector<std::string>& tail) {
  head.insert(head.end(), tail.begin(), tail.end());
  return head;
}

TEST(Cli, SimulateWritesShapesAndIsRepeatable) {
  const std::string dir = irtvi::testing::scratch_dir("cli-simulate");
  const Outcome a = invoke({"simulate", "--n", "40", "--m", "7", "--seed", "5", "--out", dir + "/a"});
  ASSERT_EQ(a.code, 0) << a.err;
  const auto rows = data_lines(dir + "/a/responses.csv");
  ASSERT_EQ(rows.size(), 40u);
  EXPECT_EQ(std::count(rows[0].begin(), rows[0].end(), ','), 6);
  const Outcome b = invoke({"simulate", "--n", "40", "--m", "7", "--seed", "5", "--out", dir + "/b"});
  ASSERT_EQ(b.code, 0);
  EXPECT_EQ(slurp(dir + "/a/responses.csv"), slurp(dir + "/b/responses.csv"));
  EXPECT_EQ(slurp(dir + "/a/truth.csv"), slurp(dir + "/b/truth.csv"));
}

TEST(Cli, InvalidRequestsExitWithTwo) {
  const std::string dir = irtvi::testing::scratch_dir("cli-invalid");
  Outcome o = invoke({"simulate", "--family", "3pl", "--out", dir});
  EXPECT_EQ(o.code, 2);
  EXPECT_NE(o.err.find("not recommended"), std::string::npos) << o.err;
  o = invoke(with({"fit", "--algorithm", "em", "--k", "2", "--model", "mirt", "--out", dir},
                  small({})));
  EXPECT_EQ(o.code, 2) << o.err;
  o = invoke({"fit", "--algorithm", "nuts", "--out", dir});
  EXPECT_EQ(o.code, 2);
  o = invoke({"fit", "--holdout", "1.5", "--out", dir});
  EXPECT_EQ(o.code, 2);
  o = invoke({"fit", "--no-such-flag"});
  EXPECT_EQ(o.code, 2);
  o = invoke({"evaluate", "--metrics", "impute", "--out", dir});  // no --fit
  EXPECT_EQ(o.code, 2);
}

TEST(Cli, MissingFileExitsWithFour) {
  const std::string dir = irtvi::testing::scratch_dir("cli-missing");
  const Outcome o = invoke({"fit", "--data", dir + "/absent.csv", "--out", dir});
  EXPECT_EQ(o.code, 4) << o.err;
  EXPECT_NE(o.err.find("absent.csv"), std::string::npos);
}

TEST(Cli, HmcWritesRequestedDraws) {
  const std::string dir = irtvi::testing::scratch_dir("cli-hmc");
  const Outcome o = invoke(with({"fit", "--algorithm", "hmc", "--hmc-samples", "200",
                                 "--hmc-warmup", "50", "--out", dir},
                                small({})));
  ASSERT_EQ(o.code, 0) << o.err;
  const auto draws = read_jsonl(dir + "/samples.jsonl");
  ASSERT_EQ(draws.size(), 200u);
  EXPECT_EQ(matrix_from_json(draws[0].at("abilities")).rows(), 150);
  EXPECT_TRUE(read_json(dir + "/fit.json").contains("acceptance_rate"));
}

TEST(Cli, ViboTraceCarriesSmoothedObjective) {
  const std::string dir = irtvi::testing::scratch_dir("cli-vibo");
  const Outcome o =
      invoke(with({"fit", "--iterations", "50", "--out", dir}, small({})));
  ASSERT_EQ(o.code, 0) << o.err;
  const auto trace = read_jsonl(dir + "/trace.jsonl");
  ASSERT_EQ(trace.size(), 50u);
  EXPECT_TRUE(trace.back().contains("smoothed"));
  const Json fit = read_json(dir + "/fit.json");
  EXPECT_EQ(fit.at("fingerprint"), trace.back().at("fingerprint"));
}

TEST(Cli, EvaluateReportsMetrics) {
  const std::string dir = irtvi::testing::scratch_dir("cli-evaluate");
  const auto common = small({"--iterations", "100"});
  ASSERT_EQ(invoke(with({"fit", "--out", dir + "/fit"}, common)).code, 0);
  const Outcome o = invoke(with({"evaluate", "--fit", dir + "/fit", "--metrics",
                                 "impute,correlation,log-marginal,ppc", "--is-samples", "20",
                                 "--draws", "5", "--out", dir + "/eval"},
                                common));
  ASSERT_EQ(o.code, 0) << o.err;
  std::map<std::string, Json> by_metric;
  for (const auto& r : read_jsonl(dir + "/eval/report.jsonl")) {
    by_metric[r.at("metric").get<std::string>()] = r;
  }
  // 150 x 12 fully observed cells, 10% held out
  EXPECT_EQ(by_metric.at("imputation_accuracy").at("heldout").get<int>(), 180);
  const double corr = by_metric.at("ability_correlation").at("value").get<double>();
  EXPECT_GE(corr, 0.0);
  EXPECT_LE(corr, 1.0);
  EXPECT_LT(by_metric.at("log_marginal").at("value").get<double>(), 0.0);
  EXPECT_EQ(by_metric.at("ppc_person_correlation").at("value").get<double>(), 1.0);
}

TEST(Cli, EvaluateRejectsMismatchedData) {
  const std::string dir = irtvi::testing::scratch_dir("cli-mismatch");
  ASSERT_EQ(invoke(with({"fit", "--algorithm", "em", "--out", dir + "/fit"}, small({}))).code, 0);
  const Outcome o = invoke({"evaluate", "--fit", dir + "/fit", "--n", "150", "--m", "12",
                            "--seed", "4", "--metrics", "impute", "--out", dir + "/eval"});
  EXPECT_EQ(o.code, 2);
  EXPECT_NE(o.err.find("different data"), std::string::npos) << o.err;
}

TEST(Cli, CorrelationNeedsTruth) {
  const std::string dir = irtvi::testing::scratch_dir("cli-truth");
  ASSERT_EQ(invoke({"simulate", "--n", "60", "--m", "8", "--out", dir + "/sim"}).code, 0);
  const std::vector<std::string> data{"--data", dir + "/sim/responses.csv"};
  ASSERT_EQ(invoke(with({"fit", "--algorithm", "em", "--out", dir + "/fit"}, data)).code, 0);
  Outcome o = invoke(with({"evaluate", "--fit", dir + "/fit", "--metrics", "correlation",
                           "--out", dir + "/eval"},
                          data));
  EXPECT_EQ(o.code, 2);
  EXPECT_NE(o.err.find("ground-truth"), std::string::npos) << o.err;
  o = invoke(with({"evaluate", "--fit", dir + "/fit", "--metrics", "correlation", "--truth",
                   dir + "/sim/truth.csv", "--out", dir + "/eval"},
                  data));
  EXPECT_EQ(o.code, 0) << o.err;
}

TEST(Cli, ConfigFileIsOverriddenByFlags) {
  const std::string dir = irtvi::testing::scratch_dir("cli-config");
  {
    std::ofstream cfg(dir + "/run.json");
    cfg << R"({"n": 25, "m": 4, "seed": 2})";
  }
  ASSERT_EQ(invoke({"simulate", "--config", dir + "/run.json", "--m", "6", "--out", dir + "/o"})
                .code,
            0);
  const auto rows = data_lines(dir + "/o/responses.csv");
  ASSERT_EQ(rows.size(), 25u);
  EXPECT_EQ(std::count(rows[0].begin(), rows[0].end(), ','), 5);
  {
    std::ofstream cfg(dir + "/bad.json");
    cfg << R"({"people": 25})";
  }
  EXPECT_EQ(invoke({"simulate", "--config", dir + "/bad.json", "--out", dir + "/o"}).code, 2);
}

TEST(Cli, OutputDirectoryFromEnvironment) {
  const std::string dir = irtvi::testing::scratch_dir("cli-env");
  ::setenv("IRTVI_OUTPUT_DIR", (dir + "/from-env").c_str(), 1);
  const Outcome o = invoke({"simulate", "--n", "5", "--m", "3"});
  ::unsetenv("IRTVI_OUTPUT_DIR");
  ASSERT_EQ(o.code, 0) << o.err;
  EXPECT_EQ(data_lines(dir + "/from-env/responses.csv").size(), 5u);
}

TEST(Cli, WorkerCountDoesNotChangeOutput) {
  const std::string dir = irtvi::testing::scratch_dir("cli-workers");
  const auto args = small({"--iterations", "30"});
  ASSERT_EQ(invoke(with({"fit", "--workers", "1", "--out", dir + "/a"}, args)).code, 0);
  ASSERT_EQ(invoke(with({"fit", "--workers", "4", "--out", dir + "/b"}, args)).code, 0);
  Json a = read_json(dir + "/a/fit.json");
  Json b = read_json(dir + "/b/fit.json");
  for (Json* doc : {&a, &b}) {
    (*doc)["config"].erase("out");
    (*doc)["config"].erase("workers");
  }
  EXPECT_EQ(a.dump(), b.dump());
  EXPECT_EQ(slurp(dir + "/a/trace.jsonl"), slurp(dir + "/b/trace.jsonl"));
}

}  // namespace
