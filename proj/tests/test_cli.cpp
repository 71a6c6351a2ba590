#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "qs5/experiment.hpp"

using namespace qs5;
namespace fs = std::filesystem;

namespace {

struct RunResult {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("qs5_test_cli_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  RunResult run(const std::string& args) const {
    const fs::path out = dir_ / "stdout.txt", err = dir_ / "stderr.txt";
    const std::string cmd =
        std::string(QS5_CLI_PATH) + " " + args + " > " + out.string() + " 2> " + err.string();
    const int status = std::system(cmd.c_str());
    RunResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
  }

  // small toy task so that training finishes in well under a second
  std::string toy_config(int epochs = 10) const {
    ExperimentConfig c;
    c.task = TaskKind::toy_classification;
    c.toy.length = 32;
    c.toy.train_size = 32;
    c.toy.val_size = 16;
    c.toy.test_size = 16;
    c.h = 3;
    c.p = 4;
    c.depth = 1;
    c.train.epochs = epochs;
    c.train.batch_size = 8;
    const fs::path p = dir_ / ("toy_" + std::to_string(epochs) + ".json");
    write_json(to_json(c), p.string());
    return p.string();
  }

  std::string path(const std::string& rel) const { return (dir_ / rel).string(); }

  fs::path dir_;
};

// run logs end with a wall-clock column
std::string without_last_column(const std::string& csv) {
  std::string out;
  std::istringstream in(csv);
  for (std::string line; std::getline(in, line);)
    out += line.substr(0, line.rfind(',')) + "\n";
  return out;
}

std::size_t count_lines(const std::string& text) {
  std::size_t n = 0;
  for (char ch : text)
    n += ch == '\n';
  return n;
}

}  // namespace

TEST_F(Cli, UsageErrorsExitWithTwo) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("frobnicate").code, 2);
  EXPECT_EQ(run("generate --tau -1 --out " + path("g")).code, 2);
  EXPECT_EQ(run("generate --steps lots").code, 2);
  EXPECT_EQ(run("train --epochs 0 --out " + path("t")).code, 2);
  EXPECT_EQ(run("ptq --quant W8A8").code, 2);
  EXPECT_EQ(run("sweep --workers 0").code, 2);
  EXPECT_EQ(run("--help").code, 0);
}

TEST_F(Cli, InvalidQuantNameListsTheGrammar) {
  const RunResult r = run("train --quant W8X8 --config " + toy_config() + " --out " + path("t"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find(kQuantGrammar), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(path("t")));
}

TEST_F(Cli, IoErrorsExitWithFour) {
  EXPECT_EQ(run("train --config " + path("missing.json")).code, 4);
  EXPECT_EQ(run("eval --model " + path("missing.qssm") + " --config " + toy_config() + " --out " + path("e")).code, 4);
  std::ofstream(path("garbage.qssm")) << "not a model";
  EXPECT_EQ(run("eval --model " + path("garbage.qssm") + " --config " + toy_config() + " --out " + path("e")).code,
            4);
}

TEST_F(Cli, GenerateIsDeterministic) {
  ASSERT_EQ(run("generate --tau 10 --seed 1 --steps 200 --out " + path("a")).code, 0);
  ASSERT_EQ(run("generate --tau 10 --seed 1 --steps 200 --out " + path("b")).code, 0);
  EXPECT_EQ(slurp(path("a/series.csv")), slurp(path("b/series.csv")));
  EXPECT_EQ(slurp(path("a/config.json")), slurp(path("b/config.json")));
  EXPECT_EQ(read_series_csv(path("a/series.csv")).rows, 200u);
  ASSERT_EQ(run("generate --tau 10 --seed 2 --steps 200 --out " + path("c")).code, 0);
  EXPECT_NE(slurp(path("a/series.csv")), slurp(path("c/series.csv")));
}

TEST_F(Cli, ZeroDelayGivesIdenticalColumns) {
  ASSERT_EQ(run("generate --tau 0 --steps 100 --out " + path("g")).code, 0);
  const RMatrix s = read_series_csv(path("g/series.csv"));
  ASSERT_EQ(s.cols, 10u);
  for (std::size_t r = 0; r < s.rows; ++r)
    for (std::size_t c = 1; c < s.cols; ++c)
      EXPECT_EQ(s(r, c), s(r, 0));
}

TEST_F(Cli, TrainWritesOutputsAndRerunsFromItsEchoedConfig) {
  const RunResult r = run("train --quant FP --config " + toy_config() + " --out " + path("t"));
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"config.json", "log.csv", "model.qssm", "summary.json"})
    EXPECT_TRUE(fs::exists(path("t/") + f)) << f;
  const nlohmann::json s = nlohmann::json::parse(slurp(path("t/summary.json")));
  EXPECT_EQ(s["status"], "converged");
  EXPECT_EQ(s["schema_version"], kSummarySchemaVersion);
  EXPECT_EQ(count_lines(slurp(path("t/log.csv"))), 11u);

  // the echoed config alone reproduces the run
  const RunResult again = run("train --config " + path("t/config.json") + " --out " + path("t2"));
  ASSERT_EQ(again.code, 0);
  EXPECT_EQ(slurp(path("t/model.qssm")), slurp(path("t2/model.qssm")));
  EXPECT_EQ(without_last_column(slurp(path("t/log.csv"))), without_last_column(slurp(path("t2/log.csv"))));
}

TEST_F(Cli, OneBitStateMatrixRunIsNonConverged) {
  const RunResult r = run("train --quant Abar1 --config " + toy_config(3) + " --out " + path("t"));
  EXPECT_EQ(r.code, 3) << r.err;
  const nlohmann::json s = nlohmann::json::parse(slurp(path("t/summary.json")));
  EXPECT_EQ(s["status"], "non_converged");
  EXPECT_FALSE(fs::exists(path("t/model.qssm")));
}

TEST_F(Cli, PtqToFullPrecisionCopiesTheModelBytes) {
  const std::string cfg = toy_config();
  ASSERT_EQ(run("train --config " + cfg + " --out " + path("t")).code, 0);
  const RunResult r = run("ptq --model " + path("t/model.qssm") + " --quant FP --config " + cfg + " --out " + path("p"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(path("t/model.qssm")), slurp(path("p/model.qssm")));

  ASSERT_EQ(run("ptq --model " + path("t/model.qssm") + " --quant W4A8 --config " + cfg + " --out " + path("q")).code,
            0);
  EXPECT_EQ(load_model(path("q/model.qssm")).qcfg, parse_quant_config("W4A8"));
  // quantized models are not valid PTQ sources
  EXPECT_EQ(run("ptq --model " + path("q/model.qssm") + " --quant W8 --config " + cfg + " --out " + path("r")).code, 2);
}

TEST_F(Cli, EvalTwiceGivesIdenticalMetrics) {
  const std::string cfg = toy_config();
  ASSERT_EQ(run("train --config " + cfg + " --out " + path("t")).code, 0);
  const std::string model = path("t/model.qssm");
  ASSERT_EQ(run("eval --model " + model + " --config " + cfg + " --out " + path("e1")).code, 0);
  ASSERT_EQ(run("eval --model " + model + " --config " + cfg + " --metrics " + path("m2.json")).code, 0);
  const std::string m1 = slurp(path("e1/metrics.json"));
  EXPECT_FALSE(m1.empty());
  EXPECT_EQ(m1, slurp(path("m2.json")));
  // the metrics agree with the training summary
  const nlohmann::json s = nlohmann::json::parse(slurp(path("t/summary.json")));
  const nlohmann::json m = nlohmann::json::parse(m1);
  EXPECT_EQ(m["test_metric"], s["test_metric"]);
  EXPECT_EQ(run("eval --model " + model + " --config " + cfg + " --width 5 --out " + path("e3")).code, 2);
}

TEST_F(Cli, QaftLogHasOneTenthOfThePretrainingEpochs) {
  const std::string cfg = toy_config(15);
  ASSERT_EQ(run("train --config " + cfg + " --out " + path("t")).code, 0);
  for (int epochs : {15, 20, 31}) {
    const std::string out = path("q" + std::to_string(epochs));
    const RunResult r = run("qaft --model " + path("t/model.qssm") + " --quant W8A8 --config " + cfg + " --epochs " +
                            std::to_string(epochs) + " --out " + out);
    ASSERT_EQ(r.code, 0) << r.err;
    const auto expected = static_cast<std::size_t>(std::ceil(0.1 * epochs));
    EXPECT_EQ(count_lines(slurp(out + "/log.csv")), 1 + expected) << epochs;
    EXPECT_TRUE(fs::exists(out + "/model.qssm"));
    EXPECT_EQ(load_model(out + "/model.qssm").qcfg, parse_quant_config("W8A8"));
  }
}

TEST_F(Cli, ConfigCommandEchoesTheResolvedConfig) {
  const RunResult r = run("config --tau 30 --quant W4A8SSM8 --epochs 12");
  ASSERT_EQ(r.code, 0);
  const ExperimentConfig c = experiment_from_json(nlohmann::json::parse(r.out));
  EXPECT_EQ(c.mackey_glass.tau, 30.0);
  EXPECT_EQ(c.train.qcfg_name, "W4A8SSM8");
  EXPECT_EQ(c.train.epochs, 12);
  ASSERT_EQ(run("config --tau 30 --quant W4A8SSM8 --epochs 12 --file " + path("c.json")).code, 0);
  EXPECT_EQ(slurp(path("c.json")), r.out);
}

TEST_F(Cli, SweepRowsAndReproducibility) {
  const std::string args =
      "sweep --taus 5,17 --quants FP,Abar1 --seeds 0,1 --steps 256 --context 16 --stride 4 --width 3 --state 4 "
      "--depth 1 --epochs 2 --batch 8 --workers 2 --out ";
  const RunResult a = run(args + path("s1"));
  ASSERT_EQ(a.code, 0) << a.err;
  const std::string csv = slurp(path("s1/sweep.csv"));
  EXPECT_EQ(csv, a.out);
  EXPECT_EQ(count_lines(csv), 1 + 8 + 4u);
  EXPECT_NE(csv.find("mean,17,Abar1,,non_converged,0,2,"), std::string::npos) << csv;
  EXPECT_NE(csv.find("mean,5,FP,,ok,2,0,"), std::string::npos) << csv;
  const RunResult b = run(args + path("s2"));
  ASSERT_EQ(b.code, 0);
  EXPECT_EQ(slurp(path("s2/sweep.csv")), csv);
  EXPECT_EQ(run("sweep --taus 5,x --out " + path("s3")).code, 2);
  EXPECT_EQ(run("sweep --quants FP,W8Q --out " + path("s3")).code, 2);
}
