#include "ltlab/experiment.hpp"
#include "support/oracle.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

using namespace ltlab;
using nlohmann::json;

namespace {

struct Outcome {
  int code = -1;
  std::string out;
};

Outcome cli(const std::string& args, const oracle::TempDir& scratch) {
  const auto log = scratch / "cli.log";
  const std::string cmd = std::string(LTLAB_CLI) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  std::ifstream is(log);
  std::ostringstream os;
  os << is.rdbuf();
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, os.str()};
}

std::string write_config(const oracle::TempDir& dir, const std::string& name, const json& j) {
  const auto path = (dir / name).string();
  std::ofstream(path) << j.dump(2);
  return path;
}

json small_config() {
  return {{"schema_version", 1},
          {"name", "cli-small"},
          {"data", {{"generator", {{"num_categories", 10}, {"feature_dim", 6}, {"max_count", 300}, {"test_per_class", 10}}}}},
          {"train", {{"epochs", 2}}},
          {"loss", {{"kind", "bags"}, {"beta", 1.0}}}};
}

}  // namespace

TEST(Cli, RunEvalAndTaunormSucceed) {
  oracle::TempDir dir("cli");
  const auto cfg = write_config(dir, "c.json", small_config());
  const auto run_dir = (dir / "run").string();
  const auto run = cli("run -c " + cfg + " -o " + run_dir, dir);
  ASSERT_EQ(run.code, 0) << run.out;
  EXPECT_NE(run.out.find("class_mean_accuracy"), std::string::npos);
  EXPECT_EQ(cli("eval " + run_dir + " --tau 0.5", dir).code, 0);
  const auto tn = cli("taunorm " + run_dir + "/head.lthd --tau 1 --partition " + run_dir + "/partition.json -o " +
                          (dir / "normed.lthd").string(),
                      dir);
  EXPECT_EQ(tn.code, 0) << tn.out;
  EXPECT_TRUE(fs::exists(dir / "normed.lthd"));
  const auto cmp = cli("compare " + run_dir + " " + run_dir + "/report.json -o " + (dir / "cmp").string(), dir);
  EXPECT_EQ(cmp.code, 0) << cmp.out;
  EXPECT_TRUE(fs::exists(dir / "cmp" / "comparison.json"));
}

TEST(Cli, GenerateAndCensus) {
  oracle::TempDir dir("cli");
  const auto cfg = write_config(dir, "c.json", small_config());
  ASSERT_EQ(cli("generate -c " + cfg + " -o " + (dir / "data").string() + " --format binary", dir).code, 0);
  EXPECT_TRUE(fs::exists(dir / "data" / "train.ltfv"));
  const auto cen = cli("census " + (dir / "data" / "train.ltfv").string() + " --clusters 3", dir);
  EXPECT_EQ(cen.code, 0) << cen.out;
  EXPECT_NE(cen.out.find("group,categories,instances"), std::string::npos);
}

TEST(Cli, ConfigErrorsExitTwo) {
  oracle::TempDir dir("cli");
  auto j = small_config();
  j["loss"]["betta"] = 1;
  const auto bad = write_config(dir, "bad.json", j);
  const auto r = cli("run -c " + bad + " -o " + (dir / "run").string(), dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("/loss/betta"), std::string::npos) << r.out;
  EXPECT_EQ(cli("run", dir).code, 2);
  EXPECT_EQ(cli("frobnicate", dir).code, 2);
  EXPECT_EQ(cli("sweep -c " + write_config(dir, "ok.json", small_config()) + " --param alpha --values 1", dir).code, 2);
}

TEST(Cli, NumericalFailureExitsThreeAndLeavesMarker) {
  oracle::TempDir dir("cli");
  auto j = small_config();
  j["train"]["learning_rate"] = 1e308;
  const auto cfg = write_config(dir, "c.json", j);
  const auto r = cli("run -c " + cfg + " -o " + (dir / "run").string(), dir);
  EXPECT_EQ(r.code, 3) << r.out;
  EXPECT_TRUE(fs::exists(dir / "run" / kPartialMarker));
}

TEST(Cli, OtherFailuresExitOne) {
  oracle::TempDir dir("cli");
  const auto head = (dir / "garbage.lthd").string();
  std::ofstream(head) << "not a head";
  const auto r = cli("taunorm " + head + " --tau 1", dir);
  EXPECT_EQ(r.code, 1) << r.out;
}

TEST(Cli, GradcheckPasses) {
  oracle::TempDir dir("cli");
  const auto r = cli("gradcheck --instances 10", dir);
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("bags_loss/focal"), std::string::npos) << r.out;
}
