// Runs the orbitsym binary and checks exit codes and outputs.

#include <gtest/gtest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>

using namespace std::string_literals;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string output;  // stdout and stderr
};

Result run(const std::string& args) {
  const std::string cmd = std::string(ORBITSYM_BIN) + " " + args + " 2>&1";
  Result r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  while (std::fgets(buf, sizeof buf, pipe)) r.output += buf;
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "orbitsym_test_cli" / name;
  fs::remove_all(dir);
  fs::create_directories(dir.parent_path());
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

const std::string kSmall = " --set n_train=60 --set n_val=20 --set n_test=20 --set epochs=2 --set batch=20"
                           " --set base_hidden=[8] --set sym_hidden=8";

}  // namespace

TEST(Cli, NoSubcommandIsUsageError) { EXPECT_EQ(run("").code, 1); }

TEST(Cli, HelpSucceeds) { EXPECT_EQ(run("--help").code, 0); }

TEST(Cli, UnknownGroupIsUsageError) {
  const Result r = run("check --group so99");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("so99"), std::string::npos);
}

TEST(Cli, CheckPassesForSo2) {
  const Result r = run("check --group so2 --trials 100");
  EXPECT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("PASS metric/so2"), std::string::npos);
  EXPECT_EQ(r.output.find("FAIL"), std::string::npos);
}

TEST(Cli, CheckFailureExitsNonzero) {
  // GL(2) acts transitively on full-rank matrices, so inter-orbit separation fails.
  const Result r = run("check --group gl2 --trials 50");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("FAIL metric/gl2"), std::string::npos);
}

TEST(Cli, BadConfigKeyNamesKey) {
  const Result r = run("train --set no_such_key=1 --out " + scratch("badkey").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("no_such_key"), std::string::npos);
}

TEST(Cli, MissingDataIsIoError) {
  const Result r = run("train --set data_dir=/nonexistent/dir --out " + scratch("nodata").string());
  EXPECT_EQ(r.code, 3);
}

TEST(Cli, MissingConfigFileIsIoError) { EXPECT_EQ(run("train --config /nonexistent/c.json").code, 3); }

TEST(Cli, ZeroTrainCountIsValidationError) {
  EXPECT_EQ(run("gen-data --set n_train=0 --out " + scratch("zero").string()).code, 1);
}

TEST(Cli, GenDataIsDeterministic) {
  const fs::path a = scratch("gen_a"), b = scratch("gen_b");
  ASSERT_EQ(run("gen-data --seed 7 --set n_train=50 --set n_val=10 --set n_test=10 --out " + a.string()).code, 0);
  ASSERT_EQ(run("gen-data --seed 7 --set n_train=50 --set n_val=10 --set n_test=10 --out " + b.string()).code, 0);
  for (const char* f : {"train.csv", "val.csv", "test.csv", "train.json"}) {
    EXPECT_FALSE(slurp(a / f).empty());
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  }
}

TEST(Cli, TrainThenEval) {
  const fs::path data = scratch("te_data"), out = scratch("te_run");
  ASSERT_EQ(run("gen-data --set n_train=60 --set n_val=20 --set n_test=20 --out " + data.string()).code, 0);
  const Result t = run("train --set data_dir=" + data.string() + kSmall + " --out " + out.string());
  ASSERT_EQ(t.code, 0) << t.output;
  EXPECT_NE(t.output.find("val_orbit_loss"), std::string::npos);
  EXPECT_NE(t.output.find("epochs = 2  [--set]"), std::string::npos);
  for (const char* f : {"metrics.csv", "model.osym", "config.json", "summary.json"}) EXPECT_TRUE(fs::exists(out / f));
  EXPECT_EQ(slurp(out / "metrics.csv").rfind("epoch,task_loss,orbit_loss,val_metric,val_orbit_loss,seconds\n", 0), 0u);

  const Result e = run("eval --out " + out.string() + " --transforms 2 --probe-examples 10");
  ASSERT_EQ(e.code, 0) << e.output;
  EXPECT_NE(e.output.find("\"test_metric\""), std::string::npos);
  EXPECT_NE(e.output.find("\"mean_defect\""), std::string::npos);
  EXPECT_TRUE(fs::exists(out / "report.json"));

  const Result m = run("eval --out " + out.string() + " --transforms 0");
  ASSERT_EQ(m.code, 0);
  EXPECT_EQ(m.output.find("\"probe\""), std::string::npos);
}

TEST(Cli, TrainTwiceGivesIdenticalMetrics) {
  const fs::path a = scratch("det_a"), b = scratch("det_b");
  ASSERT_EQ(run("train" + kSmall + " --out " + a.string()).code, 0);
  ASSERT_EQ(run("train" + kSmall + " --out " + b.string()).code, 0);
  EXPECT_EQ(slurp(a / "metrics.csv"), slurp(b / "metrics.csv"));
  EXPECT_EQ(slurp(a / "model.osym"), slurp(b / "model.osym"));
}

TEST(Cli, BaseWithZeroLambdaTrains) {
  const Result r = run("train --set method=base --set lambda=0" + kSmall + " --out " + scratch("base").string());
  EXPECT_EQ(r.code, 0) << r.output;
}

TEST(Cli, CorruptCheckpointIsFormatError) {
  const fs::path out = scratch("corrupt");
  fs::create_directories(out);
  std::ofstream(out / "model.osym") << "not a checkpoint";
  EXPECT_EQ(run("eval --out " + out.string() + " --transforms 0").code, 3);
}

TEST(Cli, NumericBlowupReportsStage) {
  const Result r = run("train --set lr=1e300" + kSmall + " --out " + scratch("nan").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("stage '"), std::string::npos);
}
