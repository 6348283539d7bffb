#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "liv/checkpoint.hpp"
#include "liv/dataset_io.hpp"
#include "test_util.hpp"

namespace liv {
namespace {

namespace fs = std::filesystem;

int run_cli(const std::string& args) {
  const std::string cmd = std::string(LIV_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir();
    ASSERT_EQ(run_cli("gen-data --out " + data().string() + " --episodes 6 --seed 3"), 0);
    ASSERT_EQ(run_cli("train --data " + data().string() + " --out " + ckpt().string() +
                      " --steps 3 --batch 4 --embed-dim 8 --seed 1"),
              0);
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }
  static fs::path data() { return dir_->path() / "data"; }
  static fs::path ckpt() { return dir_->path() / "ckpt"; }
  static fs::path out(const std::string& name) { return dir_->path() / name; }

  static TempDir* dir_;
};

TempDir* Cli::dir_ = nullptr;

TEST_F(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run_cli(""), 2);
  EXPECT_EQ(run_cli("gen-data"), 2);
  EXPECT_EQ(run_cli("plan --planner ilqr --oracle-reward --out " + out("p0").string()), 2);
  EXPECT_EQ(run_cli("frobnicate"), 2);
}

TEST_F(Cli, GenDataIsByteIdentical) {
  ASSERT_EQ(run_cli("gen-data --out " + out("again").string() + " --episodes 6 --seed 3"), 0);
  for (const auto& entry : fs::directory_iterator(data())) {
    EXPECT_EQ(slurp(entry.path()), slurp(out("again") / entry.path().filename())) << entry.path();
  }
  EXPECT_EQ(directory_fingerprint(data()), directory_fingerprint(out("again")));
}

TEST_F(Cli, TrainingIsReproducible) {
  ASSERT_EQ(run_cli("train --data " + data().string() + " --out " + out("ckpt2").string() +
                    " --steps 3 --batch 4 --embed-dim 8 --seed 1"),
            0);
  EXPECT_EQ(slurp(ckpt() / "params.bin"), slurp(out("ckpt2") / "params.bin"));
  EXPECT_EQ(slurp(ckpt() / "run_manifest.json"), slurp(out("ckpt2") / "run_manifest.json"));
  EXPECT_TRUE(fs::exists(ckpt() / "metrics.csv"));
}

TEST_F(Cli, FinetuneWithZeroLearningRateKeepsParameters) {
  ASSERT_EQ(run_cli("finetune --init " + ckpt().string() + " --data " + data().string() + " --out " +
                    out("ft").string() + " --steps 2 --batch 4 --lr 0 --weight-decay 0"),
            0);
  EXPECT_EQ(load_checkpoint(ckpt()).params, load_checkpoint(out("ft")).params);
  const Json meta = load_checkpoint(out("ft")).metadata;
  EXPECT_EQ(meta.at("init").get<std::string>().rfind("checkpoint:", 0), 0u);
  EXPECT_EQ(run_cli("finetune --data " + data().string() + " --out " + out("ft2").string()), 2);
}

TEST_F(Cli, EvalRewardWritesCurves) {
  ASSERT_EQ(run_cli("eval-reward --ckpt " + ckpt().string() + " --data " + data().string() +
                    " --episodes 0,2-3 --goal both --out " + out("eval").string()),
            0);
  EXPECT_TRUE(fs::exists(out("eval") / "curves" / (episode_stem(2) + ".csv")));
  EXPECT_FALSE(fs::exists(out("eval") / "curves" / (episode_stem(1) + ".csv")));
  const Json m = parse_json_file(out("eval") / "metrics.json");
  EXPECT_EQ(m.at("episodes").size(), 3u);
  EXPECT_EQ(run_cli("eval-reward --ckpt " + ckpt().string() + " --data " + data().string() +
                    " --episodes 99 --out " + out("eval2").string()),
            1);
}

TEST_F(Cli, BcRecordsOneHotAndRolloutIsDeterministic) {
  ASSERT_EQ(run_cli("bc --ckpt " + ckpt().string() + " --data " + data().string() +
                    " --encoding one-hot --steps 3 --batch 8 --out " + out("bc").string()),
            0);
  const Json manifest = parse_json_file(out("bc") / "run_manifest.json");
  EXPECT_EQ(manifest.at("config").at("encoding"), "one_hot");
  const std::string args = "rollout --policy " + out("bc").string() + " --ckpt " + ckpt().string() +
                           " --episodes-per-task 2 --seed 4 --out ";
  ASSERT_EQ(run_cli(args + out("r1").string()), 0);
  ASSERT_EQ(run_cli(args + out("r2").string()), 0);
  EXPECT_EQ(slurp(out("r1") / "success.json"), slurp(out("r2") / "success.json"));
  EXPECT_EQ(run_cli("rollout --policy " + out("bc").string() + " --out " + out("r3").string()), 2);
}

TEST_F(Cli, RolloutBaselines) {
  ASSERT_EQ(run_cli("rollout --baseline expert --episodes-per-task 5 --out " + out("expert").string()), 0);
  const Json j = parse_json_file(out("expert") / "success.json");
  EXPECT_GE(j.at("mean").get<double>(), 0.95);
  EXPECT_EQ(run_cli("rollout --baseline expert --policy " + out("expert").string() + " --out " +
                    out("both").string()),
            2);
}

TEST_F(Cli, PlanWithOracleAndLearnedReward) {
  ASSERT_EQ(run_cli("plan --planner cem --oracle-reward --sequences 32 --episodes-per-task 1 --tasks 0,1 --out " +
                    out("plan").string()),
            0);
  const Json r = parse_json_file(out("plan") / "report.json");
  EXPECT_EQ(r.at("planner"), "cem");
  EXPECT_EQ(r.at("reward"), "oracle");
  ASSERT_EQ(run_cli("plan --ckpt " + ckpt().string() +
                    " --planner mppi --iterations 1 --sequences 8 --episodes-per-task 1 --tasks 2 --out " +
                    out("plan2").string()),
            0);
}

TEST_F(Cli, VerifyExitCodes) {
  EXPECT_EQ(run_cli("verify --suite prop1 --out " + out("v").string()), 0);
  EXPECT_TRUE(parse_json_file(out("v") / "report.json").at("passed").get<bool>());
  EXPECT_EQ(run_cli("verify --suite prop1 --corrupt-loss"), 3);
  EXPECT_EQ(run_cli("verify --suite nonsense"), 2);
}

TEST_F(Cli, RuntimeErrorsExitOne) {
  ASSERT_EQ(run_cli("gen-data --out " + out("unlabeled").string() + " --episodes 3 --policy random --seed 2"), 0);
  const Json meta = parse_json_file(out("unlabeled") / "meta.json");
  if (meta.at("labeled_episodes").get<int>() == 0) {
    EXPECT_EQ(run_cli("train --data " + out("unlabeled").string() + " --objective infonce --steps 1 --out " +
                      out("bad").string()),
              1);
  }
  EXPECT_EQ(run_cli("eval-reward --ckpt " + data().string() + " --data " + data().string() + " --out " +
                    out("bad2").string()),
            1);
}

}  // namespace
}  // namespace liv
