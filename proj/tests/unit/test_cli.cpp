/*
 * Copyright 2026 The gpmil Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <sys/wait.h>

#include <gtest/gtest.h>
#include <json.hpp>

#include <gpmil/error.hpp>
#include <gpmil_cli/commands.hpp>

using namespace gpmil;
using namespace gpmil::cli;

namespace {

const char* const kSmallConfig = R"({
  "seed": 3,
  "data": {"n_bags": 30, "k_min": 4, "k_max": 8, "dim": 6, "split": [0.6, 0.2, 0.2]},
  "train": {"epochs": 2, "hidden_dim": 16, "proj_dim": 8, "num_inducing": 4,
            "warmup_steps": 5, "eval_samples": 4},
  "eval": {"n_samples": 8, "n_bins": 5},
  "ablate": {"use_lm": [true], "normalization": ["sigmoid", "softmax"],
             "num_inducing": [4], "n_seeds": 1}
})";

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("gpmil_cli_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    write(dir_ / "config.json", kSmallConfig);
  }
  void TearDown() override { fs::remove_all(dir_); }

  static void write(const fs::path& p, const std::string& text) {
    std::ofstream(p) << text;
  }
  static std::string read(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }
  /// Runs the binary with stdout and stderr captured to files; returns the exit code.
  int run(const std::string& args) const {
    const std::string cmd = std::string(GPMIL_CLI_PATH) + " " + args + " > " +
                            (dir_ / "stdout.txt").string() + " 2> " +
                            (dir_ / "stderr.txt").string();
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
  }
  [[nodiscard]] std::string stderr_text() const { return read(dir_ / "stderr.txt"); }
  [[nodiscard]] std::string p(const std::string& name) const { return (dir_ / name).string(); }

  void gen_splits() {
    ASSERT_EQ(run("gen-data --config " + p("config.json") + " --out " + p("all.bin") +
                  " --split-prefix " + p("split")),
              0)
        << stderr_text();
  }

  fs::path dir_;
};

}  // namespace

TEST_F(CliTest, GenDataIsDeterministic) {
  ASSERT_EQ(run("gen-data --config " + p("config.json") + " --out " + p("a.jsonl")), 0);
  ASSERT_EQ(run("gen-data --config " + p("config.json") + " --out " + p("b.jsonl")), 0);
  EXPECT_EQ(read(dir_ / "a.jsonl"), read(dir_ / "b.jsonl"));
  ASSERT_EQ(run("gen-data --config " + p("config.json") + " --seed 4 --out " + p("c.jsonl")), 0);
  EXPECT_NE(read(dir_ / "a.jsonl"), read(dir_ / "c.jsonl"));
  EXPECT_EQ(load_dataset(dir_ / "a.jsonl").size(), 30u);
}

TEST_F(CliTest, TrainEvalWritesOutputs) {
  gen_splits();
  ASSERT_EQ(run("train --config " + p("config.json") + " --data " + p("split.train.bin") +
                " --val " + p("split.val.bin") + " --out-dir " + p("run")),
            0)
      << stderr_text();
  for (const char* f : {"model.json", "history.jsonl", "config.json"}) {
    EXPECT_TRUE(fs::exists(dir_ / "run" / f)) << f;
  }
  std::ifstream hist(dir_ / "run" / "history.jsonl");
  std::string line;
  int lines = 0;
  while (std::getline(hist, line)) {
    const auto j = nlohmann::json::parse(line);
    if (j["type"] == "epoch") {
      EXPECT_TRUE(j.contains("mean_loss"));
      ++lines;
    }
  }
  EXPECT_EQ(lines, 2);

  ASSERT_EQ(run("eval --model " + p("run/model.json") + " --data " + p("split.test.bin") +
                " --out-dir " + p("eval")),
            0)
      << stderr_text();
  const auto m = nlohmann::json::parse(read(dir_ / "eval" / "metrics.json"));
  for (const char* key : {"balanced_acc", "auc", "ace", "instance_auc", "welch_p"}) {
    EXPECT_TRUE(m.contains(key)) << key;
  }
  EXPECT_GE(m["auc"].get<double>(), 0.0);
  EXPECT_LE(m["auc"].get<double>(), 1.0);
  // The stored model config is picked up by eval.
  const auto cfg = nlohmann::json::parse(read(dir_ / "eval" / "config.json"));
  EXPECT_EQ(cfg["train"]["num_inducing"], 4);
}

TEST_F(CliTest, EmptyTestSplitFails) {
  gen_splits();
  ASSERT_EQ(run("train --config " + p("config.json") + " --data " + p("split.train.bin") +
                " --out-dir " + p("run")),
            0);
  save_dataset(Dataset{}, dir_ / "empty.bin");
  EXPECT_EQ(run("eval --model " + p("run/model.json") + " --data " + p("empty.bin") +
                " --out-dir " + p("eval")),
            1);
  EXPECT_NE(stderr_text().find("error: invalid_argument"), std::string::npos);
}

TEST_F(CliTest, AblationMatchesStandaloneRuns) {
  gen_splits();
  const RunConfig config = load_config(dir_ / "config.json");
  std::ostringstream log;
  const auto runs = cmd_ablate(config, dir_ / "split.train.bin", dir_ / "split.test.bin",
                               dir_ / "abl", log);
  ASSERT_EQ(runs.size(), 2u);

  std::ifstream table(dir_ / "abl" / "ablation.csv");
  std::string line;
  int rows = -1;
  while (std::getline(table, line)) ++rows;
  EXPECT_EQ(rows, 2);

  RunConfig single = config;
  single.train.attention.normalization = Normalization::kSoftmax;
  cmd_train(single, dir_ / "split.train.bin", std::nullopt, dir_ / "solo", log);
  const MetricsReport solo =
      cmd_eval(single, dir_ / "solo" / "model.json", dir_ / "split.test.bin", dir_ / "solo_eval", log);
  EXPECT_EQ(runs[1].normalization, Normalization::kSoftmax);
  EXPECT_EQ(solo.auc, runs[1].metrics.auc);
  EXPECT_EQ(solo.balanced_acc, runs[1].metrics.balanced_acc);
  EXPECT_EQ(solo.ace, runs[1].metrics.ace);
}

TEST_F(CliTest, ExportAttentionRows) {
  gen_splits();
  ASSERT_EQ(run("train --config " + p("config.json") + " --data " + p("split.train.bin") +
                " --out-dir " + p("run")),
            0);
  ASSERT_EQ(run("export-attention --model " + p("run/model.json") + " --data " +
                p("split.test.bin") + " --out " + p("att.csv")),
            0)
      << stderr_text();
  const Dataset test = load_dataset(dir_ / "split.test.bin");
  std::size_t expected = 0;
  for (const auto& b : test.bags) expected += static_cast<std::size_t>(b.size());

  std::ifstream csv(dir_ / "att.csv");
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line,
            "bag_id,instance,attention_mean,attention_std,attention_norm,instance_label,"
            "inducing_assignment");
  std::size_t rows = 0;
  while (std::getline(csv, line)) {
    std::stringstream ss(line);
    std::vector<std::string> cells;
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    ASSERT_EQ(cells.size(), 7u) << line;
    const double mean = std::stod(cells[2]);
    const double norm = std::stod(cells[4]);
    EXPECT_GE(mean, 0.0);
    EXPECT_LE(mean, 1.0);
    EXPECT_GE(norm, 0.0);
    EXPECT_LE(norm, 1.0);
    const int assign = std::stoi(cells[6]);
    EXPECT_GE(assign, 0);
    EXPECT_LT(assign, 4);
    ++rows;
  }
  EXPECT_EQ(rows, expected);
}

TEST_F(CliTest, ConfigErrors) {
  write(dir_ / "bad_key.json", R"({"train": {"epoch": 3}})");
  EXPECT_EQ(run("gen-data --config " + p("bad_key.json") + " --out " + p("x.bin")), 1);
  const std::string err = stderr_text();
  EXPECT_EQ(err.rfind("error: config_error:", 0), 0u) << err;
  EXPECT_NE(err.find("train.epoch"), std::string::npos);
  EXPECT_EQ(std::count(err.begin(), err.end(), '\n'), 1);

  write(dir_ / "bad_grid.json", R"({"ablate": {"num_inducing": []}})");
  EXPECT_EQ(run("gen-data --config " + p("bad_grid.json") + " --out " + p("x.bin")), 1);
  EXPECT_EQ(stderr_text().rfind("error: config_error:", 0), 0u);

  write(dir_ / "bad_json.json", "{\"seed\": ");
  EXPECT_EQ(run("gen-data --config " + p("bad_json.json") + " --out " + p("x.bin")), 1);
  EXPECT_EQ(run("train --bogus"), 2);
}

TEST_F(CliTest, GradcheckCommand) {
  EXPECT_EQ(run("gradcheck --n-seeds 2"), 0) << stderr_text();
  const std::string out = read(dir_ / "stdout.txt");
  EXPECT_NE(out.find("PASS"), std::string::npos);
  EXPECT_EQ(out.find("FAIL"), std::string::npos);

  GradcheckRequest req;
  req.n_seeds = 1;
  req.options.corrupt = [](MilModel& g) { g.sgp.lm_bias += 1.0; };
  std::ostringstream log;
  EXPECT_FALSE(cmd_gradcheck(req, log));
  EXPECT_NE(log.str().find("FAIL"), std::string::npos);
}

TEST(RunConfig, RoundTripAndPrecedence) {
  RunConfig c = parse_config(kSmallConfig);
  EXPECT_EQ(c.seed, 3u);
  EXPECT_EQ(c.train.num_inducing, 4);
  const RunConfig back = parse_config(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  const RunConfig over = parse_config(R"({"train": {"epochs": 7}})", c);
  EXPECT_EQ(over.train.epochs, 7);
  EXPECT_EQ(over.train.num_inducing, 4);
  EXPECT_THROW(parse_config(R"({"eval": {"n_bins": 0}})"), ConfigError);
}
