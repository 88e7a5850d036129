// Copyright 2026 The ectoken Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Drives the built command-line tool through a small workflow.

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ectoken/config.h"

#ifndef ECTOKEN_CLI_PATH
#error "ECTOKEN_CLI_PATH must name the built tool"
#endif

namespace ectoken {
namespace {

namespace fs = std::filesystem;

struct Outcome {
  int code = -1;
  std::string err;
};

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("ectoken_cli_" + std::string(
        ::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  Outcome run(const std::string& args) {
    fs::path err = dir_ / "stderr.txt";
    std::string cmd = "cd '" + dir_.string() + "' && '" + std::string(ECTOKEN_CLI_PATH) + "' " + args +
                      " > /dev/null 2> '" + err.string() + "'";
    int status = std::system(cmd.c_str());
    Outcome r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream in(err);
    std::stringstream ss;
    ss << in.rdbuf();
    r.err = ss.str();
    return r;
  }

  void write_config(const RunConfig& cfg, const std::string& name) {
    std::ofstream(dir_ / name) << cfg.canonical();
  }

  RunConfig small() {
    RunConfig cfg = tiny_config();
    cfg.data.dir = "d";
    cfg.data.complexes = 8;
    cfg.data.ligands_per_protein = 4;
    cfg.data.atoms_min = 20;
    cfg.data.atoms_max = 25;
    cfg.data.valid_fraction = 0;
    cfg.data.test_fraction = 0.5;
    cfg.pretrain.max_steps = 2;
    cfg.finetune.epochs = 1;
    cfg.distill.epochs = 1;
    return cfg;
  }

  fs::path dir_;
};

TEST_F(CliTest, UsageErrorsExitOne) {
  EXPECT_EQ(run("").code, 1);
  EXPECT_EQ(run("no-such-command").code, 1);
  EXPECT_EQ(run("finetune --task docking --out x").code, 1);
  Outcome missing = run("eval --model absent.ckpt --report r.json");
  EXPECT_EQ(missing.code, 1);
  EXPECT_NE(missing.err.find("absent.ckpt"), std::string::npos) << missing.err;
  EXPECT_EQ(run("--help").code, 0);
}

TEST_F(CliTest, WorkflowAndMismatchedConfig) {
  write_config(small(), "run.conf");
  ASSERT_EQ(run("gen-data --config run.conf --out d").code, 0);
  ASSERT_EQ(run("pretrain-ec --config run.conf --out ec.ckpt --quiet").code, 0);
  ASSERT_EQ(run("pretrain-fa --config run.conf --out fa.ckpt --quiet").code, 0);
  EXPECT_TRUE(fs::exists(dir_ / "ec.ckpt.csv"));
  ASSERT_EQ(run("finetune --config run.conf --task lep --ec ec.ckpt --fa fa.ckpt --out t.ckpt --quiet").code, 0);
  EXPECT_TRUE(fs::exists(dir_ / "t.ckpt.report.json"));
  ASSERT_EQ(run("distill --teacher t.ckpt --out s.ckpt --quiet").code, 0);
  EXPECT_EQ(run("eval --model s.ckpt --report s.json --quiet").code, 0);
  EXPECT_EQ(run("timing --model t.ckpt --repeats 1 --out timing.json").code, 0);
  EXPECT_TRUE(fs::exists(dir_ / "timing.json"));

  // A tokenizer checkpoint is not a task model.
  EXPECT_EQ(run("eval --model ec.ckpt --report r.json").code, 1);

  RunConfig wider = small();
  wider.model.dim = 48;
  write_config(wider, "wider.conf");
  Outcome bad = run("finetune --config wider.conf --ec ec.ckpt --fa fa.ckpt --out t2.ckpt");
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.err.find("dim"), std::string::npos) << bad.err;
}

TEST_F(CliTest, NumericalFailureExitsTwo) {
  RunConfig cfg = small();
  cfg.pretrain.lr = 1e300;
  write_config(cfg, "run.conf");
  ASSERT_EQ(run("gen-data --config run.conf --out d").code, 0);
  EXPECT_EQ(run("pretrain-fa --config run.conf --out fa.ckpt").code, 2);
  EXPECT_TRUE(fs::exists(dir_ / "fa.ckpt.failed"));
}

TEST_F(CliTest, MalformedConfigExitsOne) {
  std::ofstream(dir_ / "bad.conf") << "[model]\ndim = thirty\n";
  Outcome r = run("gen-data --config bad.conf --out d");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("line 2"), std::string::npos) << r.err;
}

}  // namespace
}  // namespace ectoken
