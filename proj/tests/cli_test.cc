// Copyright 2026 The AIRSQ Authors.
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

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "airsq/cli.hpp"
#include "test_util.h"

namespace airsq {
namespace {

namespace fs = std::filesystem;

struct RunResult {
  int code = 0;
  std::string out;
  std::string err;
};

RunResult run_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  RunResult r;
  r.code = cli::run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::size_t line_count(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) ++n;
  return n;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

TEST(Cli, SynthWritesRequestedScenarios) {
  const fs::path dir = testing::temp_dir("cli_synth");
  const RunResult r = run_cli({"synth", "--n", "10", "--seed", "1", "--out", (dir / "s.jsonl").string()});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(line_count(dir / "s.jsonl"), 10u);
  EXPECT_EQ(load_scenarios(dir / "s.jsonl").size(), 10u);
}

TEST(Cli, UnknownSubcommandPrintsUsage) {
  const RunResult r = run_cli({"frobnicate"});
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("Usage"), std::string::npos);
  EXPECT_NE(r.err.find("\"usage_error\""), std::string::npos);
}

TEST(Cli, BinaryRejectsUnknownSubcommand) {
  const std::string cmd = std::string(AIRSQ_CLI_PATH) + " frobnicate > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  EXPECT_NE(status, 0);
}

TEST(Cli, MissingInputIsAnIoError) {
  const fs::path dir = testing::temp_dir("cli_missing");
  const RunResult r = run_cli({"filter", "--in", (dir / "nope.jsonl").string(), "--out", (dir / "o.jsonl").string()});
  EXPECT_EQ(r.code, 6);
  const std::string last = r.err.substr(r.err.rfind('\n', r.err.size() - 2) + 1);
  const nlohmann::json j = nlohmann::json::parse(last);
  EXPECT_EQ(j["error"]["code"], "io_error");
  EXPECT_FALSE(fs::exists(dir / "o.jsonl"));
}

TEST(Cli, ParseErrorsHaveTheirOwnCode) {
  const fs::path dir = testing::temp_dir("cli_parse");
  std::ofstream(dir / "bad.jsonl") << "{not json}\n";
  const RunResult r = run_cli({"filter", "--in", (dir / "bad.jsonl").string(), "--out", (dir / "o.jsonl").string()});
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("line 1"), std::string::npos);
}

TEST(Cli, FlagsOverrideConfigFile) {
  const fs::path dir = testing::temp_dir("cli_config");
  std::ofstream(dir / "cfg.json") << R"({"seed": 4, "synth": {"n": 7}})";
  const std::string cfg = (dir / "cfg.json").string();
  EXPECT_EQ(run_cli({"--config", cfg, "synth", "--out", (dir / "a.jsonl").string()}).code, 0);
  EXPECT_EQ(line_count(dir / "a.jsonl"), 7u);
  EXPECT_EQ(run_cli({"--config", cfg, "synth", "--n", "3", "--out", (dir / "b.jsonl").string()}).code, 0);
  EXPECT_EQ(line_count(dir / "b.jsonl"), 3u);
  // The seed also comes from the config.
  EXPECT_EQ(run_cli({"synth", "--seed", "4", "--n", "7", "--out", (dir / "c.jsonl").string()}).code, 0);
  EXPECT_EQ(slurp(dir / "a.jsonl"), slurp(dir / "c.jsonl"));
}

TEST(Cli, FilterDropsCorruptScenarios) {
  const fs::path dir = testing::temp_dir("cli_filter");
  ASSERT_EQ(run_cli({"synth", "--n", "40", "--corrupt-prob", "0.3", "--out", (dir / "s.jsonl").string()}).code, 0);
  const std::string before = slurp(dir / "s.jsonl");
  const RunResult r =
      run_cli({"--json", "filter", "--in", (dir / "s.jsonl").string(), "--out", (dir / "f.jsonl").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const nlohmann::json j = nlohmann::json::parse(r.out);
  EXPECT_GT(j["dropped"].get<int>(), 0);
  EXPECT_EQ(j["kept"].get<std::size_t>(), line_count(dir / "f.jsonl"));
  EXPECT_EQ(slurp(dir / "s.jsonl"), before);
}

TEST(Cli, EndToEndPipeline) {
  const fs::path dir = testing::temp_dir("cli_e2e");
  auto p = [&](const char* name) { return (dir / name).string(); };
  std::ofstream(dir / "cfg.json")
      << R"({"model": {"downscale": 8, "conv_channels": [4, 4, 6, 6], "trunk_dim": 8, "head_hidden": 8,
                       "joint_hidden": 8}})";
  ASSERT_EQ(run_cli({"synth", "--n", "30", "--seed", "2", "--out", p("train.jsonl")}).code, 0);
  ASSERT_EQ(run_cli({"synth", "--n", "8", "--seed", "3", "--out", p("eval.jsonl")}).code, 0);
  RunResult r = run_cli({"--seed", "2", "cluster", "--in", p("train.jsonl"), "--out", p("anchors"), "--k-vehicle",
                         "4", "--k-ped", "3", "--k-cyc", "3"});
  ASSERT_EQ(r.code, 0) << r.err;
  r = run_cli({"--config", p("cfg.json"), "--seed", "2", "--quiet", "train", "--in", p("train.jsonl"), "--anchors",
               p("anchors"), "--out", p("model.ckpt"), "--curve", p("curve.csv"), "--marginal-steps", "3",
               "--joint-steps", "3", "--batch-size", "2"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(line_count(dir / "curve.csv"), 7u);
  EXPECT_EQ(load_checkpoint(dir / "model.ckpt").config.downscale, 8);

  r = run_cli({"predict", "--in", p("eval.jsonl"), "--anchors", p("anchors"), "--checkpoint", p("model.ckpt"),
               "--out", p("pred.jsonl")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(load_predictions(dir / "pred.jsonl").size(), 8u);
  r = run_cli({"predict", "--independent", "--in", p("eval.jsonl"), "--anchors", p("anchors"), "--checkpoint",
               p("model.ckpt"), "--out", p("ind.jsonl")});
  ASSERT_EQ(r.code, 0) << r.err;

  r = run_cli({"--json", "eval", "--pred", p("pred.jsonl"), "--gt", p("eval.jsonl"), "--anchors", p("anchors"),
               "--out", p("report.json")});
  ASSERT_EQ(r.code, 0) << r.err;
  const nlohmann::json rep = nlohmann::json::parse(slurp(dir / "report.json"));
  EXPECT_GE(rep["map"].get<double>(), 0.0);
  EXPECT_LE(rep["map"].get<double>(), 1.0);
  EXPECT_TRUE(rep["loss"].is_object());
  EXPECT_EQ(nlohmann::json::parse(r.out), rep);

  r = run_cli({"ensemble", "--pred", p("pred.jsonl"), p("pred.jsonl"), "--out", p("ens.jsonl")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(dir / "ens.jsonl"), slurp(dir / "pred.jsonl"));

  r = run_cli({"sensitivity", "--pred", p("pred.jsonl"), "--gt", p("eval.jsonl"), "--anchors", p("anchors"),
               "--out", p("sens.json")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(nlohmann::json::parse(slurp(dir / "sens.json")).contains("ratio_cls"));

  r = run_cli({"raster", "--in", p("eval.jsonl"), "--scenario", "1", "--rerasterize", p("pred.jsonl"), "--out",
               p("img.ppm")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(dir / "img.ppm").substr(0, 3), "P6\n");

  r = run_cli({"spline-check", "--out", p("basis.csv")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(line_count(dir / "basis.csv"), 80u);
}

}  // namespace
}  // namespace airsq
