// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The dualformer Authors.
//
// Drives the command-line binary as a subprocess and checks exit codes and
// the files it writes.

#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "dualformer/analysis.h"
#include "dualformer/io.h"
#include "dualformer/model.h"
#include "dualformer/rng.h"
#include "dualformer/training.h"

#ifndef DF_CLI_PATH
#error "DF_CLI_PATH must point at the command-line binary"
#endif

namespace dualformer {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() /
           ("df_cli_" + std::string(info->name()) + "_" + std::to_string(::getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  // Runs the binary inside the scratch directory; stdout lands in out_.
  int run(const std::string& args) {
    const fs::path log = dir_ / "stdout.txt";
    const std::string cmd = "cd '" + dir_.string() + "' && '" + DF_CLI_PATH + "' " + args +
                            " > '" + log.string() + "' 2>&1";
    const int status = std::system(cmd.c_str());
    std::ifstream in(log);
    std::stringstream ss;
    ss << in.rdbuf();
    out_ = ss.str();
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  json read_json(const std::string& name) const {
    std::ifstream in(dir_ / name);
    return json::parse(in);
  }

  std::string bytes(const std::string& name) const {
    std::ifstream in(dir_ / name, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  void write_ppm_bytes(const std::string& name, int w, int h, std::uint64_t seed) const {
    Rng rng(seed);
    std::ofstream out(dir_ / name, std::ios::binary);
    out << "P6\n" << w << " " << h << "\n255\n";
    for (int i = 0; i < w * h * 3; ++i) out.put(static_cast<char>(rng.below(256)));
  }

  fs::path dir_;
  std::string out_;
};

TEST_F(Cli, AnalyzeFullWithVariants) {
  ASSERT_EQ(run("analyze --resolution 256 --variant fusion=concat --variant lfe_ca=off "
                "--out report.json"),
            0)
      << out_;
  const json j = read_json("report.json");
  const auto direct = analysis::cost_report(ModelConfig::full(), 256, 256);
  EXPECT_EQ(j["totals"]["params"].get<std::int64_t>(), direct.total_params);
  EXPECT_EQ(j["totals"]["macs"].get<std::int64_t>(), direct.total_macs);
  EXPECT_EQ(j["config_hash"], hash_hex(config_hash(ModelConfig::full())));
  ASSERT_EQ(j["variants"].size(), 3u);
  EXPECT_LT(j["variants"][1]["total_params"].get<std::int64_t>(), direct.total_params);
  EXPECT_LT(j["variants"][2]["total_params"].get<std::int64_t>(), direct.total_params);
  EXPECT_NE(out_.find(direct.config_hash), std::string::npos);
}

TEST_F(Cli, AnalyzeTinyTotalsEqualParameterStore) {
  ASSERT_EQ(run("analyze --preset tiny --out r.json"), 0) << out_;
  const ParamStore ps = Model(ModelConfig::tiny()).init_params(Rng(0), DType::kF32);
  EXPECT_EQ(read_json("r.json")["totals"]["params"].get<std::int64_t>(), ps.total_scalars());
}

TEST_F(Cli, AnalyzeIsIdempotent) {
  ASSERT_EQ(run("analyze --preset tiny --variant ffn=mlp --out a.json"), 0);
  ASSERT_EQ(run("analyze --preset tiny --variant ffn=mlp --out b.json"), 0);
  EXPECT_EQ(bytes("a.json"), bytes("b.json"));
}

TEST_F(Cli, ConfigErrorsExitTwo) {
  std::ofstream(dir_ / "typo.json") << R"({"latent_dimm": 48})";
  EXPECT_EQ(run("analyze --config typo.json"), 2);
  EXPECT_NE(out_.find("latent_dimm"), std::string::npos);
  std::ofstream(dir_ / "broken.json") << "{";
  EXPECT_EQ(run("analyze --config broken.json"), 2);
  EXPECT_EQ(run("analyze --config missing.json"), 2);
  EXPECT_EQ(run("analyze --variant fusion=bogus"), 2);
  EXPECT_EQ(run("analyze --resolution 100"), 2);
  EXPECT_EQ(run("no-such-command"), 2);
  EXPECT_EQ(run("gradcheck --scope everything"), 2);
}

TEST_F(Cli, AnalyzeAcceptsTrainingConfigFile) {
  std::ofstream(dir_ / "run.json") << R"({"model": {"heads": 1}, "steps": 5})";
  ASSERT_EQ(run("analyze --preset tiny --config run.json --out r.json"), 0) << out_;
  ModelConfig c = ModelConfig::tiny();
  c.heads = 1;
  EXPECT_EQ(read_json("r.json")["config_hash"], hash_hex(config_hash(c)));
}

TEST_F(Cli, GradcheckOpsPassAndCorruptedUnitFails) {
  EXPECT_EQ(run("gradcheck --scope op"), 0) << out_;
  EXPECT_EQ(out_.find("FAIL"), std::string::npos);
  EXPECT_NE(out_.find("worst_rel"), std::string::npos);
  EXPECT_EQ(run("gradcheck --scope op --inject-fault"), 1);
  EXPECT_NE(out_.find("FAIL op     corrupted_square"), std::string::npos) << out_;
}

TEST_F(Cli, GradcheckModelScopePasses) {
  EXPECT_EQ(run("gradcheck --scope model --out g.json"), 0) << out_;
  const json j = read_json("g.json");
  ASSERT_EQ(j["units"].size(), 1u);
  EXPECT_LE(j["units"][0]["max_rel_error"].get<double>(), 1e-3);
}

TEST_F(Cli, ErfStemSupportIsThreeByThree) {
  ASSERT_EQ(run("erf --stage stem --size 32 --probes 4 --out map.dft --summary s.json"), 0)
      << out_;
  const json s = read_json("s.json");
  EXPECT_DOUBLE_EQ(s["support_fraction"].get<double>(), 9.0 / (32 * 32));
  EXPECT_EQ(s["analytic_bound"].get<int>(), 3);
  EXPECT_TRUE(s["within_window"].get<bool>());
  const Tensor map = io::load_tensor(dir_ / "map.dft");
  EXPECT_EQ(map.shape(), (Shape{1, 1, 32, 32}));
}

TEST_F(Cli, ErfAfterOneTransformerBlockIsGlobal) {
  ASSERT_EQ(run("erf --stage latent_after_htb1 --size 32 --probes 2 --summary s.json"), 0)
      << out_;
  const json s = read_json("s.json");
  EXPECT_DOUBLE_EQ(s["support_fraction"].get<double>(), 1.0);
  EXPECT_EQ(s["analytic_bound"], "global");
}

TEST_F(Cli, ErfUnknownStageExitsTwo) {
  EXPECT_EQ(run("erf --stage enc9"), 2);
  EXPECT_NE(out_.find("latent_after_htb1"), std::string::npos);
}

TEST_F(Cli, SweepWritesThreeRowsAndRatio) {
  ASSERT_EQ(run("sweep --resolutions 128,192,256 --out sweep.json"), 0) << out_;
  const json j = read_json("sweep.json");
  ASSERT_EQ(j["rows"].size(), 3u);
  const double ratio = j["ratio"]["macs_ratio"].get<double>();
  EXPECT_GE(ratio, 3.9);
  EXPECT_LE(ratio, 4.3);
  EXPECT_TRUE(j["monotone"].get<bool>());
  EXPECT_EQ(run("sweep --resolutions 128,abc"), 2);
}

TEST_F(Cli, ForwardZeroInitIsIdentityWithPadding) {
  write_ppm_bytes("in.ppm", 30, 21, 7);
  ASSERT_EQ(run("forward --init zero --in in.ppm --out out.ppm"), 0) << out_;
  EXPECT_EQ(bytes("in.ppm"), bytes("out.ppm"));
  EXPECT_NE(out_.find("reflect-padded"), std::string::npos);
  EXPECT_EQ(run("forward --init zero --in in.ppm --no-pad"), 2);
}

TEST_F(Cli, ForwardRejectsMalformedImage) {
  std::ofstream(dir_ / "bad.ppm", std::ios::binary) << "P6\n4 4\n255\nshort";
  EXPECT_EQ(run("forward --in bad.ppm --out x.ppm"), 2);
  std::ofstream(dir_ / "p3.ppm") << "P3\n1 1\n255\n0 0 0\n";
  EXPECT_EQ(run("forward --in p3.ppm"), 2);
  EXPECT_EQ(run("forward --in absent.ppm"), 2);
  EXPECT_FALSE(fs::exists(dir_ / "x.ppm"));
}

TEST_F(Cli, TrainZeroStepsSavesInitialisation) {
  ASSERT_EQ(run("train --steps 0 --seed 5 --out ck.dfck"), 0) << out_;
  training::TrainConfig cfg;
  cfg.steps = 0;
  cfg.seed = 5;
  const auto init = training::initial_state(cfg);
  const io::Checkpoint ck = io::load_checkpoint(dir_ / "ck.dfck");
  EXPECT_TRUE(ck.params.identical(init.params));
  EXPECT_EQ(ck.config, ModelConfig::tiny());
  const json meta = read_json("ck.dfck.meta.json");
  EXPECT_EQ(meta["config_hash"], hash_hex(config_hash(ModelConfig::tiny())));
  EXPECT_GE(meta["threads"].get<int>(), 1);
}

TEST_F(Cli, TrainResumeIsBitwise) {
  const std::string common = "train --steps 6 --eval-every 3 --size 16 --batch 2 ";
  ASSERT_EQ(run(common + "--out full.dfck --log full.jsonl"), 0) << out_;
  ASSERT_EQ(run(common + "--stop-at 3 --out part.dfck --log part.jsonl"), 0) << out_;
  ASSERT_EQ(run("train --resume part.dfck --out part.dfck --log part.jsonl"), 0) << out_;
  EXPECT_EQ(bytes("full.dfck"), bytes("part.dfck"));
  EXPECT_EQ(bytes("full.dfck.optim"), bytes("part.dfck.optim"));
  EXPECT_EQ(bytes("full.jsonl"), bytes("part.jsonl"));
  EXPECT_EQ(run("train --resume part.dfck --steps 9 --out x.dfck"), 2);
}

TEST_F(Cli, TrainDivergenceExitsThree) {
  EXPECT_EQ(run("train --steps 3 --lr0 1e30 --out nan.dfck"), 3) << out_;
  EXPECT_NE(out_.find("diverged"), std::string::npos);
  EXPECT_FALSE(fs::exists(dir_ / "nan.dfck"));
}

TEST_F(Cli, TrainFlagsReachTheConfig) {
  ASSERT_EQ(run("train --print-config --degrade rain --rain-streaks 3 --lambda-perceptual 0 "
                "--perceptual-layers 2,4 --beta2 0.99 --cycles 2 --snow-size 2.5"),
            0)
      << out_;
  const auto cfg = training::train_config_from_json(out_);
  EXPECT_EQ(cfg.degrade.kind, training::DegradeKind::kRain);
  EXPECT_EQ(cfg.degrade.rain_streaks, 3);
  EXPECT_EQ(cfg.loss.lambda_perceptual, 0.0);
  EXPECT_EQ(cfg.model.loss_lambda[1], 0.0);
  EXPECT_EQ(cfg.loss.perceptual_layers, (std::vector<int>{2, 4}));
  EXPECT_EQ(cfg.adam.beta2, 0.99);
  EXPECT_EQ(cfg.schedule.cycles, 2);
  EXPECT_EQ(cfg.degrade.snow_size, 2.5);
  EXPECT_EQ(run("train --print-config --size 20"), 2);
  EXPECT_EQ(run("train --print-config --beta1 1.5"), 2);
}

// The PSNR that forward reports for the trained checkpoint on the dumped
// held-out set must agree with the last held-out evaluation in the log.
TEST_F(Cli, ForwardMatchesTrainingLog) {
  ASSERT_EQ(run("train --steps 8 --eval-every 4 --out ck.dfck --log log.jsonl "
                "--dump-heldout held"),
            0)
      << out_;
  std::ifstream log(dir_ / "log.jsonl");
  std::string line, last;
  while (std::getline(log, line)) last = line;
  const double logged = json::parse(last)["psnr"].get<double>();
  ASSERT_EQ(run("forward --weights ck.dfck --in held/degraded.dft --ref held/clean.dft"), 0)
      << out_;
  const auto pos = out_.find("psnr_restored ");
  ASSERT_NE(pos, std::string::npos);
  const double reported = std::stod(out_.substr(pos + 14));
  EXPECT_NEAR(reported, logged, 0.01);
}

TEST_F(Cli, EvalIdenticalDirectories) {
  fs::create_directories(dir_ / "a");
  fs::create_directories(dir_ / "b");
  for (int i = 0; i < 3; ++i) {
    write_ppm_bytes("a/img" + std::to_string(i) + ".ppm", 16, 16, 10 + i);
    fs::copy_file(dir_ / ("a/img" + std::to_string(i) + ".ppm"),
                  dir_ / ("b/img" + std::to_string(i) + ".ppm"));
  }
  ASSERT_EQ(run("eval --pred a --ref b --out e.json"), 0) << out_;
  const json j = read_json("e.json");
  EXPECT_EQ(j["mean_psnr"], "inf");
  EXPECT_EQ(j["mean_ssim"].get<double>(), 1.0);
  EXPECT_EQ(j["images"].size(), 3u);
  ASSERT_EQ(run("eval --pred a --ref b --y --out y.json"), 0) << out_;
  EXPECT_EQ(read_json("y.json")["mode"], "y");
  fs::remove(dir_ / "b/img2.ppm");
  EXPECT_EQ(run("eval --pred a --ref b"), 2);
}

}  // namespace
}  // namespace dualformer
