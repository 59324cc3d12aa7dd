#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "rfsr/cli.hpp"
#include "rfsr/config.hpp"
#include "rfsr/errors.hpp"
#include "rfsr/image_io.hpp"
#include "rfsr/util.hpp"

using namespace rfsr;
namespace fs = std::filesystem;

namespace {

const fs::path kPresets = RFSR_PRESET_DIR;

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("rfsr_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

struct Run {
  int code = -1;
  std::string output;  // stdout and stderr together
};

// Runs the installed binary so exit codes and messages are observed exactly
// as a user would see them.
Run run_rfsr(const std::string& args) {
  const auto log = fs::temp_directory_path() / "rfsr_cli_output.txt";
  const std::string cmd = std::string("\"") + RFSR_CLI_PATH + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  Run r;
  const int status = std::system(cmd.c_str());
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  r.output = ss.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Config, PresetsParse) {
  for (const char* name : {"seesr_rfsr", "diffbir_rfsr", "pasd_rfsr", "toy"})
    EXPECT_NO_THROW(load_run_config(kPresets / (std::string(name) + ".cfg"))) << name;
  const auto pasd = load_run_config(kPresets / "pasd_rfsr.cfg");
  EXPECT_EQ(pasd.train.schedule, TimestepSchedule::preset("pasd"));
}

TEST(Config, SeesrPresetValues) {
  const auto cfg = load_run_config(kPresets / "seesr_rfsr.cfg");
  EXPECT_EQ(cfg.train.learning_rate, 5e-6);
  EXPECT_EQ(cfg.train.batch_size, 8);
  EXPECT_EQ(cfg.train.iterations, 10000);
  EXPECT_EQ(cfg.train.ema_decay, 0.999);
  EXPECT_EQ(cfg.train.weights.lambda_dwt, 5e-4);
  EXPECT_EQ(cfg.train.weights.reward_weights.lambda_clipiqa, 5e-5);
  EXPECT_EQ(cfg.train.weights.reward_weights.lambda_iw, 5e-6);
  EXPECT_EQ(cfg.train.weights.lambda_r, 5e-6);
  EXPECT_EQ(cfg.train.schedule.st1, 20);
  EXPECT_EQ(cfg.train.schedule.st2, 40);
  EXPECT_EQ(cfg.train.schedule.st_latest, 50);
  EXPECT_EQ(cfg.model.kind, "seesr");
}

TEST(Config, SectionsCommentsAndOverrides) {
  const auto cfg = run_config_from_text(
      "# c\nseed = 3\n[train]\nlearning_rate = 2e-3\n[model]\nkind = toy\n[loss]\nlambda_clipiqa = 0\nlambda_iw = 0\n",
      {"train.batch_size=4"});
  EXPECT_EQ(cfg.seed, 3u);
  EXPECT_EQ(cfg.train.learning_rate, 2e-3);
  EXPECT_EQ(cfg.train.batch_size, 4);
}

TEST(Config, RejectsUnknownKeysAndTypeChanges) {
  EXPECT_THROW(run_config_from_text("[train]\nlearnig_rate = 1e-3\n"), ConfigError);
  EXPECT_THROW(run_config_from_text("[train]\niterations = many\n"), ConfigError);
  EXPECT_THROW(run_config_from_text("[train]\nbatch_size = 0\n"), ConfigError);
  EXPECT_THROW(run_config_from_text("[schedule]\npreset = sd3\n"), ConfigError);
  EXPECT_THROW(run_config_from_text("", {"nonsense"}), ConfigError);
}

TEST(Config, MissingFileNamesPath) {
  try {
    load_run_config("/nonexistent/run.cfg");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/run.cfg"), std::string::npos);
  }
}

TEST(Config, ResolvedTextRoundTrips) {
  const auto cfg = load_run_config(kPresets / "toy.cfg", {"train.iterations=7"});
  const auto text = resolved_config_text(cfg);
  const auto again = run_config_from_text(text);
  EXPECT_EQ(resolved_config_text(again), text);
  EXPECT_EQ(config_hash(again), config_hash(cfg));
  EXPECT_EQ(again.train.iterations, 7);
  EXPECT_NE(config_hash(load_run_config(kPresets / "toy.cfg")), config_hash(cfg));
}

TEST(Config, NonzeroRewardWeightNeedsModel) {
  // Caught at load time, before any model is built.
  EXPECT_THROW(load_run_config(kPresets / "toy.cfg", {"reward.models=[]"}), ConfigError);
  const auto cfg = load_run_config(kPresets / "toy.cfg", {"reward.models=[]", "loss.lambda_clipiqa=0", "loss.lambda_iw=0"});
  EXPECT_FALSE(build_rewards(cfg)->contains("clipiqa"));
}

TEST(Config, DegradationJsonRoundTrip) {
  const auto d = DegradationConfig::defaults();
  EXPECT_EQ(degradation_to_json(degradation_from_json(degradation_to_json(d))), degradation_to_json(d));
}

TEST(Cli, TrainToyWritesCheckpointAndMetrics) {
  const auto out = fresh_dir("train");
  const auto r = run_rfsr("train --config \"" + (kPresets / "toy.cfg").string() + "\" --out \"" + out.string() +
                          "\" --set train.iterations=4 --set train.checkpoint_every=2");
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_TRUE(fs::exists(out / "checkpoints" / "iter_000004" / "params"));
  EXPECT_TRUE(fs::exists(out / "config.resolved"));
  std::ifstream metrics(out / "metrics.csv");
  int lines = 0;
  for (std::string line; std::getline(metrics, line);) ++lines;
  EXPECT_EQ(lines, 5);

  const auto report = out / "report.csv";
  fs::create_directories(out / "evalset");
  write_png(out / "evalset" / "a.png", synthetic_image(16, 16, 1));
  const auto e = run_rfsr("eval --model \"" + (out / "checkpoints" / "iter_000004").string() + "\" --data \"" +
                          (out / "evalset").string() + "\" --out \"" + report.string() + "\"");
  EXPECT_EQ(e.code, 0) << e.output;
  EXPECT_TRUE(fs::exists(report));

  const auto w = out / "ema.rfsr";
  EXPECT_EQ(run_rfsr("export-ema --checkpoint \"" + (out / "checkpoints" / "iter_000004").string() + "\" --out \"" +
                     w.string() + "\"")
                .code,
            0);
  EXPECT_TRUE(fs::exists(w));
}

TEST(Cli, MissingConfigExitsOneNamingPath) {
  const auto r = run_rfsr("train --config /nonexistent/missing.cfg");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("/nonexistent/missing.cfg"), std::string::npos) << r.output;
}

TEST(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(run_rfsr("frobnicate").code, 1);
  EXPECT_EQ(run_rfsr("").code, 1);
  EXPECT_EQ(run_rfsr("analyze --model m --lr a.png --out t.csv").code, 1);
  const char* argv[] = {"rfsr", "nope"};
  set_log_quiet(true);
  EXPECT_EQ(run_cli(2, argv), 1);
}

TEST(Cli, ExternalModelWithoutCheckpointExitsTwo) {
  const auto out = fresh_dir("seesr");
  const auto r = run_rfsr("train --config \"" + (kPresets / "seesr_rfsr.cfg").string() + "\" --out \"" +
                          out.string() + "\"");
  EXPECT_EQ(r.code, 2) << r.output;
}

TEST(Cli, DegradeIsBitwiseDeterministic) {
  const auto in = fresh_dir("degrade_in");
  for (int i = 0; i < 2; ++i) write_png(in / ("g" + std::to_string(i) + ".png"), synthetic_image(48, 48, 10 + i));
  const auto a = fresh_dir("degrade_a"), b = fresh_dir("degrade_b");
  const std::string common = "degrade --in \"" + in.string() + "\" --config \"" + (kPresets / "toy.cfg").string() +
                             "\" --seed 5 --out ";
  ASSERT_EQ(run_rfsr(common + "\"" + a.string() + "\"").code, 0);
  ASSERT_EQ(run_rfsr(common + "\"" + b.string() + "\"").code, 0);
  EXPECT_EQ(slurp(a / "manifest.csv"), slurp(b / "manifest.csv"));
  for (const char* f : {"lr/g0.png", "lr/g1.png", "gt/g0.png"}) {
    EXPECT_FALSE(slurp(a / f).empty()) << f;
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  }
  EXPECT_EQ(read_png(a / "lr" / "g0.png").height(), 12);
}
