#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "rfsr/data.hpp"
#include "rfsr/diffusion.hpp"
#include "rfsr/eval.hpp"
#include "rfsr/reward.hpp"
#include "rfsr/style.hpp"
#include "rfsr/trainer.hpp"

namespace rfsr {

// Config files are plain text:
//
//   # comment
//   seed = 3
//   [train]
//   learning_rate = 5e-6
//   [data.degradation]
//   second_order = false
//
// A [section] prefixes the keys below it; keys may themselves be dotted.
// Values are JSON when they parse as JSON (numbers, true/false, quoted
// strings, arrays, objects) and bare strings otherwise. Every key must
// exist in the default schema and keep its type.

struct RewardSpec {
  std::string id;
  std::string kind;
  std::filesystem::path weights_path;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path output_dir;
  std::string schedule_preset;
  TrainConfig train;
  ModelConfig model;
  std::vector<RewardSpec> rewards;
  ExtractorConfig style;
  DatasetConfig data;
  std::vector<std::string> eval_metrics;
  std::uint64_t eval_seed = 0;
  MetricOptions metric_options;

  nlohmann::json resolved;  // merged tree the fields above were read from
};

nlohmann::json default_config_json();

// Parses config text into a nested tree (no schema check). `origin` names
// the source in error messages.
nlohmann::json parse_config_text(const std::string& text, const std::string& origin);

// Overlays `overlay` on `base`, rejecting unknown keys and type changes.
void merge_config(nlohmann::json& base, const nlohmann::json& overlay, const std::string& origin);

// Defaults <- file <- "key=value" overrides, then typed extraction and
// validation. A missing file raises ConfigError naming the path.
RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});
RunConfig run_config_from_text(const std::string& text, const std::vector<std::string>& overrides = {});
RunConfig run_config_from_json(const nlohmann::json& merged, const nlohmann::json& explicit_keys);

// Canonical text form; parsing it yields the same RunConfig.
std::string resolved_config_text(const RunConfig& config);
std::string config_hash(const RunConfig& config);

nlohmann::json degradation_to_json(const DegradationConfig& cfg);
DegradationConfig degradation_from_json(const nlohmann::json& j);

// Construction of the run's components.
std::unique_ptr<DiffusionModel> build_model(const RunConfig& config);
// Registers every configured reward model; a nonzero loss weight whose slot
// has no model raises ConfigError.
std::shared_ptr<RewardRegistry> build_rewards(const RunConfig& config);
std::shared_ptr<FeatureExtractor> build_extractor(const RunConfig& config);

}  // namespace rfsr
