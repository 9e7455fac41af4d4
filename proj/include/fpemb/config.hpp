#pragma once

#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "fpemb/augment.hpp"
#include "fpemb/model.hpp"
#include "fpemb/synthetic.hpp"
#include "fpemb/trainer.hpp"

namespace fpemb {

// JSON conversion for every configurable block. Parsing is strict: a value of
// the wrong type or a key that is not a field fails with a config error
// naming it; absent keys keep their defaults.
nlohmann::json model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json train_config_to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json augment_config_to_json(const AugmentConfig& config);
AugmentConfig augment_config_from_json(const nlohmann::json& j);
nlohmann::json synth_spec_to_json(const SynthSpec& spec);
SynthSpec synth_spec_from_json(const nlohmann::json& j);

struct DataConfig {
  std::string root;
  std::string layout = "flat";
  int val_impressions = 0;
  int fingers = 10;      // synthetic layout
  int impressions = 8;   // synthetic layout
  std::uint64_t seed = 1;
};

struct EvalConfig {
  std::string protocol = "fvc_standard";
};

struct AppConfig {
  ModelConfig model;
  TrainConfig train;
  AugmentConfig augment;
  DataConfig data;
  EvalConfig eval;
  SynthSpec synth;
};

AppConfig app_config_from_json(const nlohmann::json& j);
nlohmann::json app_config_to_json(const AppConfig& config);

// Reads the JSON file (defaults when path is empty), applies dotted-path
// overrides such as {"train.epochs", "20"} on the raw JSON, then parses.
// Override values are parsed as JSON scalars, falling back to plain strings.
AppConfig load_app_config(
    const std::string& path,
    const std::vector<std::pair<std::string, std::string>>& overrides);

// Builds the dataset index an AppConfig describes (synthetic or on-disk).
DatasetIndex dataset_from_config(const AppConfig& config);

}  // namespace fpemb
