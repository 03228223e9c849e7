#pragma once

// JSON forms of the model, training and ablation settings. Readers reject
// unknown keys and fill missing ones with defaults.

#include <filesystem>

#include <nlohmann/json.hpp>

#include "freeup/training.hpp"

namespace freeup::config {

nlohmann::json to_json(const model::AEConfig& c);
nlohmann::json to_json(const training::TrainConfig& c);
nlohmann::json to_json(const training::Ablation& a);

model::AEConfig ae_config_from_json(const nlohmann::json& j);
training::TrainConfig train_config_from_json(const nlohmann::json& j);
training::Ablation ablation_from_json(const nlohmann::json& j);

/// Run configuration file: {"train": {...}, "model": {...}, "ablation": {...}}.
struct RunConfig {
  training::TrainConfig train;
  model::AEConfig model;
  training::Ablation ablation;
};

nlohmann::json to_json(const RunConfig& c);
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig read_run_config(const std::filesystem::path& path);

/// Reduced widths and epochs that train in minutes on a single CPU core.
RunConfig desk_preset();

/// 64-bit FNV-1a over the compact JSON dump.
std::uint64_t config_hash(const nlohmann::json& j);

}  // namespace freeup::config
