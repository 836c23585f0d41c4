#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "json.hpp"
#include "mmc/training.hpp"

namespace mmc {

nlohmann::json to_json(const BackboneConfig& cfg);
BackboneConfig backbone_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainConfig& cfg);
/// Missing keys keep their defaults; the result is validated.
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Stable identity of a training configuration (FNV-1a over the canonical JSON dump).
std::uint64_t config_hash(const TrainConfig& cfg);
std::string hex64(std::uint64_t v);

/// Everything a `pretrain` run needs, read from one JSON file:
/// {"train": {...}, "dataset": "<dir>", "split": "train", "out_dir": "<dir>"}
struct RunConfig {
    TrainConfig train;
    std::filesystem::path dataset;
    std::string split = "train";
    std::filesystem::path out_dir = "runs/mmc";
};

RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& cfg);

}  // namespace mmc
