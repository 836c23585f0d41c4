#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mmc/training.hpp"

namespace mmc {

// On-disk convention shared by checkpoints and the feature cache:
//   manifest.txt   key=value lines (order preserved)
//   tensors/<name>.bin   little-endian float32, row-major, one blob per tensor
// Tensor entries appear in the manifest as `tensor.<name>=<rows>x<cols>`.

using Manifest = std::vector<std::pair<std::string, std::string>>;

void write_manifest(const std::filesystem::path& path, const Manifest& entries);
Manifest read_manifest(const std::filesystem::path& path);
std::string manifest_value(const Manifest& m, const std::string& key);

void write_f32_blob(const std::filesystem::path& path, std::span<const float> values);
std::vector<float> read_f32_blob(const std::filesystem::path& path, std::size_t expected_count);

/// Writes a new directory atomically (build in a sibling temp dir, then rename).
template <class Writer>
void write_directory_atomically(const std::filesystem::path& dir, Writer&& writer);

struct CheckpointInfo {
    std::filesystem::path dir;
    Manifest manifest;
    TrainConfig config;
    long step = 0;
    std::string params_hash;
};

/// Saves student, teacher, optimizer moments and schedule state into out_dir/step_XXXXXXX.
std::filesystem::path save_checkpoint(const TrainState& state, const std::filesystem::path& out_dir);
/// Restores a state that continues training bit-compatibly.
TrainState load_checkpoint(const std::filesystem::path& dir);
CheckpointInfo read_checkpoint_info(const std::filesystem::path& dir);

/// Encoder used for evaluation: the EMA teacher by default.
VisionTransformer load_backbone(const std::filesystem::path& dir, bool teacher = true);
/// Student backbone plus heads (for reconstruction diagnostics).
StudentNetwork load_student(const std::filesystem::path& dir);

/// Highest step_* directory under out_dir, or `path` itself if it is a checkpoint.
std::filesystem::path resolve_checkpoint(const std::filesystem::path& path);

/// Identity of a checkpoint: its params_hash manifest entry.
std::string checkpoint_hash(const std::filesystem::path& dir);

}  // namespace mmc

#include "mmc/checkpoint_impl.hpp"
