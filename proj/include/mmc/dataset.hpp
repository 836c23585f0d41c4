#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mmc/tensor.hpp"
#include "mmc/video.hpp"

namespace mmc {

constexpr int kManifestSchemaVersion = 1;

struct ManifestItem {
    std::string id;
    std::string image;  // relative to the dataset root
    std::string mask;   // optional single-channel label raster, relative to the root
    int class_label = -1;  // optional image-level category
};

/// manifest.json:
/// {"schema_version": 1, "splits": {"train": [{"id", "image", "mask", "class"}...], ...}}
struct DatasetManifest {
    std::filesystem::path root;
    int schema_version = kManifestSchemaVersion;
    std::map<std::string, std::vector<ManifestItem>> splits;

    const std::vector<ManifestItem>& split(const std::string& name) const;
};

DatasetManifest read_dataset_manifest(const std::filesystem::path& root_or_file);
void write_dataset_manifest(const DatasetManifest& manifest);

struct DatasetItem {
    std::string id;
    ImageTensor image;
    LabelGrid labels;  // empty (0x0) when the item has no mask
    int class_label = -1;
};

/// Decodes every item of `split`. With a seed, items come in a seed-determined permutation of the
/// manifest order. All unreadable files are reported together in one LoadError naming the first.
std::vector<DatasetItem> load_dataset(const DatasetManifest& manifest, const std::string& split,
                                      std::optional<std::uint64_t> seed = std::nullopt);

/// Image-level category: the item's class if given, else the most frequent non-zero mask label.
int image_class(const DatasetItem& item);

/// Video sequences: <dir>/<name>/frames/*.png and <dir>/<name>/masks/*.png (frame 0 required;
/// a mask for every frame enables scoring). Sequences sorted by name, frames by file name.
std::vector<FrameSequence> load_sequences(const std::filesystem::path& dir);

}  // namespace mmc
