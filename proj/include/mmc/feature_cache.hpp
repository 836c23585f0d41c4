#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mmc/dataset.hpp"
#include "mmc/prompt_segmentation.hpp"
#include "mmc/vit.hpp"

namespace mmc {

// Layout (same blob convention as checkpoints):
//   <dir>/cache.txt                       format, checkpoint_hash, resolution, layer
//   <dir>/entries/<id>/manifest.txt       id, grid, checkpoint_hash, tensor.cls, tensor.patches
//   <dir>/entries/<id>/tensors/*.bin

struct CacheKey {
    std::string checkpoint_hash;
    int resolution = 0;
    int layer = 0;  // 0 = last block
    bool operator==(const CacheKey&) const = default;
};

struct CacheReport {
    std::size_t written = 0;
    std::size_t skipped = 0;
};

/// Encodes every item (resized to key.resolution) not yet cached. An existing cache with a different key
/// raises CacheConflict unless `overwrite`, which clears it first. Entries are published atomically.
CacheReport cache_features(const std::vector<DatasetItem>& items, const VisionTransformer& model, const CacheKey& key,
                           const std::filesystem::path& dir, bool overwrite = false);

class FeatureCache {
  public:
    /// Throws LoadError when `dir` holds no cache.
    explicit FeatureCache(std::filesystem::path dir);

    const CacheKey& key() const { return key_; }
    bool contains(const std::string& id) const;
    FeatureSet read(const std::string& id) const;
    /// Provider for evaluation code; missing ids raise LoadError.
    FeatureProvider provider() const;

  private:
    std::filesystem::path dir_;
    CacheKey key_;
};

}  // namespace mmc
