#include "mmc/feature_cache.hpp"

#include <cmath>

#include "mmc/checkpoint.hpp"
#include "mmc/errors.hpp"

namespace fs = std::filesystem;

namespace mmc {

namespace {

constexpr const char* kFormat = "mmc-feature-cache-v1";

Manifest key_manifest(const CacheKey& key) {
    return {{"format", kFormat},
            {"checkpoint_hash", key.checkpoint_hash},
            {"resolution", std::to_string(key.resolution)},
            {"layer", std::to_string(key.layer)}};
}

CacheKey read_key(const fs::path& file) {
    const Manifest m = read_manifest(file);
    if (manifest_value(m, "format") != kFormat) throw LoadError(file.string(), "not a feature cache");
    return {manifest_value(m, "checkpoint_hash"), std::stoi(manifest_value(m, "resolution")), std::stoi(manifest_value(m, "layer"))};
}

std::string describe(const CacheKey& k) {
    return "checkpoint " + k.checkpoint_hash + ", resolution " + std::to_string(k.resolution) + ", layer " + std::to_string(k.layer);
}

}  // namespace

CacheReport cache_features(const std::vector<DatasetItem>& items, const VisionTransformer& model, const CacheKey& key,
                           const fs::path& dir, bool overwrite) {
    if (key.resolution <= 0 || key.resolution % model.config().patch_size != 0)
        throw InvalidInput("cache resolution must be a positive multiple of the patch size");
    const fs::path key_file = dir / "cache.txt";
    if (fs::exists(key_file)) {
        const CacheKey existing = read_key(key_file);
        if (!(existing == key)) {
            if (!overwrite)
                throw CacheConflict("feature cache at " + dir.string() + " was built for " + describe(existing) + ", requested " +
                                    describe(key) + "; pass --overwrite to rebuild");
            fs::remove_all(dir);
        }
    }
    fs::create_directories(dir / "entries");
    if (!fs::exists(key_file)) write_manifest(key_file, key_manifest(key));

    CacheReport report;
    for (const auto& item : items) {
        const fs::path entry = dir / "entries" / item.id;
        if (fs::exists(entry / "manifest.txt")) {
            ++report.skipped;
            continue;
        }
        const ImageTensor image = resize_bilinear(item.image, key.resolution, key.resolution);
        const FeatureSet f = key.layer == 0 ? model.encode(image) : model.encode_at_layer(image, key.layer);
        for (float v : f.patches.span())
            if (!std::isfinite(v)) throw InvalidInput("non-finite feature for item '" + item.id + "'");
        write_directory_atomically(entry, [&](const fs::path& tmp) {
            fs::create_directories(tmp / "tensors");
            write_f32_blob(tmp / "tensors" / "cls.bin", f.cls);
            write_f32_blob(tmp / "tensors" / "patches.bin", f.patches.span());
            write_manifest(tmp / "manifest.txt",
                           {{"id", item.id},
                            {"checkpoint_hash", key.checkpoint_hash},
                            {"resolution", std::to_string(key.resolution)},
                            {"layer", std::to_string(f.layer_index)},
                            {"grid_h", std::to_string(f.grid_h)},
                            {"grid_w", std::to_string(f.grid_w)},
                            {"tensor.cls", "1x" + std::to_string(f.cls.size())},
                            {"tensor.patches", std::to_string(f.patches.rows()) + "x" + std::to_string(f.patches.cols())}});
        });
        ++report.written;
    }
    return report;
}

FeatureCache::FeatureCache(fs::path dir) : dir_(std::move(dir)) {
    if (!fs::exists(dir_ / "cache.txt")) throw LoadError(dir_.string(), "no feature cache here");
    key_ = read_key(dir_ / "cache.txt");
}

bool FeatureCache::contains(const std::string& id) const { return fs::exists(dir_ / "entries" / id / "manifest.txt"); }

FeatureSet FeatureCache::read(const std::string& id) const {
    const fs::path entry = dir_ / "entries" / id;
    if (!fs::exists(entry / "manifest.txt")) throw LoadError(entry.string(), "no cached features for '" + id + "'");
    const Manifest m = read_manifest(entry / "manifest.txt");
    if (manifest_value(m, "checkpoint_hash") != key_.checkpoint_hash) throw CacheConflict("cache entry '" + id + "' has a stale checkpoint hash");
    FeatureSet f;
    f.grid_h = std::stoi(manifest_value(m, "grid_h"));
    f.grid_w = std::stoi(manifest_value(m, "grid_w"));
    f.layer_index = std::stoi(manifest_value(m, "layer"));
    const std::string shape = manifest_value(m, "tensor.patches");
    const std::size_t rows = std::stoul(shape.substr(0, shape.find('x'))), cols = std::stoul(shape.substr(shape.find('x') + 1));
    f.cls = read_f32_blob(entry / "tensors" / "cls.bin", cols);
    f.patches.resize(rows, cols);
    f.patches.storage() = read_f32_blob(entry / "tensors" / "patches.bin", rows * cols);
    return f;
}

FeatureProvider FeatureCache::provider() const {
    return [cache = *this](const std::string& id, const ImageTensor&) { return cache.read(id); };
}

}  // namespace mmc
