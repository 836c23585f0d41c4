#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mmc/nn.hpp"
#include "mmc/tensor.hpp"

namespace mmc {

struct BackboneConfig {
    int patch_size = 4;
    int embed_dim = 96;
    int depth = 6;
    int heads = 3;
    int image_size = 32;  // training resolution; position embeddings are learned at this grid
    int mlp_ratio = 4;

    static BackboneConfig micro() { return {}; }
    static BackboneConfig small() { return {16, 384, 12, 6, 224, 4}; }
    static BackboneConfig base() { return {16, 768, 12, 12, 224, 4}; }

    int grid() const { return image_size / patch_size; }
    void validate() const;
    bool operator==(const BackboneConfig&) const = default;
};

/// Per-image embeddings: CLS vector and the patch-token grid.
struct FeatureSet {
    std::vector<float> cls;  // C
    Matrix patches;          // P x C, row-major over the patch grid
    int grid_h = 0;
    int grid_w = 0;
    int layer_index = 0;

    int dim() const { return static_cast<int>(cls.size()); }
    std::size_t num_patches() const { return patches.rows(); }
};

struct Patches {
    Matrix vectors;  // P x (channels * ps * ps), channel-major inside each patch
    int grid_h = 0;
    int grid_w = 0;
};

/// Non-overlapping patches in row-major grid order.
Patches patchify(const ImageTensor& image, int patch_size);
/// Inverse of patchify.
ImageTensor unpatchify(const Matrix& vectors, int grid_h, int grid_w, int patch_size, int channels = 3);

/// Bicubic resampling (a = -0.75, half-pixel centres) of a grid x dim table of embeddings.
Matrix interpolate_grid_bicubic(const Matrix& grid_rows, int src_h, int src_w, int dst_h, int dst_w);

struct BackboneCache {
    Matrix patch_vectors;
    std::vector<nn::BlockCache> blocks;
    Matrix pre_norm;
    nn::LayerNormCache norm;
    int batch = 0;
    int tokens = 0;
    int grid_h = 0;
    int grid_w = 0;
};

/// Compact ViT encoder: patch embedding, learned CLS + position embeddings, pre-norm blocks, final LayerNorm.
class VisionTransformer {
  public:
    VisionTransformer() = default;
    explicit VisionTransformer(const BackboneConfig& cfg);

    void init_weights(std::uint64_t seed);
    bool initialized() const { return initialized_; }
    void mark_initialized() { initialized_ = true; }
    const BackboneConfig& config() const { return cfg_; }

    /// Batched forward of equally sized images. Returns (batch*(P+1)) x C tokens after the final
    /// norm applied to the output of block `layer` (1-based; 0 means depth).
    Matrix forward(const std::vector<ImageTensor>& images, int layer = 0, BackboneCache* cache = nullptr) const;
    /// Backpropagates d(tokens) through the cached forward; accumulates parameter gradients.
    void backward(const BackboneCache& cache, const Matrix& d_tokens);

    FeatureSet encode(const ImageTensor& image) const;
    FeatureSet encode_at_layer(const ImageTensor& image, int layer) const;

    void collect(const std::string& prefix, nn::ParamList& out);

    nn::Linear patch_embed;
    nn::Param cls_token;
    nn::Param pos_embed;  // (grid*grid + 1) x C
    std::vector<nn::TransformerBlock> blocks;
    nn::LayerNorm norm;

  private:
    Matrix position_table(int grid_h, int grid_w) const;
    void check_image(const ImageTensor& image) const;

    BackboneConfig cfg_;
    bool initialized_ = false;
};

/// Splits batched token rows into FeatureSets (one per image).
std::vector<FeatureSet> split_features(const Matrix& tokens, int batch, int grid_h, int grid_w, int layer);

}  // namespace mmc
