#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "mmc/tensor.hpp"

namespace mmc {

struct PhotometricConfig {
    float brightness = 0.4f;
    float contrast = 0.4f;
    float saturation = 0.4f;
    float jitter_prob = 0.8f;
    float blur_prob = 1.0f;
    // Gaussian sigma range in pixels at 224 resolution; scaled linearly with image size.
    float blur_sigma_min = 0.1f;
    float blur_sigma_max = 2.0f;
    float solarize_prob = 0.2f;
    float solarize_threshold = 0.5f;

    static PhotometricConfig identity() { return {0.f, 0.f, 0.f, 0.f, 0.f, 0.f, 0.f, 0.f, 0.5f}; }
};

/// Colour jitter (brightness, contrast, saturation), Gaussian blur, solarisation; output clipped to [0,1].
ImageTensor photometric_augment(const ImageTensor& image, std::uint64_t seed, const PhotometricConfig& cfg = {});

struct MaskRect {
    int top = 0, left = 0, height = 0, width = 0;
};

struct BlockMask {
    int grid_h = 0;
    int grid_w = 0;
    std::vector<std::uint8_t> cells;  // 1 = masked, row-major
    std::vector<MaskRect> blocks;     // rectangles whose union is `cells`

    std::size_t masked_count() const;
    double masked_fraction() const { return cells.empty() ? 0.0 : static_cast<double>(masked_count()) / cells.size(); }
};

constexpr double kMinBlockAspect = 0.3;
constexpr double kMaxBlockAspect = 1.0 / 0.3;

/// Block-wise masking: rectangles of random area and aspect until round(ratio * cells) are covered.
BlockMask block_mask(int grid_h, int grid_w, double ratio, std::uint64_t seed);

enum class FillMode { noise, donor_image };

struct MaskSpec {
    BlockMask patch_mask;
    int patch_size = 1;
    FillMode fill = FillMode::noise;
    std::optional<ImageTensor> donor;
    std::vector<std::uint8_t> pixel_mask;  // height x width, patch mask replicated per patch
    int height = 0;
    int width = 0;
};

/// Expands a patch mask to pixel resolution.
std::vector<std::uint8_t> expand_mask(const BlockMask& mask, int patch_size);
MaskSpec make_mask_spec(BlockMask mask, int patch_size, FillMode fill, std::optional<ImageTensor> donor = std::nullopt);

/// Replaces masked pixels with uniform noise or donor pixels; unmasked pixels are copied bit-exactly.
ImageTensor apply_mask(const ImageTensor& image, const MaskSpec& spec, std::uint64_t seed);

struct AugmentationConfig {
    int global_views = 2;
    int local_views = 0;
    int global_size = 32;
    int local_size = 24;
    float global_scale_min = 0.25f;
    float global_scale_max = 1.0f;
    float local_scale_min = 0.05f;
    float local_scale_max = 0.4f;
    float flip_prob = 0.5f;
    double mask_ratio = 0.5;
    double donor_prob = 0.35;
    int patch_size = 4;
    PhotometricConfig photometric;
};

struct ViewBundle {
    std::vector<ImageTensor> teacher_views;
    std::vector<ImageTensor> student_views;
    std::vector<ImageTensor> local_crops;
    std::vector<MaskSpec> mask_specs;
};

/// Random resized crop (area fraction in [scale_min, scale_max], aspect in [3/4, 4/3]) to size x size.
ImageTensor random_resized_crop(const ImageTensor& image, int size, float scale_min, float scale_max, std::mt19937_64& rng);

/// Teacher/student views for one image. `donor` is another image of the batch (needed for donor fill).
ViewBundle make_views(const ImageTensor& image, const AugmentationConfig& cfg, std::uint64_t seed,
                      const ImageTensor* donor = nullptr);

}  // namespace mmc
