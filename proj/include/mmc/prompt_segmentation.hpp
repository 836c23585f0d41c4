#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "mmc/tensor.hpp"
#include "mmc/vit.hpp"

namespace mmc {

struct PatchIndex {
    int row = 0;
    int col = 0;
    bool operator==(const PatchIndex&) const = default;
};

/// A clicked pixel in the evaluation-resolution image.
struct PromptPoint {
    int x = 0;
    int y = 0;
    PatchIndex patch(int patch_size) const { return {y / patch_size, x / patch_size}; }
};

/// Cosine similarity of every patch token to the query token.
struct SimilarityMap {
    int grid_h = 0;
    int grid_w = 0;
    std::vector<float> values;
    PatchIndex query;

    float at(int r, int c) const { return values[static_cast<std::size_t>(r) * grid_w + c]; }
};

/// Binary patch-grid mask (1 = segmented).
struct SegmentationMask {
    int grid_h = 0;
    int grid_w = 0;
    std::vector<std::uint8_t> cells;
    float threshold = 0.f;
    PatchIndex query;

    std::size_t area() const;
    /// Nearest-neighbour expansion to pixels (patch_size per cell in each axis).
    std::vector<std::uint8_t> upsample(int patch_size) const;
};

/// Zero-norm tokens yield similarity 0 (with a warning).
SimilarityMap similarity_map(const FeatureSet& features, PatchIndex query);
/// cell = 1 iff similarity > threshold (strict).
SegmentationMask threshold_segment(const SimilarityMap& map, float threshold);

/// Mask pixel nearest the mask centroid; ties resolve to the smallest row, then column.
PromptPoint select_query(const std::vector<std::uint8_t>& mask, int height, int width);

/// Patch is foreground iff more than half of its pixels are foreground.
std::vector<std::uint8_t> majority_downsample(const std::vector<std::uint8_t>& mask, int height, int width, int patch_size);

/// |a & b| / |a | b|; 1 when both are empty.
double iou(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b);
/// Mean IoU over paired masks.
double miou(const std::vector<std::vector<std::uint8_t>>& pred, const std::vector<std::vector<std::uint8_t>>& gt);

/// Image and label raster rescaled to the evaluation resolution.
struct EvalSample {
    std::string id;
    ImageTensor image;
    LabelGrid labels;
    int class_label = -1;  // image-level category, when known
};
EvalSample prepare_eval_sample(std::string id, const ImageTensor& image, const LabelGrid& labels, int resolution);

/// Returns features for an image already at evaluation resolution (live encoder or cache).
using FeatureProvider = std::function<FeatureSet(const std::string& id, const ImageTensor& image)>;
FeatureProvider live_features(const VisionTransformer& model);

/// Inclusive arithmetic range "lo:hi:step", e.g. "0:0.9:0.1" -> {0, 0.1, ..., 0.9}.
std::vector<float> parse_threshold_range(const std::string& spec);

struct SweepRow {
    float threshold = 0.f;
    double miou = 0.0;
    std::map<int, double> per_class;  // class label -> mean IoU over its instances
};

struct SweepResult {
    std::vector<SweepRow> rows;
    float optimal_threshold = 0.f;
    double optimal_miou = 0.0;
    std::size_t instances = 0;
};

/// One prompt per annotated instance (each distinct non-zero label), centroid rule. mIoU averages over
/// instances within a class, then over classes.
SweepResult threshold_sweep(const std::vector<EvalSample>& samples, const FeatureProvider& features,
                            const std::vector<float>& thresholds, int patch_size);

/// Run-length encoding of a binary grid: alternating run lengths starting with the zero-run, row-major.
std::vector<std::uint32_t> rle_encode(const std::vector<std::uint8_t>& cells);
std::vector<std::uint8_t> rle_decode(const std::vector<std::uint32_t>& runs);

/// Single-click segmentation of an arbitrary-size image: resize to resolution x resolution, encode,
/// map (x, y) from source pixels to the patch grid, threshold the similarity map.
struct PointSegmentation {
    SimilarityMap heatmap;
    SegmentationMask mask;
};
/// Patch of a source-image pixel after rescaling to resolution x resolution.
PatchIndex source_point_to_patch(int x, int y, int src_width, int src_height, int resolution, int patch_size);
FeatureSet encode_at_resolution(const VisionTransformer& model, const ImageTensor& source, int resolution);
PointSegmentation segment_features(const FeatureSet& features, int x, int y, int src_width, int src_height, float threshold,
                                   int resolution, int patch_size);
PointSegmentation segment_image(const VisionTransformer& model, const ImageTensor& source, int x, int y, float threshold,
                                int resolution);

}  // namespace mmc
