#pragma once

#include <string>
#include <vector>

#include "mmc/tensor.hpp"
#include "mmc/vit.hpp"

namespace mmc {

struct FrameSequence {
    std::string name;
    std::vector<ImageTensor> frames;
    LabelGrid first_labels;              // pixel labels of frame 0
    std::vector<LabelGrid> ground_truth;  // optional pixel labels for every frame (index 0 included)
};

struct PropagationConfig {
    int n_prev = 7;    // preceding predicted frames in the context, besides frame 0
    int top_k = 5;
    int radius = 12;   // Chebyshev window in patches
    int resolution = 0;  // frames are resized to resolution x resolution; 0 keeps their size

    void validate() const;
};

/// Most frequent pixel label in each patch (ties to the smaller label).
LabelGrid plurality_patch_labels(const LabelGrid& labels, int patch_size);

/// Label propagation on precomputed per-frame features. Context for frame t is frame 0 (fixed labels)
/// plus frames max(1, t - n_prev) .. t - 1. Each query patch takes the top_k most similar context
/// patches inside the window; votes are weighted by max(similarity, 0), falling back to the single
/// nearest patch's label when every weight is 0. Result[0] is `first`.
std::vector<LabelGrid> propagate_labels(const std::vector<FeatureSet>& frames, const LabelGrid& first, const PropagationConfig& cfg);

/// Encodes every frame and propagates frame 0's patch-level labels.
std::vector<LabelGrid> propagate(const FrameSequence& seq, const VisionTransformer& model, const PropagationConfig& cfg);

/// Mean IoU over (frames 1.., instances), where instances are the non-zero labels of gt[0].
double j_measure(const std::vector<LabelGrid>& pred, const std::vector<LabelGrid>& gt);
/// Mean boundary F over the same (frame, instance) pairs.
double f_measure(const std::vector<LabelGrid>& pred, const std::vector<LabelGrid>& gt);

/// Foreground cells with at least one in-grid 4-neighbour outside the mask.
std::vector<std::uint8_t> mask_boundary(const std::vector<std::uint8_t>& mask, int height, int width);
/// Boundary F-score of two binary masks with a Chebyshev match tolerance. Both boundaries empty gives 1.
double boundary_f(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& gt, int height, int width,
                  int tolerance = 1);

struct VideoScore {
    std::string name;
    double j = 0.0;
    double f = 0.0;
    double jf() const { return 0.5 * (j + f); }
};

/// Propagates and scores one sequence against its patch-level ground truth.
VideoScore evaluate_sequence(const FrameSequence& seq, const VisionTransformer& model, const PropagationConfig& cfg);

}  // namespace mmc
