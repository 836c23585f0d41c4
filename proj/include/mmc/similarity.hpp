#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mmc/tensor.hpp"
#include "mmc/vit.hpp"

namespace mmc {

/// Per-patch labels under the majority rule: the label covering more than half of the patch's pixels,
/// or -1 when no label does. Label 0 is background.
std::vector<int> majority_patch_labels(const LabelGrid& labels, int patch_size);

enum class PairKind { intra, inter };

/// Cosine similarities of all unordered patch pairs (i < j) of one image whose labels are both
/// foreground (> 0) and equal (intra) or different (inter).
std::vector<float> pair_similarities(const Matrix& patches, const std::vector<int>& patch_labels, PairKind kind);

struct LabeledPatches {
    Matrix patches;
    std::vector<int> labels;  // majority labels, one per row of `patches`
};

struct PairSample {
    std::vector<float> intra;
    std::vector<float> inter;
};

/// Pairs pooled over a corpus, each kind subsampled uniformly without replacement to `budget`.
PairSample corpus_pair_similarities(const std::vector<LabeledPatches>& images, std::size_t budget, std::uint64_t seed);

constexpr int kHistogramBins = 50;

struct SimilarityDistribution {
    PairKind kind = PairKind::intra;
    std::vector<double> edges;      // bins + 1, strictly increasing, [-1, 1]
    std::vector<double> densities;  // integrate to 1 over the edges
    std::size_t count = 0;

    double bin_width(std::size_t i) const { return edges[i + 1] - edges[i]; }
};

/// Uniform histogram over [-1, 1]; values at 1 fall in the last bin. Empty input gives all-zero densities.
SimilarityDistribution histogram(std::span<const float> values, PairKind kind, int bins = kHistogramBins);

/// Sum over bins of min(p1, p2) * width. Throws InvalidInput on differing binning.
double overlap_area(const SimilarityDistribution& a, const SimilarityDistribution& b);

struct OverlapStats {
    double overlap = 0.0;
    double mean_intra = 0.0;
    double mean_inter = 0.0;
    std::size_t intra_count = 0;
    std::size_t inter_count = 0;
};
OverlapStats overlap_stats(const PairSample& sample, int bins = kHistogramBins);

enum class HeadType { cls, pat, hyber };
HeadType parse_head_type(const std::string& name);
std::string to_string(HeadType head);

/// CLS token, mean of patch tokens, or their concatenation.
std::vector<float> head_feature(const FeatureSet& features, HeadType head);

/// Cosine k-NN with unweighted majority vote. Among labels tied on votes, the one whose best-ranked
/// neighbour is nearest wins. Equal similarities rank by lower train index.
int knn_classify(const Matrix& train, const std::vector<int>& train_labels, std::span<const float> query, int k);

/// Fraction of query rows classified correctly; uses a blocked similarity GEMM.
double knn_accuracy(const Matrix& train, const std::vector<int>& train_labels, const Matrix& queries,
                    const std::vector<int>& query_labels, int k);

struct OneShotResult {
    std::vector<float> thresholds;
    std::vector<double> f1;
    double best_f1 = 0.0;
    float best_threshold = 0.f;
};

/// Binary same-class decision `similarity > T` for each threshold; F1 is 0 when there are no true positives.
OneShotResult oneshot_f1(std::span<const float> similarities, const std::vector<std::uint8_t>& same_class,
                         const std::vector<float>& thresholds = {0.1f, 0.2f, 0.3f, 0.4f, 0.5f, 0.6f, 0.7f, 0.8f, 0.9f});

/// Cosine similarities of every (support, query) pair plus their same-class flags.
void oneshot_pairs(const Matrix& support, const std::vector<int>& support_labels, const Matrix& queries,
                   const std::vector<int>& query_labels, std::vector<float>& similarities, std::vector<std::uint8_t>& same_class);

/// Per-dimension sample variance (n - 1) of `views` (n x D, n >= 2), averaged over dimensions.
double mean_sample_variance(const std::vector<std::vector<float>>& views);

enum class VarianceMode { crop_cls, mask_pat };

struct VarianceConfig {
    int n_views = 128;
    VarianceMode mode = VarianceMode::crop_cls;
    float crop_scale_min = 0.25f;
    float crop_scale_max = 1.0f;
    double mask_ratio = 0.5;
    bool augment = true;  // false: every view is the unmodified image
    std::uint64_t seed = 0;
};

/// Variance of raw last-block outputs (before the final norm) across random views of one image:
/// the CLS token over crops, or same-position patch tokens over noise-masked views.
double feature_variance(const VisionTransformer& model, const ImageTensor& image, const VarianceConfig& cfg);

}  // namespace mmc
