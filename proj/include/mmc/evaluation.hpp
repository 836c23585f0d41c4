#pragma once

#include <cstdint>
#include <vector>

#include "json.hpp"
#include "mmc/dataset.hpp"
#include "mmc/prompt_segmentation.hpp"
#include "mmc/similarity.hpp"

namespace mmc {

/// Dataset items rescaled to the evaluation resolution, carrying their image-level class.
std::vector<EvalSample> make_eval_samples(const std::vector<DatasetItem>& items, int resolution);

/// Features of every sample, in order. Encoding runs in parallel across samples.
std::vector<FeatureSet> encode_all(const std::vector<EvalSample>& samples, const FeatureProvider& features);

/// Patch tokens with majority labels for the pair-similarity analysis.
std::vector<LabeledPatches> labeled_patches(const std::vector<EvalSample>& samples, const std::vector<FeatureSet>& features,
                                            int patch_size);

struct LabeledVectors {
    Matrix vectors;
    std::vector<int> labels;
};

/// Foreground patch tokens with a majority label, at most `per_image` per image (0 = all), chosen by seed.
LabeledVectors patch_vectors(const std::vector<EvalSample>& samples, const std::vector<FeatureSet>& features, int patch_size,
                             std::size_t per_image, std::uint64_t seed);
/// One vector per image under the head type, labelled with the image class.
LabeledVectors image_vectors(const std::vector<EvalSample>& samples, const std::vector<FeatureSet>& features, HeadType head);

/// Image class of a sample: its class label, else the most frequent non-zero label.
int sample_class(const EvalSample& sample);

nlohmann::json to_json(const SweepResult& r);
nlohmann::json to_json(const OverlapStats& s);
nlohmann::json to_json(const SimilarityDistribution& d);

}  // namespace mmc
