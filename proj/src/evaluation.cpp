#include "mmc/evaluation.hpp"

#include <algorithm>
#include <map>
#include <numeric>

#include "mmc/errors.hpp"

namespace mmc {

std::vector<EvalSample> make_eval_samples(const std::vector<DatasetItem>& items, int resolution) {
    std::vector<EvalSample> out(items.size());
#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < items.size(); ++i) {
        const auto& it = items[i];
        if (it.labels.labels.empty()) {
            out[i] = {it.id, resize_bilinear(it.image, resolution, resolution), LabelGrid{}, it.class_label};
        } else {
            out[i] = prepare_eval_sample(it.id, it.image, it.labels, resolution);
            out[i].class_label = it.class_label;
        }
    }
    return out;
}

std::vector<FeatureSet> encode_all(const std::vector<EvalSample>& samples, const FeatureProvider& features) {
    std::vector<FeatureSet> out(samples.size());
#pragma omp parallel for schedule(dynamic)
    for (std::size_t i = 0; i < samples.size(); ++i) out[i] = features(samples[i].id, samples[i].image);
    return out;
}

std::vector<LabeledPatches> labeled_patches(const std::vector<EvalSample>& samples, const std::vector<FeatureSet>& features,
                                            int patch_size) {
    if (samples.size() != features.size()) throw InvalidInput("labeled_patches: sample/feature count mismatch");
    std::vector<LabeledPatches> out(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) out[i] = {features[i].patches, majority_patch_labels(samples[i].labels, patch_size)};
    return out;
}

LabeledVectors patch_vectors(const std::vector<EvalSample>& samples, const std::vector<FeatureSet>& features, int patch_size,
                             std::size_t per_image, std::uint64_t seed) {
    if (samples.size() != features.size()) throw InvalidInput("patch_vectors: sample/feature count mismatch");
    std::vector<std::pair<std::size_t, std::size_t>> picks;  // (image, patch)
    std::vector<int> labels;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto lab = majority_patch_labels(samples[i].labels, patch_size);
        std::vector<std::size_t> fg;
        for (std::size_t p = 0; p < lab.size(); ++p)
            if (lab[p] > 0) fg.push_back(p);
        if (per_image > 0 && fg.size() > per_image) {
            auto rng = make_rng(seed, 0x9A7C, i);
            std::shuffle(fg.begin(), fg.end(), rng);
            fg.resize(per_image);
            std::sort(fg.begin(), fg.end());
        }
        for (std::size_t p : fg) {
            picks.emplace_back(i, p);
            labels.push_back(lab[p]);
        }
    }
    LabeledVectors out;
    const std::size_t dim = features.empty() ? 0 : features.front().patches.cols();
    out.vectors.resize(picks.size(), dim);
    for (std::size_t r = 0; r < picks.size(); ++r) {
        auto src = features[picks[r].first].patches.row(picks[r].second);
        std::copy(src.begin(), src.end(), out.vectors.row(r).begin());
    }
    out.labels = std::move(labels);
    return out;
}

int sample_class(const EvalSample& sample) {
    if (sample.class_label >= 0) return sample.class_label;
    std::map<int, std::size_t> counts;
    for (int l : sample.labels.labels)
        if (l != 0) ++counts[l];
    if (counts.empty()) throw InvalidInput("sample '" + sample.id + "' has neither a class nor foreground labels");
    return std::max_element(counts.begin(), counts.end(), [](const auto& a, const auto& b) { return a.second < b.second; })->first - 1;
}

LabeledVectors image_vectors(const std::vector<EvalSample>& samples, const std::vector<FeatureSet>& features, HeadType head) {
    if (samples.size() != features.size()) throw InvalidInput("image_vectors: sample/feature count mismatch");
    LabeledVectors out;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto v = head_feature(features[i], head);
        if (i == 0) out.vectors.resize(samples.size(), v.size());
        std::copy(v.begin(), v.end(), out.vectors.row(i).begin());
        out.labels.push_back(sample_class(samples[i]));
    }
    return out;
}

nlohmann::json to_json(const SweepResult& r) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : r.rows) {
        nlohmann::json pc = nlohmann::json::object();
        for (const auto& [label, v] : row.per_class) pc[std::to_string(label)] = v;
        rows.push_back({{"threshold", row.threshold}, {"miou", row.miou}, {"per_class", pc}});
    }
    return {{"rows", rows}, {"optimal_threshold", r.optimal_threshold}, {"optimal_miou", r.optimal_miou}, {"instances", r.instances}};
}

nlohmann::json to_json(const OverlapStats& s) {
    return {{"O", s.overlap}, {"Intra", s.mean_intra}, {"Inter", s.mean_inter}, {"intra_pairs", s.intra_count}, {"inter_pairs", s.inter_count}};
}

nlohmann::json to_json(const SimilarityDistribution& d) {
    return {{"kind", d.kind == PairKind::intra ? "intra" : "inter"}, {"edges", d.edges}, {"densities", d.densities}, {"count", d.count}};
}

}  // namespace mmc
