#include "mmc/similarity.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "mmc/augmentation.hpp"
#include "mmc/errors.hpp"
#include "mmc/kernels.hpp"

namespace mmc {

namespace {

double norm_of(std::span<const float> v) {
    double s = 0.0;
    for (float x : v) s += static_cast<double>(x) * x;
    return std::sqrt(s);
}

double cosine(std::span<const float> a, std::span<const float> b, double na, double nb) {
    if (na == 0.0 || nb == 0.0) return 0.0;
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
    return s / (na * nb);
}

Matrix normalized_rows(const Matrix& m) {
    Matrix out = m;
    for (std::size_t r = 0; r < m.rows(); ++r) {
        const double n = norm_of(m.row(r));
        auto row = out.row(r);
        if (n == 0.0) continue;
        for (float& v : row) v = static_cast<float>(v / n);
    }
    return out;
}

// Ranks candidates by similarity (desc), then index (asc), and votes over the top k.
int vote(const std::vector<double>& sims, const std::vector<int>& labels, int k) {
    std::vector<std::size_t> order(sims.size());
    std::iota(order.begin(), order.end(), 0);
    auto better = [&](std::size_t a, std::size_t b) { return sims[a] > sims[b] || (sims[a] == sims[b] && a < b); };
    std::partial_sort(order.begin(), order.begin() + k, order.end(), better);
    std::map<int, std::pair<int, int>> tally;  // label -> (votes, best rank)
    for (int r = 0; r < k; ++r) {
        auto [it, fresh] = tally.try_emplace(labels[order[r]], 0, r);
        ++it->second.first;
    }
    int best_label = 0, best_votes = -1, best_rank = k;
    for (const auto& [label, vr] : tally)
        if (vr.first > best_votes || (vr.first == best_votes && vr.second < best_rank)) {
            best_label = label;
            best_votes = vr.first;
            best_rank = vr.second;
        }
    return best_label;
}

void check_knn_inputs(const Matrix& train, const std::vector<int>& labels, int k) {
    if (train.rows() == 0) throw InvalidInput("knn: empty train set");
    if (labels.size() != train.rows()) throw InvalidInput("knn: label count does not match train rows");
    if (k < 1 || static_cast<std::size_t>(k) > train.rows()) throw InvalidInput("knn: k must be in [1, |train|]");
}

}  // namespace

std::vector<int> majority_patch_labels(const LabelGrid& labels, int patch_size) {
    if (patch_size < 1 || labels.height % patch_size != 0 || labels.width % patch_size != 0)
        throw InvalidInput("majority_patch_labels: size not divisible by patch size");
    const int gh = labels.height / patch_size, gw = labels.width / patch_size;
    std::vector<int> out(static_cast<std::size_t>(gh) * gw, -1);
    std::map<int, int> counts;
    for (int gy = 0; gy < gh; ++gy)
        for (int gx = 0; gx < gw; ++gx) {
            counts.clear();
            for (int y = 0; y < patch_size; ++y)
                for (int x = 0; x < patch_size; ++x) ++counts[labels.at(gy * patch_size + y, gx * patch_size + x)];
            for (const auto& [label, n] : counts)
                if (2 * n > patch_size * patch_size) out[static_cast<std::size_t>(gy) * gw + gx] = label;
        }
    return out;
}

std::vector<float> pair_similarities(const Matrix& patches, const std::vector<int>& patch_labels, PairKind kind) {
    if (patch_labels.size() != patches.rows()) throw InvalidInput("pair_similarities: label count does not match patches");
    std::vector<std::size_t> fg;
    for (std::size_t i = 0; i < patch_labels.size(); ++i)
        if (patch_labels[i] > 0) fg.push_back(i);
    std::vector<double> norms(patches.rows());
    for (std::size_t i : fg) norms[i] = norm_of(patches.row(i));
    std::vector<float> out;
    for (std::size_t a = 0; a < fg.size(); ++a)
        for (std::size_t b = a + 1; b < fg.size(); ++b) {
            const std::size_t i = fg[a], j = fg[b];
            const bool same = patch_labels[i] == patch_labels[j];
            if (same != (kind == PairKind::intra)) continue;
            out.push_back(static_cast<float>(cosine(patches.row(i), patches.row(j), norms[i], norms[j])));
        }
    return out;
}

PairSample corpus_pair_similarities(const std::vector<LabeledPatches>& images, std::size_t budget, std::uint64_t seed) {
    std::vector<PairSample> per(images.size());
#pragma omp parallel for schedule(dynamic)
    for (std::size_t i = 0; i < images.size(); ++i) {
        per[i].intra = pair_similarities(images[i].patches, images[i].labels, PairKind::intra);
        per[i].inter = pair_similarities(images[i].patches, images[i].labels, PairKind::inter);
    }
    PairSample all;
    for (auto& p : per) {
        all.intra.insert(all.intra.end(), p.intra.begin(), p.intra.end());
        all.inter.insert(all.inter.end(), p.inter.begin(), p.inter.end());
    }
    auto subsample = [&](std::vector<float>& v, std::uint64_t purpose) {
        if (v.size() <= budget) return;
        auto rng = make_rng(seed, 0x5A3B, purpose);
        // partial Fisher-Yates: the first `budget` slots become a uniform sample without replacement
        for (std::size_t i = 0; i < budget; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, v.size() - 1);
            std::swap(v[i], v[pick(rng)]);
        }
        v.resize(budget);
    };
    subsample(all.intra, 0);
    subsample(all.inter, 1);
    return all;
}

SimilarityDistribution histogram(std::span<const float> values, PairKind kind, int bins) {
    if (bins < 1) throw InvalidInput("histogram: bins must be positive");
    SimilarityDistribution d;
    d.kind = kind;
    d.count = values.size();
    d.edges.resize(static_cast<std::size_t>(bins) + 1);
    for (int i = 0; i <= bins; ++i) d.edges[i] = -1.0 + 2.0 * i / bins;
    d.densities.assign(static_cast<std::size_t>(bins), 0.0);
    if (values.empty()) return d;
    std::vector<std::size_t> counts(static_cast<std::size_t>(bins), 0);
    for (float v : values) {
        const double c = std::clamp(static_cast<double>(v), -1.0, 1.0);
        const int b = std::min(bins - 1, static_cast<int>(std::floor((c + 1.0) / 2.0 * bins)));
        ++counts[static_cast<std::size_t>(b)];
    }
    for (int i = 0; i < bins; ++i) d.densities[i] = static_cast<double>(counts[i]) / (static_cast<double>(values.size()) * d.bin_width(i));
    return d;
}

double overlap_area(const SimilarityDistribution& a, const SimilarityDistribution& b) {
    if (a.edges != b.edges || a.densities.size() != b.densities.size() || a.edges.size() != a.densities.size() + 1)
        throw InvalidInput("overlap_area: distributions use different binning");
    double s = 0.0;
    for (std::size_t i = 0; i < a.densities.size(); ++i) s += std::min(a.densities[i], b.densities[i]) * a.bin_width(i);
    return std::clamp(s, 0.0, 1.0);
}

OverlapStats overlap_stats(const PairSample& sample, int bins) {
    OverlapStats s;
    s.intra_count = sample.intra.size();
    s.inter_count = sample.inter.size();
    auto mean = [](const std::vector<float>& v) {
        return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    };
    s.mean_intra = mean(sample.intra);
    s.mean_inter = mean(sample.inter);
    s.overlap = overlap_area(histogram(sample.intra, PairKind::intra, bins), histogram(sample.inter, PairKind::inter, bins));
    return s;
}

HeadType parse_head_type(const std::string& name) {
    std::string n = name;
    std::transform(n.begin(), n.end(), n.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (n == "cls") return HeadType::cls;
    if (n == "pat") return HeadType::pat;
    if (n == "hyber" || n == "hybrid") return HeadType::hyber;
    throw InvalidInput("unknown head type '" + name + "' (expected CLS, PAT or Hyber)");
}

std::string to_string(HeadType head) {
    switch (head) {
        case HeadType::cls: return "CLS";
        case HeadType::pat: return "PAT";
        case HeadType::hyber: return "Hyber";
    }
    return "?";
}

std::vector<float> head_feature(const FeatureSet& features, HeadType head) {
    std::vector<float> pat(features.patches.cols(), 0.f);
    if (head != HeadType::cls) {
        std::vector<double> acc(pat.size(), 0.0);
        for (std::size_t p = 0; p < features.num_patches(); ++p) {
            auto row = features.patches.row(p);
            for (std::size_t c = 0; c < acc.size(); ++c) acc[c] += row[c];
        }
        for (std::size_t c = 0; c < acc.size(); ++c) pat[c] = static_cast<float>(acc[c] / static_cast<double>(features.num_patches()));
    }
    switch (head) {
        case HeadType::cls: return features.cls;
        case HeadType::pat: return pat;
        case HeadType::hyber: {
            std::vector<float> out = features.cls;
            out.insert(out.end(), pat.begin(), pat.end());
            return out;
        }
    }
    return {};
}

int knn_classify(const Matrix& train, const std::vector<int>& train_labels, std::span<const float> query, int k) {
    check_knn_inputs(train, train_labels, k);
    if (query.size() != train.cols()) throw InvalidInput("knn: query dimension mismatch");
    const double nq = norm_of(query);
    std::vector<double> sims(train.rows());
    for (std::size_t i = 0; i < train.rows(); ++i) sims[i] = cosine(train.row(i), query, norm_of(train.row(i)), nq);
    return vote(sims, train_labels, k);
}

double knn_accuracy(const Matrix& train, const std::vector<int>& train_labels, const Matrix& queries,
                    const std::vector<int>& query_labels, int k) {
    check_knn_inputs(train, train_labels, k);
    if (queries.cols() != train.cols()) throw InvalidInput("knn: query dimension mismatch");
    if (queries.rows() != query_labels.size()) throw InvalidInput("knn: query label count mismatch");
    if (queries.rows() == 0) throw InvalidInput("knn: no queries");
    const Matrix tn = normalized_rows(train), qn = normalized_rows(queries);
    const int n = static_cast<int>(train.rows()), d = static_cast<int>(train.cols());
    constexpr std::size_t kBlock = 256;
    std::size_t correct = 0;
    std::vector<float> block;
    std::vector<double> sims(train.rows());
    for (std::size_t q0 = 0; q0 < queries.rows(); q0 += kBlock) {
        const int m = static_cast<int>(std::min(kBlock, queries.rows() - q0));
        block.assign(static_cast<std::size_t>(m) * n, 0.f);
        kernels::active().gemm_nt(qn.row(q0).data(), tn.data(), block.data(), m, d, n, false);
        for (int i = 0; i < m; ++i) {
            for (int j = 0; j < n; ++j) sims[j] = block[static_cast<std::size_t>(i) * n + j];
            correct += vote(sims, train_labels, k) == query_labels[q0 + i];
        }
    }
    return static_cast<double>(correct) / static_cast<double>(queries.rows());
}

OneShotResult oneshot_f1(std::span<const float> similarities, const std::vector<std::uint8_t>& same_class,
                         const std::vector<float>& thresholds) {
    if (similarities.size() != same_class.size()) throw InvalidInput("oneshot_f1: similarity/label count mismatch");
    if (thresholds.empty()) throw InvalidInput("oneshot_f1: empty threshold list");
    const auto positives = std::count(same_class.begin(), same_class.end(), std::uint8_t{1});
    if (positives == 0 || positives == static_cast<std::ptrdiff_t>(same_class.size()))
        throw InvalidInput("oneshot_f1: need at least one positive and one negative pair");
    OneShotResult r;
    r.thresholds = thresholds;
    for (std::size_t t = 0; t < thresholds.size(); ++t) {
        std::size_t tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < similarities.size(); ++i) {
            const bool pred = similarities[i] > thresholds[t];
            tp += pred && same_class[i];
            fp += pred && !same_class[i];
            fn += !pred && same_class[i];
        }
        const double f1 = tp == 0 ? 0.0 : 2.0 * tp / static_cast<double>(2 * tp + fp + fn);
        r.f1.push_back(f1);
        if (t == 0 || f1 > r.best_f1) {
            r.best_f1 = f1;
            r.best_threshold = thresholds[t];
        }
    }
    return r;
}

void oneshot_pairs(const Matrix& support, const std::vector<int>& support_labels, const Matrix& queries,
                   const std::vector<int>& query_labels, std::vector<float>& similarities, std::vector<std::uint8_t>& same_class) {
    if (support.rows() != support_labels.size() || queries.rows() != query_labels.size() || support.cols() != queries.cols())
        throw InvalidInput("oneshot_pairs: inconsistent shapes");
    similarities.clear();
    same_class.clear();
    for (std::size_t s = 0; s < support.rows(); ++s) {
        const double ns = norm_of(support.row(s));
        for (std::size_t q = 0; q < queries.rows(); ++q) {
            similarities.push_back(static_cast<float>(cosine(support.row(s), queries.row(q), ns, norm_of(queries.row(q)))));
            same_class.push_back(support_labels[s] == query_labels[q] ? 1 : 0);
        }
    }
}

double mean_sample_variance(const std::vector<std::vector<float>>& views) {
    if (views.size() < 2) throw InvalidInput("feature variance needs at least two views");
    const std::size_t d = views.front().size();
    std::vector<double> mean(d, 0.0), m2(d, 0.0);
    for (std::size_t n = 0; n < views.size(); ++n) {
        if (views[n].size() != d) throw InvalidInput("feature variance: ragged views");
        for (std::size_t c = 0; c < d; ++c) {
            const double x = views[n][c];
            const double delta = x - mean[c];
            mean[c] += delta / static_cast<double>(n + 1);
            m2[c] += delta * (x - mean[c]);
        }
    }
    double s = 0.0;
    for (double v : m2) s += v / static_cast<double>(views.size() - 1);
    return d == 0 ? 0.0 : s / static_cast<double>(d);
}

double feature_variance(const VisionTransformer& model, const ImageTensor& image, const VarianceConfig& cfg) {
    if (cfg.n_views < 2) throw InvalidInput("feature_variance: n_views must be at least 2");
    const int size = model.config().image_size, ps = model.config().patch_size;
    const ImageTensor base = (image.height == size && image.width == size) ? image : resize_bilinear(image, size, size);
    std::vector<std::vector<float>> outputs(static_cast<std::size_t>(cfg.n_views));
    auto rng = make_rng(cfg.seed, 0xFA71);
    for (int v = 0; v < cfg.n_views; ++v) {
        ImageTensor view = base;
        if (cfg.augment) {
            if (cfg.mode == VarianceMode::crop_cls) {
                view = random_resized_crop(image, size, cfg.crop_scale_min, cfg.crop_scale_max, rng);
            } else {
                const int g = size / ps;
                view = apply_mask(base, make_mask_spec(block_mask(g, g, cfg.mask_ratio, rng()), ps, FillMode::noise), rng());
            }
        }
        BackboneCache cache;
        model.forward({view}, 0, &cache);
        const Matrix& raw = cache.pre_norm;  // tokens x C, CLS first
        auto& out = outputs[static_cast<std::size_t>(v)];
        if (cfg.mode == VarianceMode::crop_cls)
            out.assign(raw.row(0).begin(), raw.row(0).end());
        else
            out.assign(raw.storage().begin() + static_cast<std::ptrdiff_t>(raw.cols()), raw.storage().end());
    }
    return mean_sample_variance(outputs);
}

}  // namespace mmc
