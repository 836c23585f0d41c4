#pragma once

// Brute-force reference implementations. Written directly from the definitions with no
// library code on the computation path; shared by unit tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <vector>

#include "mmc/tensor.hpp"
#include "mmc/vit.hpp"

namespace oracle {

inline double cosine(const float* a, const float* b, std::size_t d) {
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < d; ++i) dot += double(a[i]) * b[i], na += double(a[i]) * a[i], nb += double(b[i]) * b[i];
    if (na == 0 || nb == 0) return 0.0;
    return dot / std::sqrt(na * nb);
}

/// Cosine of every patch to patch `query`, query cell forced to 1.
inline std::vector<double> similarity_map(const mmc::FeatureSet& f, int query) {
    const std::size_t D = f.patches.cols();
    std::vector<double> out(f.patches.rows());
    for (std::size_t r = 0; r < out.size(); ++r) out[r] = cosine(f.patches.data() + query * D, f.patches.data() + r * D, D);
    out[query] = 1.0;
    return out;
}

inline std::vector<double> pair_similarities(const mmc::Matrix& m, const std::vector<int>& labels, bool intra) {
    std::vector<double> out;
    const int n = static_cast<int>(labels.size());
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            if (labels[i] <= 0 || labels[j] <= 0) continue;
            if ((labels[i] == labels[j]) != intra) continue;
            out.push_back(cosine(m.data() + i * m.cols(), m.data() + j * m.cols(), m.cols()));
        }
    return out;
}

/// Full sort by (similarity desc, index asc), unweighted vote, vote ties to the label seen first.
inline int knn(const mmc::Matrix& train, const std::vector<int>& labels, const float* q, int k) {
    std::vector<std::pair<double, std::size_t>> ranked;
    for (std::size_t i = 0; i < train.rows(); ++i) ranked.push_back({-cosine(train.data() + i * train.cols(), q, train.cols()), i});
    std::sort(ranked.begin(), ranked.end());
    std::map<int, std::pair<int, int>> votes;  // label -> (count, best rank)
    for (int r = 0; r < k && r < static_cast<int>(ranked.size()); ++r) ++votes.try_emplace(labels[ranked[r].second], 0, r).first->second.first;
    int best = -1, best_count = -1, best_rank = 0;
    for (auto& [l, v] : votes)
        if (v.first > best_count || (v.first == best_count && v.second < best_rank)) best = l, best_count = v.first, best_rank = v.second;
    return best;
}

/// Overlap of two samples' 50-bin density histograms over [-1, 1]: integral of min(p, q).
inline double overlap(const std::vector<double>& a, const std::vector<double>& b, int bins = 50) {
    auto density = [&](const std::vector<double>& v) {
        std::vector<double> h(bins, 0.0);
        for (double x : v) h[std::min(bins - 1, static_cast<int>(std::floor((x + 1.0) / 2.0 * bins)))] += 1.0;
        const double w = 2.0 / bins;
        for (double& c : h) c = v.empty() ? 0.0 : c / (v.size() * w);
        return h;
    };
    const auto pa = density(a), pb = density(b);
    double o = 0;
    for (int i = 0; i < bins; ++i) o += std::min(pa[i], pb[i]) * (2.0 / bins);
    return o;
}

inline double miou(const std::vector<std::vector<std::uint8_t>>& pred, const std::vector<std::vector<std::uint8_t>>& gt) {
    double total = 0;
    for (std::size_t k = 0; k < pred.size(); ++k) {
        double inter = 0, uni = 0;
        for (std::size_t i = 0; i < pred[k].size(); ++i) inter += pred[k][i] && gt[k][i], uni += pred[k][i] || gt[k][i];
        total += uni == 0 ? 1.0 : inter / uni;
    }
    return total / pred.size();
}

/// Score every context patch in the window, fully sort, weighted vote with top-1 fallback.
inline std::vector<mmc::LabelGrid> propagate(const std::vector<mmc::FeatureSet>& frames, const mmc::LabelGrid& first, int n_prev, int top_k,
                                             int radius) {
    const int gh = first.height, gw = first.width;
    std::vector<mmc::LabelGrid> out{first};
    for (int t = 1; t < static_cast<int>(frames.size()); ++t) {
        std::vector<int> ctx{0};
        for (int s = std::max(1, t - n_prev); s < t; ++s) ctx.push_back(s);
        mmc::LabelGrid pred(gh, gw);
        for (int y = 0; y < gh; ++y)
            for (int x = 0; x < gw; ++x) {
                struct C {
                    double sim;
                    int label;
                    int order;
                };
                std::vector<C> all;
                for (int slot = 0; slot < static_cast<int>(ctx.size()); ++slot)
                    for (int cy = 0; cy < gh; ++cy)
                        for (int cx = 0; cx < gw; ++cx) {
                            if (std::abs(cy - y) > radius || std::abs(cx - x) > radius) continue;
                            const std::size_t D = frames[t].patches.cols();
                            const double s = cosine(frames[t].patches.data() + (y * gw + x) * D, frames[ctx[slot]].patches.data() + (cy * gw + cx) * D, D);
                            all.push_back({s, out[ctx[slot]].at(cy, cx), slot * gh * gw + cy * gw + cx});
                        }
                std::sort(all.begin(), all.end(), [](const C& a, const C& b) { return a.sim > b.sim || (a.sim == b.sim && a.order < b.order); });
                std::map<int, double> votes;
                double total = 0;
                for (int i = 0; i < top_k && i < static_cast<int>(all.size()); ++i) {
                    votes[all[i].label] += std::max(0.0, all[i].sim);
                    total += std::max(0.0, all[i].sim);
                }
                int label = all[0].label;
                if (total > 0) {
                    double best = -1;
                    for (auto& [l, v] : votes)
                        if (v > best) best = v, label = l;
                }
                pred.at(y, x) = label;
            }
        out.push_back(pred);
    }
    return out;
}

/// -log softmax of the positive among {positive} + negatives, long double.
inline long double info_nce(const double* q, const double* pos, const std::vector<const double*>& negs, int dim, double tau) {
    auto dotp = [&](const double* a, const double* b) {
        long double s = 0;
        for (int d = 0; d < dim; ++d) s += static_cast<long double>(a[d]) * b[d];
        return s;
    };
    const long double ep = std::exp(dotp(q, pos) / tau);
    long double den = ep;
    for (const double* k : negs) den += std::exp(dotp(q, k) / tau);
    return -std::log(ep / den);
}

}  // namespace oracle
