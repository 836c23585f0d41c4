#include "mmc/video.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "mmc/errors.hpp"
#include "mmc/prompt_segmentation.hpp"

namespace mmc {

void PropagationConfig::validate() const {
    if (n_prev < 1) throw InvalidInput("propagation: n_prev must be at least 1");
    if (top_k < 1) throw InvalidInput("propagation: top_k must be at least 1");
    if (radius < 0) throw InvalidInput("propagation: radius must be non-negative");
    if (resolution < 0) throw InvalidInput("propagation: resolution must be non-negative");
}

LabelGrid plurality_patch_labels(const LabelGrid& labels, int patch_size) {
    if (patch_size < 1 || labels.height % patch_size != 0 || labels.width % patch_size != 0)
        throw InvalidInput("label raster not divisible by patch size");
    LabelGrid out(labels.height / patch_size, labels.width / patch_size);
    std::map<int, int> counts;
    for (int gy = 0; gy < out.height; ++gy)
        for (int gx = 0; gx < out.width; ++gx) {
            counts.clear();
            for (int y = 0; y < patch_size; ++y)
                for (int x = 0; x < patch_size; ++x) ++counts[labels.at(gy * patch_size + y, gx * patch_size + x)];
            int best = 0, best_n = -1;
            for (const auto& [label, n] : counts)
                if (n > best_n) {
                    best = label;
                    best_n = n;
                }
            out.at(gy, gx) = best;
        }
    return out;
}

namespace {

std::vector<double> row_norms(const Matrix& m) {
    std::vector<double> out(m.rows());
    for (std::size_t r = 0; r < m.rows(); ++r) {
        double s = 0.0;
        for (float v : m.row(r)) s += static_cast<double>(v) * v;
        out[r] = std::sqrt(s);
    }
    return out;
}

struct Candidate {
    double sim;
    int label;
    std::size_t order;  // context frame slot * P + patch, for deterministic tie-breaking
};

}  // namespace

std::vector<LabelGrid> propagate_labels(const std::vector<FeatureSet>& frames, const LabelGrid& first, const PropagationConfig& cfg) {
    cfg.validate();
    if (frames.empty()) throw InvalidInput("propagate: empty context (no frames)");
    const int gh = frames[0].grid_h, gw = frames[0].grid_w;
    for (const auto& f : frames)
        if (f.grid_h != gh || f.grid_w != gw || f.patches.cols() != frames[0].patches.cols())
            throw InvalidInput("propagate: frames differ in resolution");
    if (first.height != gh || first.width != gw) throw InvalidInput("propagate: first-frame labels do not match the patch grid");
    if (std::none_of(first.labels.begin(), first.labels.end(), [](int l) { return l != 0; }))
        throw InvalidInput("propagate: frame 0 has no labelled instance");

    std::vector<std::vector<double>> norms;
    for (const auto& f : frames) norms.push_back(row_norms(f.patches));
    std::vector<LabelGrid> out{first};
    std::vector<Candidate> cands;
    for (std::size_t t = 1; t < frames.size(); ++t) {
        std::vector<std::size_t> context{0};
        for (std::size_t s = t > static_cast<std::size_t>(cfg.n_prev) ? t - cfg.n_prev : 1; s < t; ++s) context.push_back(s);
        LabelGrid pred(gh, gw);
        const Matrix& q = frames[t].patches;
        for (int y = 0; y < gh; ++y)
            for (int x = 0; x < gw; ++x) {
                const std::size_t qi = static_cast<std::size_t>(y) * gw + x;
                auto qrow = q.row(qi);
                cands.clear();
                for (std::size_t slot = 0; slot < context.size(); ++slot) {
                    const std::size_t s = context[slot];
                    for (int cy = std::max(0, y - cfg.radius); cy <= std::min(gh - 1, y + cfg.radius); ++cy)
                        for (int cx = std::max(0, x - cfg.radius); cx <= std::min(gw - 1, x + cfg.radius); ++cx) {
                            const std::size_t ci = static_cast<std::size_t>(cy) * gw + cx;
                            const double denom = norms[t][qi] * norms[s][ci];
                            double sim = 0.0;
                            if (denom > 0.0) {
                                auto crow = frames[s].patches.row(ci);
                                for (std::size_t c = 0; c < qrow.size(); ++c) sim += static_cast<double>(qrow[c]) * crow[c];
                                sim /= denom;
                            }
                            cands.push_back({sim, out[s].at(cy, cx), slot * gh * gw + ci});
                        }
                }
                const std::size_t k = std::min<std::size_t>(cfg.top_k, cands.size());
                std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(k), cands.end(),
                                  [](const Candidate& a, const Candidate& b) { return a.sim > b.sim || (a.sim == b.sim && a.order < b.order); });
                std::map<int, double> score;
                double total = 0.0;
                for (std::size_t i = 0; i < k; ++i) {
                    const double w = std::max(cands[i].sim, 0.0);
                    score[cands[i].label] += w;
                    total += w;
                }
                int label = cands[0].label;
                if (total > 0.0) {
                    double best = -1.0;
                    for (const auto& [l, s] : score)
                        if (s > best) {
                            best = s;
                            label = l;
                        }
                }
                pred.at(y, x) = label;
            }
        out.push_back(std::move(pred));
    }
    return out;
}

namespace {

ImageTensor at_resolution(const ImageTensor& im, int resolution) {
    return resolution > 0 && (im.height != resolution || im.width != resolution) ? resize_bilinear(im, resolution, resolution) : im;
}

LabelGrid labels_at_resolution(const LabelGrid& l, int resolution) {
    return resolution > 0 && (l.height != resolution || l.width != resolution) ? resize_nearest(l, resolution, resolution) : l;
}

std::vector<std::uint8_t> binary(const LabelGrid& g, int label) {
    std::vector<std::uint8_t> out(g.labels.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = g.labels[i] == label;
    return out;
}

template <typename Score>
double mean_over_instances(const std::vector<LabelGrid>& pred, const std::vector<LabelGrid>& gt, Score score) {
    if (pred.size() != gt.size()) throw InvalidInput("video measure: prediction and ground truth differ in frame count");
    if (gt.size() < 2) throw InvalidInput("video measure: need at least two frames");
    std::set<int> instances(gt[0].labels.begin(), gt[0].labels.end());
    instances.erase(0);
    if (instances.empty()) throw InvalidInput("video measure: no instances in frame 0");
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t t = 1; t < gt.size(); ++t) {
        if (pred[t].height != gt[t].height || pred[t].width != gt[t].width) throw InvalidInput("video measure: grid size mismatch");
        for (int l : instances) {
            sum += score(binary(pred[t], l), binary(gt[t], l), gt[t].height, gt[t].width);
            ++n;
        }
    }
    return sum / static_cast<double>(n);
}

}  // namespace

std::vector<LabelGrid> propagate(const FrameSequence& seq, const VisionTransformer& model, const PropagationConfig& cfg) {
    cfg.validate();
    if (seq.frames.empty()) throw InvalidInput("propagate: sequence has no frames");
    std::vector<FeatureSet> feats(seq.frames.size());
#pragma omp parallel for schedule(dynamic)
    for (std::size_t t = 0; t < seq.frames.size(); ++t) feats[t] = model.encode(at_resolution(seq.frames[t], cfg.resolution));
    const LabelGrid first = plurality_patch_labels(labels_at_resolution(seq.first_labels, cfg.resolution), model.config().patch_size);
    return propagate_labels(feats, first, cfg);
}

double j_measure(const std::vector<LabelGrid>& pred, const std::vector<LabelGrid>& gt) {
    return mean_over_instances(pred, gt, [](const auto& p, const auto& g, int, int) { return iou(p, g); });
}

double f_measure(const std::vector<LabelGrid>& pred, const std::vector<LabelGrid>& gt) {
    return mean_over_instances(pred, gt, [](const auto& p, const auto& g, int h, int w) { return boundary_f(p, g, h, w); });
}

std::vector<std::uint8_t> mask_boundary(const std::vector<std::uint8_t>& mask, int height, int width) {
    std::vector<std::uint8_t> out(mask.size(), 0);
    auto on = [&](int y, int x) { return mask[static_cast<std::size_t>(y) * width + x] != 0; };
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            if (!on(y, x)) continue;
            const bool edge = (y > 0 && !on(y - 1, x)) || (y + 1 < height && !on(y + 1, x)) || (x > 0 && !on(y, x - 1)) ||
                              (x + 1 < width && !on(y, x + 1));
            out[static_cast<std::size_t>(y) * width + x] = edge;
        }
    return out;
}

double boundary_f(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& gt, int height, int width, int tolerance) {
    if (pred.size() != gt.size() || pred.size() != static_cast<std::size_t>(height) * width)
        throw InvalidInput("boundary_f: mask size mismatch");
    const auto bp = mask_boundary(pred, height, width), bg = mask_boundary(gt, height, width);
    const auto np = std::count(bp.begin(), bp.end(), std::uint8_t{1}), ng = std::count(bg.begin(), bg.end(), std::uint8_t{1});
    if (np == 0 && ng == 0) return 1.0;
    if (np == 0 || ng == 0) return 0.0;
    auto matched = [&](const std::vector<std::uint8_t>& from, const std::vector<std::uint8_t>& to) {
        std::size_t hits = 0;
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x) {
                if (!from[static_cast<std::size_t>(y) * width + x]) continue;
                bool hit = false;
                for (int dy = -tolerance; dy <= tolerance && !hit; ++dy)
                    for (int dx = -tolerance; dx <= tolerance && !hit; ++dx) {
                        const int yy = y + dy, xx = x + dx;
                        hit = yy >= 0 && yy < height && xx >= 0 && xx < width && to[static_cast<std::size_t>(yy) * width + xx];
                    }
                hits += hit;
            }
        return hits;
    };
    const double precision = static_cast<double>(matched(bp, bg)) / static_cast<double>(np);
    const double recall = static_cast<double>(matched(bg, bp)) / static_cast<double>(ng);
    return precision + recall == 0.0 ? 0.0 : 2.0 * precision * recall / (precision + recall);
}

VideoScore evaluate_sequence(const FrameSequence& seq, const VisionTransformer& model, const PropagationConfig& cfg) {
    if (seq.ground_truth.size() != seq.frames.size()) throw InvalidInput("sequence '" + seq.name + "' lacks per-frame ground truth");
    const auto pred = propagate(seq, model, cfg);
    std::vector<LabelGrid> gt;
    for (const auto& g : seq.ground_truth) gt.push_back(plurality_patch_labels(labels_at_resolution(g, cfg.resolution), model.config().patch_size));
    return {seq.name, j_measure(pred, gt), f_measure(pred, gt)};
}

}  // namespace mmc
