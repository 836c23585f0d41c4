#include "mmc/prompt_segmentation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "mmc/errors.hpp"
#include "mmc/log.hpp"

namespace mmc {

std::size_t SegmentationMask::area() const {
    return static_cast<std::size_t>(std::count(cells.begin(), cells.end(), std::uint8_t{1}));
}

std::vector<std::uint8_t> SegmentationMask::upsample(int patch_size) const {
    const int H = grid_h * patch_size, W = grid_w * patch_size;
    std::vector<std::uint8_t> out(static_cast<std::size_t>(H) * W);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            out[static_cast<std::size_t>(y) * W + x] = cells[static_cast<std::size_t>(y / patch_size) * grid_w + x / patch_size];
    return out;
}

SimilarityMap similarity_map(const FeatureSet& features, PatchIndex query) {
    if (query.row < 0 || query.row >= features.grid_h || query.col < 0 || query.col >= features.grid_w)
        throw InvalidInput("similarity_map: query patch outside the grid");
    const std::size_t P = features.num_patches(), C = features.patches.cols();
    std::vector<double> norms(P);
    for (std::size_t p = 0; p < P; ++p) {
        double s = 0.0;
        for (float v : features.patches.row(p)) s += static_cast<double>(v) * v;
        norms[p] = std::sqrt(s);
    }
    const std::size_t q = static_cast<std::size_t>(query.row) * features.grid_w + query.col;
    auto qrow = features.patches.row(q);
    SimilarityMap map;
    map.grid_h = features.grid_h;
    map.grid_w = features.grid_w;
    map.query = query;
    map.values.resize(P);
    bool warned = false;
    for (std::size_t p = 0; p < P; ++p) {
        if (norms[p] == 0.0 || norms[q] == 0.0) {
            map.values[p] = 0.f;
            if (!warned) warn("similarity_map: zero-norm patch token, similarity set to 0");
            warned = true;
            continue;
        }
        auto row = features.patches.row(p);
        double dot = 0.0;
        for (std::size_t c = 0; c < C; ++c) dot += static_cast<double>(qrow[c]) * row[c];
        map.values[p] = static_cast<float>(std::clamp(dot / (norms[p] * norms[q]), -1.0, 1.0));
    }
    if (norms[q] != 0.0) map.values[q] = 1.f;
    return map;
}

SegmentationMask threshold_segment(const SimilarityMap& map, float threshold) {
    SegmentationMask mask;
    mask.grid_h = map.grid_h;
    mask.grid_w = map.grid_w;
    mask.threshold = threshold;
    mask.query = map.query;
    mask.cells.resize(map.values.size());
    for (std::size_t i = 0; i < map.values.size(); ++i) mask.cells[i] = map.values[i] > threshold ? 1 : 0;
    return mask;
}

PromptPoint select_query(const std::vector<std::uint8_t>& mask, int height, int width) {
    if (mask.size() != static_cast<std::size_t>(height) * width) throw InvalidInput("select_query: mask size mismatch");
    double sy = 0.0, sx = 0.0;
    std::size_t n = 0;
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            if (mask[static_cast<std::size_t>(y) * width + x]) {
                sy += y;
                sx += x;
                ++n;
            }
    if (n == 0) throw InvalidInput("select_query: empty mask");
    const double cy = sy / n, cx = sx / n;
    double best = std::numeric_limits<double>::infinity();
    PromptPoint point;
    // row-major scan with strict improvement keeps the smallest (row, col) among ties
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            if (!mask[static_cast<std::size_t>(y) * width + x]) continue;
            const double d = (y - cy) * (y - cy) + (x - cx) * (x - cx);
            if (d < best) {
                best = d;
                point = {x, y};
            }
        }
    return point;
}

std::vector<std::uint8_t> majority_downsample(const std::vector<std::uint8_t>& mask, int height, int width, int patch_size) {
    if (height % patch_size != 0 || width % patch_size != 0) throw InvalidInput("majority_downsample: size not divisible by patch size");
    const int gh = height / patch_size, gw = width / patch_size;
    std::vector<std::uint8_t> out(static_cast<std::size_t>(gh) * gw);
    const int half = patch_size * patch_size;
    for (int gy = 0; gy < gh; ++gy)
        for (int gx = 0; gx < gw; ++gx) {
            int count = 0;
            for (int y = 0; y < patch_size; ++y)
                for (int x = 0; x < patch_size; ++x)
                    count += mask[static_cast<std::size_t>(gy * patch_size + y) * width + gx * patch_size + x] != 0;
            out[static_cast<std::size_t>(gy) * gw + gx] = 2 * count > half ? 1 : 0;
        }
    return out;
}

double iou(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
    if (a.size() != b.size()) throw InvalidInput("iou: mask sizes differ");
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        inter += a[i] && b[i];
        uni += a[i] || b[i];
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double miou(const std::vector<std::vector<std::uint8_t>>& pred, const std::vector<std::vector<std::uint8_t>>& gt) {
    if (pred.size() != gt.size()) throw InvalidInput("miou: prediction/ground-truth count mismatch");
    if (pred.empty()) throw InvalidInput("miou: no instances");
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) s += iou(pred[i], gt[i]);
    return s / static_cast<double>(pred.size());
}

EvalSample prepare_eval_sample(std::string id, const ImageTensor& image, const LabelGrid& labels, int resolution) {
    if (image.height != labels.height || image.width != labels.width) throw InvalidInput("image and label raster differ in size");
    return {std::move(id), resize_bilinear(image, resolution, resolution), resize_nearest(labels, resolution, resolution)};
}

FeatureProvider live_features(const VisionTransformer& model) {
    return [&model](const std::string&, const ImageTensor& image) { return model.encode(image); };
}

std::vector<float> parse_threshold_range(const std::string& spec) {
    std::vector<double> parts;
    std::stringstream ss(spec);
    std::string item;
    while (std::getline(ss, item, ':')) {
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(item, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != item.size()) throw InvalidInput("threshold range must be lo:hi:step, got '" + spec + "'");
        parts.push_back(v);
    }
    if (parts.size() == 1) return {static_cast<float>(parts[0])};
    if (parts.size() != 3 || !(parts[2] > 0.0) || parts[1] < parts[0]) throw InvalidInput("threshold range must be lo:hi:step");
    std::vector<float> out;
    const long n = std::lround(std::floor((parts[1] - parts[0]) / parts[2] + 1e-9));
    for (long i = 0; i <= n; ++i) out.push_back(static_cast<float>(std::round((parts[0] + i * parts[2]) * 1e6) / 1e6));
    return out;
}

SweepResult threshold_sweep(const std::vector<EvalSample>& samples, const FeatureProvider& features,
                            const std::vector<float>& thresholds, int patch_size) {
    if (thresholds.empty()) throw InvalidInput("threshold_sweep: empty threshold list");
    if (samples.empty()) throw InvalidInput("threshold_sweep: empty dataset");

    struct Instance {
        int label;
        SimilarityMap map;
        std::vector<std::uint8_t> gt;
    };
    std::vector<std::vector<Instance>> per_sample(samples.size());
#pragma omp parallel for schedule(dynamic)
    for (std::size_t s = 0; s < samples.size(); ++s) {
        const EvalSample& sample = samples[s];
        std::set<int> labels(sample.labels.labels.begin(), sample.labels.labels.end());
        labels.erase(0);
        if (labels.empty()) continue;
        const FeatureSet f = features(sample.id, sample.image);
        for (int label : labels) {
            std::vector<std::uint8_t> pixels(sample.labels.labels.size());
            for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = sample.labels.labels[i] == label;
            const PromptPoint point = select_query(pixels, sample.labels.height, sample.labels.width);
            per_sample[s].push_back(
                {label, similarity_map(f, point.patch(patch_size)), majority_downsample(pixels, sample.labels.height, sample.labels.width, patch_size)});
        }
    }

    SweepResult result;
    for (const auto& v : per_sample) result.instances += v.size();
    if (result.instances == 0) throw InvalidInput("threshold_sweep: no annotated instances");
    for (float t : thresholds) {
        SweepRow row;
        row.threshold = t;
        std::map<int, std::pair<double, std::size_t>> acc;
        for (const auto& v : per_sample)
            for (const auto& inst : v) {
                auto& a = acc[inst.label];
                a.first += iou(threshold_segment(inst.map, t).cells, inst.gt);
                ++a.second;
            }
        double total = 0.0;
        for (const auto& [label, a] : acc) {
            row.per_class[label] = a.first / static_cast<double>(a.second);
            total += row.per_class[label];
        }
        row.miou = total / static_cast<double>(acc.size());
        if (result.rows.empty() || row.miou > result.optimal_miou) {
            result.optimal_miou = row.miou;
            result.optimal_threshold = t;
        }
        result.rows.push_back(std::move(row));
    }
    return result;
}

std::vector<std::uint32_t> rle_encode(const std::vector<std::uint8_t>& cells) {
    std::vector<std::uint32_t> runs;
    if (cells.empty()) return runs;
    std::uint8_t current = 0;
    std::uint32_t length = 0;
    for (std::uint8_t c : cells) {
        const std::uint8_t bit = c ? 1 : 0;
        if (bit != current) {
            runs.push_back(length);
            current = bit;
            length = 0;
        }
        ++length;
    }
    runs.push_back(length);
    return runs;
}

std::vector<std::uint8_t> rle_decode(const std::vector<std::uint32_t>& runs) {
    std::vector<std::uint8_t> cells;
    std::uint8_t bit = 0;
    for (std::uint32_t r : runs) {
        cells.insert(cells.end(), r, bit);
        bit ^= 1;
    }
    return cells;
}

PatchIndex source_point_to_patch(int x, int y, int src_width, int src_height, int resolution, int patch_size) {
    if (x < 0 || y < 0 || x >= src_width || y >= src_height) throw InvalidInput("point outside the image");
    const int rx = static_cast<int>(static_cast<long long>(x) * resolution / src_width);
    const int ry = static_cast<int>(static_cast<long long>(y) * resolution / src_height);
    return {ry / patch_size, rx / patch_size};
}

FeatureSet encode_at_resolution(const VisionTransformer& model, const ImageTensor& source, int resolution) {
    if (resolution % model.config().patch_size != 0) throw InvalidInput("resolution must be divisible by the patch size");
    return model.encode(resize_bilinear(source, resolution, resolution));
}

PointSegmentation segment_features(const FeatureSet& features, int x, int y, int src_width, int src_height, float threshold,
                                   int resolution, int patch_size) {
    if (!(threshold >= -1.f && threshold <= 1.f)) throw InvalidInput("threshold must be in [-1, 1]");
    PointSegmentation out;
    out.heatmap = similarity_map(features, source_point_to_patch(x, y, src_width, src_height, resolution, patch_size));
    out.mask = threshold_segment(out.heatmap, threshold);
    return out;
}

PointSegmentation segment_image(const VisionTransformer& model, const ImageTensor& source, int x, int y, float threshold,
                                int resolution) {
    const FeatureSet f = encode_at_resolution(model, source, resolution);
    return segment_features(f, x, y, source.width, source.height, threshold, resolution, model.config().patch_size);
}

}  // namespace mmc
