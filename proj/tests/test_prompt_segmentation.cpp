#include <cmath>
#include <map>
#include <random>
#include <set>

#include "doctest.h"
#include "mmc/errors.hpp"
#include "mmc/log.hpp"
#include "mmc/prompt_segmentation.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace mmc;

TEST_SUITE("prompt_segmentation") {

TEST_CASE("thresholded similarity matches a brute-force oracle on 100 instances") {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<float> thr(-1.f, 1.f);
    int compared = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const int gh = 2 + trial % 7, gw = 3 + trial % 5, dim = 4 + trial % 13;
        const auto f = testutil::random_features(gh, gw, dim, rng);
        const int q = static_cast<int>(rng() % (gh * gw));
        const float t = thr(rng);
        const auto mask = threshold_segment(similarity_map(f, {q / gw, q % gw}), t);
        const auto expect = oracle::similarity_map(f, q);
        for (int i = 0; i < gh * gw; ++i) {
            if (std::abs(expect[i] - t) < 1e-6) continue;  // numerically ambiguous
            const bool in = expect[i] > t;
            REQUIRE(static_cast<bool>(mask.cells[i]) == in);
            ++compared;
        }
    }
    CHECK(compared > 1000);
}

TEST_CASE("similarity map values and the query cell") {
    std::mt19937_64 rng(2);
    const auto f = testutil::random_features(4, 4, 8, rng);
    const auto m = similarity_map(f, {1, 2});
    CHECK(m.at(1, 2) == 1.f);
    const auto expect = oracle::similarity_map(f, 6);
    for (int i = 0; i < 16; ++i) CHECK(m.values[i] == doctest::Approx(expect[i]).epsilon(1e-6));
    for (float v : m.values) CHECK((v >= -1.f && v <= 1.f));
}

TEST_CASE("zero-norm token gives similarity zero and one warning") {
    std::mt19937_64 rng(3);
    auto f = testutil::random_features(2, 2, 4, rng);
    for (int d = 0; d < 4; ++d) f.patches(3, d) = 0.f;
    const std::size_t before = warning_count();
    const auto m = similarity_map(f, {0, 0});
    CHECK(m.values[3] == 0.f);
    CHECK(warning_count() == before + 1);
}

TEST_CASE("mask is monotone in the threshold (1000 trials)") {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<float> thr(-1.f, 1.f);
    for (int trial = 0; trial < 1000; ++trial) {
        const auto f = testutil::random_features(3 + trial % 4, 3 + trial % 3, 6, rng);
        const auto map = similarity_map(f, {0, 1});
        float a = thr(rng), b = thr(rng);
        if (a > b) std::swap(a, b);
        const auto lo = threshold_segment(map, a), hi = threshold_segment(map, b);
        for (std::size_t i = 0; i < lo.cells.size(); ++i) REQUIRE((!hi.cells[i] || lo.cells[i]));
        REQUIRE(hi.area() <= lo.area());
    }
}

TEST_CASE("threshold extremes") {
    std::mt19937_64 rng(5);
    const auto map = similarity_map(testutil::random_features(3, 3, 5, rng), {2, 2});
    CHECK(threshold_segment(map, 1.f).area() == 0);
    CHECK(threshold_segment(map, 0.999f).cells[8] == 1);
    CHECK(threshold_segment(map, -1.f).area() >= 8);
}

TEST_CASE("mask upsampling") {
    SegmentationMask m;
    m.grid_h = 1, m.grid_w = 2, m.cells = {1, 0};
    CHECK(m.upsample(2) == std::vector<std::uint8_t>{1, 1, 0, 0, 1, 1, 0, 0});
}

TEST_CASE("query point selection") {
    const std::vector<std::uint8_t> full(9, 1);
    auto p = select_query(full, 3, 3);
    CHECK(p.x == 1);
    CHECK(p.y == 1);
    // two separated pixels: centroid between them is not in the mask, tie goes to the smaller column
    p = select_query({1, 0, 1}, 1, 3);
    CHECK(p.x == 0);
    CHECK(p.y == 0);
    // L-shape: centroid (0.6, 0.6) falls outside; nearest pixels are (1,0)/(0,1) at equal distance, pick smaller row
    p = select_query({1, 1, 1, 0, 1, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0}, 4, 4);
    CHECK(p.y == 0);
    CHECK(p.x == 1);
    CHECK_THROWS_AS(select_query(std::vector<std::uint8_t>(4, 0), 2, 2), InvalidInput);
}

TEST_CASE("majority downsampling is strict") {
    // 4x4 pixels, 2x2 patches: top-left 3/4, top-right 2/4, bottom-left 4/4, bottom-right 0/4
    const std::vector<std::uint8_t> px{1, 1, 1, 1,
                                       1, 0, 0, 0,
                                       1, 1, 0, 0,
                                       1, 1, 0, 0};
    CHECK(majority_downsample(px, 4, 4, 2) == std::vector<std::uint8_t>{1, 0, 1, 0});
}

TEST_CASE("IoU examples") {
    CHECK(iou({1, 1, 0, 0}, {1, 0, 1, 0}) == doctest::Approx(1.0 / 3));
    CHECK(iou({0, 0}, {0, 0}) == 1.0);
    CHECK(iou({1, 0}, {0, 1}) == 0.0);
    CHECK(iou({1, 1}, {1, 1}) == 1.0);
    CHECK(miou({{1, 1, 0, 0}, {1, 0}}, {{1, 0, 1, 0}, {1, 0}}) == doctest::Approx((1.0 / 3 + 1.0) / 2));
    CHECK_THROWS_AS(iou({1}, {1, 0}), InvalidInput);
}

TEST_CASE("mIoU matches a counting oracle on 100 mask sets") {
    std::mt19937_64 rng(14);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 1 + rng() % 8, cells = 1 + rng() % 40;
        std::vector<std::vector<std::uint8_t>> p(n, std::vector<std::uint8_t>(cells)), g = p;
        for (std::size_t k = 0; k < n; ++k)
            for (std::size_t i = 0; i < cells; ++i) p[k][i] = rng() % 2, g[k][i] = rng() % 3 == 0;
        REQUIRE(miou(p, g) == doctest::Approx(oracle::miou(p, g)).epsilon(1e-12));
    }
}

TEST_CASE("threshold range parsing") {
    const auto r = parse_threshold_range("0:0.9:0.1");
    REQUIRE(r.size() == 10);
    CHECK(r.front() == 0.f);
    CHECK(r.back() == doctest::Approx(0.9f));
    CHECK(parse_threshold_range("0.25") == std::vector<float>{0.25f});
    CHECK_THROWS_AS(parse_threshold_range("0:1:0"), InvalidInput);
    CHECK_THROWS_AS(parse_threshold_range("a:b:c"), InvalidInput);
}

TEST_CASE("run-length encoding") {
    CHECK(rle_encode({1, 1, 0}) == std::vector<std::uint32_t>{0, 2, 1});
    CHECK(rle_encode({0, 0, 1}) == std::vector<std::uint32_t>{2, 1});
    CHECK(rle_encode({}).empty());
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<std::uint8_t> cells(1 + rng() % 60);
        for (auto& c : cells) c = rng() % 3 == 0;
        const auto runs = rle_encode(cells);
        std::size_t total = 0;
        for (auto r : runs) total += r;
        REQUIRE(total == cells.size());
        REQUIRE(rle_decode(runs) == cells);
    }
}

TEST_CASE("source pixel to patch mapping") {
    CHECK(source_point_to_patch(0, 0, 640, 480, 32, 4) == PatchIndex{0, 0});
    CHECK(source_point_to_patch(639, 479, 640, 480, 32, 4) == PatchIndex{7, 7});
    CHECK(source_point_to_patch(320, 240, 640, 480, 32, 4) == PatchIndex{4, 4});
    CHECK_THROWS_AS(source_point_to_patch(640, 0, 640, 480, 32, 4), InvalidInput);
    CHECK_THROWS_AS(source_point_to_patch(-1, 0, 640, 480, 32, 4), InvalidInput);
}

TEST_CASE("sweep on separable features reaches perfect IoU") {
    // left half label 1, right half label 2, one-hot features per label
    EvalSample s;
    s.id = "a";
    s.image = ImageTensor(3, 8, 8);
    s.labels = LabelGrid(8, 8);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) s.labels.at(y, x) = x < 4 ? 1 : 2;
    FeatureProvider provider = [](const std::string&, const ImageTensor&) {
        FeatureSet f;
        f.grid_h = f.grid_w = 2;
        f.patches = Matrix(4, 2);
        for (int r = 0; r < 4; ++r) f.patches(r, r % 2) = 1.f;
        f.cls = {0.f, 0.f};
        return f;
    };
    const auto res = threshold_sweep({s}, provider, {-1.f, 0.5f, 0.9f}, 4);
    CHECK(res.instances == 2);
    REQUIRE(res.rows.size() == 3);
    CHECK(res.rows[0].miou == doctest::Approx(0.5));
    CHECK(res.rows[1].miou == 1.0);
    CHECK(res.rows[2].miou == 1.0);
    CHECK(res.optimal_threshold == 0.5f);  // first of the tied best
    CHECK(res.rows[1].per_class.size() == 2);
}

TEST_CASE("sweep averages instances within a class, then classes") {
    std::mt19937_64 rng(7);
    std::vector<EvalSample> samples;
    std::map<std::string, FeatureSet> feats;
    for (int i = 0; i < 6; ++i) {
        EvalSample s;
        s.id = std::to_string(i);
        s.image = ImageTensor(3, 12, 12);
        s.labels = LabelGrid(12, 12);
        for (int y = 0; y < 12; ++y)
            for (int x = 0; x < 12; ++x) s.labels.at(y, x) = (i % 3 == 0) ? (x < 8 ? 1 : 0) : (y < 4 ? 2 : (y < 8 ? 3 : 0));
        feats[s.id] = testutil::random_features(3, 3, 6, rng);
        samples.push_back(s);
    }
    FeatureProvider provider = [&](const std::string& id, const ImageTensor&) { return feats.at(id); };
    const std::vector<float> ts{0.0f, 0.3f};
    const auto res = threshold_sweep(samples, provider, ts, 4);
    for (std::size_t k = 0; k < ts.size(); ++k) {
        std::map<int, std::vector<double>> by_label;
        for (const auto& s : samples) {
            std::set<int> labels(s.labels.labels.begin(), s.labels.labels.end());
            labels.erase(0);
            for (int l : labels) {
                std::vector<std::uint8_t> px(s.labels.labels.size());
                for (std::size_t i = 0; i < px.size(); ++i) px[i] = s.labels.labels[i] == l;
                const auto q = select_query(px, 12, 12).patch(4);
                by_label[l].push_back(iou(threshold_segment(similarity_map(feats[s.id], q), ts[k]).cells, majority_downsample(px, 12, 12, 4)));
            }
        }
        double total = 0;
        for (auto& [l, v] : by_label) {
            double m = 0;
            for (double x : v) m += x;
            total += m / v.size();
        }
        CHECK(res.rows[k].miou == doctest::Approx(total / by_label.size()).epsilon(1e-12));
    }
    CHECK(res.instances == 2 * 1 + 4 * 2);
}

TEST_CASE("image-level segmentation agrees with the feature path") {
    mmc::VisionTransformer model(testutil::tiny_backbone());
    model.init_weights(3);
    std::mt19937_64 rng(8);
    const auto src = testutil::random_image(11, 13, rng);
    const auto direct = segment_image(model, src, 6, 9, 0.2f, 8);
    const auto feats = encode_at_resolution(model, src, 8);
    const auto via = segment_features(feats, 6, 9, 13, 11, 0.2f, 8, 4);
    CHECK(direct.mask.cells == via.mask.cells);
    CHECK(direct.heatmap.values == via.heatmap.values);
    CHECK(direct.mask.query == source_point_to_patch(6, 9, 13, 11, 8, 4));
    CHECK_THROWS_AS(segment_features(feats, 6, 9, 13, 11, 1.5f, 8, 4), InvalidInput);
}

}
