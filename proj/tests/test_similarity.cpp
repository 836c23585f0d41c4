#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "doctest.h"
#include "mmc/errors.hpp"
#include "mmc/similarity.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using oracle::cosine;

using namespace mmc;

TEST_SUITE("similarity_analysis") {

TEST_CASE("majority patch labels") {
    LabelGrid g(2, 4);
    // patch 0: 3 of label 1; patch 1: two 2s and two 3s (no majority)
    g.labels = {1, 1, 2, 3,
                1, 0, 2, 3};
    CHECK(majority_patch_labels(g, 2) == std::vector<int>{1, -1});
}

TEST_CASE("pair similarities match a brute-force oracle on 100 images") {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 4 + trial % 9;
        const Matrix m = testutil::random_matrix(n, 5, rng);
        std::vector<int> labels(n);
        for (auto& l : labels) l = static_cast<int>(rng() % 4) - 1;  // -1 .. 2
        for (PairKind kind : {PairKind::intra, PairKind::inter}) {
            std::vector<double> expect;
            for (int i = 0; i < n; ++i)
                for (int j = i + 1; j < n; ++j) {
                    if (labels[i] <= 0 || labels[j] <= 0) continue;
                    if ((labels[i] == labels[j]) != (kind == PairKind::intra)) continue;
                    expect.push_back(cosine(m.data() + i * 5, m.data() + j * 5, 5));
                }
            const auto got = pair_similarities(m, labels, kind);
            REQUIRE(got.size() == expect.size());
            for (std::size_t i = 0; i < got.size(); ++i) REQUIRE(got[i] == doctest::Approx(expect[i]).epsilon(1e-6));
        }
    }
}

TEST_CASE("corpus sampling respects the budget and is seeded") {
    std::mt19937_64 rng(2);
    std::vector<LabeledPatches> images;
    for (int i = 0; i < 5; ++i) {
        LabeledPatches lp{testutil::random_matrix(10, 4, rng), std::vector<int>(10)};
        for (int j = 0; j < 10; ++j) lp.labels[j] = 1 + j % 2;
        images.push_back(lp);
    }
    const auto all = corpus_pair_similarities(images, 1000000, 0);
    CHECK(all.intra.size() == 5 * 2 * 10);  // 2 labels x C(5,2) pairs
    CHECK(all.inter.size() == 5 * 25);
    const auto a = corpus_pair_similarities(images, 30, 7), b = corpus_pair_similarities(images, 30, 7);
    CHECK(a.intra.size() == 30);
    CHECK(a.inter.size() == 30);
    CHECK(a.intra == b.intra);
    for (float v : a.intra) CHECK(std::find(all.intra.begin(), all.intra.end(), v) != all.intra.end());
}

TEST_CASE("histogram and overlap") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<float> u(-1.f, 1.f);
    std::vector<float> x(5000), y(5000);
    for (auto& v : x) v = u(rng);
    for (auto& v : y) v = 0.5f * u(rng) + 0.3f;
    const auto hx = histogram(x, PairKind::intra), hy = histogram(y, PairKind::inter);
    REQUIRE(hx.edges.size() == 51);
    CHECK(hx.edges.front() == -1.0);
    CHECK(hx.edges.back() == 1.0);
    double mass = 0;
    for (std::size_t i = 0; i < hx.densities.size(); ++i) mass += hx.densities[i] * hx.bin_width(i);
    CHECK(mass == doctest::Approx(1.0));
    CHECK(overlap_area(hx, hx) == doctest::Approx(1.0));
    const double o = overlap_area(hx, hy);
    CHECK(o == doctest::Approx(overlap_area(hy, hx)));
    CHECK((o > 0.0 && o < 1.0));
    // uniform on [-1,1] vs uniform on [-0.2,0.8]: analytic overlap 0.5
    CHECK(o == doctest::Approx(0.5).epsilon(0.08));

    const std::vector<float> lo(10, -0.9f), hi(10, 0.9f);
    CHECK(overlap_area(histogram(lo, PairKind::intra), histogram(hi, PairKind::inter)) == 0.0);
    const std::vector<float> one{1.0f};
    CHECK(histogram(one, PairKind::intra).densities.back() > 0.0);
    CHECK_THROWS_AS(overlap_area(hx, histogram(y, PairKind::inter, 20)), InvalidInput);
}

TEST_CASE("overlap area matches a histogram oracle on 100 sample pairs") {
    std::mt19937_64 rng(13);
    for (int trial = 0; trial < 100; ++trial) {
        std::uniform_real_distribution<float> a(-1.f, 0.2f + 0.008f * trial), b(-0.5f, 1.f);
        std::vector<float> x(50 + trial * 3), y(80 + trial);
        for (auto& v : x) v = a(rng);
        for (auto& v : y) v = b(rng);
        const std::vector<double> xd(x.begin(), x.end()), yd(y.begin(), y.end());
        REQUIRE(overlap_area(histogram(x, PairKind::intra), histogram(y, PairKind::inter)) == doctest::Approx(oracle::overlap(xd, yd)).epsilon(1e-9));
    }
}

TEST_CASE("overlap statistics") {
    PairSample s{{0.9f, 0.8f}, {0.1f, 0.2f, 0.3f}};
    const auto st = overlap_stats(s);
    CHECK(st.overlap == 0.0);
    CHECK(st.mean_intra == doctest::Approx(0.85));
    CHECK(st.mean_inter == doctest::Approx(0.2));
    CHECK(st.intra_count == 2);
    CHECK(st.inter_count == 3);
}

TEST_CASE("head features") {
    FeatureSet f;
    f.cls = {1.f, 2.f};
    f.patches = Matrix(2, 2);
    f.patches(0, 0) = 1.f, f.patches(1, 0) = 3.f, f.patches(0, 1) = 2.f, f.patches(1, 1) = 2.f;
    CHECK(head_feature(f, HeadType::cls) == std::vector<float>{1.f, 2.f});
    CHECK(head_feature(f, HeadType::pat) == std::vector<float>{2.f, 2.f});
    CHECK(head_feature(f, HeadType::hyber) == std::vector<float>{1.f, 2.f, 2.f, 2.f});
    CHECK(parse_head_type("PAT") == HeadType::pat);
    CHECK(to_string(parse_head_type("hyber")) == "Hyber");
    CHECK(parse_head_type(to_string(HeadType::cls)) == HeadType::cls);
    CHECK_THROWS_AS(parse_head_type("mean"), InvalidInput);
}

TEST_CASE("k-NN matches a full-sort oracle on 100 instances and ignores row scale") {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<float> scale(0.1f, 10.f);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 10 + trial % 30, k = 1 + trial % 10;
        Matrix train = testutil::random_matrix(n, 6, rng);
        std::vector<int> labels(n);
        for (auto& l : labels) l = static_cast<int>(rng() % 4);
        const Matrix q = testutil::random_matrix(5, 6, rng);
        std::vector<int> expect(5), qlabels(5);
        for (int i = 0; i < 5; ++i) {
            expect[i] = oracle::knn(train, labels, q.data() + i * 6, k);
            REQUIRE(knn_classify(train, labels, q.row(i), k) == expect[i]);
            qlabels[i] = static_cast<int>(rng() % 4);
        }
        double acc = 0;
        for (int i = 0; i < 5; ++i) acc += expect[i] == qlabels[i];
        CHECK(knn_accuracy(train, labels, q, qlabels, k) == doctest::Approx(acc / 5));
        for (std::size_t r = 0; r < train.rows(); ++r) {
            const float s = scale(rng);
            for (float& v : train.row(r)) v *= s;
        }
        for (int i = 0; i < 5; ++i) REQUIRE(knn_classify(train, labels, q.row(i), k) == expect[i]);
    }
}

TEST_CASE("k-NN tie rules") {
    Matrix train(4, 2);
    train(0, 0) = 1.f;                       // label 0, sim 1 to query
    train(1, 0) = 1.f;                       // identical row, label 1: equal similarity, higher index
    train(2, 1) = 1.f;                       // label 1, sim 0
    train(3, 0) = -1.f;                      // label 0, sim -1
    const std::vector<int> labels{0, 1, 1, 0};
    const std::vector<float> q{1.f, 0.f};
    CHECK(knn_classify(train, labels, q, 1) == 0);  // lower index ranks first
    CHECK(knn_classify(train, labels, q, 2) == 0);  // 1-1 vote tie, label 0 has the best-ranked neighbour
    CHECK(knn_classify(train, labels, q, 3) == 1);
    CHECK_THROWS_AS(knn_classify(train, labels, q, 0), InvalidInput);
}

TEST_CASE("one-shot F1") {
    const std::vector<float> sims{0.95f, 0.85f, 0.4f, 0.3f, 0.82f};
    const std::vector<std::uint8_t> same{1, 1, 1, 0, 0};
    const auto r = oneshot_f1(sims, same, {0.5f, 0.8f, 0.9f, 0.99f});
    // T=0.5: tp 2, fp 1, fn 1 -> 2/3; T=0.8 same; T=0.9: tp 1, fn 2 -> 0.5; T=0.99: 0
    CHECK(r.f1[0] == doctest::Approx(2.0 / 3));
    CHECK(r.f1[1] == doctest::Approx(2.0 / 3));
    CHECK(r.f1[2] == doctest::Approx(0.5));
    CHECK(r.f1[3] == 0.0);
    CHECK(r.best_f1 == doctest::Approx(2.0 / 3));
    CHECK(r.best_threshold == 0.5f);
    CHECK(oneshot_f1(sims, same).thresholds.size() == 9);
    CHECK_THROWS_AS(oneshot_f1(sims, {1, 1, 1, 1, 1}), InvalidInput);
}

TEST_CASE("one-shot pairs") {
    std::mt19937_64 rng(5);
    const Matrix s = testutil::random_matrix(3, 4, rng), q = testutil::random_matrix(2, 4, rng);
    std::vector<float> sims;
    std::vector<std::uint8_t> same;
    oneshot_pairs(s, {0, 1, 2}, q, {1, 5}, sims, same);
    REQUIRE(sims.size() == 6);
    CHECK(std::accumulate(same.begin(), same.end(), 0) == 1);
    // support-major order
    for (std::size_t i = 0; i < 6; ++i) CHECK(sims[i] == doctest::Approx(cosine(s.data() + (i / 2) * 4, q.data() + (i % 2) * 4, 4)).epsilon(1e-6));
    CHECK(same[2] == 1);
}

TEST_CASE("sample variance matches a two-pass oracle") {
    std::mt19937_64 rng(6);
    std::normal_distribution<float> n(3.f, 2.f);
    for (int trial = 0; trial < 100; ++trial) {
        const int views = 2 + trial % 20, dim = 1 + trial % 7;
        std::vector<std::vector<float>> x(views, std::vector<float>(dim));
        for (auto& v : x)
            for (auto& e : v) e = n(rng);
        double expect = 0;
        for (int d = 0; d < dim; ++d) {
            double mean = 0, ss = 0;
            for (auto& v : x) mean += v[d];
            mean /= views;
            for (auto& v : x) ss += (v[d] - mean) * (v[d] - mean);
            expect += ss / (views - 1);
        }
        REQUIRE(mean_sample_variance(x) == doctest::Approx(expect / dim).epsilon(1e-9));
    }
    CHECK(mean_sample_variance({{1.f, 2.f}, {1.f, 2.f}}) == 0.0);
    CHECK_THROWS_AS(mean_sample_variance({{1.f}}), InvalidInput);
}

TEST_CASE("feature variance is zero without augmentation and positive with it") {
    VisionTransformer model(testutil::tiny_backbone());
    model.init_weights(2);
    std::mt19937_64 rng(7);
    const auto image = testutil::random_image(8, 8, rng);
    for (VarianceMode mode : {VarianceMode::crop_cls, VarianceMode::mask_pat}) {
        VarianceConfig cfg;
        cfg.n_views = 8;
        cfg.mode = mode;
        cfg.augment = false;
        CHECK(feature_variance(model, image, cfg) == doctest::Approx(0.0).scale(1e-12));
        cfg.augment = true;
        CHECK(feature_variance(model, image, cfg) > 0.0);
        CHECK(feature_variance(model, image, cfg) == feature_variance(model, image, cfg));
    }
}

}
