#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "doctest.h"
#include "mmc/dataset.hpp"
#include "mmc/errors.hpp"
#include "mmc/evaluation.hpp"
#include "mmc/feature_cache.hpp"
#include "mmc/image_io.hpp"
#include "mmc/synth.hpp"
#include "test_util.hpp"

using namespace mmc;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) { fs::remove_all(path); }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_SUITE("data_pipeline") {

TEST_CASE("synthetic textures are deterministic and well formed") {
    const auto a = synth_textures(20, 4, 32, 9), b = synth_textures(20, 4, 32, 9), c = synth_textures(20, 4, 32, 10);
    REQUIRE(a.size() == 20);
    bool differs = false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].image.data == b[i].image.data);
        CHECK(a[i].labels.labels == b[i].labels.labels);
        differs |= a[i].image.data != c[i].image.data;
        CHECK((a[i].regions == 2 || a[i].regions == 3));
        std::set<int> present(a[i].labels.labels.begin(), a[i].labels.labels.end());
        CHECK(static_cast<int>(present.size()) == a[i].regions);
        for (int l : present) {
            CHECK((l >= 1 && l <= 4));
            const auto n = std::count(a[i].labels.labels.begin(), a[i].labels.labels.end(), l);
            CHECK(n * 8 >= 32 * 32);
        }
        for (float v : a[i].image.data) REQUIRE((v >= 0.f && v <= 1.f));
    }
    CHECK(differs);
}

TEST_CASE("synthetic video") {
    const auto seq = synth_video(5, 16, 3, 1);
    CHECK(seq.frames.size() == 5);
    CHECK(seq.ground_truth.size() == 5);
    CHECK(seq.first_labels.labels == seq.ground_truth[0].labels);
    CHECK(seq.ground_truth[0].labels != seq.ground_truth[4].labels);  // the square moves
}

TEST_CASE("dataset manifest round trip and loading") {
    TempDir tmp("mmc_data_manifest");
    const auto images = synth_textures(12, 3, 16, 2);
    write_synth_dataset(tmp.path, images, 4);
    const auto m = read_dataset_manifest(tmp.path);
    CHECK(m.schema_version == 1);
    CHECK(m.split("train").size() == 8);
    CHECK(m.split("test").size() == 4);
    CHECK_THROWS_AS(m.split("val"), InvalidInput);
    CHECK(read_dataset_manifest(tmp.path / "manifest.json").split("test").size() == 4);

    const auto items = load_dataset(m, "test");
    REQUIRE(items.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
        const auto& src = images[8 + i];
        CHECK(items[i].labels.labels == src.labels.labels);
        CHECK(items[i].image.height == 16);
        for (std::size_t j = 0; j < src.image.data.size(); ++j) REQUIRE(std::abs(items[i].image.data[j] - src.image.data[j]) <= 0.5f / 255.f + 1e-6f);
        CHECK((image_class(items[i]) >= 0 && image_class(items[i]) < 3));
    }
    const auto shuffled = load_dataset(m, "train", 3), again = load_dataset(m, "train", 3);
    std::set<std::string> ids;
    for (std::size_t i = 0; i < shuffled.size(); ++i) {
        CHECK(shuffled[i].id == again[i].id);
        ids.insert(shuffled[i].id);
    }
    CHECK(ids.size() == 8);
}

TEST_CASE("load errors name the offending file") {
    TempDir tmp("mmc_data_errors");
    write_synth_dataset(tmp.path, synth_textures(4, 2, 16, 3), 2);
    auto m = read_dataset_manifest(tmp.path);
    const auto victim = m.root / m.split("test")[1].image;
    std::ofstream(victim, std::ios::trunc) << "not a png";
    try {
        load_dataset(m, "test");
        FAIL("expected LoadError");
    } catch (const LoadError& e) {
        CHECK(e.path() == victim.string());
    }
    CHECK_THROWS_AS(read_dataset_manifest(tmp.path / "missing"), LoadError);
    std::ofstream(tmp.path / "manifest.json", std::ios::trunc) << R"({"schema_version": 7, "splits": {}})";
    CHECK_THROWS_AS(read_dataset_manifest(tmp.path), LoadError);
}

TEST_CASE("image and label I/O") {
    TempDir tmp("mmc_io");
    fs::create_directories(tmp.path);
    LabelGrid labels(5, 7);
    for (std::size_t i = 0; i < labels.labels.size(); ++i) labels.labels[i] = static_cast<int>(i * 37 % 300);
    write_labels(tmp.path / "l.png", labels);
    CHECK(read_labels(tmp.path / "l.png").labels == labels.labels);
    std::mt19937_64 rng(1);
    const auto im = testutil::random_image(6, 9, rng);
    write_image(tmp.path / "i.png", im);
    const auto back = read_image(tmp.path / "i.png");
    CHECK(back.width == 9);
    const auto png = encode_png(im);
    const auto decoded = decode_image(png);
    CHECK(decoded.data == back.data);
    const std::vector<std::uint8_t> garbage{1, 2, 3, 4};
    CHECK_THROWS_AS(decode_image(garbage), InvalidInput);
    CHECK_THROWS_AS(read_image(tmp.path / "none.png"), LoadError);
}

TEST_CASE("video sequences on disk") {
    TempDir tmp("mmc_videos");
    std::vector<FrameSequence> seqs{synth_video(3, 16, 3, 1), synth_video(4, 16, 3, 2)};
    seqs[0].name = "b", seqs[1].name = "a";
    write_sequences(tmp.path, seqs);
    const auto loaded = load_sequences(tmp.path);
    REQUIRE(loaded.size() == 2);
    CHECK(loaded[0].name == "a");
    CHECK(loaded[0].frames.size() == 4);
    CHECK(loaded[0].ground_truth.size() == 4);
    CHECK(loaded[1].first_labels.labels == seqs[0].first_labels.labels);
}

TEST_CASE("feature cache: no-op rerun, conflicts, and equality with live encoding") {
    TempDir tmp("mmc_cache");
    write_synth_dataset(tmp.path / "ds", synth_textures(6, 3, 8, 4), 3);
    const auto items = load_dataset(read_dataset_manifest(tmp.path / "ds"), "test");
    VisionTransformer model(testutil::tiny_backbone());
    model.init_weights(5);
    const CacheKey key{"abc", 8, 0};
    const auto dir = tmp.path / "cache";

    auto r = cache_features(items, model, key, dir);
    CHECK(r.written == 3);
    const auto stamp = fs::last_write_time(dir / "entries" / items[0].id / "manifest.txt");
    r = cache_features(items, model, key, dir);
    CHECK(r.written == 0);
    CHECK(r.skipped == 3);
    CHECK(fs::last_write_time(dir / "entries" / items[0].id / "manifest.txt") == stamp);

    CHECK_THROWS_AS(cache_features(items, model, {"other", 8, 0}, dir), CacheConflict);
    CHECK_THROWS_AS(cache_features(items, model, {"abc", 16, 0}, dir), CacheConflict);

    FeatureCache cache(dir);
    CHECK(cache.key() == key);
    CHECK(cache.contains(items[1].id));
    CHECK_FALSE(cache.contains("nope"));
    const auto samples = make_eval_samples(items, 8);
    const auto live = live_features(model);
    const auto cached = cache.provider();
    for (const auto& s : samples) {
        const auto a = live(s.id, s.image), b = cached(s.id, s.image);
        CHECK(a.patches.storage() == b.patches.storage());
        CHECK(a.cls == b.cls);
        CHECK(a.grid_h == b.grid_h);
    }
    const auto thresholds = parse_threshold_range("0:0.9:0.1");
    const auto sweep_live = threshold_sweep(samples, live, thresholds, 4);
    const auto sweep_cached = threshold_sweep(samples, cached, thresholds, 4);
    CHECK(sweep_live.optimal_miou == sweep_cached.optimal_miou);
    CHECK_THROWS_AS(cached("nope", samples[0].image), LoadError);

    r = cache_features(items, model, {"other", 8, 0}, dir, true);
    CHECK(r.written == 3);
    CHECK(FeatureCache(dir).key().checkpoint_hash == "other");
    CHECK_THROWS_AS(FeatureCache(tmp.path / "absent"), LoadError);
}

}
