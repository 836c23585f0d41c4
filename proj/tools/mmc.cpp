// Umbrella command-line tool. Every subcommand writes a JSON report (stdout or --out) and exits 0;
// failures print {"error": ..., "message": ...} on stderr with a nonzero exit code.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "httplib.h"
#include "json.hpp"
#include "mmc/checkpoint.hpp"
#include "mmc/dataset.hpp"
#include "mmc/errors.hpp"
#include "mmc/evaluation.hpp"
#include "mmc/feature_cache.hpp"
#include "mmc/image_io.hpp"
#include "mmc/kernels.hpp"
#include "mmc/log.hpp"
#include "mmc/prompt_segmentation.hpp"
#include "mmc/run_config.hpp"
#include "mmc/service.hpp"
#include "mmc/similarity.hpp"
#include "mmc/synth.hpp"
#include "mmc/training.hpp"
#include "mmc/video.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mmc;

namespace {

enum Exit { ok = 0, failure = 1, bad_input = 2, load_failed = 3, conflict = 4, diverged = 5 };

void emit(const json& report, const std::string& out) {
    if (out.empty()) {
        std::cout << report.dump(2) << '\n';
        return;
    }
    if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
    std::ofstream f(out);
    f << report.dump(2) << '\n';
    if (!f) throw LoadError(out, "cannot write report");
}

// Model source shared by the evaluation commands: a checkpoint, or a seeded random initialisation.
struct ModelOptions {
    std::string checkpoint;
    bool student = false;
    std::optional<std::uint64_t> random_init;
    std::string preset = "micro";

    void add(CLI::App* cmd) {
        cmd->add_option("--checkpoint", checkpoint, "Checkpoint directory or run directory (latest step is used)");
        cmd->add_flag("--student", student, "Evaluate the student backbone instead of the EMA teacher");
        cmd->add_option("--random-init", random_init, "Use a randomly initialised backbone with this seed");
        cmd->add_option("--preset", preset, "Backbone preset for --random-init (micro, small, base)");
    }

    struct Loaded {
        std::shared_ptr<VisionTransformer> model;
        std::string hash;
        std::string source;
    };

    Loaded load() const {
        if (random_init) {
            BackboneConfig cfg = preset == "small" ? BackboneConfig::small() : preset == "base" ? BackboneConfig::base() : BackboneConfig::micro();
            auto m = std::make_shared<VisionTransformer>(cfg);
            m->init_weights(*random_init);
            return {m, "random-" + std::to_string(*random_init), "random-init"};
        }
        if (checkpoint.empty()) throw InvalidInput("either --checkpoint or --random-init is required");
        const fs::path dir = resolve_checkpoint(checkpoint);
        return {std::make_shared<VisionTransformer>(load_backbone(dir, !student)), checkpoint_hash(dir), dir.string()};
    }
};

// Evaluation corpus plus the feature path (live encoder or cache).
struct DataOptions {
    std::string dataset;
    std::string split = "test";
    int resolution = 0;
    std::string cache;
    std::size_t limit = 0;

    void add(CLI::App* cmd, const std::string& default_split = "test") {
        split = default_split;
        cmd->add_option("--dataset", dataset, "Dataset directory containing manifest.json")->required();
        cmd->add_option("--split", split, "Dataset split");
        cmd->add_option("--resolution", resolution, "Evaluation resolution (default: the backbone's training size)");
        cmd->add_option("--cache", cache, "Read features from this cache instead of encoding");
        cmd->add_option("--limit", limit, "Use only the first N items of the split");
    }

    int effective_resolution(const VisionTransformer& m) const { return resolution > 0 ? resolution : m.config().image_size; }

    std::vector<EvalSample> samples(const VisionTransformer& m, const std::string& which) const {
        auto items = load_dataset(read_dataset_manifest(dataset), which);
        if (limit > 0 && items.size() > limit) items.resize(limit);
        return make_eval_samples(items, effective_resolution(m));
    }

    FeatureProvider provider(const VisionTransformer& m, const std::string& hash) const {
        if (cache.empty()) return live_features(m);
        FeatureCache fc(cache);
        if (fc.key().checkpoint_hash != hash) throw CacheConflict("feature cache " + cache + " was built by checkpoint " + fc.key().checkpoint_hash);
        if (fc.key().resolution != effective_resolution(m)) throw CacheConflict("feature cache resolution differs from --resolution");
        return fc.provider();
    }
};

std::vector<float> parse_floats(const std::string& s) {
    std::vector<float> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(std::stof(item));
    return out;
}

// ---- pretrain -------------------------------------------------------------------------------

struct PretrainArgs {
    std::string config, dataset, split = "train", out;
    long steps = -1, run_steps = 0, checkpoint_every = -1;
    int batch = 0;
    std::optional<std::uint64_t> seed;
    std::string losses, backend = "parallel";
    bool resume = false;
    long log_every = 10;
};

int run_pretrain(const PretrainArgs& a) {
    RunConfig rc;
    if (!a.config.empty()) rc = load_run_config(a.config);
    if (!a.dataset.empty()) rc.dataset = a.dataset;
    if (!a.out.empty()) rc.out_dir = a.out;
    rc.split = a.split.empty() ? rc.split : a.split;
    if (a.steps > 0) rc.train.total_steps = a.steps;
    if (a.batch > 0) rc.train.batch_size = a.batch;
    if (a.seed) rc.train.seed = *a.seed;
    if (!a.losses.empty()) {
        rc.train.losses = {false, false, false};
        std::stringstream ss(a.losses);
        std::string t;
        while (std::getline(ss, t, ',')) {
            if (t == "rec") rc.train.losses.rec = true;
            else if (t == "cls") rc.train.losses.cls = true;
            else if (t == "pat") rc.train.losses.pat = true;
            else throw InvalidInput("unknown loss term '" + t + "' (expected rec, cls, pat)");
        }
    }
    rc.train.validate();
    if (rc.dataset.empty()) throw InvalidInput("--dataset (or \"dataset\" in the config) is required");
    set_active_backend(a.backend == "serial" ? kernels::Backend::serial : kernels::Backend::parallel);

    const auto items = load_dataset(read_dataset_manifest(rc.dataset), rc.split);
    std::vector<ImageTensor> images;
    for (const auto& it : items)
        images.push_back(it.image.height == rc.train.backbone.image_size && it.image.width == rc.train.backbone.image_size
                             ? it.image
                             : resize_bilinear(it.image, rc.train.backbone.image_size, rc.train.backbone.image_size));
    if (images.empty()) throw InvalidInput("training split is empty");

    TrainState state = [&] {
        if (a.resume && fs::exists(rc.out_dir)) {
            try {
                const fs::path dir = resolve_checkpoint(rc.out_dir);
                TrainState s = load_checkpoint(dir);
                if (config_hash(s.config) != config_hash(rc.train))
                    throw InvalidInput("checkpoint " + dir.string() + " was trained with a different configuration");
                std::cerr << "resuming from " << dir << " at step " << s.step << '\n';
                return s;
            } catch (const LoadError&) {
            }
        }
        return TrainState::create(rc.train);
    }();
    fs::create_directories(rc.out_dir);
    emit(to_json(rc), (rc.out_dir / "run_config.json").string());

    TrainOptions opts;
    opts.out_dir = rc.out_dir;
    opts.max_steps = a.run_steps;
    opts.checkpoint_every = a.checkpoint_every;
    const auto t0 = std::chrono::steady_clock::now();
    opts.on_step = [&](const TrainState& s, const LossReport& r) {
        if (a.log_every > 0 && (s.step % a.log_every == 0 || s.step == s.config.total_steps)) {
            const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            std::cerr << json{{"step", s.step}, {"l_total", r.l_total}, {"l_rec", r.l_rec}, {"l_cls", r.l_cls}, {"l_pat", r.l_pat},
                              {"lr", s.lr}, {"momentum", s.momentum}, {"elapsed_s", secs}}
                             .dump()
                      << '\n';
        }
    };
    const TrainResult result = train(images, state, opts);
    json report{{"out_dir", rc.out_dir.string()}, {"step", state.step}, {"checkpoints", json::array()}};
    for (const auto& c : result.checkpoints) report["checkpoints"].push_back(c.string());
    if (!result.history.empty()) {
        const auto& last = result.history.back();
        report["final_loss"] = {{"l_total", last.l_total}, {"l_rec", last.l_rec}, {"l_cls", last.l_cls}, {"l_pat", last.l_pat}};
    }
    if (!result.checkpoints.empty()) report["checkpoint_hash"] = checkpoint_hash(result.checkpoints.back());
    emit(report, "");
    return ok;
}

// ---- synth ----------------------------------------------------------------------------------

struct SynthArgs {
    std::string out;
    int images = 2000, classes = 4, size = 32, test = 400;
    int videos = 0, frames = 8, video_size = 32;
    std::uint64_t seed = 0;
};

int run_synth(const SynthArgs& a) {
    const auto data = synth_textures(a.images, a.classes, a.size, a.seed);
    write_synth_dataset(a.out, data, a.test);
    json report{{"dataset", a.out}, {"images", a.images}, {"train", a.images - a.test}, {"test", a.test}, {"classes", a.classes}, {"size", a.size}};
    if (a.videos > 0) {
        std::vector<FrameSequence> seqs;
        for (int v = 0; v < a.videos; ++v) seqs.push_back(synth_video(a.frames, a.video_size, a.classes, mix_seed(a.seed, 0x51DE0, v)));
        write_sequences(fs::path(a.out) / "sequences", seqs);
        report["sequences"] = (fs::path(a.out) / "sequences").string();
        report["videos"] = a.videos;
    }
    emit(report, "");
    return ok;
}

// ---- cache ----------------------------------------------------------------------------------

int run_cache(const ModelOptions& mo, const std::string& dataset, const std::vector<std::string>& splits, int resolution, int layer,
              const std::string& out, bool overwrite) {
    const auto m = mo.load();
    const auto manifest = read_dataset_manifest(dataset);
    std::vector<DatasetItem> items;
    for (const auto& s : splits) {
        auto part = load_dataset(manifest, s);
        items.insert(items.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
    }
    const CacheKey key{m.hash, resolution > 0 ? resolution : m.model->config().image_size, layer};
    const CacheReport r = cache_features(items, *m.model, key, out, overwrite);
    emit({{"cache", out}, {"checkpoint_hash", key.checkpoint_hash}, {"resolution", key.resolution}, {"layer", key.layer},
          {"written", r.written}, {"skipped", r.skipped}},
         "");
    return ok;
}

// ---- eval-seg -------------------------------------------------------------------------------

struct SegArgs {
    std::string thresholds = "0:0.9:0.1", out;
    std::string image, point, heatmap;
    float threshold = 0.5f;
};

void write_heatmap_png(const SimilarityMap& map, const std::string& path) {
    ImageTensor im(3, map.grid_h, map.grid_w);
    for (int y = 0; y < map.grid_h; ++y)
        for (int x = 0; x < map.grid_w; ++x) {
            const float v = std::clamp((map.at(y, x) + 1.f) / 2.f, 0.f, 1.f);
            im.at(0, y, x) = v;
            im.at(1, y, x) = 1.f - std::fabs(2.f * v - 1.f);
            im.at(2, y, x) = 1.f - v;
        }
    write_image(path, im);
}

int run_eval_seg(const ModelOptions& mo, const DataOptions& d, const SegArgs& a) {
    const auto m = mo.load();
    if (!a.image.empty()) {
        // single-image path: identical computation to the service's /segment
        const auto pt = parse_floats(a.point);
        if (pt.size() != 2) throw InvalidInput("--point expects x,y");
        const ImageTensor image = read_image(a.image);
        const int res = d.resolution > 0 ? d.resolution : m.model->config().image_size;
        const PointSegmentation seg = segment_image(*m.model, image, static_cast<int>(pt[0]), static_cast<int>(pt[1]), a.threshold, res);
        if (!a.heatmap.empty()) write_heatmap_png(seg.heatmap, a.heatmap);
        json report = segment_payload(seg);
        report["checkpoint_hash"] = m.hash;
        report["resolution"] = res;
        emit(report, a.out);
        return ok;
    }
    if (d.dataset.empty()) throw InvalidInput("--dataset or --image is required");
    const auto samples = d.samples(*m.model, d.split);
    const SweepResult r = threshold_sweep(samples, d.provider(*m.model, m.hash), parse_threshold_range(a.thresholds), m.model->config().patch_size);
    json report = to_json(r);
    report["checkpoint"] = m.source;
    report["checkpoint_hash"] = m.hash;
    report["resolution"] = d.effective_resolution(*m.model);
    report["split"] = d.split;
    report["features"] = d.cache.empty() ? "live" : "cache";
    emit(report, a.out);
    return ok;
}

// ---- eval-knn -------------------------------------------------------------------------------

struct KnnArgs {
    int k = 10;
    std::string head = "PAT", level = "image", train_split = "train", out;
    std::size_t per_image = 0;
    std::uint64_t seed = 0;
};

int run_eval_knn(const ModelOptions& mo, const DataOptions& d, const KnnArgs& a) {
    const auto m = mo.load();
    const auto provider = d.provider(*m.model, m.hash);
    const auto train = d.samples(*m.model, a.train_split), test = d.samples(*m.model, d.split);
    const auto ftrain = encode_all(train, provider), ftest = encode_all(test, provider);
    LabeledVectors tr, te;
    json report{{"k", a.k}, {"level", a.level}, {"checkpoint_hash", m.hash}, {"vote", "unweighted majority, nearest-neighbour tie-break"}};
    if (a.level == "patch") {
        const int ps = m.model->config().patch_size;
        tr = patch_vectors(train, ftrain, ps, a.per_image, a.seed);
        te = patch_vectors(test, ftest, ps, a.per_image, a.seed + 1);
    } else if (a.level == "image") {
        const HeadType head = parse_head_type(a.head);
        tr = image_vectors(train, ftrain, head);
        te = image_vectors(test, ftest, head);
        report["head"] = to_string(head);
    } else {
        throw InvalidInput("--level must be image or patch");
    }
    report["train_count"] = tr.labels.size();
    report["test_count"] = te.labels.size();
    report["accuracy"] = knn_accuracy(tr.vectors, tr.labels, te.vectors, te.labels, a.k);
    emit(report, a.out);
    return ok;
}

// ---- eval-oneshot ---------------------------------------------------------------------------

int run_eval_oneshot(const ModelOptions& mo, const DataOptions& d, const std::string& support_split, const std::string& out) {
    const auto m = mo.load();
    const auto provider = d.provider(*m.model, m.hash);
    const auto support_all = d.samples(*m.model, support_split), queries = d.samples(*m.model, d.split);
    // one support image per class: the first of each class in split order
    std::vector<EvalSample> support;
    std::set<int> seen;
    for (const auto& s : support_all)
        if (seen.insert(sample_class(s)).second) support.push_back(s);
    const auto sv = image_vectors(support, encode_all(support, provider), HeadType::cls);
    const auto qv = image_vectors(queries, encode_all(queries, provider), HeadType::cls);
    std::vector<float> sims;
    std::vector<std::uint8_t> same;
    oneshot_pairs(sv.vectors, sv.labels, qv.vectors, qv.labels, sims, same);
    const OneShotResult r = oneshot_f1(sims, same);
    json rows = json::array();
    for (std::size_t i = 0; i < r.thresholds.size(); ++i) rows.push_back({{"threshold", r.thresholds[i]}, {"f1", r.f1[i]}});
    emit({{"checkpoint_hash", m.hash}, {"support", support.size()}, {"queries", queries.size()}, {"pairs", sims.size()}, {"rows", rows},
          {"best_f1", r.best_f1}, {"best_threshold", r.best_threshold}},
         out);
    return ok;
}

// ---- eval-video -----------------------------------------------------------------------------

int run_eval_video(const ModelOptions& mo, const std::string& sequences, const PropagationConfig& cfg, const std::string& out) {
    const auto m = mo.load();
    const auto seqs = load_sequences(sequences);
    json per = json::array();
    double j = 0, f = 0;
    std::size_t scored = 0;
    for (const auto& s : seqs) {
        if (s.ground_truth.size() != s.frames.size()) {
            per.push_back({{"name", s.name}, {"skipped", "no per-frame ground truth"}});
            continue;
        }
        const VideoScore v = evaluate_sequence(s, *m.model, cfg);
        per.push_back({{"name", v.name}, {"J_m", v.j}, {"F_m", v.f}, {"JF_m", v.jf()}, {"frames", s.frames.size()}});
        j += v.j;
        f += v.f;
        ++scored;
    }
    if (scored == 0) throw InvalidInput("no scorable sequences in " + sequences);
    j /= static_cast<double>(scored);
    f /= static_cast<double>(scored);
    emit({{"checkpoint_hash", m.hash},
          {"protocol", {{"n_prev", cfg.n_prev}, {"top_k", cfg.top_k}, {"radius", cfg.radius}, {"resolution", cfg.resolution},
                        {"note", "propagation hyperparameters are protocol choices"}}},
          {"sequences", per},
          {"J_m", j},
          {"F_m", f},
          {"JF_m", 0.5 * (j + f)}},
         out);
    return ok;
}

// ---- analyze-sim ----------------------------------------------------------------------------

int run_analyze_sim(const ModelOptions& mo, const DataOptions& d, std::size_t budget, std::uint64_t seed, const std::string& out) {
    const auto m = mo.load();
    const auto samples = d.samples(*m.model, d.split);
    const auto feats = encode_all(samples, d.provider(*m.model, m.hash));
    const PairSample pairs = corpus_pair_similarities(labeled_patches(samples, feats, m.model->config().patch_size), budget, seed);
    json report = to_json(overlap_stats(pairs));
    report["checkpoint_hash"] = m.hash;
    report["images"] = samples.size();
    report["budget"] = budget;
    report["distributions"] = {to_json(histogram(pairs.intra, PairKind::intra)), to_json(histogram(pairs.inter, PairKind::inter))};
    emit(report, out);
    return ok;
}

// ---- eval-variance --------------------------------------------------------------------------

int run_eval_variance(const ModelOptions& mo, const DataOptions& d, VarianceConfig cfg, const std::string& mode, std::size_t images,
                      const std::string& out) {
    const auto m = mo.load();
    if (mode == "crop_CLS" || mode == "crop_cls") cfg.mode = VarianceMode::crop_cls;
    else if (mode == "mask_PAT" || mode == "mask_pat") cfg.mode = VarianceMode::mask_pat;
    else throw InvalidInput("--mode must be crop_CLS or mask_PAT");
    auto items = load_dataset(read_dataset_manifest(d.dataset), d.split);
    if (images > 0 && items.size() > images) items.resize(images);
    if (items.empty()) throw InvalidInput("no images to analyse");
    json per = json::array();
    double sum = 0.0;
    for (std::size_t i = 0; i < items.size(); ++i) {
        VarianceConfig c = cfg;
        c.seed = mix_seed(cfg.seed, 0x7A12, i);
        const double v = feature_variance(*m.model, items[i].image, c);
        per.push_back({{"id", items[i].id}, {"variance", v}});
        sum += v;
    }
    emit({{"checkpoint_hash", m.hash}, {"mode", mode}, {"n_views", cfg.n_views}, {"images", per}, {"mean_variance", sum / static_cast<double>(items.size())}},
         out);
    return ok;
}

// ---- serve ----------------------------------------------------------------------------------

httplib::Server* g_server = nullptr;

int run_serve(const ModelOptions& mo, const std::string& host, int port, ServiceConfig cfg) {
    const auto m = mo.load();
    SegmentationService service(m.model, m.hash, cfg);
    httplib::Server server;
    service.bind(server);
    g_server = &server;
    std::signal(SIGINT, [](int) {
        if (g_server) g_server->stop();
    });
    std::signal(SIGTERM, [](int) {
        if (g_server) g_server->stop();
    });
    std::cerr << json{{"listening", host + ":" + std::to_string(port)}, {"checkpoint_hash", m.hash}, {"resolution", cfg.resolution}}.dump()
              << '\n';
    if (!server.listen(host, port)) throw LoadError(host + ":" + std::to_string(port), "cannot bind");
    return ok;
}

int report_error(const char* kind, const std::string& message, int code, const std::string& path = {}) {
    json e{{"error", kind}, {"message", message}};
    if (!path.empty()) e["path"] = path;
    std::cerr << e.dump() << '\n';
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Masked multi-contrast ViT pretraining and zero-shot segmentation toolkit"};
    app.require_subcommand(1);
    std::string backend = "parallel";
    app.add_option("--backend", backend, "Kernel backend: parallel or serial")->check(CLI::IsMember({"parallel", "serial"}));

    PretrainArgs pa;
    auto* pretrain = app.add_subcommand("pretrain", "Train a backbone with the configured objectives");
    pretrain->add_option("--config", pa.config, "Run configuration JSON");
    pretrain->add_option("--dataset", pa.dataset, "Dataset directory");
    pretrain->add_option("--split", pa.split, "Training split");
    pretrain->add_option("--out", pa.out, "Output run directory");
    pretrain->add_option("--steps", pa.steps, "Total schedule length in steps");
    pretrain->add_option("--run-steps", pa.run_steps, "Stop after this many steps in this invocation (0 = to the end)");
    pretrain->add_option("--batch", pa.batch, "Batch size");
    pretrain->add_option("--seed", pa.seed, "Run seed");
    pretrain->add_option("--losses", pa.losses, "Comma-separated subset of rec,cls,pat");
    pretrain->add_option("--checkpoint-every", pa.checkpoint_every, "Checkpoint interval in steps (0 = final only)");
    pretrain->add_option("--log-every", pa.log_every, "Loss log interval");
    pretrain->add_flag("--resume", pa.resume, "Continue from the latest checkpoint in --out");

    SynthArgs sa;
    auto* synth = app.add_subcommand("synth", "Generate the synthetic texture corpus");
    synth->add_option("--out", sa.out, "Output dataset directory")->required();
    synth->add_option("--images", sa.images, "Number of images");
    synth->add_option("--classes", sa.classes, "Number of texture classes");
    synth->add_option("--size", sa.size, "Image side in pixels");
    synth->add_option("--test", sa.test, "Held-out test images");
    synth->add_option("--videos", sa.videos, "Synthetic video sequences to add under <out>/sequences");
    synth->add_option("--frames", sa.frames, "Frames per sequence");
    synth->add_option("--seed", sa.seed, "Generator seed");

    ModelOptions cache_mo;
    std::string cache_dataset, cache_out;
    std::vector<std::string> cache_splits{"train", "test"};
    int cache_res = 0, cache_layer = 0;
    bool cache_overwrite = false;
    auto* cache = app.add_subcommand("cache", "Precompute features for a dataset");
    cache_mo.add(cache);
    cache->add_option("--dataset", cache_dataset, "Dataset directory")->required();
    cache->add_option("--splits", cache_splits, "Splits to cache");
    cache->add_option("--resolution", cache_res, "Encoding resolution (default: training size)");
    cache->add_option("--layer", cache_layer, "Encoder layer (0 = last)");
    cache->add_option("--out", cache_out, "Cache directory")->required();
    cache->add_flag("--overwrite", cache_overwrite, "Rebuild a cache produced by another checkpoint");

    ModelOptions seg_mo;
    DataOptions seg_d;
    SegArgs seg_a;
    auto* seg = app.add_subcommand("eval-seg", "Zero-shot prompt segmentation: threshold sweep or single image");
    seg_mo.add(seg);
    seg->add_option("--dataset", seg_d.dataset, "Dataset directory");
    seg->add_option("--split", seg_d.split, "Dataset split");
    seg->add_option("--resolution", seg_d.resolution, "Evaluation resolution");
    seg->add_option("--cache", seg_d.cache, "Feature cache directory");
    seg->add_option("--limit", seg_d.limit, "Use only the first N items");
    seg->add_option("--thresholds", seg_a.thresholds, "Threshold range lo:hi:step");
    seg->add_option("--image", seg_a.image, "Single image to segment");
    seg->add_option("--point", seg_a.point, "Click x,y in source pixels");
    seg->add_option("--threshold", seg_a.threshold, "Threshold for the single-image path");
    seg->add_option("--heatmap", seg_a.heatmap, "Write the similarity heatmap as PNG");
    seg->add_option("--out", seg_a.out, "Report path (default stdout)");

    ModelOptions knn_mo;
    DataOptions knn_d;
    KnnArgs knn_a;
    auto* knn = app.add_subcommand("eval-knn", "k-NN classification on frozen features");
    knn_mo.add(knn);
    knn_d.add(knn);
    knn->add_option("--k", knn_a.k, "Neighbours");
    knn->add_option("--head", knn_a.head, "CLS, PAT or Hyber (image level)");
    knn->add_option("--level", knn_a.level, "image or patch");
    knn->add_option("--train-split", knn_a.train_split, "Reference split");
    knn->add_option("--per-image", knn_a.per_image, "Patch level: sample at most N patches per image");
    knn->add_option("--seed", knn_a.seed, "Patch sampling seed");
    knn->add_option("--out", knn_a.out, "Report path");

    ModelOptions one_mo;
    DataOptions one_d;
    std::string one_support = "train", one_out;
    auto* oneshot = app.add_subcommand("eval-oneshot", "One-shot same-class decision by CLS similarity threshold (F1)");
    one_mo.add(oneshot);
    one_d.add(oneshot);
    oneshot->add_option("--support-split", one_support, "Split providing one support image per class");
    oneshot->add_option("--out", one_out, "Report path");

    ModelOptions vid_mo;
    PropagationConfig vid_cfg;
    std::string vid_seq, vid_out;
    auto* video = app.add_subcommand("eval-video", "Video label propagation scored with J and F");
    vid_mo.add(video);
    video->add_option("--sequences", vid_seq, "Directory of sequences")->required();
    video->add_option("--n-prev", vid_cfg.n_prev, "Preceding frames in the context");
    video->add_option("--top-k", vid_cfg.top_k, "Neighbours per patch");
    video->add_option("--radius", vid_cfg.radius, "Spatial window radius in patches");
    video->add_option("--resolution", vid_cfg.resolution, "Frame resolution (0 = native)");
    video->add_option("--out", vid_out, "Report path");

    ModelOptions sim_mo;
    DataOptions sim_d;
    std::size_t sim_budget = 100000;
    std::uint64_t sim_seed = 0;
    std::string sim_out;
    auto* sim = app.add_subcommand("analyze-sim", "Intra/inter-object similarity distributions and their overlap");
    sim_mo.add(sim);
    sim_d.add(sim);
    sim->add_option("--budget", sim_budget, "Pairs kept per kind");
    sim->add_option("--seed", sim_seed, "Subsampling seed");
    sim->add_option("--out", sim_out, "Report path");

    ModelOptions var_mo;
    DataOptions var_d;
    VarianceConfig var_cfg;
    std::string var_mode = "crop_CLS", var_out;
    std::size_t var_images = 8;
    auto* variance = app.add_subcommand("eval-variance", "Representation variance across random views");
    var_mo.add(variance);
    var_d.add(variance);
    variance->add_option("--mode", var_mode, "crop_CLS or mask_PAT");
    variance->add_option("--views", var_cfg.n_views, "Views per image");
    variance->add_option("--images", var_images, "Images analysed");
    variance->add_option("--seed", var_cfg.seed, "View seed");
    variance->add_option("--out", var_out, "Report path");

    ModelOptions srv_mo;
    ServiceConfig srv_cfg;
    std::string srv_host = "127.0.0.1";
    int srv_port = 8080;
    long srv_ttl = 1800;
    auto* serve = app.add_subcommand("serve", "HTTP service for interactive segmentation");
    srv_mo.add(serve);
    serve->add_option("--host", srv_host, "Bind address");
    serve->add_option("--port", srv_port, "Port");
    serve->add_option("--resolution", srv_cfg.resolution, "Service resolution");
    serve->add_option("--max-upload", srv_cfg.max_upload_bytes, "Upload size limit in bytes");
    serve->add_option("--ttl", srv_ttl, "Session lifetime in seconds");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return report_error("usage", e.what(), bad_input);
    }

    try {
        set_active_backend(backend == "serial" ? kernels::Backend::serial : kernels::Backend::parallel);
        if (*pretrain) {
            pa.backend = backend;
            return run_pretrain(pa);
        }
        if (*synth) return run_synth(sa);
        if (*cache) return run_cache(cache_mo, cache_dataset, cache_splits, cache_res, cache_layer, cache_out, cache_overwrite);
        if (*seg) return run_eval_seg(seg_mo, seg_d, seg_a);
        if (*knn) return run_eval_knn(knn_mo, knn_d, knn_a);
        if (*oneshot) return run_eval_oneshot(one_mo, one_d, one_support, one_out);
        if (*video) return run_eval_video(vid_mo, vid_seq, vid_cfg, vid_out);
        if (*sim) return run_analyze_sim(sim_mo, sim_d, sim_budget, sim_seed, sim_out);
        if (*variance) return run_eval_variance(var_mo, var_d, var_cfg, var_mode, var_images, var_out);
        if (*serve) {
            srv_cfg.session_ttl = std::chrono::seconds(srv_ttl);
            return run_serve(srv_mo, srv_host, srv_port, srv_cfg);
        }
    } catch (const LoadError& e) {
        return report_error("load_error", e.what(), load_failed, e.path());
    } catch (const CacheConflict& e) {
        return report_error("cache_conflict", e.what(), conflict);
    } catch (const TrainingDivergence& e) {
        return report_error("training_divergence", e.what(), diverged);
    } catch (const InvalidInput& e) {
        return report_error("invalid_input", e.what(), bad_input);
    } catch (const StateError& e) {
        return report_error("state_error", e.what(), failure);
    } catch (const std::exception& e) {
        return report_error("internal", e.what(), failure);
    }
    return failure;
}
