#include "mmc/run_config.hpp"

#include <cstdio>
#include <fstream>

#include "mmc/errors.hpp"

namespace mmc {

using nlohmann::json;

namespace {

template <class T>
void read(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

json photometric_json(const PhotometricConfig& p) {
    return {{"brightness", p.brightness},       {"contrast", p.contrast},           {"saturation", p.saturation},
            {"jitter_prob", p.jitter_prob},     {"blur_prob", p.blur_prob},         {"blur_sigma_min", p.blur_sigma_min},
            {"blur_sigma_max", p.blur_sigma_max}, {"solarize_prob", p.solarize_prob}, {"solarize_threshold", p.solarize_threshold}};
}

PhotometricConfig photometric_from(const json& j) {
    PhotometricConfig p;
    read(j, "brightness", p.brightness);
    read(j, "contrast", p.contrast);
    read(j, "saturation", p.saturation);
    read(j, "jitter_prob", p.jitter_prob);
    read(j, "blur_prob", p.blur_prob);
    read(j, "blur_sigma_min", p.blur_sigma_min);
    read(j, "blur_sigma_max", p.blur_sigma_max);
    read(j, "solarize_prob", p.solarize_prob);
    read(j, "solarize_threshold", p.solarize_threshold);
    return p;
}

}  // namespace

json to_json(const BackboneConfig& c) {
    return {{"patch_size", c.patch_size}, {"embed_dim", c.embed_dim}, {"depth", c.depth},
            {"heads", c.heads},           {"image_size", c.image_size}, {"mlp_ratio", c.mlp_ratio}};
}

BackboneConfig backbone_from_json(const json& j) {
    BackboneConfig c;
    if (j.contains("preset")) {
        const auto preset = j.at("preset").get<std::string>();
        if (preset == "micro") c = BackboneConfig::micro();
        else if (preset == "small") c = BackboneConfig::small();
        else if (preset == "base") c = BackboneConfig::base();
        else throw InvalidInput("unknown backbone preset '" + preset + "'");
    }
    read(j, "patch_size", c.patch_size);
    read(j, "embed_dim", c.embed_dim);
    read(j, "depth", c.depth);
    read(j, "heads", c.heads);
    read(j, "image_size", c.image_size);
    read(j, "mlp_ratio", c.mlp_ratio);
    c.validate();
    return c;
}

json to_json(const TrainConfig& c) {
    const auto& a = c.augmentation;
    return {
        {"backbone", to_json(c.backbone)},
        {"heads", {{"hidden", c.heads.hidden}, {"proj_dim", c.heads.proj_dim}}},
        {"augmentation",
         {{"global_views", a.global_views},
          {"local_views", a.local_views},
          {"global_size", a.global_size},
          {"local_size", a.local_size},
          {"global_scale", {a.global_scale_min, a.global_scale_max}},
          {"local_scale", {a.local_scale_min, a.local_scale_max}},
          {"flip_prob", a.flip_prob},
          {"mask_ratio", a.mask_ratio},
          {"donor_prob", a.donor_prob},
          {"patch_size", a.patch_size},
          {"photometric", photometric_json(a.photometric)}}},
        {"losses", {{"rec", c.losses.rec}, {"cls", c.losses.cls}, {"pat", c.losses.pat}}},
        {"schedule",
         {{"lr_peak", c.schedule.lr_peak},
          {"lr_final", c.schedule.lr_final},
          {"warmup_fraction", c.schedule.warmup_fraction},
          {"ema_start", c.schedule.ema_start},
          {"ema_end", c.schedule.ema_end}}},
        {"optimizer",
         {{"weight_decay", c.optimizer.weight_decay},
          {"beta1", c.optimizer.beta1},
          {"beta2", c.optimizer.beta2},
          {"eps", c.optimizer.eps},
          {"grad_clip", c.optimizer.grad_clip}}},
        {"tau", c.tau},
        {"batch_size", c.batch_size},
        {"total_steps", c.total_steps},
        {"checkpoint_every", c.checkpoint_every},
        {"seed", c.seed},
    };
}

TrainConfig train_config_from_json(const json& j) {
    TrainConfig c;
    if (j.contains("backbone")) c.backbone = backbone_from_json(j.at("backbone"));
    // augmentation geometry follows the backbone unless set explicitly
    c.augmentation.global_size = c.backbone.image_size;
    c.augmentation.patch_size = c.backbone.patch_size;
    // 96 px locals at 224; the micro model at 32 px uses 24 px locals
    if (c.backbone.image_size != 32)
        c.augmentation.local_size =
            std::max(c.backbone.patch_size, c.backbone.image_size * 96 / 224 / c.backbone.patch_size * c.backbone.patch_size);
    if (j.contains("heads")) {
        read(j.at("heads"), "hidden", c.heads.hidden);
        read(j.at("heads"), "proj_dim", c.heads.proj_dim);
    }
    if (j.contains("augmentation")) {
        const auto& a = j.at("augmentation");
        auto& o = c.augmentation;
        read(a, "global_views", o.global_views);
        read(a, "local_views", o.local_views);
        read(a, "global_size", o.global_size);
        read(a, "local_size", o.local_size);
        if (a.contains("global_scale")) {
            o.global_scale_min = a.at("global_scale").at(0).get<float>();
            o.global_scale_max = a.at("global_scale").at(1).get<float>();
        }
        if (a.contains("local_scale")) {
            o.local_scale_min = a.at("local_scale").at(0).get<float>();
            o.local_scale_max = a.at("local_scale").at(1).get<float>();
        }
        read(a, "flip_prob", o.flip_prob);
        read(a, "mask_ratio", o.mask_ratio);
        read(a, "donor_prob", o.donor_prob);
        read(a, "patch_size", o.patch_size);
        if (a.contains("photometric")) o.photometric = photometric_from(a.at("photometric"));
    }
    if (j.contains("losses")) {
        read(j.at("losses"), "rec", c.losses.rec);
        read(j.at("losses"), "cls", c.losses.cls);
        read(j.at("losses"), "pat", c.losses.pat);
    }
    if (j.contains("schedule")) {
        const auto& s = j.at("schedule");
        read(s, "lr_peak", c.schedule.lr_peak);
        read(s, "lr_final", c.schedule.lr_final);
        read(s, "warmup_fraction", c.schedule.warmup_fraction);
        read(s, "ema_start", c.schedule.ema_start);
        read(s, "ema_end", c.schedule.ema_end);
    }
    if (j.contains("optimizer")) {
        const auto& o = j.at("optimizer");
        read(o, "weight_decay", c.optimizer.weight_decay);
        read(o, "beta1", c.optimizer.beta1);
        read(o, "beta2", c.optimizer.beta2);
        read(o, "eps", c.optimizer.eps);
        read(o, "grad_clip", c.optimizer.grad_clip);
    }
    read(j, "tau", c.tau);
    read(j, "batch_size", c.batch_size);
    read(j, "total_steps", c.total_steps);
    read(j, "checkpoint_every", c.checkpoint_every);
    read(j, "seed", c.seed);
    c.validate();
    return c;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::uint64_t config_hash(const TrainConfig& cfg) { return fnv1a(to_json(cfg).dump()); }

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw LoadError(path.string(), "file not found");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw LoadError(path.string(), e.what());
    }
    RunConfig rc;
    rc.train = train_config_from_json(j.value("train", json::object()));
    if (j.contains("dataset")) rc.dataset = j.at("dataset").get<std::string>();
    read(j, "split", rc.split);
    if (j.contains("out_dir")) rc.out_dir = j.at("out_dir").get<std::string>();
    return rc;
}

json to_json(const RunConfig& cfg) {
    return {{"train", to_json(cfg.train)}, {"dataset", cfg.dataset.string()}, {"split", cfg.split}, {"out_dir", cfg.out_dir.string()}};
}

}  // namespace mmc
