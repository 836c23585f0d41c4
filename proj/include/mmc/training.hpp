#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "mmc/augmentation.hpp"
#include "mmc/heads.hpp"
#include "mmc/vit.hpp"

namespace mmc {

/// Which objective terms are active (the ablation switches).
struct LossFlags {
    bool rec = true;
    bool cls = true;
    bool pat = true;
    bool any() const { return rec || cls || pat; }
    bool operator==(const LossFlags&) const = default;
};

struct ScheduleConfig {
    double lr_peak = 7.5e-4;
    double lr_final = 1e-6;
    double warmup_fraction = 0.05;
    double ema_start = 0.996;
    double ema_end = 1.0;
    bool operator==(const ScheduleConfig&) const = default;
};

struct OptimizerConfig {
    double weight_decay = 0.04;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double grad_clip = 3.0;  // global norm; <= 0 disables
    bool operator==(const OptimizerConfig&) const = default;
};

struct TrainConfig {
    BackboneConfig backbone;
    HeadConfig heads;
    AugmentationConfig augmentation;
    LossFlags losses;
    ScheduleConfig schedule;
    OptimizerConfig optimizer;
    double tau = 0.2;
    int batch_size = 16;
    long total_steps = 1000;
    long checkpoint_every = 0;  // 0: only the final checkpoint
    std::uint64_t seed = 0;

    void validate() const;
};

/// EMA momentum: cosine ramp from `start` (u = 0) to `end` (u = 1). Out-of-range u is clamped with a warning.
double ema_schedule(double progress, double start = 0.996, double end = 1.0);
/// Linear warmup to lr_peak, then cosine decay to lr_final at u = 1.
double lr_schedule(double progress, const ScheduleConfig& cfg = {});

struct StudentNetwork {
    VisionTransformer backbone;
    ProjectionHeads heads;
    void collect(nn::ParamList& out);
};

/// EMA copy of the student backbone and its contrastive heads (no reconstruction head).
struct TeacherNetwork {
    VisionTransformer backbone;
    nn::Mlp3 pat;
    nn::Mlp3 cls;
    void collect(nn::ParamList& out);
};

struct TrainState {
    TrainConfig config;
    StudentNetwork student;
    TeacherNetwork teacher;
    long step = 0;
    double momentum = 0.996;
    double lr = 0.0;
    std::vector<Matrix> adam_m;
    std::vector<Matrix> adam_v;

    /// Fresh student from config.seed; teacher initialised as an exact copy.
    static TrainState create(const TrainConfig& cfg);
    /// Allocates shapes without initialising values (used by checkpoint loading).
    static TrainState allocate(const TrainConfig& cfg);

    nn::ParamList student_params();
    nn::ParamList teacher_params();
    void zero_grads();
};

struct LossReport {
    double l_rec = 0.0;
    double l_cls = 0.0;
    double l_pat = 0.0;
    double l_total = 0.0;
};

/// Intermediate projections captured by total_loss (per global view).
struct LossInternals {
    std::vector<Matrix> student_cls;      // B x D, normalised
    std::vector<Matrix> student_pat;      // B*P x D, normalised
    std::vector<Matrix> teacher_cls;      // per target view (globals then locals): B x D
    std::vector<Matrix> teacher_pat;      // per global view: B*P x D
    std::vector<Matrix> reconstruction;   // per global view: B*P x (3 ps^2)
    int patches = 0;
};

/// Batched patch contrast used in training: rows of q and k are (image, position) pairs,
/// the negative pool of each row is every key row of the other images. Mean over rows.
double batch_patch_contrast(const Matrix& q, const Matrix& k, int batch, int patches, double tau, Matrix* grad_q);

/// L = L_REC + L_CLS + L_PAT over a batch of view bundles. Student views go through the student;
/// teacher and local views through the teacher without gradient. When `backward` is set the student
/// parameter gradients are accumulated (teacher gradients are never touched).
LossReport total_loss(const std::vector<ViewBundle>& batch, TrainState& state, bool backward = false,
                      LossInternals* internals = nullptr);

/// phi_t <- lambda * phi_t + (1 - lambda) * phi_s, matched by parameter path below the network prefix.
void ema_update(nn::ParamList& teacher, const nn::ParamList& student, double lambda);
void ema_update(TrainState& state);

/// Global gradient-norm clipping; returns the pre-clip norm.
double clip_grad_norm(nn::ParamList& params, double max_norm);
void adamw_step(TrainState& state, nn::ParamList& params, double lr);

/// Builds the step's view bundles deterministically from (seed, step).
std::vector<ViewBundle> make_batch(const std::vector<ImageTensor>& dataset, const TrainConfig& cfg, long step);

/// One optimisation step: views, loss/backward, clip, AdamW, EMA. Throws TrainingDivergence on NaN.
LossReport train_step(TrainState& state, const std::vector<ImageTensor>& dataset);

struct TrainOptions {
    std::filesystem::path out_dir;
    long max_steps = 0;          // steps to run in this call; 0 runs to config.total_steps
    long checkpoint_every = -1;  // overrides config when >= 0
    std::function<void(const TrainState&, const LossReport&)> on_step;
};

struct TrainResult {
    std::vector<std::filesystem::path> checkpoints;
    std::vector<LossReport> history;
};

/// Runs training from the state's current step. Checkpoints go to out_dir/step_XXXXXXX.
/// On divergence the exception propagates and previously written checkpoints are kept.
TrainResult train(const std::vector<ImageTensor>& dataset, TrainState& state, const TrainOptions& options);

struct LayerReconstruction {
    ImageTensor reconstruction;
    std::optional<ImageTensor> difference;  // |recon_l - recon_{l-1}|, for layer >= 2
};

/// Reconstructs a (masked) image from the output of one encoder layer through the reconstruction head.
LayerReconstruction reconstruct_from_layer(const StudentNetwork& student, const ImageTensor& masked, int layer);

}  // namespace mmc
