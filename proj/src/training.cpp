#include "mmc/training.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "mmc/checkpoint.hpp"
#include "mmc/errors.hpp"
#include "mmc/kernels.hpp"
#include "mmc/log.hpp"
#include "mmc/losses.hpp"

namespace mmc {

void TrainConfig::validate() const {
    backbone.validate();
    if (!losses.any()) throw InvalidInput("at least one loss term must be enabled");
    if (!(tau > 0.0)) throw InvalidInput("tau must be positive");
    if (batch_size < 1) throw InvalidInput("batch_size must be >= 1");
    if (total_steps < 1) throw InvalidInput("total_steps must be >= 1");
    if (augmentation.global_size != backbone.image_size)
        throw InvalidInput("augmentation.global_size must equal backbone.image_size");
    if (augmentation.patch_size != backbone.patch_size)
        throw InvalidInput("augmentation.patch_size must equal backbone.patch_size");
    if (augmentation.local_views > 0 && augmentation.local_size % backbone.patch_size != 0)
        throw InvalidInput("local crop size must be divisible by patch_size");
    if (schedule.warmup_fraction < 0.0 || schedule.warmup_fraction >= 1.0)
        throw InvalidInput("warmup_fraction must be in [0,1)");
}

double ema_schedule(double progress, double start, double end) {
    if (progress < 0.0 || progress > 1.0) {
        warn("ema_schedule: progress " + std::to_string(progress) + " outside [0,1], clamped");
        progress = std::clamp(progress, 0.0, 1.0);
    }
    // weight on `start`: 1 at u = 0, 0 at u = 1
    const double c = (std::cos(M_PI * progress) + 1.0) / 2.0;
    return start * c + end * (1.0 - c);
}

double lr_schedule(double progress, const ScheduleConfig& cfg) {
    progress = std::clamp(progress, 0.0, 1.0);
    const double w = cfg.warmup_fraction;
    if (progress < w) return cfg.lr_peak * progress / w;
    const double t = w < 1.0 ? (progress - w) / (1.0 - w) : 1.0;
    const double c = (std::cos(M_PI * t) + 1.0) / 2.0;
    return cfg.lr_peak * c + cfg.lr_final * (1.0 - c);
}

void StudentNetwork::collect(nn::ParamList& out) {
    backbone.collect("student.backbone", out);
    heads.collect("student", out);
}

void TeacherNetwork::collect(nn::ParamList& out) {
    backbone.collect("teacher.backbone", out);
    pat.collect("teacher.head_pat", out);
    cls.collect("teacher.head_cls", out);
}

TrainState TrainState::allocate(const TrainConfig& cfg) {
    cfg.validate();
    TrainState s;
    s.config = cfg;
    s.student.backbone = VisionTransformer(cfg.backbone);
    s.student.heads.init_shape(cfg.backbone.embed_dim, cfg.backbone.patch_size, cfg.heads);
    s.teacher.backbone = VisionTransformer(cfg.backbone);
    s.teacher.pat.init_shape(cfg.backbone.embed_dim, cfg.heads.hidden, cfg.heads.proj_dim);
    s.teacher.cls.init_shape(cfg.backbone.embed_dim, cfg.heads.hidden, cfg.heads.proj_dim);
    for (const auto& p : s.student_params()) {
        s.adam_m.emplace_back(p.param->value.rows(), p.param->value.cols());
        s.adam_v.emplace_back(p.param->value.rows(), p.param->value.cols());
    }
    s.momentum = cfg.schedule.ema_start;
    return s;
}

TrainState TrainState::create(const TrainConfig& cfg) {
    TrainState s = allocate(cfg);
    s.student.backbone.init_weights(cfg.seed);
    auto rng = make_rng(cfg.seed, 0x4EAD);
    s.student.heads.init_weights(rng);
    auto teacher = s.teacher_params();
    ema_update(teacher, s.student_params(), 0.0);
    s.teacher.backbone.mark_initialized();
    return s;
}

nn::ParamList TrainState::student_params() {
    nn::ParamList out;
    student.collect(out);
    return out;
}

nn::ParamList TrainState::teacher_params() {
    nn::ParamList out;
    teacher.collect(out);
    return out;
}

void TrainState::zero_grads() {
    for (auto& p : student_params()) p.param->zero_grad();
}

namespace {

std::string strip_network(const std::string& name) {
    auto dot = name.find('.');
    return dot == std::string::npos ? name : name.substr(dot + 1);
}

bool all_finite(const Matrix& m) {
    return std::all_of(m.storage().begin(), m.storage().end(), [](float v) { return std::isfinite(v); });
}

// Splits encoder tokens into CLS rows (B x C) and patch rows (B*P x C).
void split_tokens(const Matrix& tokens, int batch, int patches, Matrix& cls, Matrix& pat) {
    const std::size_t C = tokens.cols();
    const int N = patches + 1;
    cls.resize(batch, C);
    pat.resize(static_cast<std::size_t>(batch) * patches, C);
    for (int b = 0; b < batch; ++b) {
        std::copy_n(tokens.data() + static_cast<std::size_t>(b) * N * C, C, cls.data() + b * C);
        std::copy_n(tokens.data() + (static_cast<std::size_t>(b) * N + 1) * C, static_cast<std::size_t>(patches) * C,
                    pat.data() + static_cast<std::size_t>(b) * patches * C);
    }
}

void merge_tokens(const Matrix& d_cls, const Matrix& d_pat, int batch, int patches, Matrix& d_tokens) {
    const std::size_t C = d_cls.cols();
    const int N = patches + 1;
    d_tokens.resize(static_cast<std::size_t>(batch) * N, C);
    for (int b = 0; b < batch; ++b) {
        std::copy_n(d_cls.data() + b * C, C, d_tokens.data() + static_cast<std::size_t>(b) * N * C);
        std::copy_n(d_pat.data() + static_cast<std::size_t>(b) * patches * C, static_cast<std::size_t>(patches) * C,
                    d_tokens.data() + (static_cast<std::size_t>(b) * N + 1) * C);
    }
}

Matrix rows_except(const Matrix& m, std::size_t skip) {
    Matrix out(m.rows() - 1, m.cols());
    for (std::size_t r = 0, o = 0; r < m.rows(); ++r)
        if (r != skip) std::copy_n(m.row(r).data(), m.cols(), out.row(o++).data());
    return out;
}

template <class F>
std::vector<ImageTensor> gather(const std::vector<ViewBundle>& batch, F&& pick) {
    std::vector<ImageTensor> out;
    out.reserve(batch.size());
    for (const auto& b : batch) out.push_back(pick(b));
    return out;
}

}  // namespace

void ema_update(nn::ParamList& teacher, const nn::ParamList& student, double lambda) {
    std::map<std::string, const nn::Param*> by_path;
    for (const auto& p : student) by_path[strip_network(p.name)] = p.param;
    for (auto& t : teacher) {
        auto it = by_path.find(strip_network(t.name));
        if (it == by_path.end()) throw StateError("ema_update: no student parameter for " + t.name);
        const Matrix& s = it->second->value;
        Matrix& v = t.param->value;
        if (s.rows() != v.rows() || s.cols() != v.cols()) throw StateError("ema_update: shape mismatch for " + t.name);
        const float a = static_cast<float>(lambda), b = static_cast<float>(1.0 - lambda);
        if (lambda == 1.0) continue;
        if (lambda == 0.0) {
            v = s;
            continue;
        }
        for (std::size_t i = 0; i < v.size(); ++i) v.data()[i] = a * v.data()[i] + b * s.data()[i];
    }
}

void ema_update(TrainState& state) {
    auto teacher = state.teacher_params();
    ema_update(teacher, state.student_params(), state.momentum);
}

double batch_patch_contrast(const Matrix& q, const Matrix& k, int batch, int patches, double tau, Matrix* grad_q) {
    const int R = batch * patches;
    const int D = static_cast<int>(q.cols());
    if (static_cast<int>(q.rows()) != R || k.rows() != q.rows() || k.cols() != q.cols())
        throw InvalidInput("batch_patch_contrast: shape mismatch");
    if (grad_q) grad_q->resize(q.rows(), q.cols());
    if (batch < 2) {
        warn("loss_pat: empty negative pool (batch of one image); patch loss is 0");
        return 0.0;
    }
    const auto& kern = kernels::active();
    Matrix logits(R, R);
    kern.gemm_nt(q.data(), k.data(), logits.data(), R, D, R, false);
    std::vector<double> row_loss(R);
    const float inv_tau = static_cast<float>(1.0 / tau);
    const float g_scale = static_cast<float>(1.0 / (tau * R));
#pragma omp parallel for schedule(static)
    for (int r = 0; r < R; ++r) {
        const int img = r / patches;
        const int lo = img * patches, hi = lo + patches;
        auto row = logits.row(r);
        for (float& v : row) v *= inv_tau;
        const float pos = row[r];
        float mx = pos;
        for (int c = 0; c < R; ++c)
            if (c < lo || c >= hi) mx = std::max(mx, row[c]);
        double z = 0.0;
        for (int c = 0; c < R; ++c) {
            if ((c >= lo && c < hi) && c != r) {
                row[c] = 0.f;
                continue;
            }
            row[c] = std::exp(row[c] - mx);
            z += row[c];
        }
        row_loss[r] = std::log(z) + mx - pos;
        if (grad_q) {
            const float inv_z = static_cast<float>(1.0 / z);
            for (int c = 0; c < R; ++c) row[c] *= inv_z * g_scale;
            row[r] -= g_scale;
        }
    }
    if (grad_q) kern.gemm_nn(logits.data(), k.data(), grad_q->data(), R, R, D, false);
    double total = 0.0;
    for (double l : row_loss) total += l;
    return total / R;
}

LossReport total_loss(const std::vector<ViewBundle>& batch, TrainState& state, bool backward, LossInternals* internals) {
    if (batch.empty()) throw InvalidInput("total_loss: empty batch");
    const TrainConfig& cfg = state.config;
    const int B = static_cast<int>(batch.size());
    const int V = static_cast<int>(batch.front().student_views.size());
    const int L = cfg.losses.cls ? static_cast<int>(batch.front().local_crops.size()) : 0;
    for (const auto& b : batch)
        if (static_cast<int>(b.student_views.size()) != V || static_cast<int>(b.teacher_views.size()) != V ||
            static_cast<int>(b.mask_specs.size()) != V)
            throw InvalidInput("total_loss: inconsistent view counts across the batch");
    if (V < 1) throw InvalidInput("total_loss: no views");
    if (B < 2 && (cfg.losses.cls || cfg.losses.pat)) warn("total_loss: batch of one image has no contrastive negatives");

    const int ps = cfg.backbone.patch_size;
    const int H = batch.front().teacher_views.front().height, W = batch.front().teacher_views.front().width;
    const int gh = H / ps, gw = W / ps, P = gh * gw;
    const float tau = static_cast<float>(cfg.tau);
    const long step = state.step;

    // Teacher targets, no gradient.
    std::vector<Matrix> k_cls(V + L), k_pat(V);
    for (int t = 0; t < V + L; ++t) {
        const bool local = t >= V;
        if (local && !cfg.losses.cls) continue;
        if (!local && !cfg.losses.cls && !cfg.losses.pat) continue;
        auto images = gather(batch, [&](const ViewBundle& b) { return local ? b.local_crops[t - V] : b.teacher_views[t]; });
        const int tgh = images.front().height / ps, tgw = images.front().width / ps;
        Matrix tokens = state.teacher.backbone.forward(images);
        Matrix cls_rows, pat_rows;
        split_tokens(tokens, B, tgh * tgw, cls_rows, pat_rows);
        if (cfg.losses.cls) k_cls[t] = project_normalized(state.teacher.cls, cls_rows, nullptr);
        if (!local && cfg.losses.pat) k_pat[t] = project_normalized(state.teacher.pat, pat_rows, nullptr);
    }

    double rec_sum = 0.0, cls_sum = 0.0, pat_sum = 0.0;
    const int targets = V + L;
    const int D = cfg.heads.proj_dim;
    if (internals) {
        *internals = {};
        internals->patches = P;
        internals->teacher_cls = k_cls;
        internals->teacher_pat = k_pat;
    }

    for (int v = 0; v < V; ++v) {
        auto images = gather(batch, [&](const ViewBundle& b) { return b.student_views[v]; });
        BackboneCache cache;
        Matrix tokens = state.student.backbone.forward(images, 0, backward ? &cache : nullptr);
        Matrix cls_rows, pat_rows;
        split_tokens(tokens, B, P, cls_rows, pat_rows);
        Matrix d_cls(B, cls_rows.cols()), d_pat(pat_rows.rows(), pat_rows.cols());

        if (cfg.losses.rec) {
            nn::MlpCache rec_cache;
            Matrix recon;
            state.student.heads.rec.forward(pat_rows, recon, backward ? &rec_cache : nullptr);
            Matrix d_recon(recon.rows(), recon.cols());
            const double scale = 1.0 / (static_cast<double>(V) * B);
            for (int b = 0; b < B; ++b) {
                Matrix rows(P, recon.cols());
                std::copy_n(recon.data() + static_cast<std::size_t>(b) * rows.size(), rows.size(), rows.data());
                ImageTensor predicted = unpatchify(rows, gh, gw, ps);
                const ImageTensor& target = batch[b].teacher_views[v];
                std::vector<float> grad(backward ? predicted.data.size() : 0);
                const float l = losses::reconstruction_l1<float>(target.data, predicted.data, batch[b].mask_specs[v].pixel_mask,
                                                                 3, grad);
                rec_sum += l * scale;
                if (backward) {
                    ImageTensor g(3, H, W);
                    g.data = std::move(grad);
                    Patches gp = patchify(g, ps);
                    float* dst = d_recon.data() + static_cast<std::size_t>(b) * gp.vectors.size();
                    for (std::size_t i = 0; i < gp.vectors.size(); ++i) dst[i] = gp.vectors.data()[i] * static_cast<float>(scale);
                }
            }
            if (!std::isfinite(rec_sum)) throw TrainingDivergence("l_rec", step);
            if (backward) {
                Matrix d_in;
                state.student.heads.rec.backward(rec_cache, d_recon, &d_in);
                for (std::size_t i = 0; i < d_pat.size(); ++i) d_pat.data()[i] += d_in.data()[i];
            }
            if (internals) internals->reconstruction.push_back(std::move(recon));
        }

        if (cfg.losses.cls) {
            ProjectionCache pc;
            Matrix q = project_normalized(state.student.heads.cls, cls_rows, backward ? &pc : nullptr);
            Matrix dq(q.rows(), q.cols());
            const double scale = 1.0 / (static_cast<double>(V) * targets * B);
            std::vector<float> g(D);
            for (int t = 0; t < targets; ++t)
                for (int b = 0; b < B; ++b) {
                    Matrix negatives = B > 1 ? rows_except(k_cls[t], b) : Matrix(0, D);
                    const float l = losses::loss_cls<float>(q.row(b), k_cls[t].row(b),
                                                            {negatives.data(), negatives.rows(), negatives.cols()}, tau,
                                                            backward ? std::span<float>(g) : std::span<float>{});
                    cls_sum += l * scale;
                    if (backward)
                        for (int d = 0; d < D; ++d) dq(b, d) += g[d] * static_cast<float>(scale);
                }
            if (!std::isfinite(cls_sum)) throw TrainingDivergence("l_cls", step);
            if (backward) {
                Matrix d_in;
                project_normalized_backward(state.student.heads.cls, pc, q, dq, &d_in);
                for (std::size_t i = 0; i < d_cls.size(); ++i) d_cls.data()[i] += d_in.data()[i];
            }
            if (internals) internals->student_cls.push_back(std::move(q));
        }

        if (cfg.losses.pat) {
            ProjectionCache pc;
            Matrix q = project_normalized(state.student.heads.pat, pat_rows, backward ? &pc : nullptr);
            Matrix dq;
            const double l = batch_patch_contrast(q, k_pat[v], B, P, cfg.tau, backward ? &dq : nullptr);
            pat_sum += l / V;
            if (!std::isfinite(pat_sum)) throw TrainingDivergence("l_pat", step);
            if (backward) {
                const float s = 1.f / static_cast<float>(V);
                for (float& x : dq.storage()) x *= s;
                Matrix d_in;
                project_normalized_backward(state.student.heads.pat, pc, q, dq, &d_in);
                for (std::size_t i = 0; i < d_pat.size(); ++i) d_pat.data()[i] += d_in.data()[i];
            }
            if (internals) internals->student_pat.push_back(std::move(q));
        }

        if (backward) {
            Matrix d_tokens;
            merge_tokens(d_cls, d_pat, B, P, d_tokens);
            state.student.backbone.backward(cache, d_tokens);
        }
    }

    LossReport report;
    report.l_rec = rec_sum;
    report.l_cls = cls_sum;
    report.l_pat = pat_sum;
    report.l_total = report.l_rec + report.l_cls + report.l_pat;
    if (!std::isfinite(report.l_total)) throw TrainingDivergence("l_total", step);
    return report;
}

double clip_grad_norm(nn::ParamList& params, double max_norm) {
    double sq = 0.0;
    for (const auto& p : params)
        for (float g : p.param->grad.storage()) sq += static_cast<double>(g) * g;
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const float s = static_cast<float>(max_norm / (norm + 1e-6));
        for (auto& p : params)
            for (float& g : p.param->grad.storage()) g *= s;
    }
    return norm;
}

void adamw_step(TrainState& state, nn::ParamList& params, double lr) {
    const auto& o = state.config.optimizer;
    const double t = static_cast<double>(state.step + 1);
    const double bc1 = 1.0 - std::pow(o.beta1, t);
    const double bc2 = 1.0 - std::pow(o.beta2, t);
    const float b1 = static_cast<float>(o.beta1), b2 = static_cast<float>(o.beta2);
    const float step_size = static_cast<float>(lr / bc1);
    const float inv_bc2 = static_cast<float>(1.0 / bc2);
    const float eps = static_cast<float>(o.eps);
    if (params.size() != state.adam_m.size()) throw StateError("adamw_step: optimizer state does not match parameters");
    for (std::size_t i = 0; i < params.size(); ++i) {
        nn::Param& p = *params[i].param;
        float* w = p.value.data();
        const float* g = p.grad.data();
        float* m = state.adam_m[i].data();
        float* v = state.adam_v[i].data();
        const float decay = p.decay ? static_cast<float>(lr * o.weight_decay) : 0.f;
        const std::size_t n = p.value.size();
#pragma omp parallel for simd schedule(static)
        for (std::size_t j = 0; j < n; ++j) {
            m[j] = b1 * m[j] + (1.f - b1) * g[j];
            v[j] = b2 * v[j] + (1.f - b2) * g[j] * g[j];
            w[j] -= decay * w[j];
            w[j] -= step_size * m[j] / (std::sqrt(v[j] * inv_bc2) + eps);
        }
    }
}

std::vector<ViewBundle> make_batch(const std::vector<ImageTensor>& dataset, const TrainConfig& cfg, long step) {
    if (dataset.empty()) throw InvalidInput("training dataset is empty");
    const std::size_t n = dataset.size();
    const int B = cfg.batch_size;
    std::vector<std::size_t> picks(B);
    std::vector<std::size_t> perm;
    long perm_epoch = -1;
    for (int j = 0; j < B; ++j) {
        const std::uint64_t g = static_cast<std::uint64_t>(step) * B + j;
        const long epoch = static_cast<long>(g / n);
        if (epoch != perm_epoch) {
            perm.resize(n);
            std::iota(perm.begin(), perm.end(), std::size_t{0});
            auto rng = make_rng(cfg.seed, 0xE90C, static_cast<std::uint64_t>(epoch));
            std::shuffle(perm.begin(), perm.end(), rng);
            perm_epoch = epoch;
        }
        picks[j] = perm[g % n];
    }
    std::vector<ViewBundle> batch(B);
#pragma omp parallel for schedule(dynamic)
    for (int j = 0; j < B; ++j) {
        const ImageTensor* donor = nullptr;
        if (B > 1) {
            auto r = make_rng(cfg.seed, 0xD0D0 + static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(j));
            std::uniform_int_distribution<int> pick(1, B - 1);
            donor = &dataset[picks[(j + pick(r)) % B]];
        }
        batch[j] = make_views(dataset[picks[j]], cfg.augmentation, mix_seed(cfg.seed, static_cast<std::uint64_t>(step), j), donor);
    }
    return batch;
}

LossReport train_step(TrainState& state, const std::vector<ImageTensor>& dataset) {
    const double u = static_cast<double>(state.step) / static_cast<double>(state.config.total_steps);
    auto batch = make_batch(dataset, state.config, state.step);
    state.zero_grads();
    LossReport report = total_loss(batch, state, true);
    auto params = state.student_params();
    clip_grad_norm(params, state.config.optimizer.grad_clip);
    for (const auto& p : params)
        if (!all_finite(p.param->grad)) throw TrainingDivergence("gradient of " + p.name, state.step);
    state.lr = lr_schedule(u, state.config.schedule);
    adamw_step(state, params, state.lr);
    state.momentum = ema_schedule(std::min(u, 1.0), state.config.schedule.ema_start, state.config.schedule.ema_end);
    ema_update(state);
    ++state.step;
    return report;
}

TrainResult train(const std::vector<ImageTensor>& dataset, TrainState& state, const TrainOptions& options) {
    if (dataset.empty()) throw InvalidInput("training dataset is empty");
    TrainResult result;
    const long every = options.checkpoint_every >= 0 ? options.checkpoint_every : state.config.checkpoint_every;
    long limit = state.config.total_steps;
    if (options.max_steps > 0) limit = std::min(limit, state.step + options.max_steps);
    long last_saved = -1;
    while (state.step < limit) {
        LossReport r = train_step(state, dataset);
        result.history.push_back(r);
        if (options.on_step) options.on_step(state, r);
        if (!options.out_dir.empty() && every > 0 && state.step % every == 0) {
            result.checkpoints.push_back(save_checkpoint(state, options.out_dir));
            last_saved = state.step;
        }
    }
    if (!options.out_dir.empty() && last_saved != state.step) result.checkpoints.push_back(save_checkpoint(state, options.out_dir));
    return result;
}

LayerReconstruction reconstruct_from_layer(const StudentNetwork& student, const ImageTensor& masked, int layer) {
    const auto& cfg = student.backbone.config();
    if (layer < 1 || layer > cfg.depth)
        throw InvalidInput("layer " + std::to_string(layer) + " outside [1, " + std::to_string(cfg.depth) + "]");
    const int ps = cfg.patch_size, gh = masked.height / ps, gw = masked.width / ps;
    auto decode = [&](int l) {
        FeatureSet f = student.backbone.encode_at_layer(masked, l);
        Matrix pixels;
        student.heads.rec.forward(f.patches, pixels, nullptr);
        return unpatchify(pixels, gh, gw, ps);
    };
    LayerReconstruction out;
    out.reconstruction = decode(layer);
    if (layer >= 2) {
        ImageTensor prev = decode(layer - 1);
        ImageTensor diff = out.reconstruction;
        for (std::size_t i = 0; i < diff.data.size(); ++i) diff.data[i] = std::abs(out.reconstruction.data[i] - prev.data[i]);
        out.difference = std::move(diff);
    }
    return out;
}

}  // namespace mmc
