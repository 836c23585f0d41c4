#include "mmc/nn.hpp"

#include <cmath>

#include "mmc/errors.hpp"
#include "mmc/kernels.hpp"

namespace mmc::nn {

namespace {

void normal_fill(Matrix& m, std::mt19937_64& rng, float stddev) {
    std::normal_distribution<float> dist(0.f, stddev);
    for (float& v : m.storage()) {
        float s = dist(rng);
        // truncate at two standard deviations
        while (std::abs(s) > 2.f * stddev) s = dist(rng);
        v = s;
    }
}

int as_int(std::size_t v) { return static_cast<int>(v); }

}  // namespace

ConstParamList as_const(const ParamList& params) {
    ConstParamList out;
    out.reserve(params.size());
    for (const auto& p : params) out.push_back({p.name, p.param});
    return out;
}

void Linear::init_shape(int in, int out) {
    weight.init(in, out, true);
    bias.init(1, out, false);
}

void Linear::init_weights(std::mt19937_64& rng, float stddev) {
    normal_fill(weight.value, rng, stddev);
    bias.value.fill(0.f);
}

void Linear::forward(const Matrix& x, Matrix& y) const {
    if (x.cols() != weight.value.rows()) throw InvalidInput("linear: input width mismatch");
    const auto& k = kernels::active();
    y.resize(x.rows(), weight.value.cols());
    k.gemm_nn(x.data(), weight.value.data(), y.data(), as_int(x.rows()), as_int(x.cols()), as_int(y.cols()), false);
    k.add_bias(y.data(), bias.value.data(), as_int(y.rows()), as_int(y.cols()));
}

void Linear::backward(const Matrix& x, const Matrix& dy, Matrix* dx) {
    const auto& k = kernels::active();
    const int rows = as_int(x.rows()), in = as_int(x.cols()), out = as_int(dy.cols());
    k.gemm_tn(x.data(), dy.data(), weight.grad.data(), in, rows, out, true);
    k.bias_grad(dy.data(), bias.grad.data(), rows, out);
    if (dx) {
        dx->resize(x.rows(), x.cols());
        k.gemm_nt(dy.data(), weight.value.data(), dx->data(), rows, out, in, false);
    }
}

void Linear::collect(const std::string& prefix, ParamList& out) {
    out.push_back({prefix + ".weight", &weight});
    out.push_back({prefix + ".bias", &bias});
}

void LayerNorm::init_shape(int dim) {
    gamma.init(1, dim, false);
    beta.init(1, dim, false);
    gamma.value.fill(1.f);
}

void LayerNorm::forward(const Matrix& x, Matrix& y, LayerNormCache& cache) const {
    const auto& k = kernels::active();
    y.resize(x.rows(), x.cols());
    cache.mean.resize(x.rows());
    cache.rstd.resize(x.rows());
    k.layernorm_forward(x.data(), gamma.value.data(), beta.value.data(), y.data(), cache.mean.data(), cache.rstd.data(),
                        as_int(x.rows()), as_int(x.cols()), eps);
}

void LayerNorm::backward(const Matrix& x, const LayerNormCache& cache, const Matrix& dy, Matrix& dx) {
    const auto& k = kernels::active();
    dx.resize(x.rows(), x.cols());
    k.layernorm_backward(dy.data(), x.data(), cache.mean.data(), cache.rstd.data(), gamma.value.data(), dx.data(),
                         gamma.grad.data(), beta.grad.data(), as_int(x.rows()), as_int(x.cols()));
}

void LayerNorm::collect(const std::string& prefix, ParamList& out) {
    out.push_back({prefix + ".gamma", &gamma});
    out.push_back({prefix + ".beta", &beta});
}

void TransformerBlock::init_shape(int dim, int n_heads, int mlp_ratio) {
    if (n_heads < 1 || dim % n_heads != 0) throw InvalidInput("embed_dim must be divisible by heads");
    heads = n_heads;
    norm1.init_shape(dim);
    qkv.init_shape(dim, 3 * dim);
    proj.init_shape(dim, dim);
    norm2.init_shape(dim);
    fc1.init_shape(dim, mlp_ratio * dim);
    fc2.init_shape(mlp_ratio * dim, dim);
}

void TransformerBlock::init_weights(std::mt19937_64& rng) {
    qkv.init_weights(rng);
    proj.init_weights(rng);
    fc1.init_weights(rng);
    fc2.init_weights(rng);
}

void TransformerBlock::forward(Matrix& x, int batch, int tokens, BlockCache* cache) const {
    const auto& k = kernels::active();
    const int dim = as_int(x.cols());
    const kernels::AttentionShape shape{batch, tokens, heads, dim / heads};

    BlockCache local;
    BlockCache& c = cache ? *cache : local;
    if (cache) c.input = x;

    norm1.forward(x, c.h1, c.ln1);
    qkv.forward(c.h1, c.qkv);
    c.attn.resize(x.rows(), x.cols());
    c.probs.resize(static_cast<std::size_t>(batch) * heads * tokens * tokens);
    k.attention_forward(c.qkv.data(), c.attn.data(), c.probs.data(), shape);
    Matrix projected;
    proj.forward(c.attn, projected);
    for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] += projected.data()[i];
    if (cache) c.x2 = x;

    norm2.forward(x, c.h2, c.ln2);
    fc1.forward(c.h2, c.fc1_out);
    c.act.resize(c.fc1_out.rows(), c.fc1_out.cols());
    k.gelu_forward(c.fc1_out.data(), c.act.data(), c.act.size());
    Matrix mlp_out;
    fc2.forward(c.act, mlp_out);
    for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] += mlp_out.data()[i];
}

void TransformerBlock::backward(const BlockCache& c, int batch, int tokens, Matrix& dx) {
    const auto& k = kernels::active();
    const int dim = as_int(dx.cols());
    const kernels::AttentionShape shape{batch, tokens, heads, dim / heads};

    // MLP branch: dx is d(out); residual passes it through unchanged.
    Matrix d_act, d_fc1, d_h2, d_tmp;
    fc2.backward(c.act, dx, &d_act);
    d_fc1.resize(d_act.rows(), d_act.cols());
    k.gelu_backward(c.fc1_out.data(), d_act.data(), d_fc1.data(), d_fc1.size());
    fc1.backward(c.h2, d_fc1, &d_h2);
    norm2.backward(c.x2, c.ln2, d_h2, d_tmp);
    for (std::size_t i = 0; i < dx.size(); ++i) dx.data()[i] += d_tmp.data()[i];

    // Attention branch.
    Matrix d_attn, d_qkv, d_h1;
    proj.backward(c.attn, dx, &d_attn);
    d_qkv.resize(c.qkv.rows(), c.qkv.cols());
    k.attention_backward(c.qkv.data(), c.probs.data(), d_attn.data(), d_qkv.data(), shape);
    qkv.backward(c.h1, d_qkv, &d_h1);
    norm1.backward(c.input, c.ln1, d_h1, d_tmp);
    for (std::size_t i = 0; i < dx.size(); ++i) dx.data()[i] += d_tmp.data()[i];
}

void TransformerBlock::collect(const std::string& prefix, ParamList& out) {
    norm1.collect(prefix + ".norm1", out);
    qkv.collect(prefix + ".attn.qkv", out);
    proj.collect(prefix + ".attn.proj", out);
    norm2.collect(prefix + ".norm2", out);
    fc1.collect(prefix + ".mlp.fc1", out);
    fc2.collect(prefix + ".mlp.fc2", out);
}

void Mlp3::init_shape(int in, int hidden, int out) {
    fc1.init_shape(in, hidden);
    fc2.init_shape(hidden, hidden);
    fc3.init_shape(hidden, out);
}

void Mlp3::init_weights(std::mt19937_64& rng) {
    fc1.init_weights(rng);
    fc2.init_weights(rng);
    fc3.init_weights(rng);
}

void Mlp3::forward(const Matrix& x, Matrix& y, MlpCache* cache) const {
    const auto& k = kernels::active();
    MlpCache local;
    MlpCache& c = cache ? *cache : local;
    if (cache) c.input = x;
    fc1.forward(x, c.pre1);
    c.act1.resize(c.pre1.rows(), c.pre1.cols());
    k.gelu_forward(c.pre1.data(), c.act1.data(), c.act1.size());
    fc2.forward(c.act1, c.pre2);
    c.act2.resize(c.pre2.rows(), c.pre2.cols());
    k.gelu_forward(c.pre2.data(), c.act2.data(), c.act2.size());
    fc3.forward(c.act2, y);
}

void Mlp3::backward(const MlpCache& c, const Matrix& dy, Matrix* dx) {
    const auto& k = kernels::active();
    Matrix d_act2, d_pre2, d_act1, d_pre1;
    fc3.backward(c.act2, dy, &d_act2);
    d_pre2.resize(d_act2.rows(), d_act2.cols());
    k.gelu_backward(c.pre2.data(), d_act2.data(), d_pre2.data(), d_pre2.size());
    fc2.backward(c.act1, d_pre2, &d_act1);
    d_pre1.resize(d_act1.rows(), d_act1.cols());
    k.gelu_backward(c.pre1.data(), d_act1.data(), d_pre1.data(), d_pre1.size());
    fc1.backward(c.input, d_pre1, dx);
}

void Mlp3::collect(const std::string& prefix, ParamList& out) {
    fc1.collect(prefix + ".fc1", out);
    fc2.collect(prefix + ".fc2", out);
    fc3.collect(prefix + ".fc3", out);
}

void l2_normalize_rows(const Matrix& x, Matrix& y, std::vector<float>& norms) {
    y.resize(x.rows(), x.cols());
    norms.resize(x.rows());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        double s = 0.0;
        for (float v : x.row(r)) s += static_cast<double>(v) * v;
        const float n = static_cast<float>(std::sqrt(s));
        norms[r] = n;
        const float inv = 1.f / std::max(n, kNormEpsilon);
        auto xr = x.row(r);
        auto yr = y.row(r);
        for (std::size_t j = 0; j < x.cols(); ++j) yr[j] = xr[j] * inv;
    }
}

void l2_normalize_rows_backward(const Matrix& y, const std::vector<float>& norms, const Matrix& dy, Matrix& dx) {
    dx.resize(y.rows(), y.cols());
    for (std::size_t r = 0; r < y.rows(); ++r) {
        auto yr = y.row(r);
        auto gr = dy.row(r);
        double dot = 0.0;
        for (std::size_t j = 0; j < y.cols(); ++j) dot += static_cast<double>(yr[j]) * gr[j];
        const float inv = 1.f / std::max(norms[r], kNormEpsilon);
        auto out = dx.row(r);
        for (std::size_t j = 0; j < y.cols(); ++j) out[j] = (gr[j] - static_cast<float>(dot) * yr[j]) * inv;
    }
}

}  // namespace mmc::nn
