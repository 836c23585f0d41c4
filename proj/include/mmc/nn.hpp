#pragma once

#include <random>
#include <string>
#include <vector>

#include "mmc/tensor.hpp"

namespace mmc::nn {

/// A named trainable tensor and its gradient accumulator.
struct Param {
    Matrix value;
    Matrix grad;
    bool decay = true;  // weight decay applies (matrices only)

    void init(std::size_t rows, std::size_t cols, bool with_decay) {
        value.resize(rows, cols);
        grad.resize(rows, cols);
        decay = with_decay;
    }
    void zero_grad() { grad.fill(0.f); }
};

struct NamedParam {
    std::string name;
    Param* param;
};
using ParamList = std::vector<NamedParam>;

struct ConstNamedParam {
    std::string name;
    const Param* param;
};
using ConstParamList = std::vector<ConstNamedParam>;

ConstParamList as_const(const ParamList& params);

/// y = x W + b with W stored (in x out).
class Linear {
  public:
    Linear() = default;
    Linear(int in, int out) { init_shape(in, out); }

    void init_shape(int in, int out);
    /// Truncated-normal-like init (std 0.02), zero bias.
    void init_weights(std::mt19937_64& rng, float stddev = 0.02f);

    int in_features() const { return static_cast<int>(weight.value.rows()); }
    int out_features() const { return static_cast<int>(weight.value.cols()); }

    void forward(const Matrix& x, Matrix& y) const;
    /// Accumulates parameter gradients; writes dx when non-null.
    void backward(const Matrix& x, const Matrix& dy, Matrix* dx);
    void collect(const std::string& prefix, ParamList& out);

    Param weight;
    Param bias;
};

struct LayerNormCache {
    std::vector<float> mean;
    std::vector<float> rstd;
};

class LayerNorm {
  public:
    LayerNorm() = default;
    explicit LayerNorm(int dim) { init_shape(dim); }

    void init_shape(int dim);
    void forward(const Matrix& x, Matrix& y, LayerNormCache& cache) const;
    void backward(const Matrix& x, const LayerNormCache& cache, const Matrix& dy, Matrix& dx);
    void collect(const std::string& prefix, ParamList& out);

    Param gamma;
    Param beta;
    float eps = 1e-6f;
};

struct BlockCache {
    Matrix input, h1, qkv, attn, x2, h2, fc1_out, act;
    std::vector<float> probs;
    LayerNormCache ln1, ln2;
};

/// Pre-norm transformer block: x + Attn(LN(x)), then + MLP(LN(x)) with GELU, ratio 4.
class TransformerBlock {
  public:
    TransformerBlock() = default;
    TransformerBlock(int dim, int heads, int mlp_ratio = 4) { init_shape(dim, heads, mlp_ratio); }

    void init_shape(int dim, int heads, int mlp_ratio = 4);
    void init_weights(std::mt19937_64& rng);

    /// x is (batch*tokens) x dim, updated in place. Cache is filled when non-null.
    void forward(Matrix& x, int batch, int tokens, BlockCache* cache) const;
    /// dx: gradient w.r.t. block output on entry, w.r.t. block input on exit.
    void backward(const BlockCache& cache, int batch, int tokens, Matrix& dx);
    void collect(const std::string& prefix, ParamList& out);

    LayerNorm norm1;
    Linear qkv;
    Linear proj;
    LayerNorm norm2;
    Linear fc1;
    Linear fc2;
    int heads = 1;
};

struct MlpCache {
    Matrix input, pre1, act1, pre2, act2;
};

/// Three linear layers with GELU between them.
class Mlp3 {
  public:
    Mlp3() = default;
    Mlp3(int in, int hidden, int out) { init_shape(in, hidden, out); }

    void init_shape(int in, int hidden, int out);
    void init_weights(std::mt19937_64& rng);
    void forward(const Matrix& x, Matrix& y, MlpCache* cache) const;
    void backward(const MlpCache& cache, const Matrix& dy, Matrix* dx);
    void collect(const std::string& prefix, ParamList& out);

    int out_features() const { return fc3.out_features(); }

    Linear fc1;
    Linear fc2;
    Linear fc3;
};

/// Row-wise L2 normalisation; `norms` receives the pre-normalisation lengths.
void l2_normalize_rows(const Matrix& x, Matrix& y, std::vector<float>& norms);
/// Backward of l2_normalize_rows given the normalised output y.
void l2_normalize_rows_backward(const Matrix& y, const std::vector<float>& norms, const Matrix& dy, Matrix& dx);

constexpr float kNormEpsilon = 1e-12f;

}  // namespace mmc::nn
