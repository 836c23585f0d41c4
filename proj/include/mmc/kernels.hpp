#pragma once

#include <cstddef>

// Dense kernels behind the transformer. Two implementations with identical
// signatures: `serial` is the straightforward reference used by tests, and
// `parallel` is the OpenMP/SIMD version the model runs on. Every parallel
// kernel partitions outputs across threads (no cross-thread reductions), so
// results are deterministic for a fixed thread count.
//
// All matrices are row-major. `accumulate` adds into `c` instead of overwriting.
namespace mmc::kernels {

struct AttentionShape {
    int batch = 0;     // independent sequences
    int tokens = 0;    // sequence length
    int heads = 0;
    int head_dim = 0;  // embed_dim / heads
    int embed_dim() const { return heads * head_dim; }
};

#define MMC_DECLARE_KERNELS                                                                                    \
    /* c[m,n] = a[m,k] * b[k,n] */                                                                             \
    void gemm_nn(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate);              \
    /* c[m,n] = a[m,k] * b[n,k]^T */                                                                           \
    void gemm_nt(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate);              \
    /* c[m,n] = a[k,m]^T * b[k,n] */                                                                           \
    void gemm_tn(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate);              \
    void add_bias(float* y, const float* bias, int rows, int cols);                                            \
    /* dbias += column sums of dy */                                                                           \
    void bias_grad(const float* dy, float* dbias, int rows, int cols);                                         \
    void layernorm_forward(const float* x, const float* gamma, const float* beta, float* y, float* mean,       \
                           float* rstd, int rows, int cols, float eps);                                        \
    /* dx overwritten; dgamma, dbeta accumulated */                                                            \
    void layernorm_backward(const float* dy, const float* x, const float* mean, const float* rstd,             \
                            const float* gamma, float* dx, float* dgamma, float* dbeta, int rows, int cols);   \
    void gelu_forward(const float* x, float* y, std::size_t n);                                                \
    /* dx = dy * gelu'(x); dx overwritten */                                                                   \
    void gelu_backward(const float* x, const float* dy, float* dx, std::size_t n);                             \
    /* qkv: (batch*tokens) x 3C laid out [q | k | v]; out: (batch*tokens) x C;                                 \
       probs: batch x heads x tokens x tokens (saved for backward) */                                          \
    void attention_forward(const float* qkv, float* out, float* probs, AttentionShape s);                      \
    /* dqkv overwritten */                                                                                     \
    void attention_backward(const float* qkv, const float* probs, const float* dout, float* dqkv,              \
                            AttentionShape s);

namespace serial {
MMC_DECLARE_KERNELS
}

namespace parallel {
MMC_DECLARE_KERNELS
}

#undef MMC_DECLARE_KERNELS

int max_threads();

}  // namespace mmc::kernels

namespace mmc::kernels {

enum class Backend { serial, parallel };

/// Function table so whole-model paths can be run on either implementation.
struct KernelTable {
    decltype(&serial::gemm_nn) gemm_nn;
    decltype(&serial::gemm_nt) gemm_nt;
    decltype(&serial::gemm_tn) gemm_tn;
    decltype(&serial::add_bias) add_bias;
    decltype(&serial::bias_grad) bias_grad;
    decltype(&serial::layernorm_forward) layernorm_forward;
    decltype(&serial::layernorm_backward) layernorm_backward;
    decltype(&serial::gelu_forward) gelu_forward;
    decltype(&serial::gelu_backward) gelu_backward;
    decltype(&serial::attention_forward) attention_forward;
    decltype(&serial::attention_backward) attention_backward;
};

const KernelTable& table(Backend backend);
/// Table used by the model layers (parallel unless overridden).
const KernelTable& active();
void set_active_backend(Backend backend);
Backend active_backend();

}  // namespace mmc::kernels
