#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "mmc/kernels.hpp"

namespace mmc::kernels {

int max_threads() { return omp_get_max_threads(); }

namespace parallel {
namespace {

constexpr int kRowTile = 4;
constexpr int kColTile = 32;

// B packed into column panels of width kColTile: panel-major, then k, then column.
void pack_panels(const float* b, int k, int n, std::vector<float>& packed) {
    const int panels = (n + kColTile - 1) / kColTile;
    packed.assign(static_cast<std::size_t>(panels) * k * kColTile, 0.f);
#pragma omp parallel for schedule(static)
    for (int jp = 0; jp < panels; ++jp) {
        const int j0 = jp * kColTile;
        const int width = std::min(kColTile, n - j0);
        float* dst = packed.data() + static_cast<std::size_t>(jp) * k * kColTile;
        for (int p = 0; p < k; ++p) std::memcpy(dst + p * kColTile, b + static_cast<std::size_t>(p) * n + j0, width * sizeof(float));
    }
}

template <int Rows>
inline void tile_kernel(const float* __restrict__ a, int lda, const float* __restrict__ panel, int k, float* __restrict__ c,
                        int ldc, int width, bool accumulate) {
    alignas(64) float acc[Rows][kColTile];
    for (int r = 0; r < Rows; ++r)
#pragma omp simd
        for (int j = 0; j < kColTile; ++j) acc[r][j] = 0.f;
    for (int p = 0; p < k; ++p) {
        const float* __restrict__ bp = panel + p * kColTile;
#pragma GCC unroll 4
        for (int r = 0; r < Rows; ++r) {
            const float av = a[r * lda + p];
#pragma omp simd
            for (int j = 0; j < kColTile; ++j) acc[r][j] += av * bp[j];
        }
    }
    for (int r = 0; r < Rows; ++r) {
        float* cr = c + static_cast<std::size_t>(r) * ldc;
        if (accumulate) {
            for (int j = 0; j < width; ++j) cr[j] += acc[r][j];
        } else {
            for (int j = 0; j < width; ++j) cr[j] = acc[r][j];
        }
    }
}

void transpose(const float* src, int rows, int cols, std::vector<float>& dst) {
    dst.resize(static_cast<std::size_t>(rows) * cols);
    constexpr int kBlock = 32;
#pragma omp parallel for schedule(static)
    for (int r0 = 0; r0 < rows; r0 += kBlock)
        for (int c0 = 0; c0 < cols; c0 += kBlock)
            for (int r = r0; r < std::min(rows, r0 + kBlock); ++r)
                for (int c = c0; c < std::min(cols, c0 + kBlock); ++c)
                    dst[static_cast<std::size_t>(c) * rows + r] = src[static_cast<std::size_t>(r) * cols + c];
}

inline float gelu(float x) { return 0.5f * x * (1.f + std::erf(x * 0.70710678118654752f)); }

}  // namespace

void gemm_nn(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate) {
    if (m == 0 || n == 0) return;
    if (k == 0) {
        if (!accumulate) std::fill(c, c + static_cast<std::size_t>(m) * n, 0.f);
        return;
    }
    thread_local std::vector<float> packed;
    pack_panels(b, k, n, packed);
    const int panels = (n + kColTile - 1) / kColTile;
    const int row_tiles = (m + kRowTile - 1) / kRowTile;
    const float* pk = packed.data();
#pragma omp parallel for schedule(static)
    for (int it = 0; it < row_tiles; ++it) {
        const int i0 = it * kRowTile;
        const int rows = std::min(kRowTile, m - i0);
        for (int jp = 0; jp < panels; ++jp) {
            const int j0 = jp * kColTile;
            const int width = std::min(kColTile, n - j0);
            const float* panel = pk + static_cast<std::size_t>(jp) * k * kColTile;
            const float* ar = a + static_cast<std::size_t>(i0) * k;
            float* cr = c + static_cast<std::size_t>(i0) * n + j0;
            switch (rows) {
                case 4: tile_kernel<4>(ar, k, panel, k, cr, n, width, accumulate); break;
                case 3: tile_kernel<3>(ar, k, panel, k, cr, n, width, accumulate); break;
                case 2: tile_kernel<2>(ar, k, panel, k, cr, n, width, accumulate); break;
                default: tile_kernel<1>(ar, k, panel, k, cr, n, width, accumulate); break;
            }
        }
    }
}

void gemm_nt(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate) {
    thread_local std::vector<float> bt;
    transpose(b, n, k, bt);
    gemm_nn(a, bt.data(), c, m, k, n, accumulate);
}

void gemm_tn(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate) {
    thread_local std::vector<float> at;
    transpose(a, k, m, at);
    gemm_nn(at.data(), b, c, m, k, n, accumulate);
}

void add_bias(float* y, const float* bias, int rows, int cols) {
#pragma omp parallel for schedule(static)
    for (int r = 0; r < rows; ++r) {
        float* yr = y + static_cast<std::size_t>(r) * cols;
#pragma omp simd
        for (int j = 0; j < cols; ++j) yr[j] += bias[j];
    }
}

void bias_grad(const float* dy, float* dbias, int rows, int cols) {
    constexpr int kChunk = 16;
    const int chunks = (cols + kChunk - 1) / kChunk;
#pragma omp parallel for schedule(static)
    for (int ch = 0; ch < chunks; ++ch) {
        const int j0 = ch * kChunk, j1 = std::min(cols, j0 + kChunk);
        float acc[kChunk] = {};
        for (int r = 0; r < rows; ++r) {
            const float* dr = dy + static_cast<std::size_t>(r) * cols;
            for (int j = j0; j < j1; ++j) acc[j - j0] += dr[j];
        }
        for (int j = j0; j < j1; ++j) dbias[j] += acc[j - j0];
    }
}

void layernorm_forward(const float* x, const float* gamma, const float* beta, float* y, float* mean, float* rstd,
                       int rows, int cols, float eps) {
#pragma omp parallel for schedule(static)
    for (int r = 0; r < rows; ++r) {
        const float* xr = x + static_cast<std::size_t>(r) * cols;
        float* yr = y + static_cast<std::size_t>(r) * cols;
        float mu = 0.f;
#pragma omp simd reduction(+ : mu)
        for (int j = 0; j < cols; ++j) mu += xr[j];
        mu /= cols;
        float var = 0.f;
#pragma omp simd reduction(+ : var)
        for (int j = 0; j < cols; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= cols;
        const float rs = 1.f / std::sqrt(var + eps);
        mean[r] = mu;
        rstd[r] = rs;
#pragma omp simd
        for (int j = 0; j < cols; ++j) yr[j] = (xr[j] - mu) * rs * gamma[j] + beta[j];
    }
}

void layernorm_backward(const float* dy, const float* x, const float* mean, const float* rstd, const float* gamma,
                        float* dx, float* dgamma, float* dbeta, int rows, int cols) {
#pragma omp parallel for schedule(static)
    for (int r = 0; r < rows; ++r) {
        const std::size_t off = static_cast<std::size_t>(r) * cols;
        const float mu = mean[r], rs = rstd[r];
        float sum_g = 0.f, sum_gx = 0.f;
#pragma omp simd reduction(+ : sum_g, sum_gx)
        for (int j = 0; j < cols; ++j) {
            const float g = dy[off + j] * gamma[j];
            sum_g += g;
            sum_gx += g * (x[off + j] - mu) * rs;
        }
        const float inv = 1.f / cols;
#pragma omp simd
        for (int j = 0; j < cols; ++j) {
            const float xhat = (x[off + j] - mu) * rs;
            dx[off + j] = rs * (dy[off + j] * gamma[j] - sum_g * inv - xhat * sum_gx * inv);
        }
    }
    constexpr int kChunk = 16;
    const int chunks = (cols + kChunk - 1) / kChunk;
#pragma omp parallel for schedule(static)
    for (int ch = 0; ch < chunks; ++ch) {
        const int j0 = ch * kChunk, j1 = std::min(cols, j0 + kChunk);
        float ag[kChunk] = {}, ab[kChunk] = {};
        for (int r = 0; r < rows; ++r) {
            const std::size_t off = static_cast<std::size_t>(r) * cols;
            for (int j = j0; j < j1; ++j) {
                ag[j - j0] += dy[off + j] * (x[off + j] - mean[r]) * rstd[r];
                ab[j - j0] += dy[off + j];
            }
        }
        for (int j = j0; j < j1; ++j) {
            dgamma[j] += ag[j - j0];
            dbeta[j] += ab[j - j0];
        }
    }
}

void gelu_forward(const float* x, float* y, std::size_t n) {
#pragma omp parallel for simd schedule(static)
    for (std::size_t i = 0; i < n; ++i) y[i] = gelu(x[i]);
}

void gelu_backward(const float* x, const float* dy, float* dx, std::size_t n) {
    constexpr float kInvSqrt2Pi = 0.39894228040143268f;
#pragma omp parallel for simd schedule(static)
    for (std::size_t i = 0; i < n; ++i) {
        const float v = x[i];
        const float cdf = 0.5f * (1.f + std::erf(v * 0.70710678118654752f));
        const float pdf = kInvSqrt2Pi * std::exp(-0.5f * v * v);
        dx[i] = dy[i] * (cdf + v * pdf);
    }
}

void attention_forward(const float* qkv, float* out, float* probs, AttentionShape s) {
    const int C = s.embed_dim(), N = s.tokens, d = s.head_dim;
    const std::size_t stride = 3 * static_cast<std::size_t>(C);
    const float scale = 1.f / std::sqrt(static_cast<float>(d));
#pragma omp parallel
    {
        std::vector<float> q(static_cast<std::size_t>(N) * d), k(q.size()), v(q.size());
#pragma omp for collapse(2) schedule(static)
        for (int b = 0; b < s.batch; ++b)
            for (int h = 0; h < s.heads; ++h) {
                for (int i = 0; i < N; ++i) {
                    const float* row = qkv + (static_cast<std::size_t>(b) * N + i) * stride + h * d;
                    std::memcpy(&q[i * d], row, d * sizeof(float));
                    std::memcpy(&k[i * d], row + C, d * sizeof(float));
                    std::memcpy(&v[i * d], row + 2 * C, d * sizeof(float));
                }
                float* p = probs + (static_cast<std::size_t>(b) * s.heads + h) * N * N;
                for (int i = 0; i < N; ++i) {
                    float* pi = p + static_cast<std::size_t>(i) * N;
                    float mx = -INFINITY;
                    for (int j = 0; j < N; ++j) {
                        float dot = 0.f;
#pragma omp simd reduction(+ : dot)
                        for (int t = 0; t < d; ++t) dot += q[i * d + t] * k[j * d + t];
                        pi[j] = dot * scale;
                        mx = std::max(mx, pi[j]);
                    }
                    float z = 0.f;
                    for (int j = 0; j < N; ++j) {
                        pi[j] = std::exp(pi[j] - mx);
                        z += pi[j];
                    }
                    const float inv = 1.f / z;
                    for (int j = 0; j < N; ++j) pi[j] *= inv;
                    float* o = out + (static_cast<std::size_t>(b) * N + i) * C + h * d;
                    float acc[256];
                    for (int t = 0; t < d; ++t) acc[t] = 0.f;
                    for (int j = 0; j < N; ++j) {
                        const float pj = pi[j];
#pragma omp simd
                        for (int t = 0; t < d; ++t) acc[t] += pj * v[j * d + t];
                    }
                    std::memcpy(o, acc, d * sizeof(float));
                }
            }
    }
}

void attention_backward(const float* qkv, const float* probs, const float* dout, float* dqkv, AttentionShape s) {
    const int C = s.embed_dim(), N = s.tokens, d = s.head_dim;
    const std::size_t stride = 3 * static_cast<std::size_t>(C);
    const float scale = 1.f / std::sqrt(static_cast<float>(d));
#pragma omp parallel
    {
        const std::size_t nd = static_cast<std::size_t>(N) * d;
        std::vector<float> q(nd), k(nd), v(nd), go(nd), dq(nd), dk(nd), dv(nd), ds(N);
#pragma omp for collapse(2) schedule(static)
        for (int b = 0; b < s.batch; ++b)
            for (int h = 0; h < s.heads; ++h) {
                for (int i = 0; i < N; ++i) {
                    const float* row = qkv + (static_cast<std::size_t>(b) * N + i) * stride + h * d;
                    std::memcpy(&q[i * d], row, d * sizeof(float));
                    std::memcpy(&k[i * d], row + C, d * sizeof(float));
                    std::memcpy(&v[i * d], row + 2 * C, d * sizeof(float));
                    std::memcpy(&go[i * d], dout + (static_cast<std::size_t>(b) * N + i) * C + h * d, d * sizeof(float));
                }
                std::fill(dq.begin(), dq.end(), 0.f);
                std::fill(dk.begin(), dk.end(), 0.f);
                std::fill(dv.begin(), dv.end(), 0.f);
                const float* p = probs + (static_cast<std::size_t>(b) * s.heads + h) * N * N;
                for (int i = 0; i < N; ++i) {
                    const float* pi = p + static_cast<std::size_t>(i) * N;
                    float row = 0.f;
                    for (int j = 0; j < N; ++j) {
                        float dot = 0.f;
#pragma omp simd reduction(+ : dot)
                        for (int t = 0; t < d; ++t) dot += go[i * d + t] * v[j * d + t];
                        ds[j] = dot;
                        row += dot * pi[j];
                    }
                    for (int j = 0; j < N; ++j) {
                        const float g = pi[j] * (ds[j] - row) * scale;
                        const float pj = pi[j];
#pragma omp simd
                        for (int t = 0; t < d; ++t) {
                            dq[i * d + t] += g * k[j * d + t];
                            dk[j * d + t] += g * q[i * d + t];
                            dv[j * d + t] += pj * go[i * d + t];
                        }
                    }
                }
                for (int i = 0; i < N; ++i) {
                    float* row = dqkv + (static_cast<std::size_t>(b) * N + i) * stride + h * d;
                    std::memcpy(row, &dq[i * d], d * sizeof(float));
                    std::memcpy(row + C, &dk[i * d], d * sizeof(float));
                    std::memcpy(row + 2 * C, &dv[i * d], d * sizeof(float));
                }
            }
    }
}

}  // namespace parallel
}  // namespace mmc::kernels

#include <atomic>

namespace mmc::kernels {
namespace {

#define MMC_TABLE(ns)                                                                                            \
    KernelTable {                                                                                                \
        ns::gemm_nn, ns::gemm_nt, ns::gemm_tn, ns::add_bias, ns::bias_grad, ns::layernorm_forward,             \
            ns::layernorm_backward, ns::gelu_forward, ns::gelu_backward, ns::attention_forward,                \
            ns::attention_backward                                                                              \
    }

const KernelTable kSerial = MMC_TABLE(serial);
const KernelTable kParallel = MMC_TABLE(parallel);
std::atomic<Backend> g_backend{Backend::parallel};

}  // namespace

const KernelTable& table(Backend backend) { return backend == Backend::serial ? kSerial : kParallel; }
const KernelTable& active() { return table(g_backend.load(std::memory_order_relaxed)); }
void set_active_backend(Backend backend) { g_backend.store(backend); }
Backend active_backend() { return g_backend.load(); }

}  // namespace mmc::kernels
