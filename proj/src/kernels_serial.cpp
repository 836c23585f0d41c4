#include <cmath>
#include <vector>

#include "mmc/kernels.hpp"

namespace mmc::kernels::serial {

void gemm_nn(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate) {
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            double s = accumulate ? c[i * n + j] : 0.0;
            for (int p = 0; p < k; ++p) s += static_cast<double>(a[i * k + p]) * b[p * n + j];
            c[i * n + j] = static_cast<float>(s);
        }
}

void gemm_nt(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate) {
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            double s = accumulate ? c[i * n + j] : 0.0;
            for (int p = 0; p < k; ++p) s += static_cast<double>(a[i * k + p]) * b[j * k + p];
            c[i * n + j] = static_cast<float>(s);
        }
}

void gemm_tn(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate) {
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            double s = accumulate ? c[i * n + j] : 0.0;
            for (int p = 0; p < k; ++p) s += static_cast<double>(a[p * m + i]) * b[p * n + j];
            c[i * n + j] = static_cast<float>(s);
        }
}

void add_bias(float* y, const float* bias, int rows, int cols) {
    for (int r = 0; r < rows; ++r)
        for (int j = 0; j < cols; ++j) y[r * cols + j] += bias[j];
}

void bias_grad(const float* dy, float* dbias, int rows, int cols) {
    for (int j = 0; j < cols; ++j) {
        double s = 0.0;
        for (int r = 0; r < rows; ++r) s += dy[r * cols + j];
        dbias[j] += static_cast<float>(s);
    }
}

void layernorm_forward(const float* x, const float* gamma, const float* beta, float* y, float* mean, float* rstd,
                       int rows, int cols, float eps) {
    for (int r = 0; r < rows; ++r) {
        const float* xr = x + static_cast<std::size_t>(r) * cols;
        double mu = 0.0;
        for (int j = 0; j < cols; ++j) mu += xr[j];
        mu /= cols;
        double var = 0.0;
        for (int j = 0; j < cols; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= cols;
        double rs = 1.0 / std::sqrt(var + eps);
        mean[r] = static_cast<float>(mu);
        rstd[r] = static_cast<float>(rs);
        for (int j = 0; j < cols; ++j)
            y[static_cast<std::size_t>(r) * cols + j] = static_cast<float>((xr[j] - mu) * rs * gamma[j] + beta[j]);
    }
}

void layernorm_backward(const float* dy, const float* x, const float* mean, const float* rstd, const float* gamma,
                        float* dx, float* dgamma, float* dbeta, int rows, int cols) {
    for (int r = 0; r < rows; ++r) {
        const std::size_t off = static_cast<std::size_t>(r) * cols;
        double sum_g = 0.0, sum_gx = 0.0;
        for (int j = 0; j < cols; ++j) {
            double xhat = (x[off + j] - mean[r]) * rstd[r];
            double g = dy[off + j] * gamma[j];
            sum_g += g;
            sum_gx += g * xhat;
            dgamma[j] += static_cast<float>(dy[off + j] * xhat);
            dbeta[j] += dy[off + j];
        }
        for (int j = 0; j < cols; ++j) {
            double xhat = (x[off + j] - mean[r]) * rstd[r];
            double g = dy[off + j] * gamma[j];
            dx[off + j] = static_cast<float>(rstd[r] * (g - sum_g / cols - xhat * sum_gx / cols));
        }
    }
}

void gelu_forward(const float* x, float* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = static_cast<float>(0.5 * x[i] * (1.0 + std::erf(x[i] / std::sqrt(2.0))));
}

void gelu_backward(const float* x, const float* dy, float* dx, std::size_t n) {
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * M_PI);
    for (std::size_t i = 0; i < n; ++i) {
        double cdf = 0.5 * (1.0 + std::erf(x[i] / std::sqrt(2.0)));
        double pdf = inv_sqrt_2pi * std::exp(-0.5 * static_cast<double>(x[i]) * x[i]);
        dx[i] = static_cast<float>(dy[i] * (cdf + x[i] * pdf));
    }
}

void attention_forward(const float* qkv, float* out, float* probs, AttentionShape s) {
    const int C = s.embed_dim(), N = s.tokens, d = s.head_dim;
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    std::vector<double> logits(N);
    for (int b = 0; b < s.batch; ++b)
        for (int h = 0; h < s.heads; ++h) {
            float* p = probs + (static_cast<std::size_t>(b) * s.heads + h) * N * N;
            for (int i = 0; i < N; ++i) {
                const float* q = qkv + static_cast<std::size_t>(b * N + i) * 3 * C + h * d;
                double mx = -1e300;
                for (int j = 0; j < N; ++j) {
                    const float* k = qkv + static_cast<std::size_t>(b * N + j) * 3 * C + C + h * d;
                    double dot = 0.0;
                    for (int t = 0; t < d; ++t) dot += static_cast<double>(q[t]) * k[t];
                    logits[j] = dot * scale;
                    mx = std::max(mx, logits[j]);
                }
                double z = 0.0;
                for (int j = 0; j < N; ++j) z += std::exp(logits[j] - mx);
                for (int j = 0; j < N; ++j) p[i * N + j] = static_cast<float>(std::exp(logits[j] - mx) / z);
                float* o = out + static_cast<std::size_t>(b * N + i) * C + h * d;
                for (int t = 0; t < d; ++t) {
                    double acc = 0.0;
                    for (int j = 0; j < N; ++j)
                        acc += static_cast<double>(p[i * N + j]) * qkv[static_cast<std::size_t>(b * N + j) * 3 * C + 2 * C + h * d + t];
                    o[t] = static_cast<float>(acc);
                }
            }
        }
}

void attention_backward(const float* qkv, const float* probs, const float* dout, float* dqkv, AttentionShape s) {
    const int C = s.embed_dim(), N = s.tokens, d = s.head_dim;
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    const std::size_t stride = 3 * static_cast<std::size_t>(C);
    std::vector<double> dp(N), ds(N);
    for (std::size_t i = 0; i < static_cast<std::size_t>(s.batch) * N * stride; ++i) dqkv[i] = 0.f;
    for (int b = 0; b < s.batch; ++b)
        for (int h = 0; h < s.heads; ++h) {
            const float* p = probs + (static_cast<std::size_t>(b) * s.heads + h) * N * N;
            auto q_at = [&](int i) { return qkv + (b * N + i) * stride + h * d; };
            auto k_at = [&](int j) { return qkv + (b * N + j) * stride + C + h * d; };
            auto v_at = [&](int j) { return qkv + (b * N + j) * stride + 2 * C + h * d; };
            for (int i = 0; i < N; ++i) {
                const float* go = dout + static_cast<std::size_t>(b * N + i) * C + h * d;
                double row = 0.0;
                for (int j = 0; j < N; ++j) {
                    double dot = 0.0;
                    for (int t = 0; t < d; ++t) dot += static_cast<double>(go[t]) * v_at(j)[t];
                    dp[j] = dot;
                    row += dot * p[i * N + j];
                }
                for (int j = 0; j < N; ++j) ds[j] = p[i * N + j] * (dp[j] - row) * scale;
                float* dq = dqkv + (b * N + i) * stride + h * d;
                for (int j = 0; j < N; ++j) {
                    float* dk = dqkv + (b * N + j) * stride + C + h * d;
                    float* dv = dqkv + (b * N + j) * stride + 2 * C + h * d;
                    for (int t = 0; t < d; ++t) {
                        dq[t] += static_cast<float>(ds[j] * k_at(j)[t]);
                        dk[t] += static_cast<float>(ds[j] * q_at(i)[t]);
                        dv[t] += static_cast<float>(p[i * N + j] * go[t]);
                    }
                }
            }
        }
}

}  // namespace mmc::kernels::serial
