#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "mmc/errors.hpp"
#include "mmc/log.hpp"

// MMC objective terms. Templated on the scalar type so that the same code is
// exercised in float (training) and double (finite-difference checks).
namespace mmc::losses {

/// Read-only view of a row-major (rows x cols) block.
template <class T>
struct Rows {
    const T* data = nullptr;
    std::size_t rows = 0;
    std::size_t cols = 0;

    std::span<const T> row(std::size_t r) const { return {data + r * cols, cols}; }
};

template <class T>
T dot(std::span<const T> a, std::span<const T> b) {
    T s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

/// Mean absolute error over masked elements. `pixel_mask` is height x width and applies to every
/// channel of the (channels x height x width) images. Returns 0 when nothing is masked.
/// `grad` (optional, same size as the images) receives dL/d(reconstruction).
template <class T>
T reconstruction_l1(std::span<const T> original, std::span<const T> reconstruction, std::span<const std::uint8_t> pixel_mask,
                    int channels, std::span<T> grad = {}) {
    if (original.size() != reconstruction.size() || original.size() != pixel_mask.size() * static_cast<std::size_t>(channels))
        throw InvalidInput("loss_rec: shape mismatch");
    const std::size_t plane = pixel_mask.size();
    std::size_t masked = 0;
    for (auto m : pixel_mask) masked += m != 0;
    if (!grad.empty()) std::fill(grad.begin(), grad.end(), T(0));
    if (masked == 0) return T(0);
    const T count = static_cast<T>(masked * static_cast<std::size_t>(channels));
    T sum = 0;
    for (int c = 0; c < channels; ++c)
        for (std::size_t i = 0; i < plane; ++i) {
            if (!pixel_mask[i]) continue;
            const std::size_t idx = static_cast<std::size_t>(c) * plane + i;
            const T diff = reconstruction[idx] - original[idx];
            sum += std::abs(diff);
            if (!grad.empty()) grad[idx] = (diff > 0 ? T(1) : diff < 0 ? T(-1) : T(0)) / count;
        }
    return sum / count;
}

/// InfoNCE for one query: -log(e^{q.k+/tau} / (e^{q.k+/tau} + sum_k- e^{q.k-/tau})).
/// Inputs are expected to be L2-normalised. `grad_q` (optional) receives dL/dq.
template <class T>
T info_nce(std::span<const T> q, std::span<const T> positive, Rows<T> negatives, T tau, std::span<T> grad_q = {}) {
    if (!(tau > 0)) throw InvalidInput("temperature must be positive");
    if (!grad_q.empty()) std::fill(grad_q.begin(), grad_q.end(), T(0));
    if (negatives.rows == 0) return T(0);
    const T pos_logit = dot(q, positive) / tau;
    std::vector<T> logits(negatives.rows);
    T mx = pos_logit;
    for (std::size_t j = 0; j < negatives.rows; ++j) {
        logits[j] = dot(q, negatives.row(j)) / tau;
        mx = std::max(mx, logits[j]);
    }
    T z = std::exp(pos_logit - mx);
    for (T l : logits) z += std::exp(l - mx);
    const T loss = std::log(z) + mx - pos_logit;
    if (!grad_q.empty()) {
        // dL/dq = (sum_i softmax_i k_i - k+) / tau
        const T p_pos = std::exp(pos_logit - mx) / z;
        for (std::size_t d = 0; d < q.size(); ++d) grad_q[d] = (p_pos - T(1)) * positive[d] / tau;
        for (std::size_t j = 0; j < negatives.rows; ++j) {
            const T p = std::exp(logits[j] - mx) / z;
            auto k = negatives.row(j);
            for (std::size_t d = 0; d < q.size(); ++d) grad_q[d] += p * k[d] / tau;
        }
    }
    return loss;
}

/// Global contrast on CLS projections (single query).
template <class T>
T loss_cls(std::span<const T> q_masked, std::span<const T> k_plus, Rows<T> negatives, T tau, std::span<T> grad_q = {}) {
    return info_nce(q_masked, k_plus, negatives, tau, grad_q);
}

/// Patch-level momentum distillation: mean over positions p of InfoNCE(q_p, k_p, pool).
/// `pool` holds teacher patch projections of other images. Empty pool → 0 with a warning.
template <class T>
T loss_pat(Rows<T> q_masked, Rows<T> keys, Rows<T> pool, T tau, std::span<T> grad_q = {}) {
    if (q_masked.rows != keys.rows || q_masked.cols != keys.cols) throw InvalidInput("loss_pat: query/key shape mismatch");
    if (pool.rows > 0 && pool.cols != q_masked.cols) throw InvalidInput("loss_pat: pool width mismatch");
    if (!grad_q.empty()) std::fill(grad_q.begin(), grad_q.end(), T(0));
    if (pool.rows == 0) {
        warn("loss_pat: empty negative pool (batch of one image); patch loss is 0");
        return T(0);
    }
    if (q_masked.rows == 0) return T(0);
    const T inv_p = T(1) / static_cast<T>(q_masked.rows);
    T total = 0;
    std::vector<T> g(q_masked.cols);
    for (std::size_t p = 0; p < q_masked.rows; ++p) {
        total += info_nce(q_masked.row(p), keys.row(p), pool, tau, grad_q.empty() ? std::span<T>{} : std::span<T>(g));
        if (!grad_q.empty())
            for (std::size_t d = 0; d < q_masked.cols; ++d) grad_q[p * q_masked.cols + d] = g[d] * inv_p;
    }
    return total * inv_p;
}

}  // namespace mmc::losses
