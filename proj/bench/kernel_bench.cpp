// Serial reference vs OpenMP kernels at the shapes a ViT-micro training step uses
// (batch 16, 65 tokens, width 96, 3 heads), plus a whole-model forward pass.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "mmc/kernels.hpp"
#include "mmc/synth.hpp"
#include "mmc/vit.hpp"

namespace k = mmc::kernels;

namespace {

constexpr int kBatch = 16, kTokens = 65, kWidth = 96, kHeads = 3;
constexpr int kRows = kBatch * kTokens;

std::vector<float> random_vector(std::size_t n, unsigned seed) {
    std::mt19937 rng(seed);
    std::normal_distribution<float> d(0.f, 1.f);
    std::vector<float> v(n);
    for (float& x : v) x = d(rng);
    return v;
}

const k::KernelTable& backend(const benchmark::State& state) {
    return k::table(state.range(0) == 0 ? k::Backend::serial : k::Backend::parallel);
}

void label(benchmark::State& state) { state.SetLabel(state.range(0) == 0 ? "serial" : "parallel"); }

// MLP up-projection: (rows x C) * (C x 4C)
void BM_GemmNN(benchmark::State& state) {
    const auto& t = backend(state);
    const auto a = random_vector(kRows * kWidth, 1), b = random_vector(kWidth * 4 * kWidth, 2);
    std::vector<float> c(kRows * 4 * kWidth);
    for (auto _ : state) t.gemm_nn(a.data(), b.data(), c.data(), kRows, kWidth, 4 * kWidth, false);
    state.SetItemsProcessed(state.iterations() * 2LL * kRows * kWidth * 4 * kWidth);
    label(state);
}

// Backward w.r.t. the input of the same layer.
void BM_GemmNT(benchmark::State& state) {
    const auto& t = backend(state);
    const auto a = random_vector(kRows * 4 * kWidth, 3), b = random_vector(kWidth * 4 * kWidth, 4);
    std::vector<float> c(kRows * kWidth);
    for (auto _ : state) t.gemm_nt(a.data(), b.data(), c.data(), kRows, 4 * kWidth, kWidth, false);
    state.SetItemsProcessed(state.iterations() * 2LL * kRows * kWidth * 4 * kWidth);
    label(state);
}

// Weight gradient: (rows x C)^T * (rows x 4C)
void BM_GemmTN(benchmark::State& state) {
    const auto& t = backend(state);
    const auto a = random_vector(kRows * kWidth, 5), b = random_vector(kRows * 4 * kWidth, 6);
    std::vector<float> c(kWidth * 4 * kWidth);
    for (auto _ : state) t.gemm_tn(a.data(), b.data(), c.data(), kWidth, kRows, 4 * kWidth, true);
    state.SetItemsProcessed(state.iterations() * 2LL * kRows * kWidth * 4 * kWidth);
    label(state);
}

void BM_LayerNorm(benchmark::State& state) {
    const auto& t = backend(state);
    const auto x = random_vector(kRows * kWidth, 7), gamma = random_vector(kWidth, 8), beta = random_vector(kWidth, 9);
    std::vector<float> y(x.size()), mean(kRows), rstd(kRows);
    for (auto _ : state) t.layernorm_forward(x.data(), gamma.data(), beta.data(), y.data(), mean.data(), rstd.data(), kRows, kWidth, 1e-6f);
    label(state);
}

void BM_Gelu(benchmark::State& state) {
    const auto& t = backend(state);
    const auto x = random_vector(kRows * 4 * kWidth, 10);
    std::vector<float> y(x.size());
    for (auto _ : state) t.gelu_forward(x.data(), y.data(), x.size());
    label(state);
}

void BM_AttentionForward(benchmark::State& state) {
    const auto& t = backend(state);
    const k::AttentionShape s{kBatch, kTokens, kHeads, kWidth / kHeads};
    const auto qkv = random_vector(kRows * 3 * kWidth, 11);
    std::vector<float> out(kRows * kWidth), probs(static_cast<std::size_t>(kBatch) * kHeads * kTokens * kTokens);
    for (auto _ : state) t.attention_forward(qkv.data(), out.data(), probs.data(), s);
    label(state);
}

void BM_AttentionBackward(benchmark::State& state) {
    const auto& t = backend(state);
    const k::AttentionShape s{kBatch, kTokens, kHeads, kWidth / kHeads};
    const auto qkv = random_vector(kRows * 3 * kWidth, 12), dout = random_vector(kRows * kWidth, 13);
    std::vector<float> out(kRows * kWidth), probs(static_cast<std::size_t>(kBatch) * kHeads * kTokens * kTokens), dqkv(qkv.size());
    t.attention_forward(qkv.data(), out.data(), probs.data(), s);
    for (auto _ : state) t.attention_backward(qkv.data(), probs.data(), dout.data(), dqkv.data(), s);
    label(state);
}

void BM_ModelForward(benchmark::State& state) {
    const auto previous = k::active_backend();
    k::set_active_backend(state.range(0) == 0 ? k::Backend::serial : k::Backend::parallel);
    mmc::VisionTransformer model(mmc::BackboneConfig::micro());
    model.init_weights(0);
    std::vector<mmc::ImageTensor> images;
    for (const auto& item : mmc::synth_textures(kBatch, 4, 32, 0)) images.push_back(item.image);
    for (auto _ : state) benchmark::DoNotOptimize(model.forward(images));
    k::set_active_backend(previous);
    state.SetItemsProcessed(state.iterations() * kBatch);
    label(state);
}

}  // namespace

// Argument 0 selects the serial reference, 1 the OpenMP implementation.
BENCHMARK(BM_GemmNN)->Arg(0)->Arg(1)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_GemmNT)->Arg(0)->Arg(1)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_GemmTN)->Arg(0)->Arg(1)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_LayerNorm)->Arg(0)->Arg(1)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_Gelu)->Arg(0)->Arg(1)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_AttentionForward)->Arg(0)->Arg(1)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_AttentionBackward)->Arg(0)->Arg(1)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_ModelForward)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
