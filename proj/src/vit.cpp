#include "mmc/vit.hpp"

#include <array>
#include <cmath>

#include "mmc/errors.hpp"

namespace mmc {

void BackboneConfig::validate() const {
    if (patch_size < 1) throw InvalidInput("patch_size must be >= 1");
    if (depth < 1) throw InvalidInput("depth must be >= 1");
    if (heads < 1 || embed_dim % heads != 0) throw InvalidInput("embed_dim must be divisible by heads");
    if (embed_dim / heads > 256) throw InvalidInput("head dimension above 256 is not supported");
    if (image_size % patch_size != 0) throw InvalidInput("image_size must be divisible by patch_size");
    if (mlp_ratio < 1) throw InvalidInput("mlp_ratio must be >= 1");
}

Patches patchify(const ImageTensor& image, int patch_size) {
    if (patch_size < 1) throw InvalidInput("patch_size must be >= 1");
    if (image.height % patch_size != 0 || image.width % patch_size != 0)
        throw InvalidInput("image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                           " is not divisible by patch size " + std::to_string(patch_size));
    Patches out;
    out.grid_h = image.height / patch_size;
    out.grid_w = image.width / patch_size;
    const int per_patch = image.channels * patch_size * patch_size;
    out.vectors.resize(static_cast<std::size_t>(out.grid_h) * out.grid_w, per_patch);
    for (int gy = 0; gy < out.grid_h; ++gy)
        for (int gx = 0; gx < out.grid_w; ++gx) {
            auto row = out.vectors.row(static_cast<std::size_t>(gy) * out.grid_w + gx);
            std::size_t i = 0;
            for (int c = 0; c < image.channels; ++c)
                for (int y = 0; y < patch_size; ++y)
                    for (int x = 0; x < patch_size; ++x) row[i++] = image.at(c, gy * patch_size + y, gx * patch_size + x);
        }
    return out;
}

ImageTensor unpatchify(const Matrix& vectors, int grid_h, int grid_w, int patch_size, int channels) {
    if (vectors.rows() != static_cast<std::size_t>(grid_h) * grid_w ||
        vectors.cols() != static_cast<std::size_t>(channels) * patch_size * patch_size)
        throw InvalidInput("unpatchify: shape mismatch");
    ImageTensor image(channels, grid_h * patch_size, grid_w * patch_size);
    for (int gy = 0; gy < grid_h; ++gy)
        for (int gx = 0; gx < grid_w; ++gx) {
            auto row = vectors.row(static_cast<std::size_t>(gy) * grid_w + gx);
            std::size_t i = 0;
            for (int c = 0; c < channels; ++c)
                for (int y = 0; y < patch_size; ++y)
                    for (int x = 0; x < patch_size; ++x) image.at(c, gy * patch_size + y, gx * patch_size + x) = row[i++];
        }
    return image;
}

namespace {

std::array<double, 4> cubic_weights(double t) {
    constexpr double a = -0.75;
    auto near = [](double x) { return ((a + 2) * x - (a + 3)) * x * x + 1; };
    auto far = [](double x) { return ((a * x - 5 * a) * x + 8 * a) * x - 4 * a; };
    return {far(t + 1), near(t), near(1 - t), far(2 - t)};
}

// Resample along one axis of a (outer x len x inner) array.
std::vector<double> resample_axis(const std::vector<double>& src, int outer, int len, int inner, int new_len) {
    std::vector<double> dst(static_cast<std::size_t>(outer) * new_len * inner, 0.0);
    const double scale = static_cast<double>(len) / new_len;
    for (int o = 0; o < new_len; ++o) {
        const double pos = (o + 0.5) * scale - 0.5;
        const int base = static_cast<int>(std::floor(pos));
        const auto w = cubic_weights(pos - base);
        for (int t = 0; t < 4; ++t) {
            const int idx = std::clamp(base - 1 + t, 0, len - 1);
            for (int a = 0; a < outer; ++a)
                for (int i = 0; i < inner; ++i)
                    dst[(static_cast<std::size_t>(a) * new_len + o) * inner + i] +=
                        w[t] * src[(static_cast<std::size_t>(a) * len + idx) * inner + i];
        }
    }
    return dst;
}

}  // namespace

Matrix interpolate_grid_bicubic(const Matrix& grid_rows, int src_h, int src_w, int dst_h, int dst_w) {
    if (grid_rows.rows() != static_cast<std::size_t>(src_h) * src_w) throw InvalidInput("interpolate: grid mismatch");
    const int dim = static_cast<int>(grid_rows.cols());
    std::vector<double> buf(grid_rows.storage().begin(), grid_rows.storage().end());
    buf = resample_axis(buf, src_h, src_w, dim, dst_w);  // along x
    buf = resample_axis(buf, 1, src_h, dst_w * dim, dst_h);  // along y
    Matrix out(static_cast<std::size_t>(dst_h) * dst_w, dim);
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = static_cast<float>(buf[i]);
    return out;
}

VisionTransformer::VisionTransformer(const BackboneConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    const int C = cfg_.embed_dim;
    const int grid = cfg_.grid();
    patch_embed.init_shape(3 * cfg_.patch_size * cfg_.patch_size, C);
    cls_token.init(1, C, false);
    pos_embed.init(static_cast<std::size_t>(grid) * grid + 1, C, false);
    blocks.resize(cfg_.depth);
    for (auto& b : blocks) b.init_shape(C, cfg_.heads, cfg_.mlp_ratio);
    norm.init_shape(C);
}

void VisionTransformer::init_weights(std::uint64_t seed) {
    auto rng = make_rng(seed, 0x5175);
    patch_embed.init_weights(rng);
    std::normal_distribution<float> dist(0.f, 0.02f);
    for (float& v : cls_token.value.storage()) v = dist(rng);
    for (float& v : pos_embed.value.storage()) v = dist(rng);
    for (auto& b : blocks) b.init_weights(rng);
    initialized_ = true;
}

void VisionTransformer::check_image(const ImageTensor& image) const {
    if (image.channels != 3) throw InvalidInput("encoder expects 3-channel images");
    if (image.height % cfg_.patch_size != 0 || image.width % cfg_.patch_size != 0)
        throw InvalidInput("image size not divisible by patch size");
}

Matrix VisionTransformer::position_table(int grid_h, int grid_w) const {
    const int grid = cfg_.grid();
    if (grid_h == grid && grid_w == grid) return pos_embed.value;
    const int C = cfg_.embed_dim;
    Matrix patch_rows(static_cast<std::size_t>(grid) * grid, C);
    std::copy(pos_embed.value.data() + C, pos_embed.value.data() + pos_embed.value.size(), patch_rows.data());
    Matrix resized = interpolate_grid_bicubic(patch_rows, grid, grid, grid_h, grid_w);
    Matrix table(resized.rows() + 1, C);
    std::copy_n(pos_embed.value.data(), C, table.data());
    std::copy(resized.data(), resized.data() + resized.size(), table.data() + C);
    return table;
}

Matrix VisionTransformer::forward(const std::vector<ImageTensor>& images, int layer, BackboneCache* cache) const {
    if (!initialized_) throw StateError("encoder parameters are not initialized");
    if (images.empty()) throw InvalidInput("forward: empty batch");
    if (layer == 0) layer = cfg_.depth;
    if (layer < 1 || layer > cfg_.depth)
        throw InvalidInput("layer " + std::to_string(layer) + " outside [1, " + std::to_string(cfg_.depth) + "]");
    const int H = images.front().height, W = images.front().width;
    for (const auto& im : images) {
        check_image(im);
        if (im.height != H || im.width != W) throw InvalidInput("forward: batch images differ in size");
    }
    const int ps = cfg_.patch_size, C = cfg_.embed_dim;
    const int gh = H / ps, gw = W / ps, P = gh * gw, N = P + 1;
    const int B = static_cast<int>(images.size());

    Matrix patch_vectors(static_cast<std::size_t>(B) * P, 3 * ps * ps);
    for (int b = 0; b < B; ++b) {
        Patches p = patchify(images[b], ps);
        std::copy(p.vectors.data(), p.vectors.data() + p.vectors.size(), patch_vectors.data() + static_cast<std::size_t>(b) * p.vectors.size());
    }
    Matrix embedded;
    patch_embed.forward(patch_vectors, embedded);
    const Matrix pos = position_table(gh, gw);

    Matrix x(static_cast<std::size_t>(B) * N, C);
    for (int b = 0; b < B; ++b) {
        auto cls_row = x.row(static_cast<std::size_t>(b) * N);
        for (int c = 0; c < C; ++c) cls_row[c] = cls_token.value(0, c) + pos(0, c);
        for (int p = 0; p < P; ++p) {
            auto row = x.row(static_cast<std::size_t>(b) * N + 1 + p);
            auto e = embedded.row(static_cast<std::size_t>(b) * P + p);
            for (int c = 0; c < C; ++c) row[c] = e[c] + pos(1 + p, c);
        }
    }

    if (cache) {
        cache->patch_vectors = std::move(patch_vectors);
        cache->blocks.resize(layer);
        cache->batch = B;
        cache->tokens = N;
        cache->grid_h = gh;
        cache->grid_w = gw;
    }
    for (int l = 0; l < layer; ++l) blocks[l].forward(x, B, N, cache ? &cache->blocks[l] : nullptr);

    Matrix out;
    nn::LayerNormCache local;
    norm.forward(x, out, cache ? cache->norm : local);
    if (cache) cache->pre_norm = std::move(x);
    return out;
}

void VisionTransformer::backward(const BackboneCache& cache, const Matrix& d_tokens) {
    const int C = cfg_.embed_dim;
    if (cache.grid_h != cfg_.grid() || cache.grid_w != cfg_.grid())
        throw StateError("backward through interpolated position embeddings is not supported");
    Matrix dx;
    norm.backward(cache.pre_norm, cache.norm, d_tokens, dx);
    for (int l = static_cast<int>(cache.blocks.size()) - 1; l >= 0; --l) blocks[l].backward(cache.blocks[l], cache.batch, cache.tokens, dx);

    const int B = cache.batch, N = cache.tokens, P = N - 1;
    Matrix d_embedded(static_cast<std::size_t>(B) * P, C);
    for (int b = 0; b < B; ++b) {
        auto g = dx.row(static_cast<std::size_t>(b) * N);
        for (int c = 0; c < C; ++c) {
            cls_token.grad(0, c) += g[c];
            pos_embed.grad(0, c) += g[c];
        }
        for (int p = 0; p < P; ++p) {
            auto gp = dx.row(static_cast<std::size_t>(b) * N + 1 + p);
            auto de = d_embedded.row(static_cast<std::size_t>(b) * P + p);
            for (int c = 0; c < C; ++c) {
                pos_embed.grad(1 + p, c) += gp[c];
                de[c] = gp[c];
            }
        }
    }
    patch_embed.backward(cache.patch_vectors, d_embedded, nullptr);
}

std::vector<FeatureSet> split_features(const Matrix& tokens, int batch, int grid_h, int grid_w, int layer) {
    const int P = grid_h * grid_w, N = P + 1;
    const std::size_t C = tokens.cols();
    std::vector<FeatureSet> out(batch);
    for (int b = 0; b < batch; ++b) {
        FeatureSet& f = out[b];
        auto cls = tokens.row(static_cast<std::size_t>(b) * N);
        f.cls.assign(cls.begin(), cls.end());
        f.patches.resize(P, C);
        std::copy_n(tokens.data() + (static_cast<std::size_t>(b) * N + 1) * C, static_cast<std::size_t>(P) * C, f.patches.data());
        f.grid_h = grid_h;
        f.grid_w = grid_w;
        f.layer_index = layer;
    }
    return out;
}

FeatureSet VisionTransformer::encode(const ImageTensor& image) const { return encode_at_layer(image, cfg_.depth); }

FeatureSet VisionTransformer::encode_at_layer(const ImageTensor& image, int layer) const {
    if (layer < 1 || layer > cfg_.depth)
        throw InvalidInput("layer " + std::to_string(layer) + " outside [1, " + std::to_string(cfg_.depth) + "]");
    Matrix tokens = forward({image}, layer);
    return split_features(tokens, 1, image.height / cfg_.patch_size, image.width / cfg_.patch_size, layer).front();
}

void VisionTransformer::collect(const std::string& prefix, nn::ParamList& out) {
    patch_embed.collect(prefix + ".patch_embed", out);
    out.push_back({prefix + ".cls_token", &cls_token});
    out.push_back({prefix + ".pos_embed", &pos_embed});
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(prefix + ".blocks." + std::to_string(i), out);
    norm.collect(prefix + ".norm", out);
}

}  // namespace mmc
