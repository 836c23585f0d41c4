#include "mmc/heads.hpp"

namespace mmc {

void ProjectionHeads::init_shape(int embed_dim, int patch_size, const HeadConfig& cfg) {
    rec.init_shape(embed_dim, cfg.hidden, 3 * patch_size * patch_size);
    pat.init_shape(embed_dim, cfg.hidden, cfg.proj_dim);
    cls.init_shape(embed_dim, cfg.hidden, cfg.proj_dim);
}

void ProjectionHeads::init_weights(std::mt19937_64& rng) {
    rec.init_weights(rng);
    pat.init_weights(rng);
    cls.init_weights(rng);
}

void ProjectionHeads::collect(const std::string& prefix, nn::ParamList& out) {
    rec.collect(prefix + ".head_rec", out);
    pat.collect(prefix + ".head_pat", out);
    cls.collect(prefix + ".head_cls", out);
}

Matrix project_normalized(const nn::Mlp3& head, const Matrix& x, ProjectionCache* cache) {
    ProjectionCache local;
    ProjectionCache& c = cache ? *cache : local;
    head.forward(x, c.raw, cache ? &c.mlp : nullptr);
    Matrix y;
    nn::l2_normalize_rows(c.raw, y, c.norms);
    return y;
}

void project_normalized_backward(nn::Mlp3& head, const ProjectionCache& cache, const Matrix& normalized, const Matrix& dy, Matrix* dx) {
    Matrix d_raw;
    nn::l2_normalize_rows_backward(normalized, cache.norms, dy, d_raw);
    head.backward(cache.mlp, d_raw, dx);
}

}  // namespace mmc
