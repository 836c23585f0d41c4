#pragma once

#include <random>
#include <string>

#include "mmc/nn.hpp"

namespace mmc {

struct HeadConfig {
    int hidden = 256;    // 4096 at ViT-S/B scale
    int proj_dim = 256;  // output width of the contrastive heads
    bool operator==(const HeadConfig&) const = default;
};

/// Independent reconstruction, patch and CLS projection heads on top of the encoder.
struct ProjectionHeads {
    nn::Mlp3 rec;  // patch token -> patch pixels (3 * ps * ps)
    nn::Mlp3 pat;  // patch token -> proj_dim (L2-normalised downstream)
    nn::Mlp3 cls;  // CLS token -> proj_dim (L2-normalised downstream)

    void init_shape(int embed_dim, int patch_size, const HeadConfig& cfg);
    void init_weights(std::mt19937_64& rng);
    void collect(const std::string& prefix, nn::ParamList& out);
};

/// Forward through a projection head followed by row-wise L2 normalisation.
struct ProjectionCache {
    nn::MlpCache mlp;
    Matrix raw;
    std::vector<float> norms;
};
Matrix project_normalized(const nn::Mlp3& head, const Matrix& x, ProjectionCache* cache);
/// Backward of project_normalized; returns dL/dx when requested.
void project_normalized_backward(nn::Mlp3& head, const ProjectionCache& cache, const Matrix& normalized, const Matrix& dy, Matrix* dx);

}  // namespace mmc
