#include "mmc/augmentation.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "mmc/errors.hpp"

namespace mmc {
namespace {

float luminance(const ImageTensor& im, int y, int x) {
    return 0.299f * im.at(0, y, x) + 0.587f * im.at(1, y, x) + 0.114f * im.at(2, y, x);
}

void clip01(ImageTensor& im) {
    for (float& v : im.data) v = std::clamp(v, 0.f, 1.f);
}

void adjust_brightness(ImageTensor& im, float factor) {
    for (float& v : im.data) v *= factor;
    clip01(im);
}

void adjust_contrast(ImageTensor& im, float factor) {
    double mean = 0.0;
    for (int y = 0; y < im.height; ++y)
        for (int x = 0; x < im.width; ++x) mean += luminance(im, y, x);
    mean /= static_cast<double>(im.height) * im.width;
    for (float& v : im.data) v = static_cast<float>(factor * v + (1.0 - factor) * mean);
    clip01(im);
}

void adjust_saturation(ImageTensor& im, float factor) {
    for (int y = 0; y < im.height; ++y)
        for (int x = 0; x < im.width; ++x) {
            const float gray = luminance(im, y, x);
            for (int c = 0; c < 3; ++c) im.at(c, y, x) = factor * im.at(c, y, x) + (1.f - factor) * gray;
        }
    clip01(im);
}

void gaussian_blur(ImageTensor& im, float sigma) {
    const int radius = std::max(1, static_cast<int>(std::ceil(3.f * sigma)));
    std::vector<float> kernel(2 * radius + 1);
    float total = 0.f;
    for (int i = -radius; i <= radius; ++i) total += kernel[i + radius] = std::exp(-0.5f * i * i / (sigma * sigma));
    for (float& k : kernel) k /= total;
    ImageTensor tmp = im;
    auto reflect = [](int i, int n) {
        if (n == 1) return 0;
        while (i < 0 || i >= n) i = i < 0 ? -i : 2 * n - 2 - i;
        return i;
    };
    for (int c = 0; c < im.channels; ++c) {
        for (int y = 0; y < im.height; ++y)
            for (int x = 0; x < im.width; ++x) {
                float s = 0.f;
                for (int i = -radius; i <= radius; ++i) s += kernel[i + radius] * im.at(c, y, reflect(x + i, im.width));
                tmp.at(c, y, x) = s;
            }
        for (int y = 0; y < im.height; ++y)
            for (int x = 0; x < im.width; ++x) {
                float s = 0.f;
                for (int i = -radius; i <= radius; ++i) s += kernel[i + radius] * tmp.at(c, reflect(y + i, im.height), x);
                im.at(c, y, x) = s;
            }
    }
}

}  // namespace

ImageTensor photometric_augment(const ImageTensor& image, std::uint64_t seed, const PhotometricConfig& cfg) {
    if (image.channels != 3) throw InvalidInput("photometric_augment expects RGB");
    auto rng = make_rng(seed, 0x9407);
    std::uniform_real_distribution<float> unit(0.f, 1.f);
    ImageTensor out = image;

    const bool jitter = unit(rng) < cfg.jitter_prob;
    // Random order of the three jitter operations, as in torchvision ColorJitter.
    std::array<int, 3> order{0, 1, 2};
    std::shuffle(order.begin(), order.end(), rng);
    std::array<float, 3> factors{};
    const std::array<float, 3> strengths{cfg.brightness, cfg.contrast, cfg.saturation};
    for (int i = 0; i < 3; ++i) {
        std::uniform_real_distribution<float> f(std::max(0.f, 1.f - strengths[i]), 1.f + strengths[i]);
        factors[i] = f(rng);
    }
    if (jitter) {
        for (int op : order) {
            if (strengths[op] <= 0.f) continue;
            if (op == 0) adjust_brightness(out, factors[op]);
            if (op == 1) adjust_contrast(out, factors[op]);
            if (op == 2) adjust_saturation(out, factors[op]);
        }
    }

    const float scale = static_cast<float>(std::max(image.height, image.width)) / 224.f;
    std::uniform_real_distribution<float> sigma_dist(cfg.blur_sigma_min * scale, std::max(cfg.blur_sigma_min, cfg.blur_sigma_max) * scale);
    const float sigma = sigma_dist(rng);
    if (unit(rng) < cfg.blur_prob && sigma > 0.f) gaussian_blur(out, sigma);

    if (unit(rng) < cfg.solarize_prob)
        for (float& v : out.data)
            if (v >= cfg.solarize_threshold) v = 1.f - v;

    clip01(out);
    return out;
}

std::size_t BlockMask::masked_count() const {
    return static_cast<std::size_t>(std::count(cells.begin(), cells.end(), std::uint8_t{1}));
}

BlockMask block_mask(int grid_h, int grid_w, double ratio, std::uint64_t seed) {
    if (grid_h < 1 || grid_w < 1) throw InvalidInput("block_mask: empty grid");
    if (!(ratio >= 0.0 && ratio <= 1.0)) throw InvalidInput("block_mask: ratio must be in [0,1]");
    BlockMask mask;
    mask.grid_h = grid_h;
    mask.grid_w = grid_w;
    mask.cells.assign(static_cast<std::size_t>(grid_h) * grid_w, 0);
    const std::size_t total = mask.cells.size();
    const auto target = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(total)));
    if (target == total) {
        std::fill(mask.cells.begin(), mask.cells.end(), std::uint8_t{1});
        mask.blocks.push_back({0, 0, grid_h, grid_w});
        return mask;
    }

    auto rng = make_rng(seed, 0xB10C);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double log_lo = std::log(kMinBlockAspect), log_hi = std::log(kMaxBlockAspect);
    std::size_t count = 0;
    int stalled = 0;
    while (count < target) {
        const std::size_t remaining = target - count;
        // Large blocks first; once sampling stalls, fall back to single cells.
        const double max_area = stalled > 50 ? 1.0 : static_cast<double>(remaining);
        const double area = 1.0 + unit(rng) * (max_area - 1.0);
        const double aspect = std::exp(log_lo + unit(rng) * (log_hi - log_lo));
        const int h = std::max(1, static_cast<int>(std::lround(std::sqrt(area * aspect))));
        const int w = std::max(1, static_cast<int>(std::lround(std::sqrt(area / aspect))));
        const double realized = static_cast<double>(h) / w;
        if (h > grid_h || w > grid_w || realized < kMinBlockAspect - 1e-9 || realized > kMaxBlockAspect + 1e-9) {
            ++stalled;
            continue;
        }
        const int top = static_cast<int>(unit(rng) * (grid_h - h + 1));
        const int left = static_cast<int>(unit(rng) * (grid_w - w + 1));
        std::size_t fresh = 0;
        for (int y = top; y < top + h; ++y)
            for (int x = left; x < left + w; ++x) fresh += mask.cells[static_cast<std::size_t>(y) * grid_w + x] == 0;
        if (fresh == 0 || fresh > remaining) {
            ++stalled;
            continue;
        }
        for (int y = top; y < top + h; ++y)
            for (int x = left; x < left + w; ++x) mask.cells[static_cast<std::size_t>(y) * grid_w + x] = 1;
        mask.blocks.push_back({top, left, h, w});
        count += fresh;
        stalled = 0;
    }
    return mask;
}

std::vector<std::uint8_t> expand_mask(const BlockMask& mask, int patch_size) {
    const int H = mask.grid_h * patch_size, W = mask.grid_w * patch_size;
    std::vector<std::uint8_t> pixels(static_cast<std::size_t>(H) * W);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            pixels[static_cast<std::size_t>(y) * W + x] = mask.cells[static_cast<std::size_t>(y / patch_size) * mask.grid_w + x / patch_size];
    return pixels;
}

MaskSpec make_mask_spec(BlockMask mask, int patch_size, FillMode fill, std::optional<ImageTensor> donor) {
    MaskSpec spec;
    spec.pixel_mask = expand_mask(mask, patch_size);
    spec.height = mask.grid_h * patch_size;
    spec.width = mask.grid_w * patch_size;
    spec.patch_mask = std::move(mask);
    spec.patch_size = patch_size;
    spec.fill = fill;
    spec.donor = std::move(donor);
    return spec;
}

ImageTensor apply_mask(const ImageTensor& image, const MaskSpec& spec, std::uint64_t seed) {
    if (image.height != spec.height || image.width != spec.width)
        throw InvalidInput("apply_mask: mask geometry does not match the image");
    if (spec.fill == FillMode::donor_image) {
        if (!spec.donor) throw InvalidInput("apply_mask: donor fill requested without a donor image");
        if (spec.donor->height != image.height || spec.donor->width != image.width || spec.donor->channels != image.channels)
            throw InvalidInput("apply_mask: donor image shape differs");
    }
    ImageTensor out = image;
    auto rng = make_rng(seed, 0xF111);
    std::uniform_real_distribution<float> noise(0.f, 1.f);
    for (int c = 0; c < image.channels; ++c)
        for (int y = 0; y < image.height; ++y)
            for (int x = 0; x < image.width; ++x) {
                if (!spec.pixel_mask[static_cast<std::size_t>(y) * image.width + x]) continue;
                out.at(c, y, x) = spec.fill == FillMode::noise ? noise(rng) : spec.donor->at(c, y, x);
            }
    return out;
}

ImageTensor random_resized_crop(const ImageTensor& image, int size, float scale_min, float scale_max, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double area = static_cast<double>(image.height) * image.width;
    const double log_lo = std::log(3.0 / 4.0), log_hi = std::log(4.0 / 3.0);
    for (int attempt = 0; attempt < 10; ++attempt) {
        const double target = area * (scale_min + unit(rng) * (scale_max - scale_min));
        const double aspect = std::exp(log_lo + unit(rng) * (log_hi - log_lo));
        const int w = static_cast<int>(std::lround(std::sqrt(target * aspect)));
        const int h = static_cast<int>(std::lround(std::sqrt(target / aspect)));
        if (w >= 1 && h >= 1 && w <= image.width && h <= image.height) {
            const int top = static_cast<int>(unit(rng) * (image.height - h + 1));
            const int left = static_cast<int>(unit(rng) * (image.width - w + 1));
            return resize_bilinear(crop(image, top, left, h, w), size, size);
        }
    }
    // central crop fallback
    const int side = std::min(image.height, image.width);
    return resize_bilinear(crop(image, (image.height - side) / 2, (image.width - side) / 2, side, side), size, size);
}

namespace {

ImageTensor hflip(const ImageTensor& im) {
    ImageTensor out = im;
    for (int c = 0; c < im.channels; ++c)
        for (int y = 0; y < im.height; ++y)
            for (int x = 0; x < im.width; ++x) out.at(c, y, x) = im.at(c, y, im.width - 1 - x);
    return out;
}

}  // namespace

ViewBundle make_views(const ImageTensor& image, const AugmentationConfig& cfg, std::uint64_t seed, const ImageTensor* donor) {
    if (cfg.global_views < 1) throw InvalidInput("make_views: need at least one global view");
    if (cfg.global_size % cfg.patch_size != 0) throw InvalidInput("make_views: global size not divisible by patch size");
    ViewBundle bundle;
    auto rng = make_rng(seed, 0x71E3);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const int grid = cfg.global_size / cfg.patch_size;

    for (int v = 0; v < cfg.global_views; ++v) {
        ImageTensor view = random_resized_crop(image, cfg.global_size, cfg.global_scale_min, cfg.global_scale_max, rng);
        if (unit(rng) < cfg.flip_prob) view = hflip(view);
        view = photometric_augment(view, rng(), cfg.photometric);

        BlockMask mask = block_mask(grid, grid, cfg.mask_ratio, rng());
        const bool use_donor = unit(rng) < cfg.donor_prob && donor != nullptr;
        const std::uint64_t fill_seed = rng();
        std::optional<ImageTensor> donor_view;
        if (use_donor) donor_view = resize_bilinear(*donor, cfg.global_size, cfg.global_size);
        MaskSpec spec = make_mask_spec(std::move(mask), cfg.patch_size, use_donor ? FillMode::donor_image : FillMode::noise,
                                       std::move(donor_view));
        bundle.student_views.push_back(apply_mask(view, spec, fill_seed));
        bundle.teacher_views.push_back(std::move(view));
        bundle.mask_specs.push_back(std::move(spec));
    }
    for (int l = 0; l < cfg.local_views; ++l) {
        ImageTensor view = random_resized_crop(image, cfg.local_size, cfg.local_scale_min, cfg.local_scale_max, rng);
        if (unit(rng) < cfg.flip_prob) view = hflip(view);
        bundle.local_crops.push_back(photometric_augment(view, rng(), cfg.photometric));
    }
    return bundle;
}

}  // namespace mmc
