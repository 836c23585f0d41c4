#include "mmc/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "mmc/errors.hpp"

namespace mmc {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    // splitmix64 finalizer over each word
    auto mix = [](std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    };
    return mix(mix(mix(seed) ^ a) ^ b);
}

std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    return std::mt19937_64(mix_seed(seed, a, b));
}

ImageTensor resize_bilinear(const ImageTensor& image, int height, int width) {
    if (height <= 0 || width <= 0) throw InvalidInput("resize target must be positive");
    if (height == image.height && width == image.width) return image;
    ImageTensor out(image.channels, height, width);
    const float sy = static_cast<float>(image.height) / height;
    const float sx = static_cast<float>(image.width) / width;
    for (int y = 0; y < height; ++y) {
        float fy = std::max(0.f, (y + 0.5f) * sy - 0.5f);
        int y0 = std::min(static_cast<int>(fy), image.height - 1);
        int y1 = std::min(y0 + 1, image.height - 1);
        float wy = fy - y0;
        for (int x = 0; x < width; ++x) {
            float fx = std::max(0.f, (x + 0.5f) * sx - 0.5f);
            int x0 = std::min(static_cast<int>(fx), image.width - 1);
            int x1 = std::min(x0 + 1, image.width - 1);
            float wx = fx - x0;
            for (int c = 0; c < image.channels; ++c) {
                float top = image.at(c, y0, x0) * (1 - wx) + image.at(c, y0, x1) * wx;
                float bot = image.at(c, y1, x0) * (1 - wx) + image.at(c, y1, x1) * wx;
                out.at(c, y, x) = top * (1 - wy) + bot * wy;
            }
        }
    }
    return out;
}

LabelGrid resize_nearest(const LabelGrid& labels, int height, int width) {
    if (height <= 0 || width <= 0) throw InvalidInput("resize target must be positive");
    if (height == labels.height && width == labels.width) return labels;
    LabelGrid out(height, width);
    for (int y = 0; y < height; ++y) {
        int sy = std::min(labels.height - 1, static_cast<int>((y + 0.5) * labels.height / height));
        for (int x = 0; x < width; ++x) {
            int sx = std::min(labels.width - 1, static_cast<int>((x + 0.5) * labels.width / width));
            out.at(y, x) = labels.at(sy, sx);
        }
    }
    return out;
}

ImageTensor crop(const ImageTensor& image, int top, int left, int height, int width) {
    if (top < 0 || left < 0 || top + height > image.height || left + width > image.width)
        throw InvalidInput("crop window outside image");
    ImageTensor out(image.channels, height, width);
    for (int c = 0; c < image.channels; ++c)
        for (int y = 0; y < height; ++y)
            std::copy_n(&image.data[(static_cast<std::size_t>(c) * image.height + top + y) * image.width + left], width,
                        &out.data[(static_cast<std::size_t>(c) * height + y) * width]);
    return out;
}

std::uint64_t fnv1a(std::span<const unsigned char> bytes, std::uint64_t h) {
    for (unsigned char b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t fnv1a(const std::string& s, std::uint64_t h) {
    return fnv1a(std::span(reinterpret_cast<const unsigned char*>(s.data()), s.size()), h);
}

}  // namespace mmc
