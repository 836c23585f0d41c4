#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <algorithm>
#include <span>
#include <string>
#include <vector>

namespace mmc {

/// Dense row-major float matrix. Most activations in the model are (tokens x channels).
class Matrix {
  public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, float fill = 0.f) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    std::span<float> span() { return data_; }
    std::span<const float> span() const { return data_; }

    std::span<float> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const float> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    float& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    float operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    void resize(std::size_t rows, std::size_t cols) {
        rows_ = rows;
        cols_ = cols;
        data_.assign(rows * cols, 0.f);
    }
    void fill(float v) { std::fill(data_.begin(), data_.end(), v); }

    std::vector<float>& storage() { return data_; }
    const std::vector<float>& storage() const { return data_; }

    bool operator==(const Matrix&) const = default;

  private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<float> data_;
};

/// Planar RGB image, channels x height x width, values nominally in [0,1].
struct ImageTensor {
    int channels = 3;
    int height = 0;
    int width = 0;
    std::vector<float> data;

    ImageTensor() = default;
    ImageTensor(int c, int h, int w, float fill = 0.f)
        : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

    float& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
    float at(int c, int y, int x) const { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }

    bool operator==(const ImageTensor&) const = default;
};

/// Integer label raster (0 = background).
struct LabelGrid {
    int height = 0;
    int width = 0;
    std::vector<int> labels;

    LabelGrid() = default;
    LabelGrid(int h, int w, int fill = 0) : height(h), width(w), labels(static_cast<std::size_t>(h) * w, fill) {}

    int& at(int y, int x) { return labels[static_cast<std::size_t>(y) * width + x]; }
    int at(int y, int x) const { return labels[static_cast<std::size_t>(y) * width + x]; }

    bool operator==(const LabelGrid&) const = default;
};

/// Deterministic stream derivation: every random decision is keyed by (seed, purpose, index).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);
std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t a = 0, std::uint64_t b = 0);

/// Bilinear resize (align-corners = false), shared by every path that rescales images.
ImageTensor resize_bilinear(const ImageTensor& image, int height, int width);
/// Nearest-neighbour resize for label rasters.
LabelGrid resize_nearest(const LabelGrid& labels, int height, int width);

ImageTensor crop(const ImageTensor& image, int top, int left, int height, int width);

/// 64-bit FNV-1a, used for config and checkpoint identity.
std::uint64_t fnv1a(std::span<const unsigned char> bytes, std::uint64_t h = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a(const std::string& s, std::uint64_t h = 0xcbf29ce484222325ULL);

}  // namespace mmc
