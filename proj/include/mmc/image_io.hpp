#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "mmc/tensor.hpp"

namespace mmc {

/// 8-bit RGB (or grayscale, replicated) image file to [0,1] floats. Throws LoadError.
ImageTensor read_image(const std::filesystem::path& path);
/// In-memory encoded image (PNG, JPEG, ...). Throws InvalidInput when undecodable.
ImageTensor decode_image(std::span<const std::uint8_t> bytes);
/// Values are clamped to [0,1] and rounded to 8 bits.
void write_image(const std::filesystem::path& path, const ImageTensor& image);
std::vector<std::uint8_t> encode_png(const ImageTensor& image);

/// Single-channel 8- or 16-bit label raster. Throws LoadError.
LabelGrid read_labels(const std::filesystem::path& path);
/// Lossless 16-bit PNG; labels must lie in [0, 65535].
void write_labels(const std::filesystem::path& path, const LabelGrid& labels);

}  // namespace mmc
