#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "mmc/tensor.hpp"
#include "mmc/video.hpp"

namespace mmc {

struct SynthImage {
    ImageTensor image;
    LabelGrid labels;  // class + 1 per pixel; every pixel belongs to a region
    int regions = 0;
};

/// Class texture: hue fixed per class, pattern (horizontal or vertical stripes, checker, diagonal) chosen by class index.
/// `phase` shifts the pattern; `noise` is added to the value channel.
void paint_texture(ImageTensor& image, int y, int x, int cls, int n_classes, double phase_y, double phase_x, double noise);

/// Images of 2 or 3 regions (half-plane split or 3-site Voronoi), each region a distinct class.
std::vector<SynthImage> synth_textures(int n_images, int n_classes, int size, std::uint64_t seed);

/// Writes images/, masks/ and manifest.json with a held-out "test" split of `test_count` images.
void write_synth_dataset(const std::filesystem::path& dir, const std::vector<SynthImage>& images, int test_count);

/// A textured square of one class translating over a static background texture of another class.
/// Ground truth: 1 on the square, 0 elsewhere.
FrameSequence synth_video(int n_frames, int size, int n_classes, std::uint64_t seed);
void write_sequences(const std::filesystem::path& dir, const std::vector<FrameSequence>& sequences);

}  // namespace mmc
