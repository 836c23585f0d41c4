#include "mmc/synth.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <sstream>

#include "mmc/dataset.hpp"
#include "mmc/errors.hpp"
#include "mmc/image_io.hpp"

namespace fs = std::filesystem;

namespace mmc {

namespace {

void hsv_to_rgb(double h, double s, double v, double rgb[3]) {
    const double c = v * s, hp = std::fmod(h, 1.0) * 6.0;
    const double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    switch (static_cast<int>(hp)) {
        case 0: r = c, g = x; break;
        case 1: r = x, g = c; break;
        case 2: g = c, b = x; break;
        case 3: g = x, b = c; break;
        case 4: r = x, b = c; break;
        default: r = c, b = x; break;
    }
    const double m = v - c;
    rgb[0] = r + m;
    rgb[1] = g + m;
    rgb[2] = b + m;
}

std::string numbered(int i, int width = 6) {
    std::ostringstream s;
    s << std::setw(width) << std::setfill('0') << i;
    return s.str();
}

}  // namespace

void paint_texture(ImageTensor& image, int y, int x, int cls, int n_classes, double phase_y, double phase_x, double noise) {
    constexpr double pi = std::numbers::pi;
    const double yy = y + phase_y, xx = x + phase_x;
    double pattern = 0.0;
    switch (cls % 4) {
        case 0: pattern = std::sin(2.0 * pi * yy / 4.0); break;                               // horizontal stripes
        case 1: pattern = std::sin(2.0 * pi * xx / 4.0); break;                               // vertical stripes
        case 2: pattern = ((static_cast<int>(std::floor(yy / 2)) + static_cast<int>(std::floor(xx / 2))) & 1) ? 1.0 : -1.0; break;
        default: pattern = std::sin(2.0 * pi * (xx + yy) / 6.0) * std::sin(2.0 * pi * (xx - yy) / 6.0); break;
    }
    double rgb[3];
    hsv_to_rgb(static_cast<double>(cls) / n_classes, 0.75, 0.6 + 0.25 * pattern + noise, rgb);
    for (int c = 0; c < 3; ++c) image.at(c, y, x) = static_cast<float>(std::clamp(rgb[c], 0.0, 1.0));
}

std::vector<SynthImage> synth_textures(int n_images, int n_classes, int size, std::uint64_t seed) {
    if (n_classes < 2) throw InvalidInput("synth_textures: need at least 2 classes");
    if (n_images < 0 || size < 4) throw InvalidInput("synth_textures: bad image count or size");
    std::vector<SynthImage> out(static_cast<std::size_t>(n_images));
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n_images; ++i) {
        auto rng = make_rng(seed, 0x5E7A, static_cast<std::uint64_t>(i));
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        std::normal_distribution<double> gauss(0.0, 0.04);
        const int regions = n_classes >= 3 && unit(rng) < 0.5 ? 3 : 2;
        std::vector<int> classes(static_cast<std::size_t>(n_classes));
        std::iota(classes.begin(), classes.end(), 0);
        std::shuffle(classes.begin(), classes.end(), rng);
        classes.resize(static_cast<std::size_t>(regions));

        LabelGrid region(size, size);
        const double half = size / 2.0;
        for (int attempt = 0;; ++attempt) {
            if (regions == 2) {
                const double theta = unit(rng) * 2.0 * std::numbers::pi;
                const double offset = (unit(rng) - 0.5) * size / 3.0;
                const double nx = std::cos(theta), ny = std::sin(theta);
                for (int y = 0; y < size; ++y)
                    for (int x = 0; x < size; ++x) region.at(y, x) = ((x + 0.5 - half) * nx + (y + 0.5 - half) * ny > offset) ? 1 : 0;
            } else {
                double sy[3], sx[3];
                for (int r = 0; r < 3; ++r) {
                    sy[r] = unit(rng) * size;
                    sx[r] = unit(rng) * size;
                }
                for (int y = 0; y < size; ++y)
                    for (int x = 0; x < size; ++x) {
                        int best = 0;
                        double bd = 1e300;
                        for (int r = 0; r < 3; ++r) {
                            const double d = (y + 0.5 - sy[r]) * (y + 0.5 - sy[r]) + (x + 0.5 - sx[r]) * (x + 0.5 - sx[r]);
                            if (d < bd) {
                                bd = d;
                                best = r;
                            }
                        }
                        region.at(y, x) = best;
                    }
            }
            std::vector<int> area(static_cast<std::size_t>(regions), 0);
            for (int l : region.labels) ++area[static_cast<std::size_t>(l)];
            // each region must cover at least 1/8 of the image; the last attempt is kept regardless
            if (*std::min_element(area.begin(), area.end()) * 8 >= size * size || attempt == 20) break;
        }

        SynthImage& s = out[static_cast<std::size_t>(i)];
        s.regions = regions;
        s.image = ImageTensor(3, size, size);
        s.labels = LabelGrid(size, size);
        std::vector<double> py(static_cast<std::size_t>(regions)), px(static_cast<std::size_t>(regions));
        for (int r = 0; r < regions; ++r) {
            py[r] = unit(rng) * 12.0;
            px[r] = unit(rng) * 12.0;
        }
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                const int r = region.at(y, x);
                const int cls = classes[static_cast<std::size_t>(r)];
                paint_texture(s.image, y, x, cls, n_classes, py[r], px[r], gauss(rng));
                s.labels.at(y, x) = cls + 1;
            }
    }
    return out;
}

void write_synth_dataset(const fs::path& dir, const std::vector<SynthImage>& images, int test_count) {
    if (test_count < 0 || static_cast<std::size_t>(test_count) > images.size()) throw InvalidInput("write_synth_dataset: bad test count");
    fs::create_directories(dir / "images");
    fs::create_directories(dir / "masks");
    DatasetManifest m;
    m.root = dir;
    auto& train = m.splits["train"];
    auto& test = m.splits["test"];
    const std::size_t n_train = images.size() - static_cast<std::size_t>(test_count);
    std::vector<ManifestItem> items(images.size());
#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < images.size(); ++i) {
        const std::string id = numbered(static_cast<int>(i));
        write_image(dir / "images" / (id + ".png"), images[i].image);
        write_labels(dir / "masks" / (id + ".png"), images[i].labels);
        DatasetItem probe;
        probe.labels = images[i].labels;
        items[i] = {id, "images/" + id + ".png", "masks/" + id + ".png", image_class(probe) - 1};
    }
    for (std::size_t i = 0; i < items.size(); ++i) (i < n_train ? train : test).push_back(std::move(items[i]));
    write_dataset_manifest(m);
}

FrameSequence synth_video(int n_frames, int size, int n_classes, std::uint64_t seed) {
    if (n_frames < 2) throw InvalidInput("synth_video: need at least 2 frames");
    if (n_classes < 2 || size < 8) throw InvalidInput("synth_video: bad class count or size");
    auto rng = make_rng(seed, 0x71DE);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 0.04);
    const int bg = static_cast<int>(unit(rng) * n_classes) % n_classes;
    const int fg = (bg + 1 + static_cast<int>(unit(rng) * (n_classes - 1))) % n_classes;
    const int side = size / 3;
    int top = static_cast<int>(unit(rng) * (size - side)), left = static_cast<int>(unit(rng) * (size - side));
    int vy = unit(rng) < 0.5 ? -1 : 1, vx = unit(rng) < 0.5 ? -2 : 2;
    const double bpy = unit(rng) * 12, bpx = unit(rng) * 12, fpy = unit(rng) * 12, fpx = unit(rng) * 12;

    FrameSequence seq;
    seq.name = "synth_" + numbered(static_cast<int>(seed % 1000000));
    for (int t = 0; t < n_frames; ++t) {
        ImageTensor frame(3, size, size);
        LabelGrid gt(size, size);
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                const bool inside = y >= top && y < top + side && x >= left && x < left + side;
                if (inside)
                    paint_texture(frame, y, x, fg, n_classes, fpy - top, fpx - left, gauss(rng));  // texture moves with the square
                else
                    paint_texture(frame, y, x, bg, n_classes, bpy, bpx, gauss(rng));
                gt.at(y, x) = inside ? 1 : 0;
            }
        seq.frames.push_back(std::move(frame));
        seq.ground_truth.push_back(std::move(gt));
        if (top + vy < 0 || top + vy + side > size) vy = -vy;
        if (left + vx < 0 || left + vx + side > size) vx = -vx;
        top += vy;
        left += vx;
    }
    seq.first_labels = seq.ground_truth.front();
    return seq;
}

void write_sequences(const fs::path& dir, const std::vector<FrameSequence>& sequences) {
    for (const auto& seq : sequences) {
        const fs::path sd = dir / seq.name;
        fs::create_directories(sd / "frames");
        fs::create_directories(sd / "masks");
        for (std::size_t t = 0; t < seq.frames.size(); ++t) {
            write_image(sd / "frames" / (numbered(static_cast<int>(t), 5) + ".png"), seq.frames[t]);
            const LabelGrid& l = t < seq.ground_truth.size() ? seq.ground_truth[t] : seq.first_labels;
            if (t < seq.ground_truth.size() || t == 0) write_labels(sd / "masks" / (numbered(static_cast<int>(t), 5) + ".png"), l);
        }
    }
}

}  // namespace mmc
