#include "mmc/image_io.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <cmath>

#include "mmc/errors.hpp"

namespace mmc {

namespace {

ImageTensor from_mat(const cv::Mat& mat) {
    if (mat.depth() != CV_8U) throw InvalidInput("only 8-bit images are supported");
    const int ch = mat.channels();
    if (ch != 1 && ch != 3 && ch != 4) throw InvalidInput("unsupported channel count");
    ImageTensor out(3, mat.rows, mat.cols);
    for (int y = 0; y < mat.rows; ++y) {
        const std::uint8_t* row = mat.ptr<std::uint8_t>(y);
        for (int x = 0; x < mat.cols; ++x) {
            const std::uint8_t* px = row + static_cast<std::ptrdiff_t>(x) * ch;
            for (int c = 0; c < 3; ++c) {
                // OpenCV stores BGR(A)
                const std::uint8_t v = ch == 1 ? px[0] : px[2 - c];
                out.at(c, y, x) = static_cast<float>(v) / 255.f;
            }
        }
    }
    return out;
}

cv::Mat to_mat(const ImageTensor& image) {
    if (image.channels != 3) throw InvalidInput("write_image: expected 3 channels");
    cv::Mat mat(image.height, image.width, CV_8UC3);
    for (int y = 0; y < image.height; ++y) {
        auto* row = mat.ptr<std::uint8_t>(y);
        for (int x = 0; x < image.width; ++x)
            for (int c = 0; c < 3; ++c) {
                const float v = std::clamp(image.at(c, y, x), 0.f, 1.f);
                row[x * 3 + (2 - c)] = static_cast<std::uint8_t>(std::lround(v * 255.f));
            }
    }
    return mat;
}

}  // namespace

ImageTensor read_image(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw LoadError(path.string(), "file not found");
    const cv::Mat mat = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (mat.empty()) throw LoadError(path.string(), "cannot decode image");
    return from_mat(mat);
}

ImageTensor decode_image(std::span<const std::uint8_t> bytes) {
    if (bytes.empty()) throw InvalidInput("empty image payload");
    const cv::Mat buf(1, static_cast<int>(bytes.size()), CV_8U, const_cast<std::uint8_t*>(bytes.data()));
    cv::Mat mat;
    try {
        mat = cv::imdecode(buf, cv::IMREAD_COLOR);
    } catch (const cv::Exception&) {
        mat.release();
    }
    if (mat.empty()) throw InvalidInput("image payload could not be decoded");
    return from_mat(mat);
}

void write_image(const std::filesystem::path& path, const ImageTensor& image) {
    if (!cv::imwrite(path.string(), to_mat(image))) throw LoadError(path.string(), "cannot write image");
}

std::vector<std::uint8_t> encode_png(const ImageTensor& image) {
    std::vector<std::uint8_t> out;
    if (!cv::imencode(".png", to_mat(image), out)) throw InvalidInput("PNG encoding failed");
    return out;
}

LabelGrid read_labels(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw LoadError(path.string(), "file not found");
    const cv::Mat mat = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
    if (mat.empty()) throw LoadError(path.string(), "cannot decode label raster");
    if (mat.channels() != 1) throw LoadError(path.string(), "label raster must be single-channel");
    LabelGrid out(mat.rows, mat.cols);
    for (int y = 0; y < mat.rows; ++y)
        for (int x = 0; x < mat.cols; ++x) {
            if (mat.depth() == CV_8U)
                out.at(y, x) = mat.at<std::uint8_t>(y, x);
            else if (mat.depth() == CV_16U)
                out.at(y, x) = mat.at<std::uint16_t>(y, x);
            else
                throw LoadError(path.string(), "label raster must be 8- or 16-bit");
        }
    return out;
}

void write_labels(const std::filesystem::path& path, const LabelGrid& labels) {
    cv::Mat mat(labels.height, labels.width, CV_16UC1);
    for (int y = 0; y < labels.height; ++y)
        for (int x = 0; x < labels.width; ++x) {
            const int v = labels.at(y, x);
            if (v < 0 || v > 65535) throw InvalidInput("label out of 16-bit range");
            mat.at<std::uint16_t>(y, x) = static_cast<std::uint16_t>(v);
        }
    if (!cv::imwrite(path.string(), mat)) throw LoadError(path.string(), "cannot write label raster");
}

}  // namespace mmc
