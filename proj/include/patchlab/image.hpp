#ifndef PATCHLAB_IMAGE_HPP
#define PATCHLAB_IMAGE_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "patchlab/common.hpp"

namespace patchlab {

// 8-bit raster, row-major, interleaved channels (1 = grayscale, 3 = RGB).
struct Image8 {
    int rows = 0;
    int cols = 0;
    int channels = 1;
    std::vector<std::uint8_t> pix;

    Image8() = default;
    Image8(int r, int c, int ch, std::uint8_t fill = 0)
        : rows(r), cols(c), channels(ch),
          pix(static_cast<std::size_t>(r) * c * ch, fill) {}

    std::uint8_t& at(int r, int c, int ch = 0) {
        return pix[(static_cast<std::size_t>(r) * cols + c) * channels + ch];
    }
    std::uint8_t at(int r, int c, int ch = 0) const {
        return pix[(static_cast<std::size_t>(r) * cols + c) * channels + ch];
    }
    bool same_shape(const Image8& o) const {
        return rows == o.rows && cols == o.cols && channels == o.channels;
    }
};

// Working representation for arithmetic, gradients and filtering.
// Values live in the nominal [0,255] range but are not clamped until to_u8.
struct ImageF {
    int rows = 0;
    int cols = 0;
    int channels = 1;
    std::vector<double> pix;

    ImageF() = default;
    ImageF(int r, int c, int ch, double fill = 0.0)
        : rows(r), cols(c), channels(ch),
          pix(static_cast<std::size_t>(r) * c * ch, fill) {}

    double& at(int r, int c, int ch = 0) {
        return pix[(static_cast<std::size_t>(r) * cols + c) * channels + ch];
    }
    double at(int r, int c, int ch = 0) const {
        return pix[(static_cast<std::size_t>(r) * cols + c) * channels + ch];
    }
    bool same_shape(const ImageF& o) const {
        return rows == o.rows && cols == o.cols && channels == o.channels;
    }
};

struct NoiseParams {
    double mu = 0.0;
    double sigma = 0.0; // must be >= 0
    std::uint64_t seed = 0;
};

// Normalized, non-negative, flip-symmetric square kernel with odd side.
struct BlurKernel {
    int size = 1;
    std::vector<double> weights; // size x size, row-major

    double at(int r, int c) const { return weights[static_cast<std::size_t>(r) * size + c]; }
};

ImageF to_float(const Image8& img);

// Clamp to [0,255], round half-up. Throws std::invalid_argument on NaN/Inf.
Image8 to_u8(const ImageF& img);

// out[p] = img[p] + N(mu, sigma^2); deterministic for a fixed seed.
// sigma == 0 degenerates to adding mu exactly.
ImageF add_gaussian_noise(const ImageF& img, const NoiseParams& params);

// weights(r,c) ~ exp(-(r^2+c^2)/(2 sigma^2)) over centered offsets, sum = 1.
BlurKernel make_gaussian_kernel(int size, double sigma);

// 2D correlation, border handled by edge replication, channel-wise.
ImageF gaussian_blur(const ImageF& img, const BlurKernel& kernel);

// Binary PGM (P5, grayscale) / PPM (P6, color), 8-bit only.
Image8 load_image(const std::string& path);
void save_image(const Image8& img, const std::string& path);

} // namespace patchlab

#endif
