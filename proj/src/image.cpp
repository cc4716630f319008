#include "patchlab/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

namespace patchlab {

ImageF to_float(const Image8& img) {
    ImageF out(img.rows, img.cols, img.channels);
    for (std::size_t i = 0; i < img.pix.size(); ++i)
        out.pix[i] = static_cast<double>(img.pix[i]);
    return out;
}

Image8 to_u8(const ImageF& img) {
    Image8 out(img.rows, img.cols, img.channels);
    for (std::size_t i = 0; i < img.pix.size(); ++i) {
        double v = img.pix[i];
        if (!std::isfinite(v))
            throw std::invalid_argument("to_u8: non-finite pixel value (corrupted image)");
        v = std::clamp(v, 0.0, 255.0);
        out.pix[i] = static_cast<std::uint8_t>(std::floor(v + 0.5));
    }
    return out;
}

ImageF add_gaussian_noise(const ImageF& img, const NoiseParams& params) {
    if (params.sigma < 0.0)
        throw std::invalid_argument("add_gaussian_noise: sigma must be >= 0");
    ImageF out = img;
    if (params.sigma == 0.0) {
        for (double& v : out.pix) v += params.mu;
        return out;
    }
    std::mt19937_64 rng(params.seed);
    std::normal_distribution<double> dist(params.mu, params.sigma);
    for (double& v : out.pix) v += dist(rng);
    return out;
}

BlurKernel make_gaussian_kernel(int size, double sigma) {
    if (size < 1 || size % 2 == 0)
        throw std::invalid_argument("make_gaussian_kernel: size must be odd and positive");
    if (!(sigma > 0.0))
        throw std::invalid_argument("make_gaussian_kernel: sigma must be > 0");
    BlurKernel k;
    k.size = size;
    k.weights.resize(static_cast<std::size_t>(size) * size);
    const int half = size / 2;
    double sum = 0.0;
    for (int r = -half; r <= half; ++r) {
        for (int c = -half; c <= half; ++c) {
            double w = std::exp(-(r * r + c * c) / (2.0 * sigma * sigma));
            k.weights[static_cast<std::size_t>(r + half) * size + (c + half)] = w;
            sum += w;
        }
    }
    for (double& w : k.weights) w /= sum;
    return k;
}

ImageF gaussian_blur(const ImageF& img, const BlurKernel& kernel) {
    if (kernel.size > img.rows || kernel.size > img.cols)
        throw std::invalid_argument("gaussian_blur: kernel larger than image");
    ImageF out(img.rows, img.cols, img.channels);
    const int half = kernel.size / 2;
    for (int r = 0; r < img.rows; ++r) {
        for (int c = 0; c < img.cols; ++c) {
            for (int ch = 0; ch < img.channels; ++ch) {
                double acc = 0.0;
                for (int kr = -half; kr <= half; ++kr) {
                    const int sr = std::clamp(r + kr, 0, img.rows - 1);
                    for (int kc = -half; kc <= half; ++kc) {
                        const int sc = std::clamp(c + kc, 0, img.cols - 1);
                        acc += kernel.at(kr + half, kc + half) * img.at(sr, sc, ch);
                    }
                }
                out.at(r, c, ch) = acc;
            }
        }
    }
    return out;
}

namespace {

// Reads one whitespace-delimited token, skipping '#' comments per Netpbm.
std::string next_token(std::istream& in) {
    std::string tok;
    int c;
    while ((c = in.get()) != EOF) {
        if (c == '#') {
            while ((c = in.get()) != EOF && c != '\n') {}
            continue;
        }
        if (!std::isspace(c)) {
            tok.push_back(static_cast<char>(c));
            while ((c = in.get()) != EOF && !std::isspace(c) && c != '#')
                tok.push_back(static_cast<char>(c));
            if (c == '#') in.unget();
            return tok;
        }
    }
    return tok;
}

int parse_dim(const std::string& tok, const std::string& path, const char* what) {
    if (tok.empty())
        throw io_error("malformed header in " + path + ": missing " + what);
    for (char ch : tok)
        if (!std::isdigit(static_cast<unsigned char>(ch)))
            throw io_error("malformed header in " + path + ": bad " + what + " '" + tok + "'");
    long v = std::strtol(tok.c_str(), nullptr, 10);
    if (v <= 0 || v > 1 << 20)
        throw io_error("malformed header in " + path + ": out-of-range " + what);
    return static_cast<int>(v);
}

} // namespace

Image8 load_image(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw io_error("cannot open " + path);
    std::string magic = next_token(in);
    int channels;
    if (magic == "P5")
        channels = 1;
    else if (magic == "P6")
        channels = 3;
    else
        throw io_error("malformed header in " + path + ": expected P5 or P6, got '" + magic + "'");
    const int cols = parse_dim(next_token(in), path, "width");
    const int rows = parse_dim(next_token(in), path, "height");
    const int maxval = parse_dim(next_token(in), path, "maxval");
    if (maxval != 255)
        throw io_error("unsupported bit depth in " + path + ": maxval " + std::to_string(maxval));
    // header ends with exactly one whitespace byte, already consumed by next_token
    Image8 img(rows, cols, channels);
    in.read(reinterpret_cast<char*>(img.pix.data()), static_cast<std::streamsize>(img.pix.size()));
    if (static_cast<std::size_t>(in.gcount()) != img.pix.size())
        throw io_error("truncated file: " + path);
    return img;
}

void save_image(const Image8& img, const std::string& path) {
    if (img.channels != 1 && img.channels != 3)
        throw std::invalid_argument("save_image: only 1 or 3 channels supported");
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw io_error("cannot open " + path + " for writing");
    out << (img.channels == 1 ? "P5" : "P6") << "\n"
        << img.cols << " " << img.rows << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.pix.data()),
              static_cast<std::streamsize>(img.pix.size()));
    if (!out)
        throw io_error("write failed: " + path);
}

} // namespace patchlab
