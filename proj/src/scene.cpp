#include "patchlab/scene.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace patchlab {

namespace {

// Coarse random lattice, bilinear in between. Smooth enough to survive the
// 3x3 blur countermeasure without confidence shifts.
void fill_value_noise(Image8& img, const SceneSpec& spec, std::mt19937_64& rng) {
    const int cell = std::max(2, spec.bg_cell);
    const int gr = img.rows / cell + 2;
    const int gc = img.cols / cell + 2;
    std::vector<double> lattice(static_cast<std::size_t>(gr) * gc);
    std::uniform_real_distribution<double> dist(spec.bg_lo, spec.bg_hi);
    for (double& v : lattice) v = dist(rng);
    for (int r = 0; r < img.rows; ++r) {
        const int a = r / cell;
        const double fy = static_cast<double>(r % cell) / cell;
        for (int c = 0; c < img.cols; ++c) {
            const int b = c / cell;
            const double fx = static_cast<double>(c % cell) / cell;
            const double v00 = lattice[static_cast<std::size_t>(a) * gc + b];
            const double v01 = lattice[static_cast<std::size_t>(a) * gc + b + 1];
            const double v10 = lattice[static_cast<std::size_t>(a + 1) * gc + b];
            const double v11 = lattice[static_cast<std::size_t>(a + 1) * gc + b + 1];
            const double v = (1 - fy) * ((1 - fx) * v00 + fx * v01) +
                             fy * ((1 - fx) * v10 + fx * v11);
            img.at(r, c) = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
        }
    }
}

} // namespace

TrainingSample generate_scene(const SceneSpec& spec, std::mt19937_64& rng) {
    if (spec.rows < 8 || spec.cols < 8)
        throw std::invalid_argument("generate_scene: image too small");
    TrainingSample sample;
    sample.image = Image8(spec.rows, spec.cols, 1);
    fill_value_noise(sample.image, spec, rng);
    if (!spec.contains_person) return sample;

    const int max_h = std::min(spec.fig_h_max, spec.rows - 2 * spec.fig_margin);
    const int max_w = std::min(spec.fig_w_max, spec.cols - 2 * spec.fig_margin);
    if (max_h < spec.fig_h_min || max_w < spec.fig_w_min)
        throw std::invalid_argument("generate_scene: figure does not fit inside the margins");
    std::uniform_int_distribution<int> h_dist(spec.fig_h_min, max_h);
    std::uniform_int_distribution<int> w_dist(spec.fig_w_min, max_w);
    const int h = h_dist(rng);
    const int w = w_dist(rng);
    std::uniform_int_distribution<int> r0_dist(spec.fig_margin, spec.rows - spec.fig_margin - h);
    std::uniform_int_distribution<int> c0_dist(spec.fig_margin, spec.cols - spec.fig_margin - w);
    const int r0 = r0_dist(rng);
    const int c0 = c0_dist(rng);
    std::uniform_real_distribution<double> i_dist(spec.fig_intensity_min, spec.fig_intensity_max);
    const double intensity = i_dist(rng);

    // head: ellipse over the top ~40% of the height, body: rectangle below
    const int head_ry = std::max(2, static_cast<int>(std::lround(h * 0.20)));
    const int head_rx = std::max(2, std::min(head_ry, (w - 2) / 2));
    const double head_cy = r0 + head_ry;
    const double head_cx = c0 + w / 2.0;
    const int body_top = r0 + 2 * head_ry;

    int min_r = spec.rows, max_r = -1, min_c = spec.cols, max_c = -1;
    auto put = [&](int r, int c) {
        sample.image.at(r, c) = static_cast<std::uint8_t>(std::lround(intensity));
        min_r = std::min(min_r, r);
        max_r = std::max(max_r, r);
        min_c = std::min(min_c, c);
        max_c = std::max(max_c, c);
    };
    for (int r = body_top; r < r0 + h; ++r)
        for (int c = c0; c < c0 + w; ++c) put(r, c);
    for (int r = r0; r < body_top; ++r) {
        for (int c = c0; c < c0 + w; ++c) {
            const double dy = (r + 0.5 - head_cy) / head_ry;
            const double dx = (c + 0.5 - head_cx) / head_rx;
            if (dy * dy + dx * dx <= 1.0) put(r, c);
        }
    }

    TruthBox tb;
    tb.box.cx = (min_c + max_c + 1) / 2.0;
    tb.box.cy = (min_r + max_r + 1) / 2.0;
    tb.box.w = max_c - min_c + 1;
    tb.box.h = max_r - min_r + 1;
    tb.class_id = 0;
    sample.truth.push_back(tb);
    return sample;
}

Dataset generate_dataset(const SceneSpec& spec, int n_train, int n_test, std::uint64_t seed) {
    if (n_train < 1 || n_test < 1)
        throw std::invalid_argument("generate_dataset: counts must be >= 1");
    Dataset ds;
    std::mt19937_64 rng(seed);
    ds.train.reserve(n_train);
    ds.test.reserve(n_test);
    for (int k = 0; k < n_train; ++k) ds.train.push_back(generate_scene(spec, rng));
    for (int k = 0; k < n_test; ++k) ds.test.push_back(generate_scene(spec, rng));
    return ds;
}

} // namespace patchlab
