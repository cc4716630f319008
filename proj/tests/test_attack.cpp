#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "patchlab/attack.hpp"
#include "patchlab/scene.hpp"

using namespace patchlab;
using oracles::reference_feasible;

namespace {

DetectorParams tiny_detector(std::uint64_t seed) {
    return make_detector_custom(seed, 32, 32, 1, {4, 6}, 5);
}

DetectorParams constant_detector(double obj_bias) {
    DetectorParams p = tiny_detector(1);
    for (ConvLayer& l : p.layers) {
        std::fill(l.w.begin(), l.w.end(), 0.0);
        std::fill(l.b.begin(), l.b.end(), 0.0);
    }
    p.layers.back().b[4] = obj_bias;
    return p;
}

ImageF random_image(int rows, int cols, std::mt19937_64& rng) {
    ImageF img(rows, cols, 1);
    std::uniform_real_distribution<double> val(0.0, 255.0);
    for (double& v : img.pix) v = val(rng);
    return img;
}

} // namespace

TEST_CASE("make_mask builds the block indicator outer product") {
    PlacementMask full = make_mask(0, 0, 8, 8, 8);
    int ones = 0;
    for (int r = 0; r < 8; ++r)
        for (int c = 0; c < 8; ++c) ones += full.at(r, c) ? 1 : 0;
    CHECK(ones == 64);

    PlacementMask unit = make_mask(3, 5, 1, 8, 8);
    for (int r = 0; r < 8; ++r)
        for (int c = 0; c < 8; ++c) CHECK(unit.at(r, c) == (r == 3 && c == 5));

    PlacementMask m = make_mask(2, 1, 4, 10, 12);
    int sum = 0;
    for (int r = 0; r < 10; ++r)
        for (int c = 0; c < 12; ++c) {
            // rank-1 structure: entry equals the product of the indicators
            CHECK(m.at(r, c) == (m.row_ind[r] && m.col_ind[c]));
            sum += m.at(r, c) ? 1 : 0;
        }
    CHECK(sum == 16);

    CHECK_THROWS_AS(make_mask(7, 0, 4, 10, 10), std::invalid_argument);
    CHECK_THROWS_AS(make_mask(-1, 0, 4, 10, 10), std::invalid_argument);
}

TEST_CASE("apply_patch replaces inside the mask and nothing else") {
    std::mt19937_64 rng(2);
    ImageF x = random_image(16, 16, rng);
    Patch z(5);
    std::uniform_real_distribution<double> val(0.0, 255.0);
    for (double& v : z.v) v = val(rng);

    PlacementMask m = make_mask(4, 7, 5, 16, 16);
    ImageF out = apply_patch(x, z, m);
    for (int r = 0; r < 16; ++r)
        for (int c = 0; c < 16; ++c) {
            if (r >= 4 && r < 9 && c >= 7 && c < 12)
                CHECK(out.at(r, c) == z.at(r - 4, c - 7));
            else
                CHECK(out.at(r, c) == x.at(r, c)); // bit-identical outside
        }

    // idempotent
    ImageF twice = apply_patch(out, z, m);
    CHECK(twice.pix == out.pix);

    // full-cover mask replaces everything
    Patch zf(16);
    for (double& v : zf.v) v = 31.0;
    ImageF all = apply_patch(x, zf, make_mask(0, 0, 16, 16, 16));
    for (double v : all.pix) CHECK(v == 31.0);
}

TEST_CASE("placement sampling respects bounds and the offset constraint") {
    const Box obj{16, 16, 8, 10};
    const int n = 6, rows = 32, cols = 32;

    // offset large enough that only the image bounds constrain placement
    EOTConfig wide;
    wide.transforms_per_step = 1000;
    wide.offset_limit = 100.0;
    wide.seed = 77;
    auto samples = sample_placements(wide, obj, n, rows, cols);
    int min_i = rows, max_i = -1, min_j = cols, max_j = -1;
    for (auto [i, j] : samples) {
        CHECK(reference_feasible(i, j, n, obj, rows, cols, 100.0));
        min_i = std::min(min_i, i);
        max_i = std::max(max_i, i);
        min_j = std::min(min_j, j);
        max_j = std::max(max_j, j);
    }
    // 1000 draws over a 27x27 grid reach the extremes
    CHECK(min_i == 0);
    CHECK(max_i == rows - n);
    CHECK(min_j == 0);
    CHECK(max_j == cols - n);

    // offset 0: every sampled block touches or overlaps the object box
    EOTConfig touch = wide;
    touch.offset_limit = 0.0;
    for (auto [i, j] : sample_placements(touch, obj, n, rows, cols)) {
        CHECK(rect_gap(i, j, n, obj) == 0.0);
        CHECK(reference_feasible(i, j, n, obj, rows, cols, 0.0));
    }

    // every sample lies in the exhaustively enumerated feasible set
    EOTConfig mid = wide;
    mid.offset_limit = 5.0;
    auto feasible = enumerate_feasible(obj, n, rows, cols, 5.0);
    for (auto [i, j] : sample_placements(mid, obj, n, rows, cols)) {
        CHECK(reference_feasible(i, j, n, obj, rows, cols, 5.0));
        CHECK(std::find(feasible.begin(), feasible.end(), std::make_pair(i, j)) != feasible.end());
    }
    // and the enumeration agrees with the oracle everywhere
    int count = 0;
    for (int i = 0; i + n <= rows; ++i)
        for (int j = 0; j + n <= cols; ++j)
            if (reference_feasible(i, j, n, obj, rows, cols, 5.0)) ++count;
    CHECK(count == static_cast<int>(feasible.size()));

    // infeasible configuration: patch larger than the image
    EOTConfig bad = wide;
    CHECK_THROWS_AS(sample_placements(bad, obj, 64, rows, cols), config_error);

    // determinism
    auto again = sample_placements(mid, obj, n, rows, cols);
    CHECK(again == sample_placements(mid, obj, n, rows, cols));
}

TEST_CASE("eot_loss is the mean squared confidence over all pairs") {
    std::mt19937_64 rng(3);
    std::vector<ImageF> images{random_image(32, 32, rng), random_image(32, 32, rng)};
    Patch z = random_noise_patch(6, 4);
    std::vector<std::vector<std::pair<int, int>>> placements{{{0, 0}, {10, 12}},
                                                             {{20, 20}, {5, 25}}};

    // constant detector: every confidence is sigmoid(bias)
    DetectorParams constp = constant_detector(0.4);
    const double c = 1.0 / (1.0 + std::exp(-0.4));
    CHECK(eot_loss(constp, images, z, placements) == doctest::Approx(c * c).epsilon(1e-12));

    // near-zero confidence: loss collapses to ~0
    DetectorParams deadp = constant_detector(-20.0);
    CHECK(eot_loss(deadp, images, z, placements) < 1e-12);

    // arithmetic identity against individually computed confidences
    DetectorParams p = tiny_detector(9);
    double want = 0;
    for (std::size_t ii = 0; ii < images.size(); ++ii)
        for (auto [pi, pj] : placements[ii]) {
            const double ci = confidence(
                p, apply_patch(images[ii], z, make_mask(pi, pj, z.size, 32, 32)));
            want += ci * ci;
        }
    want /= 4.0;
    CHECK(eot_loss(p, images, z, placements) == doctest::Approx(want).epsilon(1e-14));
}

TEST_CASE("eot gradient matches central finite differences on the patch") {
    std::mt19937_64 rng(20260811);
    DetectorParams p = tiny_detector(55);
    std::vector<ImageF> images{random_image(32, 32, rng), random_image(32, 32, rng)};
    Patch z = random_noise_patch(8, 5);
    std::vector<std::vector<std::pair<int, int>>> placements{{{6, 6}, {12, 10}}, {{9, 14}}};

    // gradient via the detector's input_gradient restricted to the mask
    std::vector<double> grad(z.v.size(), 0.0);
    int pairs = 0;
    for (std::size_t ii = 0; ii < images.size(); ++ii)
        for (auto [pi, pj] : placements[ii]) {
            const PlacementMask m = make_mask(pi, pj, z.size, 32, 32);
            ImageF g = input_gradient(p, apply_patch(images[ii], z, m), {0, 1.0});
            for (int r = 0; r < z.size; ++r)
                for (int c = 0; c < z.size; ++c)
                    grad[r * z.size + c] += g.at(pi + r, pj + c);
            ++pairs;
        }
    for (double& gv : grad) gv /= pairs;

    const double h = 1e-2;
    int checked = 0;
    for (int r = 0; r < z.size; ++r) {
        for (int c = 0; c < z.size; ++c) {
            Patch plus = z, minus = z;
            plus.at(r, c) += h;
            minus.at(r, c) -= h;
            const double fd = (eot_loss(p, images, plus, placements) -
                               eot_loss(p, images, minus, placements)) /
                              (2 * h);
            const double g = grad[r * z.size + c];
            const double denom = std::max({std::abs(g), std::abs(fd), 1e-10});
            CHECK(std::abs(g - fd) / denom < 1e-3);
            ++checked;
        }
    }
    CHECK(checked >= 64);
}

TEST_CASE("momentum blend arithmetic and state update") {
    MomentumState st;
    st.prev_grad = {0.0};
    auto out = momentum_blend({2.0}, st, 1.0);
    CHECK(out[0] == 2.0); // alpha 1: no history

    st.prev_grad = {3.0};
    out = momentum_blend({2.0}, st, 0.0);
    CHECK(out[0] == 3.0); // alpha 0: pure history

    st.prev_grad = {0.0};
    out = momentum_blend({2.0}, st, 0.5);
    CHECK(out[0] == 1.0);
    CHECK(st.prev_grad[0] == 1.0); // blended value becomes the new history
}

TEST_CASE("fgsm step: sign semantics and clipping") {
    FGSMConfig cfg;
    cfg.epsilon = 5.0;

    Patch z(2);
    z.v = {100.0, 0.0, 250.0, 55.5};
    std::vector<double> grad{-3.0, 0.5, -1.0, 0.0};
    Patch out = fgsm_step(z, grad, cfg);
    CHECK(out.v[0] == 105.0); // downhill against a negative gradient
    CHECK(out.v[1] == 0.0);   // clipped at the floor
    CHECK(out.v[2] == 255.0); // clipped at the ceiling
    CHECK(out.v[3] == 55.5);  // sign(0) = 0: untouched

    std::vector<double> zeros(4, 0.0);
    CHECK(fgsm_step(z, zeros, cfg).v == z.v);
}

TEST_CASE("random noise patch: range, determinism, concentration") {
    Patch a = random_noise_patch(64, 123);
    Patch b = random_noise_patch(64, 123);
    CHECK(a.v == b.v);
    CHECK(random_noise_patch(64, 124).v != a.v);
    double mean = 0;
    for (double v : a.v) {
        CHECK(v >= 0.0);
        CHECK(v <= 255.0);
        mean += v;
    }
    mean /= static_cast<double>(a.v.size());
    // uniform concentration: 127.5 +- 3 * (255/sqrt(12)) / 64
    CHECK(mean >= 112.0);
    CHECK(mean <= 143.0);
    CHECK_THROWS_AS(random_noise_patch(0, 1), std::invalid_argument);
}

TEST_CASE("train_patch: zero step leaves the initialization untouched") {
    SceneSpec spec;
    spec.rows = spec.cols = 32;
    spec.fig_margin = 8;
    spec.fig_h_min = 10;
    spec.fig_h_max = 12;
    spec.fig_w_min = 7;
    spec.fig_w_max = 9;
    Dataset ds = generate_dataset(spec, 3, 1, 4);
    DetectorParams p = tiny_detector(6);

    EOTConfig eot;
    eot.transforms_per_step = 4;
    eot.offset_limit = 4.0;
    eot.seed = 9;
    FGSMConfig fgsm;
    fgsm.epsilon = 0.0;
    fgsm.iterations = 5;
    PatchTrainResult r = train_patch(p, ds.train, 8, eot, fgsm, 77);
    CHECK(r.patch.v == random_noise_patch(8, 77).v);
    CHECK(r.curve.size() == 5);
}

TEST_CASE("train_patch keeps values in range and is bit-reproducible") {
    SceneSpec spec;
    spec.rows = spec.cols = 32;
    spec.fig_margin = 8;
    spec.fig_h_min = 10;
    spec.fig_h_max = 12;
    spec.fig_w_min = 7;
    spec.fig_w_max = 9;
    Dataset ds = generate_dataset(spec, 3, 1, 4);
    DetectorParams p = tiny_detector(6);

    EOTConfig eot;
    eot.transforms_per_step = 6;
    eot.offset_limit = 4.0;
    eot.seed = 10;
    FGSMConfig fgsm;
    fgsm.epsilon = 4.0;
    fgsm.alpha = 0.7;
    fgsm.iterations = 12;
    PatchTrainResult a = train_patch(p, ds.train, 8, eot, fgsm, 31, 2);
    for (double v : a.patch.v) {
        CHECK(v >= 0.0);
        CHECK(v <= 255.0);
    }
    PatchTrainResult b = train_patch(p, ds.train, 8, eot, fgsm, 31, 1);
    CHECK(a.patch.v == b.patch.v); // identical across thread counts too
    REQUIRE(a.curve.size() == b.curve.size());
    for (std::size_t k = 0; k < a.curve.size(); ++k) {
        CHECK(a.curve[k].loss == b.curve[k].loss);
        CHECK(a.curve[k].mean_confidence == b.curve[k].mean_confidence);
    }
}

TEST_CASE("heatmap marks the border band and matches clean confidence for a no-op patch") {
    SceneSpec spec;
    spec.rows = spec.cols = 32;
    spec.fig_margin = 8;
    spec.fig_h_min = 10;
    spec.fig_h_max = 12;
    spec.fig_w_min = 7;
    spec.fig_w_max = 9;
    spec.bg_lo = spec.bg_hi = 77.0; // constant background
    std::mt19937_64 rng(12);
    TrainingSample scene = generate_scene(spec, rng);
    DetectorParams p = tiny_detector(8);

    Patch z(6);
    for (double& v : z.v) v = 77.0; // patch equals the background: a no-op away from the figure
    Heatmap hm = confidence_heatmap(p, scene, z, 2, 4.0);

    const double clean = confidence(p, to_float(scene.image));
    int border = 0, inside = 0;
    for (int a = 0; a < hm.rows; ++a)
        for (int b = 0; b < hm.cols; ++b) {
            const std::size_t idx = static_cast<std::size_t>(a) * hm.cols + b;
            const int oi = hm.origin_row(a), oj = hm.origin_col(b);
            const bool fits = oi >= 0 && oj >= 0 && oi + z.size <= 32 && oj + z.size <= 32;
            CHECK(static_cast<bool>(hm.in_bounds[idx]) == fits);
            if (!fits) {
                CHECK(hm.conf[idx] == -1.0);
                ++border;
                continue;
            }
            ++inside;
            // far from the figure the no-op patch leaves the image unchanged
            if (rect_gap(oi, oj, z.size, scene.truth.front().box) > 2.0)
                CHECK(hm.conf[idx] == doctest::Approx(clean).epsilon(1e-9));
        }
    CHECK(border > 0);
    CHECK(inside > 0);

    CHECK_THROWS_AS(confidence_heatmap(p, scene, z, 0, 4.0), std::invalid_argument);
}
