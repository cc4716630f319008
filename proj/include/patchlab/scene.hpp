#ifndef PATCHLAB_SCENE_HPP
#define PATCHLAB_SCENE_HPP

#include <cstdint>
#include <random>
#include <vector>

#include "patchlab/detector.hpp"

namespace patchlab {

// Synthetic stand-in for photo datasets: an ellipse-head/rectangle-body
// figure over a seeded value-noise background.
struct SceneSpec {
    int rows = 96;
    int cols = 96;
    bool contains_person = true;

    int fig_h_min = 20, fig_h_max = 26;         // total figure height, pixels
    int fig_w_min = 12, fig_w_max = 17;         // body width, pixels
    int fig_margin = 30;                        // figure box distance to image border
    double fig_intensity_min = 175, fig_intensity_max = 235;

    double bg_lo = 30, bg_hi = 130;             // value-noise range
    int bg_cell = 16;                           // value-noise lattice spacing
};

// One scene; the truth box is the tight bound of the drawn figure pixels.
TrainingSample generate_scene(const SceneSpec& spec, std::mt19937_64& rng);

struct Dataset {
    std::vector<TrainingSample> train;
    std::vector<TrainingSample> test;
};

// Deterministic for a fixed seed; train and test are disjoint draws.
Dataset generate_dataset(const SceneSpec& spec, int n_train, int n_test, std::uint64_t seed);

} // namespace patchlab

#endif
