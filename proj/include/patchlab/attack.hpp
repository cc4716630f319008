#ifndef PATCHLAB_ATTACK_HPP
#define PATCHLAB_ATTACK_HPP

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "patchlab/detector.hpp"
#include "patchlab/image.hpp"

namespace patchlab {

// Trainable square pixel block, values kept in [clip_lo, clip_hi] = [0,255]
// after every update step.
struct Patch {
    int size = 0;
    std::vector<double> v; // size x size, row-major

    Patch() = default;
    explicit Patch(int n, double fill = 0.0)
        : size(n), v(static_cast<std::size_t>(n) * n, fill) {}

    double at(int r, int c) const { return v[static_cast<std::size_t>(r) * size + c]; }
    double& at(int r, int c) { return v[static_cast<std::size_t>(r) * size + c]; }
};

// Binary block mask, stored as the outer product of a row indicator and a
// column indicator vector.
struct PlacementMask {
    int i = 0, j = 0, n = 0; // origin row/col and side
    int rows = 0, cols = 0;  // image dims
    std::vector<std::uint8_t> row_ind, col_ind;

    bool at(int r, int c) const { return row_ind[r] != 0 && col_ind[c] != 0; }
};

// Throws std::invalid_argument unless the n x n block at (i,j) lies fully
// inside a rows x cols image.
PlacementMask make_mask(int i, int j, int n, int rows, int cols);

// Replacement semantics: out = (1-m) .* x + m .* z_placed. Pixels outside the
// mask are bit-identical to x; pixels inside equal the patch (all channels).
ImageF apply_patch(const ImageF& x, const Patch& z, const PlacementMask& mask);

struct EOTConfig {
    int transforms_per_step = 16;
    double offset_limit = 6.0; // max gap between patch block and object box
    std::uint64_t seed = 0;
};

struct FGSMConfig {
    double epsilon = 2.0;  // step magnitude, intensity units
    double alpha = 0.8;    // momentum coefficient in [0,1]
    int iterations = 600;
    double clip_lo = 0.0;
    double clip_hi = 255.0;
};

struct MomentumState {
    std::vector<double> prev_grad; // starts all zeros
};

// Shortest distance between the patch block at origin (i,j) and the box
// (0 when they touch or intersect).
double rect_gap(int i, int j, int n, const Box& object_box);

// All origins where the patch is fully inside the image and within
// offset_limit of the object box. Row-major order.
std::vector<std::pair<int, int>> enumerate_feasible(const Box& object_box, int n, int rows,
                                                    int cols, double offset_limit);

// cfg.transforms_per_step uniform i.i.d. draws from the feasible set,
// deterministic for a fixed cfg.seed. Throws config_error when the feasible
// set is empty.
std::vector<std::pair<int, int>> sample_placements(const EOTConfig& cfg, const Box& object_box,
                                                   int n, int rows, int cols);

// Mean over all (image, placement) pairs of the squared smooth scene
// confidence of the patched image.
double eot_loss(const DetectorParams& params, const std::vector<ImageF>& images, const Patch& z,
                const std::vector<std::vector<std::pair<int, int>>>& placements_per_image,
                int class_id = 0);

// out = alpha * grad_now + (1 - alpha) * prev; prev <- out.
std::vector<double> momentum_blend(const std::vector<double>& grad_now, MomentumState& state,
                                   double alpha);

// z' = clip(z - epsilon * sign(grad)); sign(0) = 0. grad is the gradient of
// the minimized squared-confidence loss, so the step always goes downhill.
Patch fgsm_step(const Patch& z, const std::vector<double>& grad, const FGSMConfig& cfg);

// i.i.d. uniform values in [0,255]; the Table-2 style control baseline and
// the attack's initialization.
Patch random_noise_patch(int n, std::uint64_t seed);

struct PatchCurvePoint {
    int iteration = 0;
    double loss = 0;            // mean squared confidence over the EOT batch
    double mean_confidence = 0; // mean smooth confidence over the EOT batch
};

struct PatchTrainResult {
    Patch patch;
    std::vector<PatchCurvePoint> curve;
};

// Full EOT + FGSM + momentum loop over the whole training set (one universal
// patch). Every image must carry at least one truth box. Deterministic for
// fixed seeds.
PatchTrainResult train_patch(const DetectorParams& params,
                             const std::vector<TrainingSample>& train_images, int patch_size,
                             const EOTConfig& eot, const FGSMConfig& fgsm,
                             std::uint64_t init_seed, int threads = 0);

// Scene confidence for the patch centered at every stride-lattice point;
// centers whose patch would leave the image are flagged as the border region.
struct Heatmap {
    int stride = 1;
    int patch_size = 0;
    int image_rows = 0, image_cols = 0;
    int rows = 0, cols = 0; // lattice dims
    Box object_box;
    double offset_limit = 0;
    std::vector<double> conf;           // -1 where out of bounds
    std::vector<std::uint8_t> in_bounds;

    int center_row(int a) const { return a * stride; }
    int center_col(int b) const { return b * stride; }
    int origin_row(int a) const { return a * stride - patch_size / 2; }
    int origin_col(int b) const { return b * stride - patch_size / 2; }
};

Heatmap confidence_heatmap(const DetectorParams& params, const TrainingSample& scene,
                           const Patch& z, int stride, double offset_limit, int threads = 0);

// Region summary used by the placement-structure analysis: offset-constrained
// interior centers vs in-bounds centers hugging the image border.
struct HeatmapStats {
    double edge_mean = 0;
    double interior_mean = 0;
    double interior_frac_below = 0; // fraction of interior centers with conf < threshold
    int n_edge = 0;
    int n_interior = 0;
};
HeatmapStats heatmap_stats(const Heatmap& hm, double conf_threshold = 0.3);

// PGM rendering (255 = out-of-bounds border) plus a text sidecar with the
// lattice geometry, object box and offset region.
void save_heatmap(const Heatmap& hm, const std::string& path_base);

// Patch files: <base>.pgm with rounded 8-bit values for viewing plus
// <base>.txt with exact float values for lossless resume.
void save_patch(const Patch& z, const std::string& path_base);
Patch load_patch(const std::string& path_base);

// Comma-separated training curve: iteration, loss, mean train confidence.
void save_patch_curve(const std::vector<PatchCurvePoint>& curve, const std::string& path);

} // namespace patchlab

#endif
