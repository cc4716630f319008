#ifndef PATCHLAB_DETECTOR_HPP
#define PATCHLAB_DETECTOR_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "patchlab/image.hpp"

namespace patchlab {

// Axis-aligned box, center format, pixel units.
struct Box {
    double cx = 0, cy = 0, w = 0, h = 0;

    double x0() const { return cx - w / 2; }
    double x1() const { return cx + w / 2; }
    double y0() const { return cy - h / 2; }
    double y1() const { return cy + h / 2; }
};

// Intersection area / union area, in [0,1]. Degenerate (zero-area) unions give 0.
double iou(const Box& a, const Box& b);

struct GridSpec {
    int cell_rows = 12;
    int cell_cols = 12;
    int anchors_per_cell = 1;
    int classes = 1;
};

struct ConvLayer {
    int in_ch = 0, out_ch = 0, ksize = 1, stride = 1, pad = 0;
    std::vector<double> w; // [out][in][k][k]
    std::vector<double> b; // [out]
};

// Weights of the miniature grid detector. The last layer is the linear 1x1
// head emitting (4 box offsets, objectness logit, class logits) per cell;
// every layer before it is followed by a leaky ReLU.
struct DetectorParams {
    int input_rows = 0, input_cols = 0, input_channels = 1;
    GridSpec grid;
    double leak = 0.1;
    std::uint64_t init_seed = 0;
    std::vector<ConvLayer> layers;

    int values_per_cell() const { return 5 + grid.classes; }
    int stride_rows() const { return input_rows / grid.cell_rows; }
    int stride_cols() const { return input_cols / grid.cell_cols; }
};

// Default architecture: 3 stride-2 convolutions (widths 8/16/32) and a 1x1
// head. Input dimensions must be divisible by the total stride (8).
DetectorParams make_detector(std::uint64_t seed, int input_rows = 96, int input_cols = 96,
                             int classes = 1);

// Arbitrary layer stack for small test fixtures. `widths` are hidden channel
// counts, one stride-2 convolution each.
DetectorParams make_detector_custom(std::uint64_t seed, int input_rows, int input_cols,
                                    int classes, const std::vector<int>& widths, int ksize);

// Raw per-cell network output, before any squashing.
// Channel order per cell: tx, ty, tw, th, objectness logit, class logits.
struct GridOutput {
    int rows = 0, cols = 0, values_per_cell = 0;
    std::vector<double> v;

    double at(int r, int c, int k) const {
        return v[(static_cast<std::size_t>(r) * cols + c) * values_per_cell + k];
    }
    double& at(int r, int c, int k) {
        return v[(static_cast<std::size_t>(r) * cols + c) * values_per_cell + k];
    }
};

// Deterministic forward pass. Throws std::invalid_argument on shape mismatch.
GridOutput forward(const DetectorParams& params, const ImageF& img);

// Smooth scene confidence: max over cells of sigmoid(objectness) * class
// probability, computed before thresholding/NMS so gradients flow.
double confidence(const DetectorParams& params, const ImageF& img, int class_id = 0);

// Scalar the attack differentiates: loss = scale * confidence(class_id)^2.
struct LossSpec {
    int class_id = 0;
    double scale = 1.0;
};

// Exact reverse-mode gradient of the LossSpec scalar w.r.t. every input pixel.
ImageF input_gradient(const DetectorParams& params, const ImageF& img, const LossSpec& spec);

// Both the smooth confidence and the gradient from one shared pass.
struct ConfGrad {
    double conf = 0;
    ImageF grad;
};
ConfGrad confidence_and_gradient(const DetectorParams& params, const ImageF& img,
                                 const LossSpec& spec);

struct Detection {
    Box box;
    double confidence = 0;
    int class_id = 0;
    std::vector<double> class_probs;
};

// Greedy NMS: repeatedly keep the highest-confidence box, drop boxes with
// IoU > threshold against it. Requires 0 < iou_threshold < 1.
std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold);

// Decode grid to boxes, drop C < conf_threshold, then NMS.
std::vector<Detection> detect(const DetectorParams& params, const Image8& img,
                              double conf_threshold = 0.3, double iou_threshold = 0.5);

// Table semantics for mean confidences: top surviving detection's C, or 0
// when nothing is detected.
double reported_confidence(const DetectorParams& params, const Image8& img,
                           double conf_threshold = 0.3, double iou_threshold = 0.5);

struct TruthBox {
    Box box;
    int class_id = 0;
};

struct TrainingSample {
    Image8 image;
    std::vector<TruthBox> truth;
};

// On-the-fly training augmentation: occluder blocks placed like the attack's
// patches, mild blur and mild pixel noise. Makes the detector robust to
// benign clutter without ever showing it an optimized adversarial pattern.
// An occluder that hides more than label_cover of a figure's area drops that
// figure's label: a person the block fully obscures is not a detection.
struct AugmentConfig {
    double occluder_prob = 0.5;
    int occluder_min = 15;
    int occluder_max = 27;
    double occluder_gap_limit = 6.0; // same near-object placement rule as the attack
    double label_cover = 0.6;
    double blur_prob = 0.25;
    double blur_sigma = 0.8;
    double noise_prob = 0.25;
    double noise_sigma_max = 10.0;
};

struct DetectorTrainConfig {
    int epochs = 150;
    double learning_rate = 0.1;
    int batch_size = 8;
    std::uint64_t seed = 1;
    double lambda_pos = 5.0;  // objectness BCE weight, cells holding a truth center
    double lambda_neg = 0.5;  // objectness BCE weight, all other cells
    double lambda_box = 2.0;  // squared error on box offsets, positive cells
    AugmentConfig aug;
    int threads = 0; // 0 = hardware default
};

struct DetectorTrainResult {
    DetectorParams params;
    std::vector<double> loss_curve; // mean training loss per epoch
};

// Plain mini-batch gradient descent on the per-cell loss. Deterministic for
// a fixed seed (including the augmentation stream).
DetectorTrainResult train_detector(const std::vector<TrainingSample>& dataset,
                                   const DetectorParams& init, const DetectorTrainConfig& cfg);

// Flat little-endian float32 blob with a text header; round-trips bit-exactly.
void save_detector(const DetectorParams& params, const std::string& path);
DetectorParams load_detector(const std::string& path);

} // namespace patchlab

#endif
