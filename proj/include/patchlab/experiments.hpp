#ifndef PATCHLAB_EXPERIMENTS_HPP
#define PATCHLAB_EXPERIMENTS_HPP

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "patchlab/attack.hpp"
#include "patchlab/config.hpp"
#include "patchlab/defense.hpp"
#include "patchlab/detector.hpp"
#include "patchlab/report.hpp"
#include "patchlab/scene.hpp"

namespace patchlab {

// ---- pipeline stages, all pure functions of (config, inputs) ----

SceneSpec scene_spec_from_config(const Config& cfg, bool contains_person = true);

// The 32/3-style person dataset ("dataset" seed stream).
Dataset build_dataset(const Config& cfg);

// Extra scene pools on their own named seed streams.
std::vector<TrainingSample> build_person_scenes(const Config& cfg, int count,
                                                std::string_view stream);
std::vector<TrainingSample> build_background_scenes(const Config& cfg, int count,
                                                    std::string_view stream);

DetectorTrainConfig detector_train_config_from(const Config& cfg);
EOTConfig eot_config_from(const Config& cfg);
FGSMConfig fgsm_config_from(const Config& cfg);

// make_detector + train_detector with the config's named seed streams.
DetectorTrainResult train_default_detector(const Config& cfg, const Dataset& data);

// train_patch at cfg's patch size with the config's named seed streams.
PatchTrainResult train_default_patch(const Config& cfg, const Dataset& data,
                                     const DetectorParams& det);

// ---- measurement ----

// How an evaluation condition transforms each scene before the detector runs:
// optional patch at sampled feasible placements, then optional noise, then
// optional blur, then 8-bit quantization.
struct EvalCondition {
    const Patch* patch = nullptr;
    int placements_per_image = 1;
    std::uint64_t placement_seed = 0;
    double offset_limit = 6.0;
    std::optional<NoiseParams> noise; // seed field is a stream base, varied per image
    bool blur = false;
    double blur_sigma = 0.8;
    int blur_ksize = 3;
};

// Mean reported confidence (top post-NMS C, or 0 when nothing is detected)
// over all scenes x placements.
double mean_reported_confidence(const DetectorParams& det,
                                const std::vector<TrainingSample>& scenes,
                                const EvalCondition& cond, int threads = 0);

// Fraction of scenes producing at least one detection.
double detection_rate(const DetectorParams& det, const std::vector<TrainingSample>& scenes,
                      int threads = 0);

// ---- experiments (table/figure analogs) ----

// Patch-size sweep plus a no-patch row; snapshot records the smallest size
// whose test mean drops below conf_threshold.
ExperimentReport run_patch_size_sweep(const Config& cfg, const Dataset& data,
                                      const DetectorParams& det);

// Clean / noise-patch / trained-patch comparison.
ExperimentReport run_noise_patch_baseline(const Config& cfg, const Dataset& data,
                                          const DetectorParams& det, const Patch& trained);

// Clean / clean+noise / perturbed / perturbed+noise at the configured mu and
// sigma, plus the full mu x sigma grid as appendix rows.
ExperimentReport run_noise_defense(const Config& cfg, const Dataset& data,
                                   const DetectorParams& det, const Patch& trained);

// Clean / clean+blur / perturbed / perturbed+blur.
ExperimentReport run_blur_defense(const Config& cfg, const Dataset& data,
                                  const DetectorParams& det, const Patch& trained);

// Learning-rate x transformation-count grid at equal compute per cell.
ExperimentReport run_hyperparam_sweep(const Config& cfg, const Dataset& data,
                                      const DetectorParams& det);

// Placement heatmap for one scene at the config's stride and offset limit.
Heatmap run_heatmap(const Config& cfg, const TrainingSample& scene, const DetectorParams& det,
                    const Patch& trained);

// Blur-delta attack predictor: calibrate tau on one split, evaluate on a
// disjoint held-out split.
struct AttackDetectionResult {
    DetectorThreshold threshold;
    std::vector<std::string> ids;     // calibration + evaluation, labeled below
    std::vector<AttackScore> scores;
    std::vector<int> labels;          // 1 = attacked
    std::vector<int> is_eval;         // 1 = held-out evaluation split
    int tp = 0, fp = 0, tn = 0, fn = 0;
    double ranking_quality = 0; // P[random attacked delta > random clean delta]
};

AttackDetectionResult run_attack_detection(const Config& cfg, const DetectorParams& det,
                                           const Patch& trained);

std::string attack_detection_summary(const AttackDetectionResult& r);

// Scene export for gen-data: PGM files plus labels.csv per split.
void export_scenes(const std::vector<TrainingSample>& scenes, const std::string& dir,
                   const std::string& prefix);

} // namespace patchlab

#endif
