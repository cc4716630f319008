#ifndef PATCHLAB_DEFENSE_HPP
#define PATCHLAB_DEFENSE_HPP

#include <string>
#include <vector>

#include "patchlab/detector.hpp"
#include "patchlab/image.hpp"

namespace patchlab {

// Additive Gaussian noise clamped back into [0,255].
ImageF defend_noise(const ImageF& img, const NoiseParams& params);

// The 3x3 Gaussian blur countermeasure.
ImageF defend_blur(const ImageF& img, double sigma = 0.8, int ksize = 3);

// Blur-delta predictor: adversarial patches collapse under blur, so a large
// positive delta flags an attacked image.
struct AttackScore {
    double clean_conf = 0;
    double blurred_conf = 0;
    double delta = 0; // blurred_conf - clean_conf
};

// Black-box scoring: only the detector's reported output is used.
AttackScore attack_score(const DetectorParams& params, const ImageF& img, double blur_sigma = 0.8,
                         int blur_ksize = 3);

struct DetectorThreshold {
    double tau = 0;
    int n_clean = 0;
    int n_attacked = 0;
    std::uint64_t seed = 0; // calibration provenance
};

// tau = argmax balanced accuracy over midpoints of the sorted deltas, ties
// broken toward the smaller tau. Both lists must be non-empty.
DetectorThreshold calibrate_threshold(const std::vector<AttackScore>& scores_clean,
                                      const std::vector<AttackScore>& scores_attacked);

// Strict: delta > tau.
bool classify_attacked(const AttackScore& score, const DetectorThreshold& th);

// Batch emission: image id, clean_conf, blurred_conf, delta, label.
void save_attack_scores(const std::vector<std::string>& ids,
                        const std::vector<AttackScore>& scores, const std::vector<int>& labels,
                        const std::string& path);

} // namespace patchlab

#endif
