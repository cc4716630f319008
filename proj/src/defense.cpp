#include "patchlab/defense.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

namespace patchlab {

ImageF defend_noise(const ImageF& img, const NoiseParams& params) {
    ImageF out = add_gaussian_noise(img, params);
    for (double& v : out.pix) v = std::clamp(v, 0.0, 255.0);
    return out;
}

ImageF defend_blur(const ImageF& img, double sigma, int ksize) {
    return gaussian_blur(img, make_gaussian_kernel(ksize, sigma));
}

AttackScore attack_score(const DetectorParams& params, const ImageF& img, double blur_sigma,
                         int blur_ksize) {
    AttackScore s;
    s.clean_conf = reported_confidence(params, to_u8(img));
    s.blurred_conf = reported_confidence(params, to_u8(defend_blur(img, blur_sigma, blur_ksize)));
    s.delta = s.blurred_conf - s.clean_conf;
    return s;
}

namespace {

double balanced_accuracy(const std::vector<double>& clean, const std::vector<double>& attacked,
                         double tau) {
    int tn = 0, tp = 0;
    for (double d : clean)
        if (!(d > tau)) ++tn;
    for (double d : attacked)
        if (d > tau) ++tp;
    return 0.5 * (static_cast<double>(tn) / clean.size() + static_cast<double>(tp) / attacked.size());
}

} // namespace

DetectorThreshold calibrate_threshold(const std::vector<AttackScore>& scores_clean,
                                      const std::vector<AttackScore>& scores_attacked) {
    if (scores_clean.empty() || scores_attacked.empty())
        throw std::invalid_argument("calibrate_threshold: both score lists must be non-empty");
    std::vector<double> clean, attacked, all;
    for (const AttackScore& s : scores_clean) clean.push_back(s.delta);
    for (const AttackScore& s : scores_attacked) attacked.push_back(s.delta);
    all = clean;
    all.insert(all.end(), attacked.begin(), attacked.end());
    std::sort(all.begin(), all.end());
    all.erase(std::unique(all.begin(), all.end()), all.end());

    std::vector<double> candidates;
    for (std::size_t k = 0; k + 1 < all.size(); ++k)
        candidates.push_back(0.5 * (all[k] + all[k + 1]));
    // the top value itself classifies nothing as attacked (strict >), which
    // guarantees balanced accuracy >= 0.5 even on inverted score lists
    candidates.push_back(all.back());

    DetectorThreshold th;
    th.n_clean = static_cast<int>(clean.size());
    th.n_attacked = static_cast<int>(attacked.size());
    double best = -1.0;
    for (double tau : candidates) {
        const double ba = balanced_accuracy(clean, attacked, tau);
        if (ba > best) { // strict: ties keep the earlier (smaller) tau
            best = ba;
            th.tau = tau;
        }
    }
    return th;
}

bool classify_attacked(const AttackScore& score, const DetectorThreshold& th) {
    return score.delta > th.tau;
}

void save_attack_scores(const std::vector<std::string>& ids,
                        const std::vector<AttackScore>& scores, const std::vector<int>& labels,
                        const std::string& path) {
    if (ids.size() != scores.size() || labels.size() != scores.size())
        throw std::invalid_argument("save_attack_scores: length mismatch");
    std::ofstream out(path);
    if (!out) throw io_error("cannot open " + path + " for writing");
    out << "image,clean_conf,blurred_conf,delta,label\n";
    char buf[160];
    for (std::size_t k = 0; k < scores.size(); ++k) {
        std::snprintf(buf, sizeof buf, "%s,%.17g,%.17g,%.17g,%d", ids[k].c_str(),
                      scores[k].clean_conf, scores[k].blurred_conf, scores[k].delta, labels[k]);
        out << buf << "\n";
    }
    if (!out) throw io_error("write failed: " + path);
}

} // namespace patchlab
