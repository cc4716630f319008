// Acceptance suite: runs the full desk-scale pipeline once with the default
// configuration and checks every gate, printing one PASS/FAIL line per
// criterion. Exit code 0 only when all criteria hold.

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "patchlab/experiments.hpp"

using namespace patchlab;
using Clock = std::chrono::steady_clock;

namespace {

struct Gate {
    int number;
    bool pass;
    std::string detail;
};

std::vector<Gate> gates;

void record(int number, const char* name, bool pass, const std::string& detail) {
    gates.push_back({number, pass, detail});
    std::printf("%s criterion %d (%s): %s\n", pass ? "PASS" : "FAIL", number, name,
                detail.c_str());
    std::fflush(stdout);
}

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof buf, f, ap);
    va_end(ap);
    return buf;
}

ImageF random_image(int rows, int cols, std::mt19937_64& rng) {
    ImageF img(rows, cols, 1);
    std::uniform_real_distribution<double> val(0.0, 255.0);
    for (double& v : img.pix) v = val(rng);
    return img;
}

// ---- criterion 1: gradient correctness ----

void check_gradients() {
    std::mt19937_64 rng(20260811);

    // detector input gradients against central finite differences
    int det_checked = 0, det_bad = 0;
    double det_worst = 0;
    for (int trial = 0; trial < 3; ++trial) {
        DetectorParams p = make_detector_custom(300 + trial, 32, 32, 1, {4, 6}, 5);
        ImageF img = random_image(32, 32, rng);
        ImageF grad = input_gradient(p, img, {0, 1.0});
        const double h = 1e-3;
        for (int k = 0; k < 70; ++k) {
            const int r = static_cast<int>(rng() % 32), c = static_cast<int>(rng() % 32);
            ImageF plus = img, minus = img;
            plus.at(r, c) += h;
            minus.at(r, c) -= h;
            const double cp = confidence(p, plus), cm = confidence(p, minus);
            const double fd = (cp * cp - cm * cm) / (2 * h);
            const double g = grad.at(r, c);
            const double rel = std::abs(g - fd) / std::max({std::abs(g), std::abs(fd), 1e-10});
            det_worst = std::max(det_worst, rel);
            if (rel >= 1e-4) ++det_bad;
            ++det_checked;
        }
    }

    // EOT patch-loss gradients against central finite differences
    int eot_checked = 0, eot_bad = 0;
    double eot_worst = 0;
    for (int trial = 0; trial < 4; ++trial) {
        DetectorParams p = make_detector_custom(400 + trial, 32, 32, 1, {4, 6}, 5);
        std::vector<ImageF> images{random_image(32, 32, rng), random_image(32, 32, rng)};
        Patch z = random_noise_patch(8, 500 + trial);
        std::vector<std::vector<std::pair<int, int>>> placements{
            {{4 + trial, 6}, {12, 9}}, {{9, 13}}};
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
        for (int r = 0; r < z.size; ++r)
            for (int c = 0; c < z.size; ++c) {
                Patch plus = z, minus = z;
                plus.at(r, c) += h;
                minus.at(r, c) -= h;
                const double fd = (eot_loss(p, images, plus, placements) -
                                   eot_loss(p, images, minus, placements)) /
                                  (2 * h);
                const double g = grad[r * z.size + c];
                const double rel =
                    std::abs(g - fd) / std::max({std::abs(g), std::abs(fd), 1e-10});
                eot_worst = std::max(eot_worst, rel);
                if (rel >= 1e-3) ++eot_bad;
                ++eot_checked;
            }
    }

    record(1, "gradient correctness", det_bad == 0 && eot_bad == 0 && det_checked >= 200 &&
                                          eot_checked >= 200,
           fmt("detector: %d coords, worst rel %.2e; eot: %d coords, worst rel %.2e",
               det_checked, det_worst, eot_checked, eot_worst));
}

// ---- criterion 9: oracle equivalences ----

void check_oracles() {
    std::mt19937_64 rng(20260811);
    // nms vs brute-force greedy
    std::uniform_real_distribution<double> pos(0.0, 20.0), ext(0.5, 10.0), conf(0.0, 1.0);
    int nms_bad = 0;
    for (int rep = 0; rep < 1000; ++rep) {
        const int n = static_cast<int>(rng() % 7);
        std::vector<Detection> dets(n);
        for (Detection& d : dets) {
            d.box = {pos(rng), pos(rng), ext(rng), ext(rng)};
            d.confidence = conf(rng);
        }
        const double thr = 0.3 + 0.2 * (rep % 3);
        auto got = nms(dets, thr);
        auto want = oracles::reference_nms(dets, thr);
        if (got.size() != want.size()) {
            ++nms_bad;
            continue;
        }
        for (std::size_t i = 0; i < got.size(); ++i)
            if (got[i].confidence != want[i].confidence || got[i].box.cx != want[i].box.cx)
                ++nms_bad;
    }

    // blur vs direct nested-loop convolution on random small images
    std::uniform_real_distribution<double> val(0.0, 255.0), sig(0.3, 2.5);
    int conv_bad = 0;
    double conv_worst = 0;
    for (int rep = 0; rep < 25; ++rep) {
        const int rows = 6 + static_cast<int>(rng() % 11);
        const int cols = 6 + static_cast<int>(rng() % 11);
        ImageF f(rows, cols, 1);
        for (double& v : f.pix) v = val(rng);
        BlurKernel k = make_gaussian_kernel(rep % 2 ? 5 : 3, sig(rng));
        ImageF got = gaussian_blur(f, k);
        ImageF want = oracles::reference_convolve(f, k);
        for (std::size_t i = 0; i < got.pix.size(); ++i) {
            conv_worst = std::max(conv_worst, std::abs(got.pix[i] - want.pix[i]));
            if (std::abs(got.pix[i] - want.pix[i]) > 1e-9) ++conv_bad;
        }
    }

    // placement sampler vs exhaustive feasibility enumeration
    int place_bad = 0;
    for (int rep = 0; rep < 5; ++rep) {
        const Box obj{14.0 + rep, 15.0, 7.0, 9.0};
        const double limit = 2.0 + rep;
        EOTConfig pc;
        pc.transforms_per_step = 1000;
        pc.offset_limit = limit;
        pc.seed = 600 + rep;
        auto samples = sample_placements(pc, obj, 6, 32, 32);
        for (auto [i, j] : samples)
            if (!oracles::reference_feasible(i, j, 6, obj, 32, 32, limit)) ++place_bad;
        auto feasible = enumerate_feasible(obj, 6, 32, 32, limit);
        int count = 0;
        for (int i = 0; i + 6 <= 32; ++i)
            for (int j = 0; j + 6 <= 32; ++j)
                if (oracles::reference_feasible(i, j, 6, obj, 32, 32, limit)) ++count;
        if (count != static_cast<int>(feasible.size())) ++place_bad;
    }

    record(9, "oracle equivalences", nms_bad == 0 && conv_bad == 0 && place_bad == 0,
           fmt("nms mismatches %d/1000; conv worst abs err %.2e; placement mismatches %d",
               nms_bad, conv_worst, place_bad));
}

// ---- criterion 10: determinism ----

void check_determinism(const Config& cfg, const DetectorParams& det, const Patch& patch) {
    bool ok = true;
    std::string note;

    Dataset d1 = build_dataset(cfg);
    Dataset d2 = build_dataset(cfg);
    for (std::size_t k = 0; k < d1.train.size(); ++k)
        if (d1.train[k].image.pix != d2.train[k].image.pix) ok = false;
    if (!ok) note += "dataset differs; ";

    // reduced-size training reruns, compared through their serialized forms
    Config small = cfg;
    small.set("det_epochs", "8");
    small.set("patch_iterations", "30");
    small.set("eot_transforms", "8");
    DetectorTrainResult t1 = train_default_detector(small, d1);
    DetectorTrainResult t2 = train_default_detector(small, d1);
    for (std::size_t li = 0; li < t1.params.layers.size(); ++li)
        if (t1.params.layers[li].w != t2.params.layers[li].w ||
            t1.params.layers[li].b != t2.params.layers[li].b) {
            ok = false;
            note += "detector training differs; ";
            break;
        }
    PatchTrainResult p1 = train_default_patch(small, d1, t1.params);
    PatchTrainResult p2 = train_default_patch(small, d1, t2.params);
    if (p1.patch.v != p2.patch.v) {
        ok = false;
        note += "patch training differs; ";
    }

    // full-scale evaluation reruns on the real artifacts
    Config evalcfg = cfg;
    evalcfg.set("eval_placements", "3");
    ExperimentReport r1 = run_noise_patch_baseline(evalcfg, d1, det, patch);
    ExperimentReport r2 = run_noise_patch_baseline(evalcfg, d1, det, patch);
    if (report_to_csv(r1) != report_to_csv(r2)) {
        ok = false;
        note += "report differs; ";
    }
    AttackDetectionResult a1 = run_attack_detection(cfg, det, patch);
    AttackDetectionResult a2 = run_attack_detection(cfg, det, patch);
    if (a1.threshold.tau != a2.threshold.tau || a1.ranking_quality != a2.ranking_quality) {
        ok = false;
        note += "attack detection differs; ";
    }
    if (ok) note = "dataset, detector, patch, reports and scores all bit-identical on rerun";
    record(10, "determinism", ok, note);
}

} // namespace

int main() {
    const auto suite_start = Clock::now();
    Config cfg = Config::defaults();

    std::printf("== patchlab acceptance suite (seed %llu) ==\n",
                static_cast<unsigned long long>(cfg.get_u64("seed")));

    check_gradients();
    check_oracles();

    // ---- shared pipeline ----
    const int threads = cfg.get_int("threads");
    Dataset data = build_dataset(cfg);
    auto backgrounds = build_background_scenes(cfg, cfg.get_int("n_background"), "background");

    auto t0 = Clock::now();
    DetectorTrainResult det_result = train_default_detector(cfg, data);
    const DetectorParams& det = det_result.params;
    std::printf("-- detector trained in %.1f s (final loss %.4f)\n", seconds_since(t0),
                det_result.loss_curve.back());

    EvalCondition clean;
    const double clean_test = mean_reported_confidence(det, data.test, clean, threads);
    const double clean_train = mean_reported_confidence(det, data.train, clean, threads);
    const double bg_fp = detection_rate(det, backgrounds, threads);
    std::printf("-- clean means: train %.4f test %.4f, background fp rate %.3f\n", clean_train,
                clean_test, bg_fp);
    record(2, "detector quality gate", clean_test >= 0.9 && bg_fp <= 0.10,
           fmt("clean test mean %.4f (>= 0.9), background false detections %.1f%% (<= 10%%)",
               clean_test, 100.0 * bg_fp));

    // ---- attack ----
    t0 = Clock::now();
    PatchTrainResult patch_result = train_default_patch(cfg, data, det);
    const double attack_seconds = seconds_since(t0);
    const Patch& patch = patch_result.patch;

    EvalCondition perturbed = clean;
    perturbed.patch = &patch;
    perturbed.placements_per_image = cfg.get_int("eval_placements");
    perturbed.placement_seed = subseed(cfg.get_u64("seed"), "eval-placements");
    perturbed.offset_limit = cfg.get_double("offset_limit");
    const double patched_test = mean_reported_confidence(det, data.test, perturbed, threads);
    record(3, "attack efficacy",
           patched_test < 0.3 && attack_seconds <= 300.0,
           fmt("patched test mean %.4f (< 0.3), trained in %.1f s (<= 300 s)", patched_test,
               attack_seconds));

    // ---- noise-patch baseline ----
    const Patch noise_patch =
        random_noise_patch(patch.size, subseed(cfg.get_u64("seed"), "noise-patch"));
    EvalCondition noise_cond = perturbed;
    noise_cond.patch = &noise_patch;
    const double noise_test = mean_reported_confidence(det, data.test, noise_cond, threads);
    const double drop_trained = clean_test - patched_test;
    const double drop_noise = clean_test - noise_test;
    record(4, "noise-patch baseline",
           drop_trained >= 5.0 * drop_noise && std::abs(noise_test - clean_test) <= 0.1,
           fmt("trained drop %.4f vs noise drop %.4f (>= 5x), noise row %.4f within 0.1 of clean "
               "%.4f",
               drop_trained, drop_noise, noise_test, clean_test));

    // ---- noise defense ineffectiveness ----
    NoiseParams np;
    np.mu = cfg.get_double("noise_mu");
    np.sigma = cfg.get_double("noise_sigma");
    np.seed = subseed(cfg.get_u64("seed"), "defense-noise");
    EvalCondition pert_noise = perturbed;
    pert_noise.noise = np;
    const double pert_noise_test = mean_reported_confidence(det, data.test, pert_noise, threads);
    record(5, "noise defense stays ineffective", pert_noise_test < 0.3,
           fmt("perturbed+noise (mu=%g sigma=%g) test mean %.4f (< 0.3)", np.mu, np.sigma,
               pert_noise_test));

    // ---- blur defense efficacy ----
    EvalCondition clean_blur = clean;
    clean_blur.blur = true;
    clean_blur.blur_sigma = cfg.get_double("blur_sigma");
    clean_blur.blur_ksize = cfg.get_int("blur_kernel");
    const double clean_blur_test = mean_reported_confidence(det, data.test, clean_blur, threads);
    EvalCondition pert_blur = perturbed;
    pert_blur.blur = true;
    pert_blur.blur_sigma = cfg.get_double("blur_sigma");
    pert_blur.blur_ksize = cfg.get_int("blur_kernel");
    const double pert_blur_test = mean_reported_confidence(det, data.test, pert_blur, threads);
    record(6, "blur defense efficacy",
           pert_blur_test >= 0.8 * clean_test && std::abs(clean_blur_test - clean_test) <= 0.05,
           fmt("perturbed+blur %.4f (>= 0.8 x clean %.4f), clean+blur %.4f within 0.05 of clean",
               pert_blur_test, clean_test, clean_blur_test));

    // ---- placement structure ----
    t0 = Clock::now();
    double edge_sum = 0, interior_sum = 0;
    int edge_n = 0, interior_n = 0, below_n = 0;
    for (const TrainingSample& scene : data.test) {
        Heatmap hm = run_heatmap(cfg, scene, det, patch);
        HeatmapStats st = heatmap_stats(hm, cfg.get_double("conf_threshold"));
        edge_sum += st.edge_mean * st.n_edge;
        edge_n += st.n_edge;
        interior_sum += st.interior_mean * st.n_interior;
        interior_n += st.n_interior;
        below_n += static_cast<int>(std::lround(st.interior_frac_below * st.n_interior));
    }
    const double edge_mean = edge_sum / edge_n;
    const double interior_mean = interior_sum / interior_n;
    const double frac_below = static_cast<double>(below_n) / interior_n;
    std::printf("-- heatmaps over %zu scenes in %.1f s (%d edge, %d interior centers)\n",
                data.test.size(), seconds_since(t0), edge_n, interior_n);
    record(7, "placement structure", edge_mean > interior_mean && frac_below >= 0.5,
           fmt("edge mean %.4f > interior mean %.4f; %.1f%% of interior centers < 0.3",
               edge_mean, interior_mean, 100.0 * frac_below));

    // ---- attack detection ----
    AttackDetectionResult ad = run_attack_detection(cfg, det, patch);
    const int eval_clean_n = ad.tn + ad.fp, eval_att_n = ad.tp + ad.fn;
    record(8, "blur-delta attack detection",
           ad.ranking_quality >= 0.95 && eval_clean_n >= 20 && eval_att_n >= 20,
           fmt("ranking quality %.4f (>= 0.95) on %d clean + %d attacked held-out images; "
               "tau %.4f from disjoint calibration; confusion tp=%d fn=%d tn=%d fp=%d",
               ad.ranking_quality, eval_clean_n, eval_att_n, ad.threshold.tau, ad.tp, ad.fn,
               ad.tn, ad.fp));

    // ---- determinism ----
    check_determinism(cfg, det, patch);

    int failures = 0;
    for (const Gate& g : gates)
        if (!g.pass) ++failures;
    std::printf("== %zu criteria checked, %d failed, %.1f s total ==\n", gates.size(), failures,
                seconds_since(suite_start));
    return failures == 0 ? 0 : 1;
}
