#include "patchlab/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "parallel.hpp"

namespace patchlab {

SceneSpec scene_spec_from_config(const Config& cfg, bool contains_person) {
    SceneSpec spec;
    spec.rows = cfg.get_int("image_rows");
    spec.cols = cfg.get_int("image_cols");
    spec.contains_person = contains_person;
    spec.fig_h_min = cfg.get_int("fig_h_min");
    spec.fig_h_max = cfg.get_int("fig_h_max");
    spec.fig_w_min = cfg.get_int("fig_w_min");
    spec.fig_w_max = cfg.get_int("fig_w_max");
    spec.fig_margin = cfg.get_int("fig_margin");
    spec.fig_intensity_min = cfg.get_double("fig_intensity_min");
    spec.fig_intensity_max = cfg.get_double("fig_intensity_max");
    spec.bg_lo = cfg.get_double("bg_lo");
    spec.bg_hi = cfg.get_double("bg_hi");
    spec.bg_cell = cfg.get_int("bg_cell");
    return spec;
}

Dataset build_dataset(const Config& cfg) {
    return generate_dataset(scene_spec_from_config(cfg), cfg.get_int("n_train"),
                            cfg.get_int("n_test"), subseed(cfg.get_u64("seed"), "dataset"));
}

std::vector<TrainingSample> build_person_scenes(const Config& cfg, int count,
                                                std::string_view stream) {
    const SceneSpec spec = scene_spec_from_config(cfg);
    std::mt19937_64 rng(subseed(cfg.get_u64("seed"), stream));
    std::vector<TrainingSample> out;
    out.reserve(count);
    for (int k = 0; k < count; ++k) out.push_back(generate_scene(spec, rng));
    return out;
}

std::vector<TrainingSample> build_background_scenes(const Config& cfg, int count,
                                                    std::string_view stream) {
    const SceneSpec spec = scene_spec_from_config(cfg, false);
    std::mt19937_64 rng(subseed(cfg.get_u64("seed"), stream));
    std::vector<TrainingSample> out;
    out.reserve(count);
    for (int k = 0; k < count; ++k) out.push_back(generate_scene(spec, rng));
    return out;
}

DetectorTrainConfig detector_train_config_from(const Config& cfg) {
    DetectorTrainConfig tc;
    tc.epochs = cfg.get_int("det_epochs");
    tc.learning_rate = cfg.get_double("det_lr");
    tc.batch_size = cfg.get_int("det_batch");
    tc.seed = subseed(cfg.get_u64("seed"), "detector-train");
    tc.lambda_pos = cfg.get_double("det_lambda_pos");
    tc.lambda_neg = cfg.get_double("det_lambda_neg");
    tc.lambda_box = cfg.get_double("det_lambda_box");
    tc.aug.occluder_prob = cfg.get_double("aug_occluder_prob");
    tc.aug.occluder_min = cfg.get_int("aug_occluder_min");
    tc.aug.occluder_max = cfg.get_int("aug_occluder_max");
    tc.aug.occluder_gap_limit = cfg.get_double("offset_limit");
    tc.aug.max_cover = cfg.get_double("aug_max_cover");
    tc.aug.blur_prob = cfg.get_double("aug_blur_prob");
    tc.aug.blur_sigma = cfg.get_double("blur_sigma");
    tc.aug.noise_prob = cfg.get_double("aug_noise_prob");
    tc.aug.noise_sigma_max = cfg.get_double("aug_noise_sigma_max");
    tc.threads = cfg.get_int("threads");
    return tc;
}

EOTConfig eot_config_from(const Config& cfg) {
    EOTConfig eot;
    eot.transforms_per_step = cfg.get_int("eot_transforms");
    eot.offset_limit = cfg.get_double("offset_limit");
    eot.seed = subseed(cfg.get_u64("seed"), "eot");
    return eot;
}

FGSMConfig fgsm_config_from(const Config& cfg) {
    FGSMConfig f;
    f.epsilon = cfg.get_double("patch_epsilon");
    f.alpha = cfg.get_double("patch_alpha");
    f.iterations = cfg.get_int("patch_iterations");
    return f;
}

DetectorTrainResult train_default_detector(const Config& cfg, const Dataset& data) {
    const DetectorParams init = make_detector(subseed(cfg.get_u64("seed"), "detector-init"),
                                              cfg.get_int("image_rows"), cfg.get_int("image_cols"));
    return train_detector(data.train, init, detector_train_config_from(cfg));
}

PatchTrainResult train_default_patch(const Config& cfg, const Dataset& data,
                                     const DetectorParams& det) {
    return train_patch(det, data.train, cfg.get_int("patch_size"), eot_config_from(cfg),
                       fgsm_config_from(cfg), subseed(cfg.get_u64("seed"), "patch-init"),
                       cfg.get_int("threads"));
}

// ---------------------------------------------------------------------------
// measurement

double mean_reported_confidence(const DetectorParams& det,
                                const std::vector<TrainingSample>& scenes,
                                const EvalCondition& cond, int threads) {
    if (scenes.empty()) throw std::invalid_argument("mean_reported_confidence: no scenes");
    struct Job {
        const TrainingSample* scene;
        int placement_i = -1, placement_j = -1;
        std::uint64_t noise_seed = 0;
    };
    std::vector<Job> jobs;
    for (std::size_t si = 0; si < scenes.size(); ++si) {
        const TrainingSample& s = scenes[si];
        if (cond.patch) {
            if (s.truth.empty())
                throw std::invalid_argument("mean_reported_confidence: patched eval needs truth boxes");
            EOTConfig pc;
            pc.transforms_per_step = cond.placements_per_image;
            pc.offset_limit = cond.offset_limit;
            pc.seed = splitmix64(cond.placement_seed ^ (0x9e3779b97f4a7c15ULL * (si + 1)));
            auto placements = sample_placements(pc, s.truth.front().box, cond.patch->size,
                                                s.image.rows, s.image.cols);
            for (std::size_t k = 0; k < placements.size(); ++k) {
                Job j;
                j.scene = &s;
                j.placement_i = placements[k].first;
                j.placement_j = placements[k].second;
                if (cond.noise)
                    j.noise_seed = splitmix64(cond.noise->seed ^ (si * 1315423911ULL + k + 1));
                jobs.push_back(j);
            }
        } else {
            Job j;
            j.scene = &s;
            if (cond.noise) j.noise_seed = splitmix64(cond.noise->seed ^ (si * 1315423911ULL + 1));
            jobs.push_back(j);
        }
    }
    const int total = static_cast<int>(jobs.size());
    constexpr int kChunks = 16;
    std::vector<double> sums(kChunks, 0.0);
    for_chunks(total, kChunks, threads, [&](int chunk, int begin, int end) {
        for (int k = begin; k < end; ++k) {
            const Job& job = jobs[k];
            ImageF img = to_float(job.scene->image);
            if (cond.patch) {
                const PlacementMask m = make_mask(job.placement_i, job.placement_j,
                                                  cond.patch->size, img.rows, img.cols);
                img = apply_patch(img, *cond.patch, m);
            }
            if (cond.noise) {
                NoiseParams np = *cond.noise;
                np.seed = job.noise_seed;
                img = defend_noise(img, np);
            }
            if (cond.blur) img = defend_blur(img, cond.blur_sigma, cond.blur_ksize);
            sums[chunk] += reported_confidence(det, to_u8(img));
        }
    });
    double sum = 0.0;
    for (double s : sums) sum += s;
    return sum / total;
}

double detection_rate(const DetectorParams& det, const std::vector<TrainingSample>& scenes,
                      int threads) {
    if (scenes.empty()) return 0.0;
    const int total = static_cast<int>(scenes.size());
    constexpr int kChunks = 16;
    std::vector<int> counts(kChunks, 0);
    for_chunks(total, kChunks, threads, [&](int chunk, int begin, int end) {
        for (int k = begin; k < end; ++k)
            if (!detect(det, scenes[k].image).empty()) ++counts[chunk];
    });
    int hits = 0;
    for (int c : counts) hits += c;
    return static_cast<double>(hits) / total;
}

// ---------------------------------------------------------------------------
// experiments

namespace {

std::string fmt(double v, const char* f = "%g") {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

ReportRow measure_row(const std::string& label, const DetectorParams& det, const Dataset& data,
                      const EvalCondition& cond, int threads) {
    ReportRow row;
    row.label = label;
    row.train_conf = mean_reported_confidence(det, data.train, cond, threads);
    row.test_conf = mean_reported_confidence(det, data.test, cond, threads);
    return row;
}

EvalCondition eval_condition_base(const Config& cfg) {
    EvalCondition cond;
    cond.placements_per_image = cfg.get_int("eval_placements");
    cond.placement_seed = subseed(cfg.get_u64("seed"), "eval-placements");
    cond.offset_limit = cfg.get_double("offset_limit");
    cond.blur_sigma = cfg.get_double("blur_sigma");
    cond.blur_ksize = cfg.get_int("blur_kernel");
    return cond;
}

} // namespace

ExperimentReport run_patch_size_sweep(const Config& cfg, const Dataset& data,
                                      const DetectorParams& det) {
    const int threads = cfg.get_int("threads");
    ExperimentReport report;
    report.name = "patch-size-sweep";
    report.seed = cfg.get_u64("seed");
    report.config = cfg.snapshot();

    EvalCondition clean = eval_condition_base(cfg);
    report.rows.push_back(measure_row("No Patch", det, data, clean, threads));

    const double threshold = cfg.get_double("conf_threshold");
    int smallest_success = -1;
    for (int size : cfg.get_int_list("sweep_sizes")) {
        Config sized = cfg;
        sized.set("patch_size", std::to_string(size));
        const PatchTrainResult r = train_default_patch(sized, data, det);
        EvalCondition cond = eval_condition_base(cfg);
        cond.patch = &r.patch;
        ReportRow row = measure_row(std::to_string(size) + "x" + std::to_string(size), det, data,
                                    cond, threads);
        if (row.test_conf < threshold && smallest_success < 0) smallest_success = size;
        report.rows.push_back(std::move(row));
    }
    report.add_config("smallest_successful_size",
                      smallest_success < 0 ? "none" : std::to_string(smallest_success));
    return report;
}

ExperimentReport run_noise_patch_baseline(const Config& cfg, const Dataset& data,
                                          const DetectorParams& det, const Patch& trained) {
    const int threads = cfg.get_int("threads");
    ExperimentReport report;
    report.name = "noise-patch-baseline";
    report.seed = cfg.get_u64("seed");
    report.config = cfg.snapshot();

    const Patch noise_patch =
        random_noise_patch(trained.size, subseed(cfg.get_u64("seed"), "noise-patch"));

    EvalCondition clean = eval_condition_base(cfg);
    report.rows.push_back(measure_row("Original image", det, data, clean, threads));

    EvalCondition with_noise_patch = eval_condition_base(cfg);
    with_noise_patch.patch = &noise_patch;
    report.rows.push_back(measure_row("Image + noise patch", det, data, with_noise_patch, threads));

    EvalCondition perturbed = eval_condition_base(cfg);
    perturbed.patch = &trained;
    report.rows.push_back(measure_row("Perturbed image", det, data, perturbed, threads));
    return report;
}

ExperimentReport run_noise_defense(const Config& cfg, const Dataset& data,
                                   const DetectorParams& det, const Patch& trained) {
    const int threads = cfg.get_int("threads");
    ExperimentReport report;
    report.name = "noise-defense";
    report.seed = cfg.get_u64("seed");
    report.config = cfg.snapshot();

    NoiseParams noise;
    noise.mu = cfg.get_double("noise_mu");
    noise.sigma = cfg.get_double("noise_sigma");
    noise.seed = subseed(cfg.get_u64("seed"), "defense-noise");

    EvalCondition clean = eval_condition_base(cfg);
    report.rows.push_back(measure_row("Unmodified", det, data, clean, threads));

    EvalCondition clean_noise = eval_condition_base(cfg);
    clean_noise.noise = noise;
    report.rows.push_back(measure_row("Image + noise", det, data, clean_noise, threads));

    EvalCondition perturbed = eval_condition_base(cfg);
    perturbed.patch = &trained;
    report.rows.push_back(measure_row("Perturbed image", det, data, perturbed, threads));

    EvalCondition perturbed_noise = perturbed;
    perturbed_noise.noise = noise;
    report.rows.push_back(measure_row("Perturbed image + noise", det, data, perturbed_noise, threads));

    // appendix: the full mu x sigma grid on perturbed images
    const int grid_placements = cfg.get_int("grid_placements");
    for (double mu : cfg.get_double_list("grid_mus")) {
        for (double sigma : cfg.get_double_list("grid_sigmas")) {
            EvalCondition cond = eval_condition_base(cfg);
            cond.patch = &trained;
            cond.placements_per_image = grid_placements;
            NoiseParams np = noise;
            np.mu = mu;
            np.sigma = sigma;
            cond.noise = np;
            report.rows.push_back(measure_row(
                "grid perturbed + noise mu=" + fmt(mu) + " sigma=" + fmt(sigma), det, data, cond,
                threads));
        }
    }
    return report;
}

ExperimentReport run_blur_defense(const Config& cfg, const Dataset& data,
                                  const DetectorParams& det, const Patch& trained) {
    const int threads = cfg.get_int("threads");
    ExperimentReport report;
    report.name = "blur-defense";
    report.seed = cfg.get_u64("seed");
    report.config = cfg.snapshot();

    EvalCondition clean = eval_condition_base(cfg);
    report.rows.push_back(measure_row("Unmodified", det, data, clean, threads));

    EvalCondition clean_blur = eval_condition_base(cfg);
    clean_blur.blur = true;
    report.rows.push_back(measure_row("Image + blur", det, data, clean_blur, threads));

    EvalCondition perturbed = eval_condition_base(cfg);
    perturbed.patch = &trained;
    report.rows.push_back(measure_row("Perturbed image", det, data, perturbed, threads));

    EvalCondition perturbed_blur = perturbed;
    perturbed_blur.blur = true;
    report.rows.push_back(measure_row("Perturbed image + blur", det, data, perturbed_blur, threads));
    return report;
}

ExperimentReport run_hyperparam_sweep(const Config& cfg, const Dataset& data,
                                      const DetectorParams& det) {
    const int threads = cfg.get_int("threads");
    ExperimentReport report;
    report.name = "hyperparam-sweep";
    report.seed = cfg.get_u64("seed");
    report.config = cfg.snapshot();

    const int budget = cfg.get_int("sweep_budget"); // transforms x iterations per cell
    for (double lr : cfg.get_double_list("sweep_lrs")) {
        for (int transforms : cfg.get_int_list("sweep_transforms")) {
            Config cell = cfg;
            cell.set("patch_epsilon", fmt(lr, "%.17g"));
            cell.set("eot_transforms", std::to_string(transforms));
            cell.set("patch_iterations", std::to_string(std::max(1, budget / transforms)));
            const PatchTrainResult r = train_default_patch(cell, data, det);
            EvalCondition cond = eval_condition_base(cfg);
            cond.patch = &r.patch;
            report.rows.push_back(measure_row("lr=" + fmt(lr) + " T=" + std::to_string(transforms),
                                              det, data, cond, threads));
        }
    }
    return report;
}

Heatmap run_heatmap(const Config& cfg, const TrainingSample& scene, const DetectorParams& det,
                    const Patch& trained) {
    return confidence_heatmap(det, scene, trained, cfg.get_int("heatmap_stride"),
                              cfg.get_double("offset_limit"), cfg.get_int("threads"));
}

AttackDetectionResult run_attack_detection(const Config& cfg, const DetectorParams& det,
                                           const Patch& trained) {
    const int n_cal = cfg.get_int("n_calibration");
    const int n_eval = cfg.get_int("n_evaluation");
    const double offset_limit = cfg.get_double("offset_limit");
    const double blur_sigma = cfg.get_double("blur_sigma");
    const int blur_ksize = cfg.get_int("blur_kernel");
    const std::uint64_t master = cfg.get_u64("seed");
    const int threads = cfg.get_int("threads");

    struct Split {
        std::vector<TrainingSample> scenes;
        const char* tag;
        int label;
        int eval;
    };
    std::vector<Split> splits;
    splits.push_back({build_person_scenes(cfg, n_cal, "detect-cal-clean"), "cal_clean", 0, 0});
    splits.push_back({build_person_scenes(cfg, n_cal, "detect-cal-attacked"), "cal_attacked", 1, 0});
    splits.push_back({build_person_scenes(cfg, n_eval, "detect-eval-clean"), "eval_clean", 0, 1});
    splits.push_back({build_person_scenes(cfg, n_eval, "detect-eval-attacked"), "eval_attacked", 1, 1});

    AttackDetectionResult r;
    std::vector<ImageF> images;
    std::mt19937_64 place_rng(subseed(master, "detect-placements"));
    for (const Split& split : splits) {
        for (std::size_t k = 0; k < split.scenes.size(); ++k) {
            const TrainingSample& s = split.scenes[k];
            ImageF img = to_float(s.image);
            if (split.label == 1) {
                auto feas = enumerate_feasible(s.truth.front().box, trained.size, s.image.rows,
                                               s.image.cols, offset_limit);
                if (feas.empty()) throw config_error("run_attack_detection: no feasible placement");
                std::uniform_int_distribution<std::size_t> pick(0, feas.size() - 1);
                const auto [pi, pj] = feas[pick(place_rng)];
                img = apply_patch(img, trained,
                                  make_mask(pi, pj, trained.size, img.rows, img.cols));
            }
            images.push_back(std::move(img));
            char id[64];
            std::snprintf(id, sizeof id, "%s_%02zu", split.tag, k);
            r.ids.emplace_back(id);
            r.labels.push_back(split.label);
            r.is_eval.push_back(split.eval);
        }
    }

    r.scores.resize(images.size());
    const int total = static_cast<int>(images.size());
    constexpr int kChunks = 16;
    for_chunks(total, kChunks, threads, [&](int, int begin, int end) {
        for (int k = begin; k < end; ++k)
            r.scores[k] = attack_score(det, images[k], blur_sigma, blur_ksize);
    });

    std::vector<AttackScore> cal_clean, cal_attacked, eval_clean, eval_attacked;
    for (std::size_t k = 0; k < r.scores.size(); ++k) {
        if (r.is_eval[k])
            (r.labels[k] ? eval_attacked : eval_clean).push_back(r.scores[k]);
        else
            (r.labels[k] ? cal_attacked : cal_clean).push_back(r.scores[k]);
    }
    r.threshold = calibrate_threshold(cal_clean, cal_attacked);
    r.threshold.seed = master;

    for (const AttackScore& s : eval_attacked)
        classify_attacked(s, r.threshold) ? ++r.tp : ++r.fn;
    for (const AttackScore& s : eval_clean)
        classify_attacked(s, r.threshold) ? ++r.fp : ++r.tn;

    double wins = 0.0;
    for (const AttackScore& a : eval_attacked)
        for (const AttackScore& c : eval_clean)
            wins += a.delta > c.delta ? 1.0 : (a.delta == c.delta ? 0.5 : 0.0);
    r.ranking_quality = wins / (static_cast<double>(eval_attacked.size()) * eval_clean.size());
    return r;
}

std::string attack_detection_summary(const AttackDetectionResult& r) {
    std::ostringstream out;
    char buf[128];
    std::snprintf(buf, sizeof buf, "threshold tau = %.17g (calibrated on %d clean + %d attacked)",
                  r.threshold.tau, r.threshold.n_clean, r.threshold.n_attacked);
    out << "attack-detection\n" << buf << "\n";
    out << "evaluation confusion: tp=" << r.tp << " fn=" << r.fn << " tn=" << r.tn
        << " fp=" << r.fp << "\n";
    std::snprintf(buf, sizeof buf, "ranking quality = %.17g", r.ranking_quality);
    out << buf << "\n";
    return out.str();
}

void export_scenes(const std::vector<TrainingSample>& scenes, const std::string& dir,
                   const std::string& prefix) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw io_error("cannot create directory " + dir);
    std::ofstream labels(dir + "/" + prefix + "_labels.csv");
    if (!labels) throw io_error("cannot open labels file in " + dir);
    labels << "index,file,cx,cy,w,h,class\n";
    char buf[192];
    for (std::size_t k = 0; k < scenes.size(); ++k) {
        std::snprintf(buf, sizeof buf, "%s_%03zu.pgm", prefix.c_str(), k);
        const std::string file = buf;
        save_image(scenes[k].image, dir + "/" + file);
        if (scenes[k].truth.empty()) {
            labels << k << "," << file << ",,,,,\n";
        } else {
            const TruthBox& tb = scenes[k].truth.front();
            std::snprintf(buf, sizeof buf, "%zu,%s,%.17g,%.17g,%.17g,%.17g,%d", k, file.c_str(),
                          tb.box.cx, tb.box.cy, tb.box.w, tb.box.h, tb.class_id);
            labels << buf << "\n";
        }
    }
    if (!labels) throw io_error("write failed for labels in " + dir);
}

} // namespace patchlab
