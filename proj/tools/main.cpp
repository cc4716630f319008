// Command-line front end for the patch laboratory. Every experiment is a
// pure function of (config, seed); artifacts land in the --out directory.

#include <CLI11.hpp>
#include <filesystem>
#include <iostream>

#include "patchlab/experiments.hpp"

namespace fs = std::filesystem;
using namespace patchlab;

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_dir = ".";
    std::uint64_t seed = 0;
    bool seed_set = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "flat key = value config file");
    cmd->add_option("--out", args.out_dir, "output directory (default .)");
    cmd->add_option("--seed", args.seed, "master seed, overrides the config value")
        ->each([&args](const std::string&) { args.seed_set = true; });
}

Config load_config(const CommonArgs& args) {
    Config cfg = args.config_path.empty() ? Config::defaults() : Config::from_file(args.config_path);
    if (args.seed_set) cfg.set("seed", std::to_string(args.seed));
    return cfg;
}

void ensure_out(const CommonArgs& args) {
    std::error_code ec;
    fs::create_directories(args.out_dir, ec);
    if (ec) throw io_error("cannot create output directory " + args.out_dir);
}

std::string out_path(const CommonArgs& args, const std::string& name) {
    return args.out_dir + "/" + name;
}

DetectorParams load_detector_artifact(const CommonArgs& args, const std::string& override_path) {
    const std::string path =
        override_path.empty() ? out_path(args, "detector.bin") : override_path;
    return load_detector(path);
}

Patch load_patch_artifact(const CommonArgs& args, const std::string& override_base) {
    const std::string base = override_base.empty() ? out_path(args, "patch") : override_base;
    return load_patch(base);
}

void cmd_gen_data(const CommonArgs& args) {
    const Config cfg = load_config(args);
    ensure_out(args);
    const Dataset data = build_dataset(cfg);
    const auto backgrounds =
        build_background_scenes(cfg, cfg.get_int("n_background"), "background");
    const std::string dir = out_path(args, "data");
    export_scenes(data.train, dir, "train");
    export_scenes(data.test, dir, "test");
    export_scenes(backgrounds, dir, "background");
    std::cout << "wrote " << data.train.size() << " train / " << data.test.size() << " test / "
              << backgrounds.size() << " background scenes to " << dir << "\n";
}

void cmd_train_detector(const CommonArgs& args) {
    const Config cfg = load_config(args);
    ensure_out(args);
    const Dataset data = build_dataset(cfg);
    const DetectorTrainResult r = train_default_detector(cfg, data);
    save_detector(r.params, out_path(args, "detector.bin"));
    std::ofstream curve(out_path(args, "detector_loss.csv"));
    curve << "epoch,loss\n";
    char buf[64];
    for (std::size_t e = 0; e < r.loss_curve.size(); ++e) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g", e, r.loss_curve[e]);
        curve << buf << "\n";
    }
    EvalCondition clean;
    const double test_conf = mean_reported_confidence(r.params, data.test, clean,
                                                      cfg.get_int("threads"));
    std::cout << "detector trained (" << r.loss_curve.size() << " epochs), clean test mean "
              << test_conf << "\nwrote " << out_path(args, "detector.bin") << "\n";
}

void cmd_train_patch(const CommonArgs& args, const std::string& detector_path) {
    const Config cfg = load_config(args);
    ensure_out(args);
    const Dataset data = build_dataset(cfg);
    const DetectorParams det = load_detector_artifact(args, detector_path);
    const PatchTrainResult r = train_default_patch(cfg, data, det);
    save_patch(r.patch, out_path(args, "patch"));
    save_patch_curve(r.curve, out_path(args, "patch_curve.csv"));
    EvalCondition cond;
    cond.patch = &r.patch;
    cond.placements_per_image = cfg.get_int("eval_placements");
    cond.placement_seed = subseed(cfg.get_u64("seed"), "eval-placements");
    cond.offset_limit = cfg.get_double("offset_limit");
    const double test_conf =
        mean_reported_confidence(det, data.test, cond, cfg.get_int("threads"));
    std::cout << "patch trained (" << r.curve.size() << " iterations), patched test mean "
              << test_conf << "\nwrote " << out_path(args, "patch") << ".pgm/.txt\n";
}

void cmd_eval(const CommonArgs& args, const std::string& detector_path,
              const std::string& patch_base) {
    const Config cfg = load_config(args);
    ensure_out(args);
    const Dataset data = build_dataset(cfg);
    const DetectorParams det = load_detector_artifact(args, detector_path);
    const Patch patch = load_patch_artifact(args, patch_base);
    const ExperimentReport report = run_noise_patch_baseline(cfg, data, det, patch);
    save_report(report, out_path(args, "report_noise_patch_baseline"));
    std::cout << report_pretty(report);
}

void cmd_defend(const CommonArgs& args, const std::string& detector_path,
                const std::string& patch_base) {
    const Config cfg = load_config(args);
    ensure_out(args);
    const Dataset data = build_dataset(cfg);
    const DetectorParams det = load_detector_artifact(args, detector_path);
    const Patch patch = load_patch_artifact(args, patch_base);
    const ExperimentReport noise = run_noise_defense(cfg, data, det, patch);
    save_report(noise, out_path(args, "report_noise_defense"));
    std::cout << report_pretty(noise) << "\n";
    const ExperimentReport blur = run_blur_defense(cfg, data, det, patch);
    save_report(blur, out_path(args, "report_blur_defense"));
    std::cout << report_pretty(blur);
}

void cmd_sweep_size(const CommonArgs& args, const std::string& detector_path) {
    const Config cfg = load_config(args);
    ensure_out(args);
    const Dataset data = build_dataset(cfg);
    const DetectorParams det = load_detector_artifact(args, detector_path);
    const ExperimentReport report = run_patch_size_sweep(cfg, data, det);
    save_report(report, out_path(args, "report_patch_size_sweep"));
    std::cout << report_pretty(report);
}

void cmd_sweep_hyper(const CommonArgs& args, const std::string& detector_path) {
    const Config cfg = load_config(args);
    ensure_out(args);
    const Dataset data = build_dataset(cfg);
    const DetectorParams det = load_detector_artifact(args, detector_path);
    const ExperimentReport report = run_hyperparam_sweep(cfg, data, det);
    save_report(report, out_path(args, "report_hyperparam_sweep"));
    std::cout << report_pretty(report);
}

void cmd_heatmap(const CommonArgs& args, const std::string& detector_path,
                 const std::string& patch_base, int scene_index) {
    const Config cfg = load_config(args);
    ensure_out(args);
    const Dataset data = build_dataset(cfg);
    if (scene_index < 0 || scene_index >= static_cast<int>(data.test.size()))
        throw config_error("heatmap: scene index out of range");
    const DetectorParams det = load_detector_artifact(args, detector_path);
    const Patch patch = load_patch_artifact(args, patch_base);
    const Heatmap hm = run_heatmap(cfg, data.test[scene_index], det, patch);
    save_heatmap(hm, out_path(args, "heatmap"));
    const HeatmapStats st = heatmap_stats(hm, cfg.get_double("conf_threshold"));
    std::cout << "heatmap " << hm.rows << "x" << hm.cols << " (stride " << hm.stride << ")\n"
              << "edge mean " << st.edge_mean << " over " << st.n_edge << " centers\n"
              << "interior mean " << st.interior_mean << " over " << st.n_interior << " centers\n"
              << "interior fraction below threshold " << st.interior_frac_below << "\n"
              << "wrote " << out_path(args, "heatmap") << ".pgm/.txt\n";
}

void cmd_detect_attack(const CommonArgs& args, const std::string& detector_path,
                       const std::string& patch_base) {
    const Config cfg = load_config(args);
    ensure_out(args);
    const DetectorParams det = load_detector_artifact(args, detector_path);
    const Patch patch = load_patch_artifact(args, patch_base);
    const AttackDetectionResult r = run_attack_detection(cfg, det, patch);
    save_attack_scores(r.ids, r.scores, r.labels, out_path(args, "attack_scores.csv"));
    const std::string summary = attack_detection_summary(r);
    std::ofstream out(out_path(args, "attack_detection.txt"));
    out << summary;
    std::cout << summary;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"patchlab: adversarial patch laboratory for a miniature grid detector"};
    app.require_subcommand(1);

    CommonArgs args;
    std::string detector_path, patch_base;
    int scene_index = 0;

    auto* gen = app.add_subcommand("gen-data", "generate synthetic scenes as PGM + labels");
    add_common(gen, args);

    auto* traind = app.add_subcommand("train-detector", "train the grid detector");
    add_common(traind, args);

    auto* trainp = app.add_subcommand("train-patch", "train the adversarial patch (EOT + FGSM)");
    add_common(trainp, args);
    trainp->add_option("--detector", detector_path, "detector weights (default <out>/detector.bin)");

    auto* eval = app.add_subcommand("eval", "noise-patch baseline table");
    add_common(eval, args);
    eval->add_option("--detector", detector_path, "detector weights");
    eval->add_option("--patch", patch_base, "patch base path (default <out>/patch)");

    auto* defend = app.add_subcommand("defend", "noise and blur countermeasure tables");
    add_common(defend, args);
    defend->add_option("--detector", detector_path, "detector weights");
    defend->add_option("--patch", patch_base, "patch base path");

    auto* ssize = app.add_subcommand("sweep-size", "patch-size sweep table");
    add_common(ssize, args);
    ssize->add_option("--detector", detector_path, "detector weights");

    auto* shyper = app.add_subcommand("sweep-hyper", "learning-rate x transforms sweep");
    add_common(shyper, args);
    shyper->add_option("--detector", detector_path, "detector weights");

    auto* heat = app.add_subcommand("heatmap", "placement confidence heatmap");
    add_common(heat, args);
    heat->add_option("--detector", detector_path, "detector weights");
    heat->add_option("--patch", patch_base, "patch base path");
    heat->add_option("--scene", scene_index, "test scene index (default 0)");

    auto* detat = app.add_subcommand("detect-attack", "blur-delta attack classifier");
    add_common(detat, args);
    detat->add_option("--detector", detector_path, "detector weights");
    detat->add_option("--patch", patch_base, "patch base path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e); // --help
        app.exit(e);
        return 2;
    }

    try {
        if (gen->parsed()) cmd_gen_data(args);
        if (traind->parsed()) cmd_train_detector(args);
        if (trainp->parsed()) cmd_train_patch(args, detector_path);
        if (eval->parsed()) cmd_eval(args, detector_path, patch_base);
        if (defend->parsed()) cmd_defend(args, detector_path, patch_base);
        if (ssize->parsed()) cmd_sweep_size(args, detector_path);
        if (shyper->parsed()) cmd_sweep_hyper(args, detector_path);
        if (heat->parsed()) cmd_heatmap(args, detector_path, patch_base, scene_index);
        if (detat->parsed()) cmd_detect_attack(args, detector_path, patch_base);
    } catch (const io_error& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 3;
    } catch (const config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
