#include "patchlab/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "patchlab/common.hpp"

namespace patchlab {

namespace {

// Every knob named by the experiment surface, with its desk-scale default.
const std::map<std::string, std::string>& known_keys() {
    static const std::map<std::string, std::string> keys = {
        // master seed; named sub-seeds are derived from it
        {"seed", "20260811"},
        {"threads", "0"},
        // scenes
        {"image_rows", "96"},
        {"image_cols", "96"},
        {"n_train", "32"},
        {"n_test", "3"},
        {"n_background", "40"},
        {"n_calibration", "24"},
        {"n_evaluation", "24"},
        {"fig_h_min", "20"},
        {"fig_h_max", "26"},
        {"fig_w_min", "12"},
        {"fig_w_max", "17"},
        {"fig_margin", "30"},
        {"fig_intensity_min", "175"},
        {"fig_intensity_max", "235"},
        {"bg_lo", "30"},
        {"bg_hi", "130"},
        {"bg_cell", "16"},
        // detector training
        {"det_epochs", "150"},
        {"det_lr", "0.02"},
        {"det_batch", "8"},
        {"det_lambda_pos", "5"},
        {"det_lambda_neg", "2"},
        {"det_lambda_box", "2"},
        {"aug_occluder_prob", "0.5"},
        {"aug_occluder_min", "15"},
        {"aug_occluder_max", "27"},
        {"aug_max_cover", "0.55"},
        {"aug_blur_prob", "0.25"},
        {"aug_noise_prob", "0.25"},
        {"aug_noise_sigma_max", "10"},
        // detection
        {"conf_threshold", "0.3"},
        {"nms_iou", "0.5"},
        // patch attack
        {"patch_size", "23"},
        {"patch_iterations", "600"},
        {"patch_epsilon", "2"},
        {"patch_alpha", "0.8"},
        {"eot_transforms", "16"},
        {"offset_limit", "6"},
        {"eval_placements", "20"},
        // defenses
        {"noise_mu", "0"},
        {"noise_sigma", "10"},
        {"blur_kernel", "3"},
        {"blur_sigma", "0.8"},
        // experiment grids
        {"heatmap_stride", "2"},
        {"sweep_sizes", "5,12,16,23,35"},
        {"sweep_lrs", "0.5,2,8,20"},
        {"sweep_transforms", "5,20,100"},
        {"sweep_budget", "4800"},
        {"grid_mus", "0,10,25,50"},
        {"grid_sigmas", "1,10,50,100"},
        {"grid_placements", "5"},
    };
    return keys;
}

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

} // namespace

Config Config::defaults() {
    Config c;
    c.values_ = known_keys();
    return c;
}

Config Config::from_text(const std::string& text) {
    Config c = defaults();
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw config_error("config line " + std::to_string(lineno) +
                               ": expected key = value, got '" + line + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        c.set(key, value); // throws on unknown key
    }
    return c;
}

Config Config::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open config file " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    try {
        return from_text(buf.str());
    } catch (const config_error& e) {
        throw config_error(path + ": " + e.what());
    }
}

bool Config::has(const std::string& key) const { return values_.count(key) != 0; }

void Config::set(const std::string& key, const std::string& value) {
    if (known_keys().count(key) == 0)
        throw config_error("unknown config key '" + key + "'");
    values_[key] = value;
}

const std::string& Config::get_string(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw config_error("unknown config key '" + key + "'");
    return it->second;
}

double Config::get_double(const std::string& key) const {
    const std::string& s = get_string(key);
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0')
        throw config_error("config key '" + key + "': '" + s + "' is not a number");
    return v;
}

int Config::get_int(const std::string& key) const {
    const std::string& s = get_string(key);
    char* end = nullptr;
    const long v = std::strtol(s.c_str(), &end, 10);
    if (end == s.c_str() || *end != '\0')
        throw config_error("config key '" + key + "': '" + s + "' is not an integer");
    return static_cast<int>(v);
}

std::uint64_t Config::get_u64(const std::string& key) const {
    const std::string& s = get_string(key);
    char* end = nullptr;
    const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
    if (end == s.c_str() || *end != '\0')
        throw config_error("config key '" + key + "': '" + s + "' is not an unsigned integer");
    return v;
}

std::vector<int> Config::get_int_list(const std::string& key) const {
    std::vector<int> out;
    for (double v : get_double_list(key)) out.push_back(static_cast<int>(v));
    return out;
}

std::vector<double> Config::get_double_list(const std::string& key) const {
    const std::string& s = get_string(key);
    std::vector<double> out;
    std::istringstream in(s);
    std::string item;
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        char* end = nullptr;
        const double v = std::strtod(item.c_str(), &end);
        if (end == item.c_str() || *end != '\0')
            throw config_error("config key '" + key + "': bad list element '" + item + "'");
        out.push_back(v);
    }
    if (out.empty()) throw config_error("config key '" + key + "': empty list");
    return out;
}

std::vector<std::pair<std::string, std::string>> Config::snapshot() const {
    std::vector<std::pair<std::string, std::string>> out;
    out.reserve(values_.size());
    for (const auto& [k, v] : values_) out.emplace_back(k, v);
    return out;
}

} // namespace patchlab
