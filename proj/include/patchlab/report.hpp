#ifndef PATCHLAB_REPORT_HPP
#define PATCHLAB_REPORT_HPP

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace patchlab {

struct ReportRow {
    std::string label;
    double train_conf = 0;
    double test_conf = 0;
};

// Mean-confidence table in the two-column style of the reference experiments,
// with enough provenance (config snapshot + seed) to reproduce it exactly.
struct ExperimentReport {
    std::string name;
    std::uint64_t seed = 0;
    std::vector<std::pair<std::string, std::string>> config;
    std::vector<ReportRow> rows;

    void add_config(const std::string& key, const std::string& value) {
        config.emplace_back(key, value);
    }
};

// Lossless round-trip: report_from_csv(report_to_csv(r)) == r, bit for bit.
std::string report_to_csv(const ExperimentReport& report);
ExperimentReport report_from_csv(const std::string& text);

// Aligned-column rendering for humans.
std::string report_pretty(const ExperimentReport& report);

// Writes <base>.csv and <base>.txt.
void save_report(const ExperimentReport& report, const std::string& path_base);
ExperimentReport load_report(const std::string& csv_path);

} // namespace patchlab

#endif
