#include "patchlab/report.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "patchlab/common.hpp"

namespace patchlab {

namespace {

void check_field(const std::string& s) {
    if (s.find(',') != std::string::npos || s.find('\n') != std::string::npos)
        throw std::invalid_argument("report field may not contain commas or newlines: " + s);
}

std::string fmt17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

} // namespace

std::string report_to_csv(const ExperimentReport& report) {
    check_field(report.name);
    std::ostringstream out;
    out << "patchlab-report,1\n";
    out << "name," << report.name << "\n";
    out << "seed," << report.seed << "\n";
    for (const auto& [k, v] : report.config) {
        check_field(k);
        if (v.find('\n') != std::string::npos)
            throw std::invalid_argument("report config value may not contain newlines");
        out << "config," << k << "," << v << "\n"; // value is the tail, commas allowed
    }
    out << "header,label,train_confidence,test_confidence\n";
    for (const ReportRow& row : report.rows) {
        check_field(row.label);
        out << "row," << row.label << "," << fmt17(row.train_conf) << "," << fmt17(row.test_conf)
            << "\n";
    }
    return out.str();
}

ExperimentReport report_from_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != "patchlab-report,1")
        throw io_error("report_from_csv: bad magic line");
    ExperimentReport r;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto fields = split_csv(line);
        const std::string& tag = fields[0];
        if (tag == "name" && fields.size() == 2) {
            r.name = fields[1];
        } else if (tag == "seed" && fields.size() == 2) {
            r.seed = std::stoull(fields[1]);
        } else if (tag == "config" && fields.size() >= 3) {
            std::string value = fields[2];
            for (std::size_t k = 3; k < fields.size(); ++k) value += "," + fields[k];
            r.config.emplace_back(fields[1], value);
        } else if (tag == "header") {
            // column names, fixed by format version
        } else if (tag == "row" && fields.size() == 4) {
            ReportRow row;
            row.label = fields[1];
            row.train_conf = std::stod(fields[2]);
            row.test_conf = std::stod(fields[3]);
            r.rows.push_back(std::move(row));
        } else {
            throw io_error("report_from_csv: unexpected line: " + line);
        }
    }
    return r;
}

std::string report_pretty(const ExperimentReport& report) {
    std::size_t width = 24;
    for (const ReportRow& row : report.rows) width = std::max(width, row.label.size() + 2);
    std::ostringstream out;
    out << report.name << "  (seed " << report.seed << ")\n";
    out << std::string(width + 16, '-') << "\n";
    char buf[64];
    out << std::string(width, ' ') << "  train   test\n";
    for (const ReportRow& row : report.rows) {
        out << row.label << std::string(width - row.label.size(), ' ');
        std::snprintf(buf, sizeof buf, "  %.3f  %.3f", row.train_conf, row.test_conf);
        out << buf << "\n";
    }
    if (!report.config.empty()) {
        out << "\nconfig:\n";
        for (const auto& [k, v] : report.config) out << "  " << k << " = " << v << "\n";
    }
    return out.str();
}

void save_report(const ExperimentReport& report, const std::string& path_base) {
    {
        std::ofstream out(path_base + ".csv", std::ios::binary);
        if (!out) throw io_error("cannot open " + path_base + ".csv for writing");
        out << report_to_csv(report);
        if (!out) throw io_error("write failed: " + path_base + ".csv");
    }
    std::ofstream out(path_base + ".txt");
    if (!out) throw io_error("cannot open " + path_base + ".txt for writing");
    out << report_pretty(report);
    if (!out) throw io_error("write failed: " + path_base + ".txt");
}

ExperimentReport load_report(const std::string& csv_path) {
    std::ifstream in(csv_path, std::ios::binary);
    if (!in) throw io_error("cannot open " + csv_path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return report_from_csv(buf.str());
}

} // namespace patchlab
