#include "trilite/report.hpp"

#include <istream>
#include <ostream>

#include <fmt/format.h>

namespace trilite {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

} // namespace

void write_report(std::ostream& out, const MetricReport& r) {
    out << "# trilite evaluation report\n";
    out << "[config]\n";
    for (const auto& [k, v] : r.config) out << k << " = " << v << '\n';
    if (r.top1_loc || r.top5_loc || r.gt_known_loc) {
        out << "[localization]\n";
        out << "box_mode = " << to_string(r.box_mode) << '\n';
        out << fmt::format("tau = {:.17g}\n", r.tau);
        out << "tau_source = " << (r.tau_calibrated ? "calibrated" : "fixed") << '\n';
        if (r.top1_loc) out << fmt::format("top1_loc = {:.6f}\n", *r.top1_loc);
        if (r.top5_loc) out << fmt::format("top5_loc = {:.6f}\n", *r.top5_loc);
        if (r.gt_known_loc) out << fmt::format("gt_known_loc = {:.6f}\n", *r.gt_known_loc);
        out << "fragmented_records = " << r.fragmented_records << '\n';
    }
    if (r.pxap) {
        out << "[segmentation]\n";
        out << fmt::format("pxap = {:.6f}\n", *r.pxap);
    }
    out << "[summary]\n";
    out << "record_count = " << r.record_count << '\n';
}

std::map<std::string, std::string> parse_report(std::istream& in) {
    std::map<std::string, std::string> out;
    std::string section, line;
    while (std::getline(in, line)) {
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        if (line.front() == '[' && line.back() == ']') {
            section = line.substr(1, line.size() - 2);
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        out[section + "." + trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return out;
}

} // namespace trilite
