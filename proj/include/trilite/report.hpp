#pragma once

#include <cstddef>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "trilite/eval.hpp"

namespace trilite {

struct MetricReport {
    std::vector<std::pair<std::string, std::string>> config; // echoed run configuration
    std::size_t record_count = 0;
    BoxMode box_mode = BoxMode::largest;
    double tau = 0.5;
    bool tau_calibrated = false;
    std::optional<double> top1_loc;
    std::optional<double> top5_loc;
    std::optional<double> gt_known_loc;
    std::optional<double> pxap;
    std::size_t fragmented_records = 0; // records with >= 2 components at tau
};

// INI-style text:
//
//   [config]
//   key = value
//   [localization]
//   box_mode = largest
//   ...
//   [segmentation]
//   pxap = ...
//   [summary]
//   record_count = 100
void write_report(std::ostream& out, const MetricReport& report);

// Flattens a report into "section.key" -> value.
std::map<std::string, std::string> parse_report(std::istream& in);

} // namespace trilite
