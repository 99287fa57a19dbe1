#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "trilite/box.hpp"
#include "trilite/tensor.hpp"

namespace trilite {

// align_corners=false bilinear resize of an h x w map to out_height x out_width.
Tensor upsample_bilinear(const Tensor& map, std::size_t out_height, std::size_t out_width);

struct BinaryMap {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> pixels; // row-major, 0 or 1

    bool at(std::size_t y, std::size_t x) const { return pixels[y * width + x] != 0; }
};

// Pixel is foreground iff value >= tau.
BinaryMap binarize(const Tensor& map, double tau);

struct Component {
    std::size_t pixel_count = 0;
    Box box; // tight, half-open
};

struct Components {
    // Sorted by pixel_count descending, ties by (box.y0, box.x0) ascending.
    std::vector<Component> regions;
    // Per pixel: index into `regions`, or -1 for background.
    std::vector<std::int32_t> labels;
};

// 8-connected labeling.
Components connected_components(const BinaryMap& map);

enum class BoxMode { largest, merged };
std::string_view to_string(BoxMode mode);
BoxMode parse_box_mode(std::string_view text);

// largest: box of regions[0]; merged: hull of all regions. No regions gives
// the full image box.
Box extract_box(std::span<const Component> regions, BoxMode mode, std::size_t image_height, std::size_t image_width);

double iou(const Box& a, const Box& b);

struct EvalRecord {
    Tensor score_map; // H x W foreground probability
    Box largest_box;
    Box merged_box;
    std::size_t fragments = 0;              // connected components at the record's tau
    std::vector<std::size_t> class_ranking; // classes by token logit, descending
    std::size_t label = 0;
    std::vector<Box> bbox_gt;
    std::optional<std::vector<std::uint8_t>> mask_gt; // H x W

    const Box& box(BoxMode mode) const { return mode == BoxMode::largest ? largest_box : merged_box; }
};

// Recomputes largest_box, merged_box and fragments from score_map at `tau`.
void assign_boxes(EvalRecord& record, double tau);

enum class LocMode { top1, top5, gt_known };
enum class MultiGtRule { any, first };

// Percentage of records whose box has IoU > 0.5 with a ground-truth box and
// whose class ranking satisfies `mode`.
double loc_accuracy(std::span<const EvalRecord> records, LocMode mode, BoxMode box_mode,
                    MultiGtRule rule = MultiGtRule::any);

// Area under the precision-recall curve of (score, label) pairs, as a
// percentage. Thresholds sweep the distinct scores in descending order and
// AP = sum_t (R_t - R_{t-1}) P_t.
double average_precision(std::span<const double> scores, std::span<const std::uint8_t> labels);

// Same, with scores in [0, 1] quantized into `bins` equal bins.
double average_precision_binned(std::span<const double> scores, std::span<const std::uint8_t> labels,
                                std::size_t bins = 1000);

// Pixel AP over every pixel of every record pooled into one curve.
double pxap(std::span<const EvalRecord> records);
double pxap_binned(std::span<const EvalRecord> records, std::size_t bins = 1000);

// GT-known accuracy of `records` if their boxes were extracted at `tau`.
double gt_known_at(std::span<const EvalRecord> records, double tau, BoxMode box_mode);

// The candidate maximizing GT-known accuracy; ties go to the smaller tau.
double calibrate_threshold(std::span<const EvalRecord> records, std::span<const double> candidates,
                           BoxMode box_mode = BoxMode::largest);

std::vector<double> default_tau_candidates();

} // namespace trilite
