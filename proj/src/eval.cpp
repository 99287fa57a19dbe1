#include "trilite/eval.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "trilite/error.hpp"

namespace trilite {

Tensor upsample_bilinear(const Tensor& map, std::size_t out_height, std::size_t out_width) {
    if (map.rank() != 2) throw ConfigError("upsample_bilinear expects a rank-2 map");
    const std::size_t in_h = map.dim(0), in_w = map.dim(1);
    if (in_h == 0 || in_w == 0 || out_height == 0 || out_width == 0)
        throw ConfigError("upsample_bilinear: empty map");
    Tensor out({out_height, out_width});
    const double sy = static_cast<double>(in_h) / static_cast<double>(out_height);
    const double sx = static_cast<double>(in_w) / static_cast<double>(out_width);

    // Horizontal taps are shared by every row.
    std::vector<std::size_t> x0s(out_width), x1s(out_width);
    std::vector<double> lxs(out_width);
    for (std::size_t j = 0; j < out_width; ++j) {
        const double fx = std::max(0.0, (static_cast<double>(j) + 0.5) * sx - 0.5);
        x0s[j] = std::min(static_cast<std::size_t>(fx), in_w - 1);
        x1s[j] = std::min(x0s[j] + 1, in_w - 1);
        lxs[j] = fx - static_cast<double>(x0s[j]);
    }

    const double* src = map.data().data();
    double* dst = out.data().data();
    const auto rows = static_cast<std::ptrdiff_t>(out_height);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t r = 0; r < rows; ++r) {
        const double fy = std::max(0.0, (static_cast<double>(r) + 0.5) * sy - 0.5);
        const auto y0 = std::min(static_cast<std::size_t>(fy), in_h - 1);
        const std::size_t y1 = std::min(y0 + 1, in_h - 1);
        const double ly = fy - static_cast<double>(y0);
        const double* top_row = src + y0 * in_w;
        const double* bottom_row = src + y1 * in_w;
        double* o = dst + static_cast<std::size_t>(r) * out_width;
        for (std::size_t j = 0; j < out_width; ++j) {
            const double lx = lxs[j];
            const double top = (1.0 - lx) * top_row[x0s[j]] + lx * top_row[x1s[j]];
            const double bottom = (1.0 - lx) * bottom_row[x0s[j]] + lx * bottom_row[x1s[j]];
            o[j] = (1.0 - ly) * top + ly * bottom;
        }
    }
    return out;
}

BinaryMap binarize(const Tensor& map, double tau) {
    if (map.rank() != 2) throw ConfigError("binarize expects a rank-2 map");
    BinaryMap out{map.dim(0), map.dim(1), std::vector<std::uint8_t>(map.size())};
    const auto n = static_cast<std::ptrdiff_t>(map.size());
    const double* v = map.data().data();
    std::uint8_t* p = out.pixels.data();
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) p[i] = v[i] >= tau ? 1 : 0;
    return out;
}

Components connected_components(const BinaryMap& map) {
    const std::size_t h = map.height, w = map.width;
    Components out;
    std::vector<std::int32_t> labels(h * w, -1);
    std::vector<Component> found;
    std::vector<std::size_t> stack;

    for (std::size_t start = 0; start < h * w; ++start) {
        if (!map.pixels[start] || labels[start] >= 0) continue;
        const auto id = static_cast<std::int32_t>(found.size());
        Component comp;
        comp.box = Box{static_cast<std::int64_t>(start % w), static_cast<std::int64_t>(start / w),
                       static_cast<std::int64_t>(start % w) + 1, static_cast<std::int64_t>(start / w) + 1};
        labels[start] = id;
        stack.push_back(start);
        while (!stack.empty()) {
            const std::size_t at = stack.back();
            stack.pop_back();
            const auto y = static_cast<std::int64_t>(at / w), x = static_cast<std::int64_t>(at % w);
            ++comp.pixel_count;
            comp.box.x0 = std::min(comp.box.x0, x);
            comp.box.y0 = std::min(comp.box.y0, y);
            comp.box.x1 = std::max(comp.box.x1, x + 1);
            comp.box.y1 = std::max(comp.box.y1, y + 1);
            for (std::int64_t dy = -1; dy <= 1; ++dy)
                for (std::int64_t dx = -1; dx <= 1; ++dx) {
                    const auto ny = y + dy, nx = x + dx;
                    if (ny < 0 || nx < 0 || ny >= static_cast<std::int64_t>(h) || nx >= static_cast<std::int64_t>(w))
                        continue;
                    const auto n = static_cast<std::size_t>(ny) * w + static_cast<std::size_t>(nx);
                    if (map.pixels[n] && labels[n] < 0) {
                        labels[n] = id;
                        stack.push_back(n);
                    }
                }
        }
        found.push_back(comp);
    }

    std::vector<std::int32_t> order(found.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<std::int32_t>(i);
    std::sort(order.begin(), order.end(), [&](std::int32_t a, std::int32_t b) {
        const auto& ca = found[static_cast<std::size_t>(a)];
        const auto& cb = found[static_cast<std::size_t>(b)];
        if (ca.pixel_count != cb.pixel_count) return ca.pixel_count > cb.pixel_count;
        if (ca.box.y0 != cb.box.y0) return ca.box.y0 < cb.box.y0;
        return ca.box.x0 < cb.box.x0;
    });
    std::vector<std::int32_t> remap(found.size());
    out.regions.reserve(found.size());
    for (std::size_t rank = 0; rank < order.size(); ++rank) {
        remap[static_cast<std::size_t>(order[rank])] = static_cast<std::int32_t>(rank);
        out.regions.push_back(found[static_cast<std::size_t>(order[rank])]);
    }
    for (auto& l : labels)
        if (l >= 0) l = remap[static_cast<std::size_t>(l)];
    out.labels = std::move(labels);
    return out;
}

std::string_view to_string(BoxMode mode) { return mode == BoxMode::largest ? "largest" : "merged"; }

BoxMode parse_box_mode(std::string_view text) {
    if (text == "largest") return BoxMode::largest;
    if (text == "merged") return BoxMode::merged;
    throw ConfigError("unknown box mode '" + std::string(text) + "' (expected largest or merged)");
}

Box extract_box(std::span<const Component> regions, BoxMode mode, std::size_t image_height, std::size_t image_width) {
    if (regions.empty())
        return Box{0, 0, static_cast<std::int64_t>(image_width), static_cast<std::int64_t>(image_height)};
    if (mode == BoxMode::largest) return regions.front().box;
    Box hull = regions.front().box;
    for (const auto& r : regions) {
        hull.x0 = std::min(hull.x0, r.box.x0);
        hull.y0 = std::min(hull.y0, r.box.y0);
        hull.x1 = std::max(hull.x1, r.box.x1);
        hull.y1 = std::max(hull.y1, r.box.y1);
    }
    return hull;
}

double iou(const Box& a, const Box& b) {
    const std::int64_t iw = std::max<std::int64_t>(0, std::min(a.x1, b.x1) - std::max(a.x0, b.x0));
    const std::int64_t ih = std::max<std::int64_t>(0, std::min(a.y1, b.y1) - std::max(a.y0, b.y0));
    const std::int64_t inter = iw * ih;
    const std::int64_t uni = a.area() + b.area() - inter;
    if (uni <= 0) return 0.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

void assign_boxes(EvalRecord& record, double tau) {
    const auto comps = connected_components(binarize(record.score_map, tau));
    const std::size_t h = record.score_map.dim(0), w = record.score_map.dim(1);
    record.largest_box = extract_box(comps.regions, BoxMode::largest, h, w);
    record.merged_box = extract_box(comps.regions, BoxMode::merged, h, w);
    record.fragments = comps.regions.size();
}

namespace {

bool localized(const Box& pred, std::span<const Box> gts, MultiGtRule rule) {
    if (rule == MultiGtRule::first) return iou(pred, gts.front()) > 0.5;
    return std::any_of(gts.begin(), gts.end(), [&](const Box& g) { return iou(pred, g) > 0.5; });
}

bool classified(const EvalRecord& r, LocMode mode) {
    if (mode == LocMode::gt_known) return true;
    const std::size_t k = mode == LocMode::top1 ? 1 : 5;
    const auto end = r.class_ranking.begin() + static_cast<std::ptrdiff_t>(std::min(k, r.class_ranking.size()));
    return std::find(r.class_ranking.begin(), end, r.label) != end;
}

} // namespace

double loc_accuracy(std::span<const EvalRecord> records, LocMode mode, BoxMode box_mode, MultiGtRule rule) {
    if (records.empty()) throw DataError("loc_accuracy: no records");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        if (r.bbox_gt.empty()) throw DataError("loc_accuracy: record " + std::to_string(i) + " has no bbox_gt");
        if (classified(r, mode) && localized(r.box(box_mode), r.bbox_gt, rule)) ++hits;
    }
    return 100.0 * static_cast<double>(hits) / static_cast<double>(records.size());
}

double average_precision(std::span<const double> scores, std::span<const std::uint8_t> labels) {
    if (scores.size() != labels.size()) throw ConfigError("average_precision: score/label length mismatch");
    std::vector<std::pair<double, std::uint8_t>> items(scores.size());
    std::size_t positives = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        items[i] = {scores[i], labels[i] ? std::uint8_t{1} : std::uint8_t{0}};
        positives += items[i].second;
    }
    if (positives == 0) throw DataError("average_precision: no positive pixels, recall is undefined");
    std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return a.first > b.first; });

    double ap = 0.0, prev_recall = 0.0;
    std::size_t tp = 0, seen = 0;
    for (std::size_t i = 0; i < items.size();) {
        std::size_t j = i;
        while (j < items.size() && items[j].first == items[i].first) {
            tp += items[j].second;
            ++j;
        }
        seen = j;
        const double recall = static_cast<double>(tp) / static_cast<double>(positives);
        const double precision = static_cast<double>(tp) / static_cast<double>(seen);
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    return 100.0 * ap;
}

double average_precision_binned(std::span<const double> scores, std::span<const std::uint8_t> labels,
                                std::size_t bins) {
    if (scores.size() != labels.size()) throw ConfigError("average_precision: score/label length mismatch");
    if (bins == 0) throw ConfigError("average_precision_binned: need at least one bin");
    std::vector<std::size_t> pos(bins, 0), all(bins, 0);
    std::size_t positives = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const double s = std::clamp(scores[i], 0.0, 1.0);
        const auto b = std::min(bins - 1, static_cast<std::size_t>(s * static_cast<double>(bins)));
        ++all[b];
        if (labels[i]) {
            ++pos[b];
            ++positives;
        }
    }
    if (positives == 0) throw DataError("average_precision: no positive pixels, recall is undefined");
    double ap = 0.0, prev_recall = 0.0;
    std::size_t tp = 0, seen = 0;
    for (std::size_t b = bins; b-- > 0;) {
        if (all[b] == 0) continue;
        tp += pos[b];
        seen += all[b];
        const double recall = static_cast<double>(tp) / static_cast<double>(positives);
        ap += (recall - prev_recall) * static_cast<double>(tp) / static_cast<double>(seen);
        prev_recall = recall;
    }
    return 100.0 * ap;
}

namespace {

void pool_pixels(std::span<const EvalRecord> records, std::vector<double>& scores, std::vector<std::uint8_t>& labels) {
    if (records.empty()) throw DataError("pxap: no records");
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        if (!r.mask_gt) throw DataError("pxap: record " + std::to_string(i) + " has no mask_gt");
        if (r.mask_gt->size() != r.score_map.size())
            throw DataError("pxap: record " + std::to_string(i) + " mask size does not match its score map");
        scores.insert(scores.end(), r.score_map.data().begin(), r.score_map.data().end());
        labels.insert(labels.end(), r.mask_gt->begin(), r.mask_gt->end());
    }
}

} // namespace

double pxap(std::span<const EvalRecord> records) {
    std::vector<double> scores;
    std::vector<std::uint8_t> labels;
    pool_pixels(records, scores, labels);
    return average_precision(scores, labels);
}

double pxap_binned(std::span<const EvalRecord> records, std::size_t bins) {
    std::vector<double> scores;
    std::vector<std::uint8_t> labels;
    pool_pixels(records, scores, labels);
    return average_precision_binned(scores, labels, bins);
}

double gt_known_at(std::span<const EvalRecord> records, double tau, BoxMode box_mode) {
    if (records.empty()) throw DataError("gt_known_at: no records");
    std::vector<std::uint8_t> hit(records.size(), 0);
    const auto n = static_cast<std::ptrdiff_t>(records.size());
    // connected_components is the expensive part; records are independent.
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        const auto& r = records[static_cast<std::size_t>(i)];
        if (r.bbox_gt.empty()) continue;
        const auto comps = connected_components(binarize(r.score_map, tau));
        const Box b = extract_box(comps.regions, box_mode, r.score_map.dim(0), r.score_map.dim(1));
        hit[static_cast<std::size_t>(i)] = localized(b, r.bbox_gt, MultiGtRule::any) ? 1 : 0;
    }
    for (std::size_t i = 0; i < records.size(); ++i)
        if (records[i].bbox_gt.empty()) throw DataError("gt_known_at: record " + std::to_string(i) + " has no bbox_gt");
    std::size_t hits = 0;
    for (auto h : hit) hits += h;
    return 100.0 * static_cast<double>(hits) / static_cast<double>(records.size());
}

double calibrate_threshold(std::span<const EvalRecord> records, std::span<const double> candidates, BoxMode box_mode) {
    if (candidates.empty()) throw ConfigError("calibrate_threshold: empty candidate list");
    if (candidates.size() == 1) return candidates.front();
    std::vector<double> taus(candidates.begin(), candidates.end());
    std::sort(taus.begin(), taus.end());
    double best_tau = taus.front();
    double best = -1.0;
    for (double tau : taus) {
        const double score = gt_known_at(records, tau, box_mode);
        if (score > best) {
            best = score;
            best_tau = tau;
        }
    }
    return best_tau;
}

std::vector<double> default_tau_candidates() {
    std::vector<double> taus;
    for (int i = 1; i <= 19; ++i) taus.push_back(0.05 * i);
    return taus;
}

} // namespace trilite
