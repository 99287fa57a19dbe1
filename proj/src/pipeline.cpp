#include "trilite/pipeline.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "trilite/error.hpp"

namespace trilite {

void check_compatible(const DatasetHeader& h, const HeadConfig& c) {
    if (h.feature_dim != c.feature_dim || h.token_dim != c.token_dim || h.classes != c.classes)
        throw ConfigError("dataset (D=" + std::to_string(h.feature_dim) + ", D_token=" + std::to_string(h.token_dim) +
                          ", C=" + std::to_string(h.classes) + ") does not match the head (D=" +
                          std::to_string(c.feature_dim) + ", D_token=" + std::to_string(c.token_dim) +
                          ", C=" + std::to_string(c.classes) + ")");
}

Batch make_batch(const Dataset& dataset, std::span<const std::size_t> indices) {
    const auto& h = dataset.header;
    const std::size_t fsize = h.feature_dim * h.grid_h * h.grid_w;
    Batch batch{Tensor({indices.size(), h.feature_dim, h.grid_h, h.grid_w}), Tensor({indices.size(), h.token_dim}), {}};
    batch.labels.reserve(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= dataset.size()) throw DataError("sample index " + std::to_string(indices[i]) + " out of range");
        const auto& s = dataset.samples[indices[i]];
        std::copy(s.patch_features.data().begin(), s.patch_features.data().end(),
                  batch.features.data().begin() + static_cast<std::ptrdiff_t>(i * fsize));
        std::copy(s.class_token.data().begin(), s.class_token.data().end(),
                  batch.tokens.data().begin() + static_cast<std::ptrdiff_t>(i * h.token_dim));
        batch.labels.push_back(s.label);
    }
    return batch;
}

TriMaps predict_maps(const HeadParams& params, const Dataset& dataset, std::size_t first, std::size_t count) {
    std::vector<std::size_t> idx(count);
    std::iota(idx.begin(), idx.end(), first);
    return trihead_forward(make_batch(dataset, idx).features, params);
}

std::vector<EvalRecord> predict_records(const HeadParams& params, const Dataset& dataset, double tau,
                                        std::size_t chunk) {
    check_compatible(dataset.header, params.config);
    const auto& h = dataset.header;
    const std::size_t plane = h.grid_h * h.grid_w;
    const std::size_t fg = params.config.fg_channel(), k = params.config.channels(), classes = h.classes;
    std::vector<EvalRecord> records(dataset.size());

    for (std::size_t first = 0; first < dataset.size(); first += chunk) {
        const std::size_t count = std::min(chunk, dataset.size() - first);
        std::vector<std::size_t> idx(count);
        std::iota(idx.begin(), idx.end(), first);
        const auto batch = make_batch(dataset, idx);
        const auto maps = trihead_forward(batch.features, params);
        const auto logits = linear(batch.tokens, params.token_weight, params.token_bias);

        const auto n = static_cast<std::ptrdiff_t>(count);
#pragma omp parallel for schedule(dynamic)
        for (std::ptrdiff_t bi = 0; bi < n; ++bi) {
            const auto b = static_cast<std::size_t>(bi);
            const auto& sample = dataset.samples[first + b];
            auto& r = records[first + b];
            Tensor grid({h.grid_h, h.grid_w});
            std::copy_n(maps.maps.data().begin() + static_cast<std::ptrdiff_t>((b * k + fg) * plane), plane,
                        grid.data().begin());
            r.score_map = upsample_bilinear(grid, h.image_h, h.image_w);
            r.class_ranking.resize(classes);
            std::iota(r.class_ranking.begin(), r.class_ranking.end(), std::size_t{0});
            const double* row = logits.data().data() + b * classes;
            std::stable_sort(r.class_ranking.begin(), r.class_ranking.end(),
                             [row](std::size_t a, std::size_t c) { return row[a] > row[c]; });
            r.label = sample.label;
            r.bbox_gt = sample.bbox_gt;
            r.mask_gt = sample.mask_gt;
            assign_boxes(r, tau);
        }
    }
    return records;
}

} // namespace trilite
