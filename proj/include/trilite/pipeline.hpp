#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "trilite/dataset.hpp"
#include "trilite/eval.hpp"
#include "trilite/model.hpp"

namespace trilite {

// Throws ConfigError if the dataset and head disagree on D, D_token or C.
void check_compatible(const DatasetHeader& header, const HeadConfig& config);

Batch make_batch(const Dataset& dataset, std::span<const std::size_t> indices);

// Eval-mode forward over the whole dataset: foreground map upsampled to image
// resolution, class ranking from the token classifier, and boxes at `tau`.
std::vector<EvalRecord> predict_records(const HeadParams& params, const Dataset& dataset, double tau,
                                        std::size_t chunk = 64);

// Eval-mode maps for a contiguous range of samples (B x K x h x w).
TriMaps predict_maps(const HeadParams& params, const Dataset& dataset, std::size_t first, std::size_t count);

} // namespace trilite
