#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "trilite/dataset.hpp"

namespace trilite {

// Synthetic feature datasets with known localization ground truth.
//
// A "world" (class signatures and background prototypes) is derived from
// world_seed; the per-sample stream from the generation seed. Train, val and
// test splits of one experiment share world_seed and use different seeds.
struct SynthSpec {
    std::size_t classes = 5;
    std::size_t grid_w = 16;
    std::size_t grid_h = 16;
    std::size_t feature_dim = 64;
    std::size_t samples = 500;
    double distractor_rate = 0.0;
    double occlusion_rate = 0.0;
    double noise_sigma = 0.3;
    std::size_t patch_size = 14;
    std::uint64_t world_seed = 0;
    std::size_t background_prototypes = 4;
    // Share of each class signature's variance carried by one direction common
    // to all classes: signature_c = sqrt(rho) o + sqrt(1 - rho) u_c.
    double objectness = 0.5;
};

// Patch-grid rectangle, half-open.
struct GridRect {
    std::size_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;

    std::size_t width() const noexcept { return x1 - x0; }
    std::size_t height() const noexcept { return y1 - y0; }
    bool contains(std::size_t x, std::size_t y) const noexcept { return x >= x0 && x < x1 && y >= y0 && y < y1; }
};

struct SynthTruth {
    GridRect object;
    std::optional<GridRect> distractor;
    std::size_t distractor_class = 0;
    std::optional<GridRect> occluder; // band of background patches through the object
};

struct SynthDataset {
    Dataset dataset;
    std::vector<SynthTruth> truth;
};

struct SynthWorld {
    Tensor signatures;  // C x D
    Tensor backgrounds; // P x D
};

SynthWorld synth_world(const SynthSpec& spec);

// Every feature value is rounded to 32-bit float precision, so the result
// equals its own write/read round trip.
SynthDataset synth_generate(const SynthSpec& spec, std::uint64_t seed);

} // namespace trilite
