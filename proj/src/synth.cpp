#include "trilite/synth.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "trilite/error.hpp"
#include "trilite/rng.hpp"

namespace trilite {

namespace {

constexpr std::size_t kMinGrid = 6;
constexpr int kPlacementAttempts = 64;

struct AxisRange {
    std::size_t lo, hi;
};

// Object sides span roughly 35-65% of the grid, at least 3 patches so an
// occluder band can split them, and leave room for a distractor plus gap.
AxisRange object_side(std::size_t g) {
    const auto lo = std::max<std::size_t>(3, static_cast<std::size_t>(std::lround(0.35 * static_cast<double>(g))));
    const auto hi = std::min(g - 3, std::max(lo, static_cast<std::size_t>(std::lround(0.65 * static_cast<double>(g)))));
    return {std::min(lo, hi), hi};
}

AxisRange distractor_side(std::size_t g) { return {2, std::max<std::size_t>(2, g / 5)}; }

GridRect random_rect(Rng& rng, std::size_t gw, std::size_t gh, AxisRange sw, AxisRange sh) {
    const auto w = static_cast<std::size_t>(rng.between(static_cast<std::int64_t>(sw.lo), static_cast<std::int64_t>(sw.hi)));
    const auto h = static_cast<std::size_t>(rng.between(static_cast<std::int64_t>(sh.lo), static_cast<std::int64_t>(sh.hi)));
    const auto x0 = static_cast<std::size_t>(rng.below(gw - w + 1));
    const auto y0 = static_cast<std::size_t>(rng.below(gh - h + 1));
    return {x0, y0, x0 + w, y0 + h};
}

// True if `a` grown by one patch on every side overlaps `b`.
bool touches(const GridRect& a, const GridRect& b) {
    const auto ax0 = a.x0 == 0 ? 0 : a.x0 - 1, ay0 = a.y0 == 0 ? 0 : a.y0 - 1;
    return ax0 < b.x1 && b.x0 < a.x1 + 1 && ay0 < b.y1 && b.y0 < a.y1 + 1;
}

std::optional<GridRect> place_distractor(Rng& rng, const GridRect& object, std::size_t gw, std::size_t gh) {
    const auto sw = distractor_side(gw), sh = distractor_side(gh);
    const auto w = static_cast<std::size_t>(rng.between(static_cast<std::int64_t>(sw.lo), static_cast<std::int64_t>(sw.hi)));
    const auto h = static_cast<std::size_t>(rng.between(static_cast<std::int64_t>(sh.lo), static_cast<std::int64_t>(sh.hi)));
    std::vector<GridRect> options;
    for (std::size_t y = 0; y + h <= gh; ++y)
        for (std::size_t x = 0; x + w <= gw; ++x) {
            GridRect r{x, y, x + w, y + h};
            if (!touches(r, object)) options.push_back(r);
        }
    if (options.empty()) return std::nullopt;
    return options[rng.below(options.size())];
}

GridRect place_occluder(Rng& rng, const GridRect& object) {
    const bool vertical = object.width() >= 3 && (object.height() < 3 || rng.bernoulli(0.5));
    const std::size_t side = vertical ? object.width() : object.height();
    const std::size_t band = static_cast<std::size_t>(
        rng.between(1, static_cast<std::int64_t>(std::max<std::size_t>(1, (side - 2) / 3))));
    // At least one object patch remains on each side of the band.
    const std::size_t start = static_cast<std::size_t>(rng.between(1, static_cast<std::int64_t>(side - 1 - band)));
    if (vertical) return {object.x0 + start, object.y0, object.x0 + start + band, object.y1};
    return {object.x0, object.y0 + start, object.x1, object.y0 + start + band};
}

void set_patch(Tensor& features, std::size_t gw, std::size_t gh, std::size_t x, std::size_t y,
               std::span<const double> base, double sigma, Rng& rng) {
    const std::size_t plane = gw * gh;
    for (std::size_t d = 0; d < base.size(); ++d) {
        const double noise = sigma > 0.0 ? sigma * rng.normal() : 0.0;
        features[d * plane + y * gw + x] = static_cast<double>(static_cast<float>(base[d] + noise));
    }
}

} // namespace

SynthWorld synth_world(const SynthSpec& spec) {
    Rng rng(spec.world_seed, 0x5157);
    SynthWorld world{Tensor({spec.classes, spec.feature_dim}), Tensor({spec.background_prototypes, spec.feature_dim})};
    std::vector<double> shared(spec.feature_dim);
    for (auto& v : shared) v = rng.normal();
    const double a = std::sqrt(spec.objectness), b = std::sqrt(1.0 - spec.objectness);
    for (std::size_t c = 0; c < spec.classes; ++c)
        for (std::size_t d = 0; d < spec.feature_dim; ++d)
            world.signatures[c * spec.feature_dim + d] = static_cast<double>(static_cast<float>(a * shared[d] + b * rng.normal()));
    for (auto& v : world.backgrounds.data()) v = static_cast<double>(static_cast<float>(rng.normal()));
    return world;
}

SynthDataset synth_generate(const SynthSpec& spec, std::uint64_t seed) {
    if (spec.classes < 2) throw ConfigError("synth: need at least 2 classes");
    if (spec.feature_dim == 0) throw ConfigError("synth: feature dimension must be positive");
    if (spec.background_prototypes == 0) throw ConfigError("synth: need at least one background prototype");
    if (spec.patch_size == 0) throw ConfigError("synth: patch size must be positive");
    if (spec.distractor_rate < 0 || spec.distractor_rate > 1 || spec.occlusion_rate < 0 || spec.occlusion_rate > 1)
        throw ConfigError("synth: rates must lie in [0, 1]");
    if (spec.noise_sigma < 0) throw ConfigError("synth: noise sigma must be non-negative");
    if (spec.objectness < 0 || spec.objectness >= 1) throw ConfigError("synth: objectness must lie in [0, 1)");
    if (spec.grid_w < kMinGrid || spec.grid_h < kMinGrid)
        throw GenerationError("synth: a " + std::to_string(spec.grid_w) + "x" + std::to_string(spec.grid_h) +
                              " grid cannot hold an object, distractor and occluder (minimum 6x6)");

    const auto world = synth_world(spec);
    const std::size_t gw = spec.grid_w, gh = spec.grid_h, dim = spec.feature_dim, p = spec.patch_size;
    const std::size_t img_w = gw * p, img_h = gh * p;

    SynthDataset out;
    auto& h = out.dataset.header;
    h.feature_dim = dim;
    h.token_dim = dim;
    h.grid_w = gw;
    h.grid_h = gh;
    h.classes = spec.classes;
    h.image_w = img_w;
    h.image_h = img_h;
    h.patch_size = p;
    h.has_bbox = true;
    h.has_mask = true;
    h.sample_count = spec.samples;
    h.metadata = "synthetic";

    Rng rng(seed, 0xDA7A);
    auto signature = [&](std::size_t c) { return world.signatures.data().subspan(c * dim, dim); };
    auto background = [&](std::size_t b) { return world.backgrounds.data().subspan(b * dim, dim); };

    for (std::size_t n = 0; n < spec.samples; ++n) {
        SynthTruth truth;
        FeatureSample s;
        s.label = static_cast<std::size_t>(rng.below(spec.classes));

        const bool want_distractor = rng.bernoulli(spec.distractor_rate);
        const bool want_occluder = rng.bernoulli(spec.occlusion_rate);
        bool placed = false;
        for (int attempt = 0; attempt < kPlacementAttempts && !placed; ++attempt) {
            truth.object = random_rect(rng, gw, gh, object_side(gw), object_side(gh));
            truth.distractor.reset();
            if (want_distractor) {
                truth.distractor = place_distractor(rng, truth.object, gw, gh);
                placed = truth.distractor.has_value();
            } else {
                placed = true;
            }
        }
        if (!placed)
            throw GenerationError("synth: could not place a distractor beside the object on a " + std::to_string(gw) +
                                  "x" + std::to_string(gh) + " grid");
        if (want_distractor) {
            truth.distractor_class = static_cast<std::size_t>(rng.below(spec.classes - 1));
            if (truth.distractor_class >= s.label) ++truth.distractor_class;
        }
        if (want_occluder) truth.occluder = place_occluder(rng, truth.object);

        s.patch_features = Tensor({dim, gh, gw});
        for (std::size_t y = 0; y < gh; ++y)
            for (std::size_t x = 0; x < gw; ++x) {
                std::span<const double> base;
                if (truth.object.contains(x, y) && !(truth.occluder && truth.occluder->contains(x, y)))
                    base = signature(s.label);
                else if (truth.distractor && truth.distractor->contains(x, y))
                    base = signature(truth.distractor_class);
                else
                    base = background(rng.below(spec.background_prototypes));
                set_patch(s.patch_features, gw, gh, x, y, base, spec.noise_sigma, rng);
            }

        s.class_token = Tensor({dim});
        const auto sig = signature(s.label);
        for (std::size_t d = 0; d < dim; ++d) {
            const double noise = spec.noise_sigma > 0.0 ? spec.noise_sigma * rng.normal() : 0.0;
            s.class_token[d] = static_cast<double>(static_cast<float>(sig[d] + noise));
        }

        // The box covers the whole object, occluded part included.
        const auto& o = truth.object;
        s.bbox_gt.push_back(Box{static_cast<std::int64_t>(o.x0 * p), static_cast<std::int64_t>(o.y0 * p),
                                static_cast<std::int64_t>(o.x1 * p), static_cast<std::int64_t>(o.y1 * p)});
        std::vector<std::uint8_t> mask(img_w * img_h, 0);
        for (std::size_t y = o.y0 * p; y < o.y1 * p; ++y)
            for (std::size_t x = o.x0 * p; x < o.x1 * p; ++x)
                if (!(truth.occluder && truth.occluder->contains(x / p, y / p))) mask[y * img_w + x] = 1;
        s.mask_gt = std::move(mask);

        out.dataset.samples.push_back(std::move(s));
        out.truth.push_back(truth);
    }
    return out;
}

} // namespace trilite
