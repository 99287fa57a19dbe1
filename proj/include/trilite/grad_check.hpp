#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>

namespace trilite {

using ScalarFunction = std::function<double(std::span<const double>)>;

struct GradCheckResult {
    double max_error = 0.0;    // max over probes of the relative (or absolute) error
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t probes = 0;
};

// Compares `analytic` (the gradient of `fn` at `params`) against central
// differences (f(x + h) - f(x - h)) / 2h on `probe_count` coordinates chosen
// with `seed`. If probe_count >= params.size() every coordinate is probed.
//
// Error per coordinate is |a - n| / max(|a|, |n|), or |a - n| when both
// magnitudes are below 1e-8. `fn` is evaluated twice at `params` first and
// DeterminismError is thrown if the results differ.
GradCheckResult grad_check(const ScalarFunction& fn, std::span<const double> params,
                           std::span<const double> analytic, std::size_t probe_count, double step,
                           std::uint64_t seed = 0);

} // namespace trilite
