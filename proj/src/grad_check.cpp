#include "trilite/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "trilite/error.hpp"
#include "trilite/rng.hpp"

namespace trilite {

GradCheckResult grad_check(const ScalarFunction& fn, std::span<const double> params,
                           std::span<const double> analytic, std::size_t probe_count, double step,
                           std::uint64_t seed) {
    if (analytic.size() != params.size())
        throw ConfigError("grad_check: analytic gradient has " + std::to_string(analytic.size()) +
                          " entries for " + std::to_string(params.size()) + " parameters");
    if (!(step >= 1e-7 && step <= 1e-4)) throw ConfigError("grad_check: step must lie in [1e-7, 1e-4]");

    std::vector<double> theta(params.begin(), params.end());
    const double f0 = fn(theta);
    const double f1 = fn(theta);
    if (f0 != f1 && !(std::isnan(f0) && std::isnan(f1)))
        throw DeterminismError("grad_check: two evaluations at the same point disagree");

    std::vector<std::size_t> coords(params.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (probe_count < coords.size()) {
        Rng rng(seed);
        rng.shuffle(coords.begin(), coords.end());
        coords.resize(probe_count);
        std::sort(coords.begin(), coords.end());
    }

    GradCheckResult result;
    for (auto i : coords) {
        const double saved = theta[i];
        theta[i] = saved + step;
        const double up = fn(theta);
        theta[i] = saved - step;
        const double down = fn(theta);
        theta[i] = saved;
        const double numeric = (up - down) / (2.0 * step);
        const double a = analytic[i];
        const double scale = std::max(std::abs(a), std::abs(numeric));
        const double err = scale < 1e-8 ? std::abs(a - numeric) : std::abs(a - numeric) / scale;
        if (err > result.max_error || result.probes == 0) {
            result.max_error = err;
            result.worst_index = i;
            result.worst_analytic = a;
            result.worst_numeric = numeric;
        }
        ++result.probes;
    }
    return result;
}

} // namespace trilite
