#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "trilite/model.hpp"

namespace trilite {

struct AdamState {
    std::vector<std::vector<double>> m; // one per parameter tensor, in parameter_views order
    std::vector<std::vector<double>> v;
    std::uint64_t step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    static AdamState for_params(const HeadParams& params);
};

// One bias-corrected Adam update of `theta` at step `step` (1-based) with
// decoupled weight decay: theta -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta).
void adam_update(std::span<double> theta, std::span<const double> grad, std::span<double> m, std::span<double> v,
                 std::uint64_t step, double lr, double weight_decay, double beta1, double beta2, double eps);

// Head tensors (conv, BN, shared region classifier) move with lr_head, the
// token classifier with lr_cls. Throws NumericError naming the parameter
// group on a non-finite gradient, before anything is modified.
void adam_step(HeadParams& params, const HeadGrads& grads, AdamState& state, double lr_head, double lr_cls,
               double weight_decay);

} // namespace trilite
