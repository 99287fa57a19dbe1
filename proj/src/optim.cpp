#include "trilite/optim.hpp"

#include <cmath>
#include <string>

#include "trilite/error.hpp"

namespace trilite {

AdamState AdamState::for_params(const HeadParams& params) {
    AdamState s;
    for (const auto& view : parameter_views(params)) {
        s.m.emplace_back(view.values.size(), 0.0);
        s.v.emplace_back(view.values.size(), 0.0);
    }
    return s;
}

void adam_update(std::span<double> theta, std::span<const double> grad, std::span<double> m, std::span<double> v,
                 std::uint64_t step, double lr, double weight_decay, double beta1, double beta2, double eps) {
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    for (std::size_t i = 0; i < theta.size(); ++i) {
        m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
        const double m_hat = m[i] / c1;
        const double v_hat = v[i] / c2;
        theta[i] -= lr * (m_hat / (std::sqrt(v_hat) + eps) + weight_decay * theta[i]);
    }
}

void adam_step(HeadParams& params, const HeadGrads& grads, AdamState& state, double lr_head, double lr_cls,
               double weight_decay) {
    const auto pv = parameter_views(params);
    const auto gv = gradient_views(grads);
    if (state.m.size() != pv.size() || state.v.size() != pv.size())
        throw ConfigError("adam state does not match the parameter layout");
    for (std::size_t i = 0; i < gv.size(); ++i) {
        if (gv[i].values.size() != pv[i].values.size() || state.m[i].size() != pv[i].values.size())
            throw ConfigError(std::string("gradient for ") + std::string(gv[i].name) + " has the wrong size");
        for (double g : gv[i].values)
            if (!std::isfinite(g))
                throw NumericError(std::string("non-finite gradient in parameter group '") +
                                   (gv[i].group == ParamGroup::head ? "head" : "classifier") + "' (tensor " +
                                   std::string(gv[i].name) + ")");
    }
    ++state.step;
    for (std::size_t i = 0; i < pv.size(); ++i) {
        const double lr = pv[i].group == ParamGroup::head ? lr_head : lr_cls;
        adam_update(pv[i].values, gv[i].values, state.m[i], state.v[i], state.step, lr, weight_decay, state.beta1,
                    state.beta2, state.eps);
    }
}

} // namespace trilite
