#include "trilite/model_check.hpp"

#include <algorithm>
#include <utility>

#include "trilite/error.hpp"
#include "trilite/rng.hpp"

namespace trilite {

double ModelCheckReport::max_error() const {
    double m = 0;
    for (const auto& t : tensors) m = std::max(m, t.result.max_error);
    return m;
}

const TensorCheck& ModelCheckReport::worst() const {
    if (tensors.empty()) throw ConfigError("model check report is empty");
    return *std::max_element(tensors.begin(), tensors.end(), [](const TensorCheck& a, const TensorCheck& b) {
        return a.result.max_error < b.result.max_error;
    });
}

std::string_view to_string(ParamGroup group) { return group == ParamGroup::head ? "head" : "classifier"; }

ModelCheckReport check_model_gradients(const ModelCheckSpec& spec) {
    HeadConfig cfg;
    cfg.feature_dim = spec.feature_dim;
    cfg.token_dim = spec.token_dim;
    cfg.classes = spec.classes;
    cfg.kernel_size = spec.kernel_size;
    cfg.mode = spec.mode;

    Rng rng(spec.seed, 0x6763);
    HeadParams params = HeadParams::initialized(cfg, spec.seed);
    for (std::size_t c = 0; c < cfg.channels(); ++c) {
        params.bn.gamma[c] = rng.uniform(0.5, 1.5);
        params.bn.beta[c] = rng.uniform(-0.5, 0.5);
    }
    for (auto& v : params.region_bias.data()) v = rng.uniform(-0.1, 0.1);
    for (auto& v : params.token_bias.data()) v = rng.uniform(-0.1, 0.1);

    Batch batch;
    batch.features = Tensor({spec.batch, cfg.feature_dim, spec.grid, spec.grid});
    for (auto& v : batch.features.data()) v = rng.normal();
    batch.tokens = Tensor({spec.batch, cfg.token_dim});
    for (auto& v : batch.tokens.data()) v = rng.normal();
    for (std::size_t b = 0; b < spec.batch; ++b) batch.labels.push_back(rng.below(cfg.classes));

    LossConfig loss;
    loss.alpha = spec.alpha;
    loss.adversarial = spec.adversarial;

    HeadParams work = params;
    LossResult analytic = total_loss(batch, work, loss);
    if (spec.corrupt_tensor) {
        bool found = false;
        for (auto& view : gradient_views(analytic.grads))
            if (view.name == *spec.corrupt_tensor) {
                for (auto& g : view.values) g = g * 1.5 + 0.1;
                found = true;
            }
        if (!found) throw ConfigError("unknown parameter tensor '" + *spec.corrupt_tensor + "'");
    }

    const auto param_views = parameter_views(std::as_const(params));
    const auto grad_views = gradient_views(std::as_const(analytic.grads));

    ModelCheckReport report;
    for (std::size_t t = 0; t < param_views.size(); ++t) {
        const std::vector<double> base(param_views[t].values.begin(), param_views[t].values.end());
        auto fn = [&](std::span<const double> p) {
            HeadParams trial = params;
            auto views = parameter_views(trial);
            std::copy(p.begin(), p.end(), views[t].values.begin());
            return total_loss(batch, trial, loss).losses.total;
        };
        TensorCheck check;
        check.name = std::string(param_views[t].name);
        check.group = param_views[t].group;
        check.result = grad_check(fn, base, grad_views[t].values, base.size(), spec.step, spec.seed);
        report.tensors.push_back(std::move(check));
    }
    return report;
}

} // namespace trilite
