#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "trilite/grad_check.hpp"
#include "trilite/model.hpp"

namespace trilite {

struct ModelCheckSpec {
    HeadMode mode = HeadMode::three_channel;
    bool adversarial = true;
    std::size_t batch = 2;
    std::size_t feature_dim = 8;
    std::size_t token_dim = 8;
    std::size_t grid = 4;
    std::size_t classes = 5;
    std::size_t kernel_size = 3;
    double alpha = 1.0;
    double step = 1e-6;
    std::uint64_t seed = 0;
    // Test hook: perturb the analytic gradient of this tensor before comparing.
    std::optional<std::string> corrupt_tensor;
};

struct TensorCheck {
    std::string name;
    ParamGroup group = ParamGroup::head;
    GradCheckResult result;
};

struct ModelCheckReport {
    std::vector<TensorCheck> tensors;
    double max_error() const;
    const TensorCheck& worst() const;
};

// Random instance (features, tokens, labels, parameters with non-trivial BN
// scale/shift) drawn from `seed`; every trainable coordinate of the full
// objective is compared against central differences.
ModelCheckReport check_model_gradients(const ModelCheckSpec& spec);

std::string_view to_string(ParamGroup group);

} // namespace trilite
