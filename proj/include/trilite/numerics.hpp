#pragma once

#include <cstddef>
#include <vector>

#include "trilite/tensor.hpp"

namespace trilite {

enum class Mode { train, eval };

// ---------------------------------------------------------------------------
// conv2d: cross-correlation, zero padding, stride 1.
//
// input  B x D x h x w (a rank-3 D x h x w input is treated as B = 1)
// kernel K x D x k x k, k odd, padding must be (k - 1) / 2
// bias   K
// output B x K x h x w (same rank as input)
// ---------------------------------------------------------------------------

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t padding);

struct Conv2dGrads {
    Tensor input;  // empty unless requested
    Tensor kernel;
    Tensor bias;
};

Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& kernel, const Tensor& grad_output,
                            std::size_t padding, bool want_input_grad = true);

// ---------------------------------------------------------------------------
// batchnorm over (B, h, w) per channel.
// ---------------------------------------------------------------------------

struct BatchNormState {
    std::vector<double> gamma;
    std::vector<double> beta;
    std::vector<double> running_mean;
    std::vector<double> running_var;
    double momentum = 0.1;
    double eps = 1e-5;

    BatchNormState() = default;
    explicit BatchNormState(std::size_t channels)
        : gamma(channels, 1.0), beta(channels, 0.0), running_mean(channels, 0.0), running_var(channels, 1.0) {}

    std::size_t channels() const noexcept { return gamma.size(); }

    friend bool operator==(const BatchNormState&, const BatchNormState&) = default;
};

// Saved by the forward pass for the backward pass.
struct BatchNormCache {
    Mode mode = Mode::train;
    Tensor normalized;           // x_hat
    std::vector<double> inv_std; // 1 / sqrt(var + eps), per channel
};

// Train mode normalizes with biased batch statistics and folds the batch
// mean / unbiased variance into the running statistics. An exactly constant
// channel normalizes to zero, so its output is beta.
Tensor batchnorm(const Tensor& input, BatchNormState& state, Mode mode, BatchNormCache* cache = nullptr);

struct BatchNormGrads {
    Tensor input;
    std::vector<double> gamma;
    std::vector<double> beta;
};

BatchNormGrads batchnorm_backward(const Tensor& grad_output, const BatchNormState& state,
                                  const BatchNormCache& cache);

// ---------------------------------------------------------------------------
// softmax over the channel axis of a B x K x h x w tensor.
// ---------------------------------------------------------------------------

Tensor softmax_channels(const Tensor& input);
Tensor softmax_channels_backward(const Tensor& output, const Tensor& grad_output);

// ---------------------------------------------------------------------------
// linear: B x D times (C x D)^T plus bias C.
// ---------------------------------------------------------------------------

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);

struct LinearGrads {
    Tensor input;
    Tensor weight;
    Tensor bias;
};

LinearGrads linear_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_output);

// ---------------------------------------------------------------------------
// Row softmax helpers shared by the losses and the class ranking.
// ---------------------------------------------------------------------------

// Numerically stable log(sum(exp(row))).
double log_sum_exp(std::span<const double> row);

} // namespace trilite
