#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "trilite/numerics.hpp"
#include "trilite/tensor.hpp"

namespace trilite {

enum class HeadMode { binary, three_channel };

std::string_view to_string(HeadMode mode);
HeadMode parse_head_mode(std::string_view text);

struct HeadConfig {
    std::size_t feature_dim = 0; // D
    std::size_t token_dim = 0;   // D_token
    std::size_t classes = 0;     // C
    std::size_t kernel_size = 3; // k, odd
    HeadMode mode = HeadMode::three_channel;

    // Channel layout: three_channel is [ambiguous, foreground, background],
    // binary is [foreground, background].
    std::size_t channels() const noexcept { return mode == HeadMode::binary ? 2 : 3; }
    std::size_t fg_channel() const noexcept { return mode == HeadMode::binary ? 0 : 1; }
    std::size_t bg_channel() const noexcept { return mode == HeadMode::binary ? 1 : 2; }
    std::optional<std::size_t> ambiguous_channel() const noexcept {
        if (mode == HeadMode::binary) return std::nullopt;
        return 0;
    }
    std::size_t padding() const noexcept { return (kernel_size - 1) / 2; }

    friend bool operator==(const HeadConfig&, const HeadConfig&) = default;
};

// K*D*k^2 + K (conv) + 2K (BN scale/shift) + C*D + C (shared region
// classifier) + C*D_token + C (token classifier). BN running statistics are
// not trainable and are not counted.
std::size_t trainable_parameter_count(const HeadConfig& config);

enum class ParamGroup { head, classifier };

struct HeadParams {
    HeadConfig config;
    Tensor conv_kernel;   // K x D x k x k
    Tensor conv_bias;     // K
    BatchNormState bn;    // K channels
    Tensor region_weight; // C x D, shared by the foreground and background embeddings
    Tensor region_bias;   // C
    Tensor token_weight;  // C x D_token
    Tensor token_bias;    // C

    // Everything zero except BN gamma = 1.
    static HeadParams zeros(const HeadConfig& config);
    // Weights uniform in +-1/sqrt(fan_in), biases zero, gamma 1, beta 0.
    static HeadParams initialized(const HeadConfig& config, std::uint64_t seed);

    std::size_t trainable_count() const { return trainable_parameter_count(config); }

    friend bool operator==(const HeadParams&, const HeadParams&) = default;
};

// Gradients of the trainable tensors, shaped like HeadParams.
struct HeadGrads {
    Tensor conv_kernel;
    Tensor conv_bias;
    std::vector<double> bn_gamma;
    std::vector<double> bn_beta;
    Tensor region_weight;
    Tensor region_bias;
    Tensor token_weight;
    Tensor token_bias;

    static HeadGrads zeros_like(const HeadParams& params);
};

template <typename T>
struct BasicParamView {
    std::string_view name;
    ParamGroup group;
    std::span<T> values;
};
using ParamView = BasicParamView<double>;
using ConstParamView = BasicParamView<const double>;

// Trainable tensors in a fixed order; gradient_views uses the same order.
std::vector<ParamView> parameter_views(HeadParams& params);
std::vector<ConstParamView> parameter_views(const HeadParams& params);
std::vector<ParamView> gradient_views(HeadGrads& grads);
std::vector<ConstParamView> gradient_views(const HeadGrads& grads);

std::vector<double> flatten(std::span<const ConstParamView> views);
void unflatten(std::span<const double> flat, std::span<const ParamView> views);

// ---------------------------------------------------------------------------
// Forward pieces
// ---------------------------------------------------------------------------

struct TriMaps {
    Tensor maps; // B x K x h x w, softmax over K
    HeadMode mode = HeadMode::three_channel;

    std::size_t batch() const { return maps.dim(0); }
    // B x h x w slice of channel `c`.
    Tensor channel(std::size_t c) const;
};

// Softmax(BN(Conv(F))). Train mode uses batch statistics and updates the
// running statistics in `params.bn`.
TriMaps trihead_forward(const Tensor& features, HeadParams& params, Mode mode);
// Eval-mode forward that leaves params untouched.
TriMaps trihead_forward(const Tensor& features, const HeadParams& params);

enum class Region { foreground, background };

struct RegionEmbedding {
    Tensor vectors; // B x D
    Region region = Region::foreground;
    std::vector<double> mask_mass; // sum of mask weights per batch element
};

// f = sum_i m_i F_i / (sum_i m_i + eps), per batch element.
// features B x D x h x w, mask B x h x w.
RegionEmbedding pool_region(const Tensor& features, const Tensor& mask, Region region, double eps);

struct PoolGrads {
    Tensor mask;
    Tensor features; // empty unless requested
};

PoolGrads pool_region_backward(const Tensor& features, const Tensor& mask, const RegionEmbedding& embedding,
                               const Tensor& grad_embedding, double eps, bool want_feature_grad = false);

// Shared fully connected layer applied to either region embedding.
Tensor region_logits(const RegionEmbedding& embedding, const HeadParams& params);

// ---------------------------------------------------------------------------
// Losses (batch means). `grad` is d loss / d logits.
// ---------------------------------------------------------------------------

struct LossAndGrad {
    double loss = 0.0;
    Tensor grad;
};

LossAndGrad cross_entropy(const Tensor& logits, std::span<const std::size_t> labels);
LossAndGrad loss_foreground(const Tensor& z_fg, std::span<const std::size_t> labels);
// -log(1 - softmax(z_bg)[y] + eps)
LossAndGrad loss_background(const Tensor& z_bg, std::span<const std::size_t> labels, double eps);
LossAndGrad loss_classification(const Tensor& z_token, std::span<const std::size_t> labels);

struct LossConfig {
    double alpha = 1.0;
    bool adversarial = true;
    double eps_pool = 1e-6;
    double eps_loss = 1e-6;
};

struct LossBreakdown {
    double l_fg = 0.0;
    double l_bg = 0.0; // 0 when the adversarial term is disabled
    double l_cls = 0.0;
    double alpha = 0.0; // effective weight, 0 when disabled
    double total = 0.0;
};

struct Batch {
    Tensor features; // B x D x h x w
    Tensor tokens;   // B x D_token
    std::vector<std::size_t> labels;

    std::size_t size() const noexcept { return labels.size(); }
};

struct LossResult {
    LossBreakdown losses;
    HeadGrads grads;
};

// Full objective L_fg + alpha L_bg + L_cls with gradients of every trainable
// tensor. Runs in train mode, so BN running statistics are updated.
LossResult total_loss(const Batch& batch, HeadParams& params, const LossConfig& config);

// Forward-only objective in eval mode.
LossBreakdown evaluate_loss(const Batch& batch, const HeadParams& params, const LossConfig& config);

} // namespace trilite
