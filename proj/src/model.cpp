#include "trilite/model.hpp"

#include <cmath>
#include <string>

#include "trilite/error.hpp"
#include "trilite/rng.hpp"

namespace trilite {

std::string_view to_string(HeadMode mode) { return mode == HeadMode::binary ? "binary" : "three_channel"; }

HeadMode parse_head_mode(std::string_view text) {
    if (text == "binary") return HeadMode::binary;
    if (text == "three_channel") return HeadMode::three_channel;
    throw ConfigError("unknown head mode '" + std::string(text) + "' (expected binary or three_channel)");
}

std::size_t trainable_parameter_count(const HeadConfig& c) {
    const std::size_t k = c.channels();
    return k * c.feature_dim * c.kernel_size * c.kernel_size + k + 2 * k + c.classes * c.feature_dim + c.classes +
           c.classes * c.token_dim + c.classes;
}

namespace {

void validate(const HeadConfig& c) {
    if (c.feature_dim == 0 || c.token_dim == 0) throw ConfigError("feature and token dimensions must be positive");
    if (c.classes < 2) throw ConfigError("need at least two classes");
    if (c.kernel_size % 2 == 0) throw ConfigError("conv kernel size must be odd");
}

void fill_uniform(Tensor& t, double bound, Rng& rng) {
    for (auto& v : t.data()) v = rng.uniform(-bound, bound);
}

} // namespace

HeadParams HeadParams::zeros(const HeadConfig& config) {
    validate(config);
    const std::size_t k = config.channels();
    HeadParams p;
    p.config = config;
    p.conv_kernel = Tensor({k, config.feature_dim, config.kernel_size, config.kernel_size});
    p.conv_bias = Tensor({k});
    p.bn = BatchNormState(k);
    p.region_weight = Tensor({config.classes, config.feature_dim});
    p.region_bias = Tensor({config.classes});
    p.token_weight = Tensor({config.classes, config.token_dim});
    p.token_bias = Tensor({config.classes});
    return p;
}

HeadParams HeadParams::initialized(const HeadConfig& config, std::uint64_t seed) {
    auto p = zeros(config);
    Rng rng(seed);
    fill_uniform(p.conv_kernel, 1.0 / std::sqrt(static_cast<double>(config.feature_dim * config.kernel_size *
                                                                     config.kernel_size)),
                 rng);
    fill_uniform(p.region_weight, 1.0 / std::sqrt(static_cast<double>(config.feature_dim)), rng);
    fill_uniform(p.token_weight, 1.0 / std::sqrt(static_cast<double>(config.token_dim)), rng);
    return p;
}

HeadGrads HeadGrads::zeros_like(const HeadParams& p) {
    return HeadGrads{Tensor(p.conv_kernel.shape()),
                     Tensor(p.conv_bias.shape()),
                     std::vector<double>(p.bn.channels()),
                     std::vector<double>(p.bn.channels()),
                     Tensor(p.region_weight.shape()),
                     Tensor(p.region_bias.shape()),
                     Tensor(p.token_weight.shape()),
                     Tensor(p.token_bias.shape())};
}

namespace {

template <typename View, typename P, typename G>
std::vector<View> make_views(P& p, G& bn_gamma, G& bn_beta) {
    return {
        {"conv_kernel", ParamGroup::head, p.conv_kernel.data()},
        {"conv_bias", ParamGroup::head, p.conv_bias.data()},
        {"bn_gamma", ParamGroup::head, bn_gamma},
        {"bn_beta", ParamGroup::head, bn_beta},
        {"region_weight", ParamGroup::head, p.region_weight.data()},
        {"region_bias", ParamGroup::head, p.region_bias.data()},
        {"token_weight", ParamGroup::classifier, p.token_weight.data()},
        {"token_bias", ParamGroup::classifier, p.token_bias.data()},
    };
}

} // namespace

std::vector<ParamView> parameter_views(HeadParams& p) { return make_views<ParamView>(p, p.bn.gamma, p.bn.beta); }
std::vector<ConstParamView> parameter_views(const HeadParams& p) {
    return make_views<ConstParamView>(p, p.bn.gamma, p.bn.beta);
}
std::vector<ParamView> gradient_views(HeadGrads& g) { return make_views<ParamView>(g, g.bn_gamma, g.bn_beta); }
std::vector<ConstParamView> gradient_views(const HeadGrads& g) {
    return make_views<ConstParamView>(g, g.bn_gamma, g.bn_beta);
}

std::vector<double> flatten(std::span<const ConstParamView> views) {
    std::vector<double> flat;
    for (const auto& v : views) flat.insert(flat.end(), v.values.begin(), v.values.end());
    return flat;
}

void unflatten(std::span<const double> flat, std::span<const ParamView> views) {
    std::size_t at = 0;
    for (const auto& v : views) {
        if (at + v.values.size() > flat.size()) throw ConfigError("unflatten: flat vector too short");
        std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(at), v.values.size(), v.values.begin());
        at += v.values.size();
    }
    if (at != flat.size()) throw ConfigError("unflatten: flat vector too long");
}

Tensor TriMaps::channel(std::size_t c) const {
    const std::size_t b = maps.dim(0), k = maps.dim(1), h = maps.dim(2), w = maps.dim(3);
    if (c >= k) throw ConfigError("channel " + std::to_string(c) + " out of range");
    Tensor out({b, h, w});
    for (std::size_t i = 0; i < b; ++i)
        std::copy_n(maps.data().begin() + static_cast<std::ptrdiff_t>((i * k + c) * h * w), h * w,
                    out.data().begin() + static_cast<std::ptrdiff_t>(i * h * w));
    return out;
}

namespace {

void check_features(const Tensor& features, const HeadConfig& config) {
    if (features.rank() != 4) throw ConfigError("features must be B x D x h x w, got " + shape_string(features.shape()));
    if (features.dim(1) != config.feature_dim)
        throw ConfigError("features have D=" + std::to_string(features.dim(1)) + ", head expects " +
                          std::to_string(config.feature_dim));
    if (features.dim(2) < 2 || features.dim(3) < 2) throw ConfigError("feature grid must be at least 2x2");
}

void check_labels(std::span<const std::size_t> labels, std::size_t batch, std::size_t classes) {
    if (labels.size() != batch)
        throw ConfigError(std::to_string(labels.size()) + " labels for a batch of " + std::to_string(batch));
    for (auto y : labels)
        if (y >= classes)
            throw DataError("label " + std::to_string(y) + " out of range for " + std::to_string(classes) + " classes");
}

// Everything the backward pass needs from the head forward.
struct HeadTrace {
    Tensor conv_out;
    BatchNormCache bn_cache;
    TriMaps maps;
};

HeadTrace head_forward(const Tensor& features, HeadParams& params, Mode mode) {
    check_features(features, params.config);
    HeadTrace t;
    t.conv_out = conv2d(features, params.conv_kernel, params.conv_bias, params.config.padding());
    auto normalized = batchnorm(t.conv_out, params.bn, mode, &t.bn_cache);
    t.maps = TriMaps{softmax_channels(normalized), params.config.mode};
    return t;
}

} // namespace

TriMaps trihead_forward(const Tensor& features, HeadParams& params, Mode mode) {
    return head_forward(features, params, mode).maps;
}

TriMaps trihead_forward(const Tensor& features, const HeadParams& params) {
    check_features(features, params.config);
    auto bn = params.bn;
    auto conv_out = conv2d(features, params.conv_kernel, params.conv_bias, params.config.padding());
    return TriMaps{softmax_channels(batchnorm(conv_out, bn, Mode::eval)), params.config.mode};
}

RegionEmbedding pool_region(const Tensor& features, const Tensor& mask, Region region, double eps) {
    if (features.rank() != 4 || mask.rank() != 3 || mask.dim(0) != features.dim(0) || mask.dim(1) != features.dim(2) ||
        mask.dim(2) != features.dim(3))
        throw ConfigError("pool_region: mask " + shape_string(mask.shape()) + " does not match features " +
                          shape_string(features.shape()));
    const std::size_t batch = features.dim(0), dim = features.dim(1), plane = features.dim(2) * features.dim(3);
    RegionEmbedding e{Tensor({batch, dim}), region, std::vector<double>(batch)};
    for (std::size_t b = 0; b < batch; ++b) {
        const double* m = mask.data().data() + b * plane;
        double mass = 0.0;
        for (std::size_t i = 0; i < plane; ++i) mass += m[i];
        e.mask_mass[b] = mass;
        const double denom = mass + eps;
        for (std::size_t d = 0; d < dim; ++d) {
            const double* f = features.data().data() + (b * dim + d) * plane;
            double acc = 0.0;
            for (std::size_t i = 0; i < plane; ++i) acc += m[i] * f[i];
            e.vectors[b * dim + d] = acc / denom;
        }
    }
    e.vectors.check_finite("pooled region embedding");
    return e;
}

PoolGrads pool_region_backward(const Tensor& features, const Tensor& mask, const RegionEmbedding& embedding,
                               const Tensor& grad_embedding, double eps, bool want_feature_grad) {
    const std::size_t batch = features.dim(0), dim = features.dim(1), plane = features.dim(2) * features.dim(3);
    if (grad_embedding.shape() != embedding.vectors.shape()) throw ConfigError("pool_region_backward shape mismatch");
    PoolGrads g{Tensor(mask.shape()), want_feature_grad ? Tensor(features.shape()) : Tensor()};
    for (std::size_t b = 0; b < batch; ++b) {
        const double inv = 1.0 / (embedding.mask_mass[b] + eps);
        const double* ge = grad_embedding.data().data() + b * dim;
        const double* f = embedding.vectors.data().data() + b * dim;
        double* gm = g.mask.data().data() + b * plane;
        // d f_d / d m_i = (F_{d,i} - f_d) / (Z + eps)
        for (std::size_t d = 0; d < dim; ++d) {
            const double* feat = features.data().data() + (b * dim + d) * plane;
            for (std::size_t i = 0; i < plane; ++i) gm[i] += ge[d] * (feat[i] - f[d]);
        }
        for (std::size_t i = 0; i < plane; ++i) gm[i] *= inv;
        if (want_feature_grad) {
            const double* m = mask.data().data() + b * plane;
            for (std::size_t d = 0; d < dim; ++d) {
                double* gf = g.features.data().data() + (b * dim + d) * plane;
                for (std::size_t i = 0; i < plane; ++i) gf[i] = ge[d] * m[i] * inv;
            }
        }
    }
    g.mask.check_finite("pool_region mask gradient");
    return g;
}

Tensor region_logits(const RegionEmbedding& embedding, const HeadParams& params) {
    return linear(embedding.vectors, params.region_weight, params.region_bias);
}

LossAndGrad cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
    if (logits.rank() != 2) throw ConfigError("cross_entropy expects B x C logits");
    const std::size_t batch = logits.dim(0), classes = logits.dim(1);
    check_labels(labels, batch, classes);
    logits.check_finite("cross_entropy logits");
    LossAndGrad out{0.0, Tensor(logits.shape())};
    const double inv_b = 1.0 / static_cast<double>(batch);
    for (std::size_t b = 0; b < batch; ++b) {
        const auto row = logits.data().subspan(b * classes, classes);
        const double lse = log_sum_exp(row);
        out.loss += lse - row[labels[b]];
        for (std::size_t c = 0; c < classes; ++c) out.grad[b * classes + c] = std::exp(row[c] - lse) * inv_b;
        out.grad[b * classes + labels[b]] -= inv_b;
    }
    out.loss *= inv_b;
    return out;
}

LossAndGrad loss_foreground(const Tensor& z_fg, std::span<const std::size_t> labels) {
    return cross_entropy(z_fg, labels);
}

LossAndGrad loss_classification(const Tensor& z_token, std::span<const std::size_t> labels) {
    return cross_entropy(z_token, labels);
}

LossAndGrad loss_background(const Tensor& z_bg, std::span<const std::size_t> labels, double eps) {
    if (z_bg.rank() != 2) throw ConfigError("loss_background expects B x C logits");
    if (!(eps > 0.0)) throw ConfigError("loss_background needs eps > 0");
    const std::size_t batch = z_bg.dim(0), classes = z_bg.dim(1);
    check_labels(labels, batch, classes);
    z_bg.check_finite("background logits");
    LossAndGrad out{0.0, Tensor(z_bg.shape())};
    const double inv_b = 1.0 / static_cast<double>(batch);
    for (std::size_t b = 0; b < batch; ++b) {
        const auto row = z_bg.data().subspan(b * classes, classes);
        const double lse = log_sum_exp(row);
        const std::size_t y = labels[b];
        const double p_y = std::exp(row[y] - lse);
        const double keep = 1.0 - p_y + eps;
        out.loss -= std::log(keep);
        // d/dz_j [-log(1 - p_y + eps)] = p_y (delta_jy - p_j) / (1 - p_y + eps)
        const double scale = p_y / keep * inv_b;
        for (std::size_t c = 0; c < classes; ++c) {
            const double p_c = std::exp(row[c] - lse);
            out.grad[b * classes + c] = ((c == y ? 1.0 : 0.0) - p_c) * scale;
        }
    }
    out.loss *= inv_b;
    return out;
}

namespace {

void check_batch(const Batch& batch, const HeadConfig& config) {
    check_features(batch.features, config);
    const std::size_t b = batch.features.dim(0);
    if (batch.tokens.rank() != 2 || batch.tokens.dim(0) != b || batch.tokens.dim(1) != config.token_dim)
        throw ConfigError("class tokens " + shape_string(batch.tokens.shape()) + " do not match the batch");
    check_labels(batch.labels, b, config.classes);
}

void add_into(Tensor& dst, const Tensor& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

} // namespace

LossResult total_loss(const Batch& batch, HeadParams& params, const LossConfig& config) {
    if (config.alpha < 0.0) throw ConfigError("alpha must be non-negative");
    check_batch(batch, params.config);
    const auto& hc = params.config;

    auto trace = head_forward(batch.features, params, Mode::train);
    const Tensor fg_mask = trace.maps.channel(hc.fg_channel());
    const auto fg = pool_region(batch.features, fg_mask, Region::foreground, config.eps_pool);
    const Tensor z_fg = region_logits(fg, params);
    const auto l_fg = loss_foreground(z_fg, batch.labels);

    const Tensor z_tok = linear(batch.tokens, params.token_weight, params.token_bias);
    const auto l_cls = loss_classification(z_tok, batch.labels);

    LossResult result;
    result.grads = HeadGrads::zeros_like(params);
    auto& grads = result.grads;
    result.losses.l_fg = l_fg.loss;
    result.losses.l_cls = l_cls.loss;

    const std::size_t b = batch.size(), k = hc.channels();
    const std::size_t plane = batch.features.dim(2) * batch.features.dim(3);
    Tensor grad_maps(trace.maps.maps.shape());
    auto scatter_mask_grad = [&](const Tensor& gm, std::size_t channel) {
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t j = 0; j < plane; ++j) grad_maps[(i * k + channel) * plane + j] += gm[i * plane + j];
    };

    {
        auto lg = linear_backward(fg.vectors, params.region_weight, l_fg.grad);
        add_into(grads.region_weight, lg.weight);
        add_into(grads.region_bias, lg.bias);
        scatter_mask_grad(pool_region_backward(batch.features, fg_mask, fg, lg.input, config.eps_pool).mask,
                          hc.fg_channel());
    }

    if (config.adversarial) {
        const Tensor bg_mask = trace.maps.channel(hc.bg_channel());
        const auto bg = pool_region(batch.features, bg_mask, Region::background, config.eps_pool);
        const Tensor z_bg = region_logits(bg, params);
        auto l_bg = loss_background(z_bg, batch.labels, config.eps_loss);
        result.losses.l_bg = l_bg.loss;
        result.losses.alpha = config.alpha;
        for (auto& v : l_bg.grad.data()) v *= config.alpha;
        auto lg = linear_backward(bg.vectors, params.region_weight, l_bg.grad);
        add_into(grads.region_weight, lg.weight);
        add_into(grads.region_bias, lg.bias);
        scatter_mask_grad(pool_region_backward(batch.features, bg_mask, bg, lg.input, config.eps_pool).mask,
                          hc.bg_channel());
    }
    result.losses.total = result.losses.l_fg + result.losses.alpha * result.losses.l_bg + result.losses.l_cls;

    const Tensor grad_norm = softmax_channels_backward(trace.maps.maps, grad_maps);
    auto bn = batchnorm_backward(grad_norm, params.bn, trace.bn_cache);
    grads.bn_gamma = std::move(bn.gamma);
    grads.bn_beta = std::move(bn.beta);
    auto conv = conv2d_backward(batch.features, params.conv_kernel, bn.input, hc.padding(), false);
    grads.conv_kernel = std::move(conv.kernel);
    grads.conv_bias = std::move(conv.bias);

    auto tg = linear_backward(batch.tokens, params.token_weight, l_cls.grad);
    grads.token_weight = std::move(tg.weight);
    grads.token_bias = std::move(tg.bias);
    return result;
}

LossBreakdown evaluate_loss(const Batch& batch, const HeadParams& params, const LossConfig& config) {
    check_batch(batch, params.config);
    const auto& hc = params.config;
    const auto maps = trihead_forward(batch.features, params);
    LossBreakdown out;
    const auto fg = pool_region(batch.features, maps.channel(hc.fg_channel()), Region::foreground, config.eps_pool);
    out.l_fg = loss_foreground(region_logits(fg, params), batch.labels).loss;
    if (config.adversarial) {
        const auto bg = pool_region(batch.features, maps.channel(hc.bg_channel()), Region::background, config.eps_pool);
        out.l_bg = loss_background(region_logits(bg, params), batch.labels, config.eps_loss).loss;
        out.alpha = config.alpha;
    }
    out.l_cls = loss_classification(linear(batch.tokens, params.token_weight, params.token_bias), batch.labels).loss;
    out.total = out.l_fg + out.alpha * out.l_bg + out.l_cls;
    return out;
}

} // namespace trilite
