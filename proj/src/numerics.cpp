#include "trilite/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "trilite/error.hpp"

namespace trilite {

namespace {

struct ConvDims {
    std::size_t batch, in_channels, height, width, out_channels, k;
};

ConvDims conv_dims(const Tensor& input, const Tensor& kernel, std::size_t padding) {
    if (input.rank() != 3 && input.rank() != 4)
        throw ConfigError("conv2d input must be rank 3 or 4, got " + shape_string(input.shape()));
    if (kernel.rank() != 4 || kernel.dim(2) != kernel.dim(3))
        throw ConfigError("conv2d kernel must be K x D x k x k, got " + shape_string(kernel.shape()));
    const bool batched = input.rank() == 4;
    ConvDims d{batched ? input.dim(0) : 1,
               input.dim(batched ? 1 : 0),
               input.dim(batched ? 2 : 1),
               input.dim(batched ? 3 : 2),
               kernel.dim(0),
               kernel.dim(2)};
    if (kernel.dim(1) != d.in_channels)
        throw ConfigError("conv2d kernel expects " + std::to_string(kernel.dim(1)) + " input channels, input has " +
                          std::to_string(d.in_channels));
    if (d.in_channels == 0) throw ConfigError("conv2d needs at least one input channel");
    if (d.k % 2 == 0) throw ConfigError("conv2d kernel size must be odd");
    if (padding != (d.k - 1) / 2) throw ConfigError("conv2d padding must be (k - 1) / 2");
    return d;
}

std::vector<std::size_t> conv_out_shape(const Tensor& input, std::size_t out_channels) {
    auto shape = input.shape();
    shape[shape.size() - 3] = out_channels;
    return shape;
}

// Valid output range [lo, hi) along one axis for kernel offset `kk`.
inline void valid_range(std::size_t extent, std::size_t kk, std::size_t pad, std::size_t& lo, std::size_t& hi) {
    const auto shift = static_cast<std::ptrdiff_t>(kk) - static_cast<std::ptrdiff_t>(pad);
    lo = shift < 0 ? static_cast<std::size_t>(-shift) : 0;
    hi = shift > 0 ? extent - std::min<std::size_t>(extent, static_cast<std::size_t>(shift)) : extent;
}

} // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t padding) {
    const auto d = conv_dims(input, kernel, padding);
    if (bias.size() != d.out_channels) throw ConfigError("conv2d bias length must equal output channels");
    Tensor out(conv_out_shape(input, d.out_channels));
    const std::size_t plane = d.height * d.width;
    const double* in = input.data().data();
    const double* ker = kernel.data().data();
    double* o = out.data().data();
    const auto pairs = static_cast<std::ptrdiff_t>(d.batch * d.out_channels);

#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t p = 0; p < pairs; ++p) {
        const std::size_t b = static_cast<std::size_t>(p) / d.out_channels;
        const std::size_t oc = static_cast<std::size_t>(p) % d.out_channels;
        double* dst = o + p * plane;
        std::fill(dst, dst + plane, bias[oc]);
        for (std::size_t c = 0; c < d.in_channels; ++c) {
            const double* src = in + (b * d.in_channels + c) * plane;
            for (std::size_t ky = 0; ky < d.k; ++ky) {
                std::size_t y_lo, y_hi;
                valid_range(d.height, ky, padding, y_lo, y_hi);
                for (std::size_t kx = 0; kx < d.k; ++kx) {
                    std::size_t x_lo, x_hi;
                    valid_range(d.width, kx, padding, x_lo, x_hi);
                    const double kv = ker[((oc * d.in_channels + c) * d.k + ky) * d.k + kx];
                    for (std::size_t y = y_lo; y < y_hi; ++y) {
                        const double* row = src + (y + ky - padding) * d.width + kx - padding;
                        double* drow = dst + y * d.width;
                        for (std::size_t x = x_lo; x < x_hi; ++x) drow[x] += kv * row[x];
                    }
                }
            }
        }
    }
    out.check_finite("conv2d output");
    return out;
}

Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& kernel, const Tensor& grad_output,
                            std::size_t padding, bool want_input_grad) {
    const auto d = conv_dims(input, kernel, padding);
    if (grad_output.shape() != conv_out_shape(input, d.out_channels))
        throw ConfigError("conv2d grad_output shape " + shape_string(grad_output.shape()) + " does not match output");
    const std::size_t plane = d.height * d.width;
    const double* in = input.data().data();
    const double* ker = kernel.data().data();
    const double* g = grad_output.data().data();

    Conv2dGrads grads;
    grads.kernel = Tensor(kernel.shape());
    grads.bias = Tensor({d.out_channels});

    for (std::size_t oc = 0; oc < d.out_channels; ++oc) {
        double acc = 0.0;
        for (std::size_t b = 0; b < d.batch; ++b) {
            const double* gp = g + (b * d.out_channels + oc) * plane;
            for (std::size_t i = 0; i < plane; ++i) acc += gp[i];
        }
        grads.bias[oc] = acc;
    }

    double* dk = grads.kernel.data().data();
    const auto pairs = static_cast<std::ptrdiff_t>(d.out_channels * d.in_channels);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t p = 0; p < pairs; ++p) {
        const std::size_t oc = static_cast<std::size_t>(p) / d.in_channels;
        const std::size_t c = static_cast<std::size_t>(p) % d.in_channels;
        for (std::size_t ky = 0; ky < d.k; ++ky) {
            std::size_t y_lo, y_hi;
            valid_range(d.height, ky, padding, y_lo, y_hi);
            for (std::size_t kx = 0; kx < d.k; ++kx) {
                std::size_t x_lo, x_hi;
                valid_range(d.width, kx, padding, x_lo, x_hi);
                double acc = 0.0;
                for (std::size_t b = 0; b < d.batch; ++b) {
                    const double* gp = g + (b * d.out_channels + oc) * plane;
                    const double* src = in + (b * d.in_channels + c) * plane;
                    for (std::size_t y = y_lo; y < y_hi; ++y) {
                        const double* row = src + (y + ky - padding) * d.width + kx - padding;
                        const double* grow = gp + y * d.width;
                        for (std::size_t x = x_lo; x < x_hi; ++x) acc += grow[x] * row[x];
                    }
                }
                dk[((oc * d.in_channels + c) * d.k + ky) * d.k + kx] = acc;
            }
        }
    }

    if (want_input_grad) {
        grads.input = Tensor(input.shape());
        double* dx = grads.input.data().data();
        const auto planes = static_cast<std::ptrdiff_t>(d.batch * d.in_channels);
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t p = 0; p < planes; ++p) {
            const std::size_t b = static_cast<std::size_t>(p) / d.in_channels;
            const std::size_t c = static_cast<std::size_t>(p) % d.in_channels;
            double* dst = dx + p * plane;
            for (std::size_t oc = 0; oc < d.out_channels; ++oc) {
                const double* gp = g + (b * d.out_channels + oc) * plane;
                for (std::size_t ky = 0; ky < d.k; ++ky) {
                    std::size_t y_lo, y_hi;
                    valid_range(d.height, ky, padding, y_lo, y_hi);
                    for (std::size_t kx = 0; kx < d.k; ++kx) {
                        std::size_t x_lo, x_hi;
                        valid_range(d.width, kx, padding, x_lo, x_hi);
                        const double kv = ker[((oc * d.in_channels + c) * d.k + ky) * d.k + kx];
                        // output (y, x) reads input (y + ky - pad, x + kx - pad)
                        for (std::size_t y = y_lo; y < y_hi; ++y) {
                            double* drow = dst + (y + ky - padding) * d.width + kx - padding;
                            const double* grow = gp + y * d.width;
                            for (std::size_t x = x_lo; x < x_hi; ++x) drow[x] += grow[x] * kv;
                        }
                    }
                }
            }
        }
        grads.input.check_finite("conv2d input gradient");
    }
    grads.kernel.check_finite("conv2d kernel gradient");
    grads.bias.check_finite("conv2d bias gradient");
    return grads;
}

namespace {

struct BnDims {
    std::size_t batch, channels, plane;
};

BnDims bn_dims(const Tensor& input, const BatchNormState& state) {
    if (input.rank() != 4) throw ConfigError("batchnorm input must be B x K x h x w, got " + shape_string(input.shape()));
    BnDims d{input.dim(0), input.dim(1), input.dim(2) * input.dim(3)};
    if (state.channels() != d.channels || state.beta.size() != d.channels || state.running_mean.size() != d.channels ||
        state.running_var.size() != d.channels)
        throw ConfigError("batchnorm state has " + std::to_string(state.channels()) + " channels, input has " +
                          std::to_string(d.channels));
    return d;
}

} // namespace

Tensor batchnorm(const Tensor& input, BatchNormState& state, Mode mode, BatchNormCache* cache) {
    const auto d = bn_dims(input, state);
    const std::size_t count = d.batch * d.plane;
    if (mode == Mode::train && count < 2)
        throw NumericError("batchnorm: degenerate batch, " + std::to_string(count) + " element per channel");
    input.check_finite("batchnorm input");

    Tensor out(input.shape());
    Tensor normalized(input.shape());
    std::vector<double> inv_std(d.channels);
    const double* x = input.data().data();
    double* y = out.data().data();
    double* xh = normalized.data().data();
    const auto channels = static_cast<std::ptrdiff_t>(d.channels);

#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t ci = 0; ci < channels; ++ci) {
        const auto c = static_cast<std::size_t>(ci);
        double mean, var;
        if (mode == Mode::train) {
            double sum = 0.0;
            for (std::size_t b = 0; b < d.batch; ++b) {
                const double* p = x + (b * d.channels + c) * d.plane;
                for (std::size_t i = 0; i < d.plane; ++i) sum += p[i];
            }
            mean = sum / static_cast<double>(count);
            double sq = 0.0;
            for (std::size_t b = 0; b < d.batch; ++b) {
                const double* p = x + (b * d.channels + c) * d.plane;
                for (std::size_t i = 0; i < d.plane; ++i) sq += (p[i] - mean) * (p[i] - mean);
            }
            var = sq / static_cast<double>(count);
            const double unbiased = sq / static_cast<double>(count - 1);
            state.running_mean[c] = (1.0 - state.momentum) * state.running_mean[c] + state.momentum * mean;
            state.running_var[c] = (1.0 - state.momentum) * state.running_var[c] + state.momentum * unbiased;
        } else {
            mean = state.running_mean[c];
            var = state.running_var[c];
        }
        const double is = 1.0 / std::sqrt(var + state.eps);
        inv_std[c] = is;
        for (std::size_t b = 0; b < d.batch; ++b) {
            const std::size_t off = (b * d.channels + c) * d.plane;
            for (std::size_t i = 0; i < d.plane; ++i) {
                const double n = (x[off + i] - mean) * is;
                xh[off + i] = n;
                y[off + i] = state.gamma[c] * n + state.beta[c];
            }
        }
    }
    out.check_finite("batchnorm output");
    if (cache) {
        cache->mode = mode;
        cache->normalized = std::move(normalized);
        cache->inv_std = std::move(inv_std);
    }
    return out;
}

BatchNormGrads batchnorm_backward(const Tensor& grad_output, const BatchNormState& state,
                                  const BatchNormCache& cache) {
    const auto d = bn_dims(grad_output, state);
    if (cache.normalized.shape() != grad_output.shape()) throw ConfigError("batchnorm cache does not match gradient");
    const auto n = static_cast<double>(d.batch * d.plane);
    BatchNormGrads grads{Tensor(grad_output.shape()), std::vector<double>(d.channels), std::vector<double>(d.channels)};
    const double* g = grad_output.data().data();
    const double* xh = cache.normalized.data().data();
    double* dx = grads.input.data().data();

    for (std::size_t c = 0; c < d.channels; ++c) {
        double sum_g = 0.0, sum_g_xh = 0.0;
        for (std::size_t b = 0; b < d.batch; ++b) {
            const std::size_t off = (b * d.channels + c) * d.plane;
            for (std::size_t i = 0; i < d.plane; ++i) {
                sum_g += g[off + i];
                sum_g_xh += g[off + i] * xh[off + i];
            }
        }
        grads.beta[c] = sum_g;
        grads.gamma[c] = sum_g_xh;
        const double scale = state.gamma[c] * cache.inv_std[c];
        for (std::size_t b = 0; b < d.batch; ++b) {
            const std::size_t off = (b * d.channels + c) * d.plane;
            for (std::size_t i = 0; i < d.plane; ++i) {
                if (cache.mode == Mode::train)
                    dx[off + i] = scale / n * (n * g[off + i] - sum_g - xh[off + i] * sum_g_xh);
                else
                    dx[off + i] = scale * g[off + i];
            }
        }
    }
    grads.input.check_finite("batchnorm input gradient");
    return grads;
}

Tensor softmax_channels(const Tensor& input) {
    if (input.rank() != 4) throw ConfigError("softmax_channels input must be B x K x h x w");
    input.check_finite("softmax input");
    const std::size_t batch = input.dim(0), k = input.dim(1), plane = input.dim(2) * input.dim(3);
    Tensor out(input.shape());
    const double* x = input.data().data();
    double* y = out.data().data();
    for (std::size_t b = 0; b < batch; ++b) {
        const std::size_t base = b * k * plane;
        for (std::size_t i = 0; i < plane; ++i) {
            double mx = x[base + i];
            for (std::size_t c = 1; c < k; ++c) mx = std::max(mx, x[base + c * plane + i]);
            double sum = 0.0;
            for (std::size_t c = 0; c < k; ++c) {
                const double e = std::exp(x[base + c * plane + i] - mx);
                y[base + c * plane + i] = e;
                sum += e;
            }
            for (std::size_t c = 0; c < k; ++c) y[base + c * plane + i] /= sum;
        }
    }
    return out;
}

Tensor softmax_channels_backward(const Tensor& output, const Tensor& grad_output) {
    if (output.shape() != grad_output.shape() || output.rank() != 4)
        throw ConfigError("softmax_channels_backward shape mismatch");
    const std::size_t batch = output.dim(0), k = output.dim(1), plane = output.dim(2) * output.dim(3);
    Tensor grad(output.shape());
    const double* m = output.data().data();
    const double* g = grad_output.data().data();
    double* dx = grad.data().data();
    for (std::size_t b = 0; b < batch; ++b) {
        const std::size_t base = b * k * plane;
        for (std::size_t i = 0; i < plane; ++i) {
            double dot = 0.0;
            for (std::size_t c = 0; c < k; ++c) dot += m[base + c * plane + i] * g[base + c * plane + i];
            for (std::size_t c = 0; c < k; ++c)
                dx[base + c * plane + i] = m[base + c * plane + i] * (g[base + c * plane + i] - dot);
        }
    }
    grad.check_finite("softmax input gradient");
    return grad;
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
    if (input.rank() != 2 || weight.rank() != 2)
        throw ConfigError("linear expects B x D input and C x D weight");
    const std::size_t batch = input.dim(0), in_dim = input.dim(1), out_dim = weight.dim(0);
    if (weight.dim(1) != in_dim)
        throw ConfigError("linear weight expects dimension " + std::to_string(weight.dim(1)) + ", input has " +
                          std::to_string(in_dim));
    if (bias.size() != out_dim) throw ConfigError("linear bias length must equal output dimension");
    Tensor out({batch, out_dim});
    for (std::size_t b = 0; b < batch; ++b) {
        const double* x = input.data().data() + b * in_dim;
        for (std::size_t c = 0; c < out_dim; ++c) {
            const double* w = weight.data().data() + c * in_dim;
            double acc = bias[c];
            for (std::size_t i = 0; i < in_dim; ++i) acc += w[i] * x[i];
            out[b * out_dim + c] = acc;
        }
    }
    out.check_finite("linear output");
    return out;
}

LinearGrads linear_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_output) {
    const std::size_t batch = input.dim(0), in_dim = input.dim(1), out_dim = weight.dim(0);
    if (weight.dim(1) != in_dim || grad_output.rank() != 2 || grad_output.dim(0) != batch ||
        grad_output.dim(1) != out_dim)
        throw ConfigError("linear_backward dimension mismatch");
    LinearGrads grads{Tensor({batch, in_dim}), Tensor(weight.shape()), Tensor({out_dim})};
    for (std::size_t b = 0; b < batch; ++b) {
        const double* x = input.data().data() + b * in_dim;
        const double* g = grad_output.data().data() + b * out_dim;
        double* dx = grads.input.data().data() + b * in_dim;
        for (std::size_t c = 0; c < out_dim; ++c) {
            const double* w = weight.data().data() + c * in_dim;
            double* dw = grads.weight.data().data() + c * in_dim;
            grads.bias[c] += g[c];
            for (std::size_t i = 0; i < in_dim; ++i) {
                dx[i] += g[c] * w[i];
                dw[i] += g[c] * x[i];
            }
        }
    }
    grads.weight.check_finite("linear weight gradient");
    grads.input.check_finite("linear input gradient");
    return grads;
}

double log_sum_exp(std::span<const double> row) {
    double mx = row[0];
    for (double v : row) mx = std::max(mx, v);
    double sum = 0.0;
    for (double v : row) sum += std::exp(v - mx);
    return mx + std::log(sum);
}

} // namespace trilite
