#include "trilite/serial.hpp"

#include <algorithm>
#include <cmath>

#include "trilite/error.hpp"

namespace trilite::serial {

namespace {

struct Dims {
    std::size_t batch, in_channels, height, width, out_channels, k;
};

Dims dims_of(const Tensor& input, const Tensor& kernel, std::size_t padding) {
    const bool batched = input.rank() == 4;
    if (!batched && input.rank() != 3) throw ConfigError("conv2d input must be rank 3 or 4");
    if (kernel.rank() != 4) throw ConfigError("conv2d kernel must be rank 4");
    Dims d{batched ? input.dim(0) : 1, input.dim(batched ? 1 : 0), input.dim(batched ? 2 : 1),
           input.dim(batched ? 3 : 2), kernel.dim(0), kernel.dim(2)};
    if (kernel.dim(1) != d.in_channels) throw ConfigError("conv2d channel mismatch");
    if (d.k % 2 == 0 || padding != (d.k - 1) / 2) throw ConfigError("conv2d needs odd k and padding (k - 1) / 2");
    return d;
}

inline bool inside(std::ptrdiff_t v, std::size_t extent) { return v >= 0 && v < static_cast<std::ptrdiff_t>(extent); }

} // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t padding) {
    const auto d = dims_of(input, kernel, padding);
    auto shape = input.shape();
    shape[shape.size() - 3] = d.out_channels;
    Tensor out(shape);
    const auto pad = static_cast<std::ptrdiff_t>(padding);
    for (std::size_t b = 0; b < d.batch; ++b)
        for (std::size_t oc = 0; oc < d.out_channels; ++oc)
            for (std::size_t y = 0; y < d.height; ++y)
                for (std::size_t x = 0; x < d.width; ++x) {
                    double acc = bias[oc];
                    for (std::size_t c = 0; c < d.in_channels; ++c)
                        for (std::size_t ky = 0; ky < d.k; ++ky)
                            for (std::size_t kx = 0; kx < d.k; ++kx) {
                                const auto iy = static_cast<std::ptrdiff_t>(y + ky) - pad;
                                const auto ix = static_cast<std::ptrdiff_t>(x + kx) - pad;
                                if (!inside(iy, d.height) || !inside(ix, d.width)) continue;
                                acc += kernel[((oc * d.in_channels + c) * d.k + ky) * d.k + kx] *
                                       input[((b * d.in_channels + c) * d.height + iy) * d.width + ix];
                            }
                    out[((b * d.out_channels + oc) * d.height + y) * d.width + x] = acc;
                }
    return out;
}

Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& kernel, const Tensor& grad_output,
                            std::size_t padding, bool want_input_grad) {
    const auto d = dims_of(input, kernel, padding);
    const auto pad = static_cast<std::ptrdiff_t>(padding);
    const std::size_t plane = d.height * d.width;
    Conv2dGrads grads{Tensor(), Tensor(kernel.shape()), Tensor({d.out_channels})};

    for (std::size_t oc = 0; oc < d.out_channels; ++oc) {
        double acc = 0.0;
        for (std::size_t b = 0; b < d.batch; ++b)
            for (std::size_t i = 0; i < plane; ++i) acc += grad_output[(b * d.out_channels + oc) * plane + i];
        grads.bias[oc] = acc;
    }

    for (std::size_t oc = 0; oc < d.out_channels; ++oc)
        for (std::size_t c = 0; c < d.in_channels; ++c)
            for (std::size_t ky = 0; ky < d.k; ++ky)
                for (std::size_t kx = 0; kx < d.k; ++kx) {
                    double acc = 0.0;
                    for (std::size_t b = 0; b < d.batch; ++b)
                        for (std::size_t y = 0; y < d.height; ++y)
                            for (std::size_t x = 0; x < d.width; ++x) {
                                const auto iy = static_cast<std::ptrdiff_t>(y + ky) - pad;
                                const auto ix = static_cast<std::ptrdiff_t>(x + kx) - pad;
                                if (!inside(iy, d.height) || !inside(ix, d.width)) continue;
                                acc += grad_output[((b * d.out_channels + oc) * d.height + y) * d.width + x] *
                                       input[((b * d.in_channels + c) * d.height + iy) * d.width + ix];
                            }
                    grads.kernel[((oc * d.in_channels + c) * d.k + ky) * d.k + kx] = acc;
                }

    if (want_input_grad) {
        grads.input = Tensor(input.shape());
        for (std::size_t b = 0; b < d.batch; ++b)
            for (std::size_t c = 0; c < d.in_channels; ++c)
                for (std::size_t iy = 0; iy < d.height; ++iy)
                    for (std::size_t ix = 0; ix < d.width; ++ix) {
                        double acc = 0.0;
                        for (std::size_t oc = 0; oc < d.out_channels; ++oc)
                            for (std::size_t ky = 0; ky < d.k; ++ky)
                                for (std::size_t kx = 0; kx < d.k; ++kx) {
                                    const auto y = static_cast<std::ptrdiff_t>(iy + padding) - static_cast<std::ptrdiff_t>(ky);
                                    const auto x = static_cast<std::ptrdiff_t>(ix + padding) - static_cast<std::ptrdiff_t>(kx);
                                    if (!inside(y, d.height) || !inside(x, d.width)) continue;
                                    acc += grad_output[((b * d.out_channels + oc) * d.height + y) * d.width + x] *
                                           kernel[((oc * d.in_channels + c) * d.k + ky) * d.k + kx];
                                }
                        grads.input[((b * d.in_channels + c) * d.height + iy) * d.width + ix] = acc;
                    }
    }
    return grads;
}

Tensor batchnorm(const Tensor& input, BatchNormState& state, Mode mode, BatchNormCache* cache) {
    if (input.rank() != 4 || input.dim(1) != state.channels()) throw ConfigError("batchnorm shape mismatch");
    const std::size_t batch = input.dim(0), channels = input.dim(1), plane = input.dim(2) * input.dim(3);
    const std::size_t count = batch * plane;
    if (mode == Mode::train && count < 2) throw NumericError("batchnorm: degenerate batch");
    Tensor out(input.shape());
    Tensor normalized(input.shape());
    std::vector<double> inv_std(channels);
    for (std::size_t c = 0; c < channels; ++c) {
        double mean = state.running_mean[c], var = state.running_var[c];
        if (mode == Mode::train) {
            double sum = 0.0;
            for (std::size_t b = 0; b < batch; ++b)
                for (std::size_t i = 0; i < plane; ++i) sum += input[(b * channels + c) * plane + i];
            mean = sum / static_cast<double>(count);
            double sq = 0.0;
            for (std::size_t b = 0; b < batch; ++b)
                for (std::size_t i = 0; i < plane; ++i) {
                    const double dev = input[(b * channels + c) * plane + i] - mean;
                    sq += dev * dev;
                }
            var = sq / static_cast<double>(count);
            state.running_mean[c] = (1.0 - state.momentum) * state.running_mean[c] + state.momentum * mean;
            state.running_var[c] = (1.0 - state.momentum) * state.running_var[c] +
                                   state.momentum * (sq / static_cast<double>(count - 1));
        }
        inv_std[c] = 1.0 / std::sqrt(var + state.eps);
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t i = 0; i < plane; ++i) {
                const std::size_t at = (b * channels + c) * plane + i;
                normalized[at] = (input[at] - mean) * inv_std[c];
                out[at] = state.gamma[c] * normalized[at] + state.beta[c];
            }
    }
    if (cache) {
        cache->mode = mode;
        cache->normalized = std::move(normalized);
        cache->inv_std = std::move(inv_std);
    }
    return out;
}

Tensor upsample_bilinear(const Tensor& map, std::size_t out_height, std::size_t out_width) {
    if (map.rank() != 2) throw ConfigError("upsample_bilinear expects a rank-2 map");
    const std::size_t in_h = map.dim(0), in_w = map.dim(1);
    Tensor out({out_height, out_width});
    const double sy = static_cast<double>(in_h) / static_cast<double>(out_height);
    const double sx = static_cast<double>(in_w) / static_cast<double>(out_width);
    for (std::size_t i = 0; i < out_height; ++i) {
        const double fy = std::max(0.0, (static_cast<double>(i) + 0.5) * sy - 0.5);
        const auto y0 = std::min(static_cast<std::size_t>(fy), in_h - 1);
        const std::size_t y1 = std::min(y0 + 1, in_h - 1);
        const double ly = fy - static_cast<double>(y0);
        for (std::size_t j = 0; j < out_width; ++j) {
            const double fx = std::max(0.0, (static_cast<double>(j) + 0.5) * sx - 0.5);
            const auto x0 = std::min(static_cast<std::size_t>(fx), in_w - 1);
            const std::size_t x1 = std::min(x0 + 1, in_w - 1);
            const double lx = fx - static_cast<double>(x0);
            const double top = (1.0 - lx) * map[y0 * in_w + x0] + lx * map[y0 * in_w + x1];
            const double bottom = (1.0 - lx) * map[y1 * in_w + x0] + lx * map[y1 * in_w + x1];
            out[i * out_width + j] = (1.0 - ly) * top + ly * bottom;
        }
    }
    return out;
}

} // namespace trilite::serial
