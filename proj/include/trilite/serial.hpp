#pragma once

// Single-threaded versions of the OpenMP kernels. They perform the same
// floating-point operations in the same order as the parallel kernels, so the
// two are compared bitwise in tests and timed against each other in bench/.

#include <cstddef>

#include "trilite/numerics.hpp"

namespace trilite::serial {

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t padding);

Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& kernel, const Tensor& grad_output,
                            std::size_t padding, bool want_input_grad = true);

Tensor batchnorm(const Tensor& input, BatchNormState& state, Mode mode, BatchNormCache* cache = nullptr);

Tensor upsample_bilinear(const Tensor& map, std::size_t out_height, std::size_t out_width);

} // namespace trilite::serial
