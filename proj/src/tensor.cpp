#include "trilite/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "trilite/error.hpp"

namespace trilite {

std::size_t shape_product(std::span<const std::size_t> shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_string(std::span<const std::size_t> shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(shape_product(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_product(shape_) != data_.size())
        throw ConfigError("tensor shape " + shape_string(shape_) + " does not match " +
                          std::to_string(data_.size()) + " values");
}

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= shape_.size())
        throw ConfigError("axis " + std::to_string(axis) + " out of range for shape " + shape_string(shape_));
    return shape_[axis];
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

void Tensor::check_finite(std::string_view what) const { trilite::check_finite(data_, what); }

void check_finite(std::span<const double> values, std::string_view what) {
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!std::isfinite(values[i]))
            throw NumericError("non-finite value " + std::to_string(values[i]) + " in " + std::string(what) +
                               " at flat index " + std::to_string(i));
    }
}

} // namespace trilite
