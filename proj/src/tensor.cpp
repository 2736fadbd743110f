#include "mqf/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "mqf/errors.hpp"

namespace mqf {

namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

}  // namespace

std::string shape_str(const std::vector<std::size_t>& shape) {
    std::ostringstream out;
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out << "x";
        out << shape[i];
    }
    if (shape.empty()) out << "scalar";
    return out.str();
}

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(product(shape_), 0.0) {
    for (std::size_t d : shape_) {
        if (d == 0) throw ShapeError("tensor dimensions must be positive: " + shape_str(shape_));
    }
    cols_ = shape_.empty() ? 0 : shape_.back();
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (product(shape_) != data_.size()) {
        throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_str(shape_));
    }
    cols_ = shape_.empty() ? 0 : shape_.back();
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::row(std::vector<double> values) {
    std::size_t n = values.size();
    return Tensor({1, n}, std::move(values));
}

Tensor Tensor::zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(std::vector<std::size_t> shape, double v) {
    Tensor t(std::move(shape));
    t.fill(v);
    return t;
}

std::size_t Tensor::rows() const {
    if (shape_.size() != 2) throw ShapeError("rows(): tensor is not a matrix: " + shape_str(shape_));
    return shape_[0];
}

std::size_t Tensor::cols() const {
    if (shape_.size() != 2) throw ShapeError("cols(): tensor is not a matrix: " + shape_str(shape_));
    return shape_[1];
}

double& Tensor::at3(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
}

double Tensor::at3(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
}

bool Tensor::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

void Tensor::fill(double v) {
    std::fill(data_.begin(), data_.end(), v);
}

Tensor Tensor::reshaped(std::vector<std::size_t> shape) const {
    if (product(shape) != data_.size()) {
        throw ShapeError("reshape " + shape_str(shape_) + " -> " + shape_str(shape) +
                         " changes element count");
    }
    return Tensor(std::move(shape), data_);
}

}  // namespace mqf
