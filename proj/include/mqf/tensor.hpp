#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace mqf {

std::string shape_str(const std::vector<std::size_t>& shape);

// Dense row-major array of 64-bit floats. The single numeric container of
// the library; rank is 1 or 2 almost everywhere (conv kernels are rank 3).
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape);  // zero-filled
    Tensor(std::vector<std::size_t> shape, std::vector<double> data);

    static Tensor scalar(double v);
    static Tensor row(std::vector<double> values);             // 1×n
    static Tensor zeros(std::vector<std::size_t> shape);
    static Tensor full(std::vector<std::size_t> shape, double v);

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t ndim() const { return shape_.size(); }
    std::size_t numel() const { return data_.size(); }
    bool is_scalar() const { return data_.size() == 1; }

    // Matrix accessors; require rank 2.
    std::size_t rows() const;
    std::size_t cols() const;

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    const std::vector<double>& vec() const { return data_; }

    double& at(std::size_t i) { return data_[i]; }
    double at(std::size_t i) const { return data_[i]; }
    double& at(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double at(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }
    // Rank-3 access (dim0 × dim1 × dim2), used by conv kernels.
    double& at3(std::size_t i, std::size_t j, std::size_t k);
    double at3(std::size_t i, std::size_t j, std::size_t k) const;

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const;
    void fill(double v);

    // Same data, new shape; element count must match.
    Tensor reshaped(std::vector<std::size_t> shape) const;

    bool operator==(const Tensor& other) const {
        return shape_ == other.shape_ && data_ == other.data_;
    }

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
    std::size_t cols_ = 0;  // cached for rank >= 2 indexing
};

}  // namespace mqf
