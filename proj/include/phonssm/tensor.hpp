#pragma once

#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace phonssm {

/// Dense row-major tensor of doubles, rank 0..3.
///
/// Rank-0 tensors are used as scalars (size 1, empty shape). All model
/// state, gradients and file payloads go through this type; 64-bit floats
/// throughout.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
        data_.assign(count(shape_), 0.0);
    }

    Tensor(std::vector<int> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != count(shape_))
            throw std::invalid_argument("Tensor: data size does not match shape");
    }

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

    static Tensor scalar(double v) {
        Tensor t{std::vector<int>{}};
        t.data_[0] = v;
        return t;
    }

    static Tensor from(std::initializer_list<double> vals) {
        Tensor t{std::vector<int>{static_cast<int>(vals.size())}};
        std::size_t i = 0;
        for (double v : vals) t.data_[i++] = v;
        return t;
    }

    int rank() const { return static_cast<int>(shape_.size()); }
    const std::vector<int>& shape() const { return shape_; }

    int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }

    std::size_t size() const { return data_.size(); }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // 2-d / 3-d element access; callers are responsible for rank.
    double& at(int i, int j) {
        return data_[static_cast<std::size_t>(i) * shape_[1] + j];
    }
    double at(int i, int j) const {
        return data_[static_cast<std::size_t>(i) * shape_[1] + j];
    }
    double& at(int i, int j, int k) {
        return data_[(static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k];
    }
    double at(int i, int j, int k) const {
        return data_[(static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k];
    }

    double item() const {
        if (data_.size() != 1)
            throw std::invalid_argument("Tensor::item: tensor is not a scalar");
        return data_[0];
    }

    void fill(double v) { data_.assign(data_.size(), v); }

    bool all_finite() const;

    /// Same data, new shape; element count must match.
    Tensor reshaped(std::vector<int> shape) const {
        if (count(shape) != data_.size())
            throw std::invalid_argument("Tensor::reshaped: element count mismatch");
        return Tensor(std::move(shape), data_);
    }

    std::string shape_str() const;

private:
    static std::size_t count(const std::vector<int>& shape) {
        std::size_t n = 1;
        for (int d : shape) {
            if (d < 0) throw std::invalid_argument("Tensor: negative dimension");
            n *= static_cast<std::size_t>(d);
        }
        return n;
    }

    std::vector<int> shape_;
    std::vector<double> data_;
};

// Plain (non-autodiff) helpers used by oracles, initialization and IO.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
double dot(const Tensor& a, const Tensor& b);
double norm(const Tensor& a);
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace phonssm
