#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "error.hpp"

namespace deepid {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

// Dense row-major tensor of 32-bit reals. The shape/data invariant
// product(shape) == data.size() is enforced on every construction.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(numel(shape_), 0.0f) {}

    Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (numel(shape_) != data_.size())
            throw shape_error("Tensor: shape " + shape_str(shape_) + " does not match buffer of size " +
                              std::to_string(data_.size()));
    }

    static Tensor full(Shape shape, float value) {
        Tensor t(std::move(shape));
        for (float& v : t.data_) v = value;
        return t;
    }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const { return data_.size(); }
    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }

    float& operator[](std::size_t i) { return data_[i]; }
    float operator[](std::size_t i) const { return data_[i]; }

    float& operator()(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    float operator()(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

    float& operator()(std::size_t i, std::size_t j, std::size_t k) {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }
    float operator()(std::size_t i, std::size_t j, std::size_t k) const {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }

    float& operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
        return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
    }
    float operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
        return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
    }

    // Same data, new shape; element counts must agree.
    Tensor reshaped(Shape new_shape) const {
        if (numel(new_shape) != data_.size())
            throw shape_error("Tensor::reshaped: cannot view " + shape_str(shape_) + " as " + shape_str(new_shape));
        return Tensor(std::move(new_shape), data_);
    }

    bool all_finite() const {
        for (float v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

private:
    Shape shape_;
    std::vector<float> data_;
};

} // namespace deepid
