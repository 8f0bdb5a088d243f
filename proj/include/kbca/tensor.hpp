#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include "kbca/errors.hpp"

namespace kbca {

/// Dense row-major tensor of doubles. Rank 1 (vectors) and rank 2
/// (matrices) cover everything the model needs.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape)
        : shape_(std::move(shape)), data_(numel_of(shape_), 0.0) {
        validate_shape();
    }

    Tensor(std::vector<std::size_t> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        validate_shape();
        if (data_.size() != numel_of(shape_)) {
            throw ShapeError("Tensor: data length " + std::to_string(data_.size()) +
                             " does not match shape numel " + std::to_string(numel_of(shape_)));
        }
    }

    static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<std::size_t> shape, double v) {
        Tensor t(std::move(shape));
        for (auto& x : t.data_) x = v;
        return t;
    }

    /// Row vector [1 x n].
    static Tensor row(std::vector<double> values) {
        std::size_t n = values.size();
        return Tensor({1, n}, std::move(values));
    }

    /// Column vector [n x 1].
    static Tensor column(std::vector<double> values) {
        std::size_t n = values.size();
        return Tensor({n, 1}, std::move(values));
    }

    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
        std::size_t m = rows.size();
        std::size_t n = m ? rows.begin()->size() : 0;
        std::vector<double> data;
        data.reserve(m * n);
        for (const auto& r : rows) {
            if (r.size() != n) throw ShapeError("Tensor::matrix: ragged rows");
            data.insert(data.end(), r.begin(), r.end());
        }
        return Tensor({m, n}, std::move(data));
    }

    std::size_t rank() const { return shape_.size(); }
    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t numel() const { return data_.size(); }

    std::size_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
    std::size_t cols() const {
        if (shape_.size() >= 2) return shape_[1];
        return shape_.empty() ? 0 : 1;
    }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols() + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols() + j]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << '[';
        for (std::size_t i = 0; i < shape_.size(); ++i) {
            if (i) os << 'x';
            os << shape_[i];
        }
        os << ']';
        return os.str();
    }

private:
    static std::size_t numel_of(const std::vector<std::size_t>& shape) {
        std::size_t n = 1;
        for (auto s : shape) n *= s;
        return shape.empty() ? 0 : n;
    }

    void validate_shape() const {
        for (auto s : shape_)
            if (s == 0) throw ShapeError("Tensor: zero extent in shape");
    }

    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    }
}

inline void require_finite(const Tensor& t, const char* where) {
    if (!t.all_finite()) throw NumericError(std::string(where) + ": non-finite value");
}

} // namespace kbca
