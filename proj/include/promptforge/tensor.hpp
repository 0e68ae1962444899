#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace promptforge {

// Dense row-major tensor of doubles. Graph values are rank-2 (vectors are
// 1 x n rows, scalars 1 x 1); images and other raw data may use any rank.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
        data_.assign(checked_numel(shape_), 0.0);
    }

    Tensor(std::vector<int> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != checked_numel(shape_)) {
            throw std::invalid_argument("Tensor: data length " + std::to_string(data_.size()) +
                                        " does not match shape numel " +
                                        std::to_string(checked_numel(shape_)));
        }
    }

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<int> shape, double v) {
        Tensor t(std::move(shape));
        t.fill(v);
        return t;
    }

    static Tensor scalar(double v) { return Tensor({1, 1}, {v}); }

    static Tensor row(std::vector<double> v) {
        const int n = static_cast<int>(v.size());
        return Tensor({1, n}, std::move(v));
    }

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    int rows() const { return rank() == 2 ? shape_[0] : throw_rank2("rows"); }
    int cols() const { return rank() == 2 ? shape_[1] : throw_rank2("cols"); }

    double& at(int r, int c) { return data_[static_cast<size_t>(r) * shape_[1] + c]; }
    double at(int r, int c) const { return data_[static_cast<size_t>(r) * shape_[1] + c]; }

    double& operator[](size_t i) { return data_[i]; }
    double operator[](size_t i) const { return data_[i]; }

    double* ptr() { return data_.data(); }
    const double* ptr() const { return data_.data(); }
    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (double v : data_) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    double item() const {
        if (size() != 1) throw std::invalid_argument("Tensor::item: tensor is not scalar");
        return data_[0];
    }

    static std::string shape_string(const std::vector<int>& s) {
        std::string out = "[";
        for (size_t i = 0; i < s.size(); ++i) {
            out += std::to_string(s[i]);
            if (i + 1 < s.size()) out += ",";
        }
        return out + "]";
    }

    std::string shape_string() const { return shape_string(shape_); }

private:
    static size_t checked_numel(const std::vector<int>& shape) {
        size_t n = 1;
        for (int e : shape) {
            if (e <= 0) throw std::invalid_argument("Tensor: non-positive extent");
            n *= static_cast<size_t>(e);
        }
        return shape.empty() ? 0 : n;
    }

    [[noreturn]] int throw_rank2(const char* what) const {
        throw std::invalid_argument(std::string("Tensor::") + what + ": rank-2 required, got " +
                                    shape_string());
    }

    std::vector<int> shape_;
    std::vector<double> data_;
};

inline double dot(const Tensor& a, const Tensor& b) {
    if (a.size() != b.size()) throw std::invalid_argument("dot: size mismatch");
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double l2_norm(const Tensor& a) { return std::sqrt(dot(a, a)); }

}  // namespace promptforge
