#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "styleplane/rng.hpp"

namespace styleplane {

// Dense row-major array. Shapes are small (rank <= 4) and always explicit.
template <class T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape, T fill = T(0)) : shape_(std::move(shape)) {
        check_shape(shape_);
        data_.assign(numel_of(shape_), fill);
    }

    Tensor(std::vector<int> shape, std::vector<T> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        check_shape(shape_);
        if (data_.size() != numel_of(shape_)) {
            throw std::invalid_argument("Tensor: data size " + std::to_string(data_.size()) +
                                        " does not match shape " + shape_str(shape_));
        }
    }

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<int> shape, T v) { return Tensor(std::move(shape), v); }

    static Tensor randn(std::vector<int> shape, Rng& rng, T scale = T(1)) {
        Tensor t(std::move(shape));
        for (auto& v : t.data_) v = static_cast<T>(rng.gaussian()) * scale;
        return t;
    }

    static Tensor uniform(std::vector<int> shape, Rng& rng, T lo, T hi) {
        Tensor t(std::move(shape));
        for (auto& v : t.data_) v = static_cast<T>(rng.uniform(lo, hi));
        return t;
    }

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
    std::size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& vec() { return data_; }
    const std::vector<T>& vec() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    T& at(int i) { return data_[idx(i)]; }
    const T& at(int i) const { return data_[idx(i)]; }
    T& at(int i, int j) { return data_[idx(i, j)]; }
    const T& at(int i, int j) const { return data_[idx(i, j)]; }
    T& at(int i, int j, int k) { return data_[idx(i, j, k)]; }
    const T& at(int i, int j, int k) const { return data_[idx(i, j, k)]; }
    T& at(int i, int j, int k, int l) { return data_[idx(i, j, k, l)]; }
    const T& at(int i, int j, int k, int l) const { return data_[idx(i, j, k, l)]; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (const T& v : data_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    void fill(T v) { data_.assign(data_.size(), v); }

    Tensor reshaped(std::vector<int> shape) const {
        if (numel_of(shape) != data_.size()) {
            throw std::invalid_argument("reshape: element count mismatch for " + shape_str(shape));
        }
        return Tensor(std::move(shape), data_);
    }

    T sum() const { return std::accumulate(data_.begin(), data_.end(), T(0)); }

    T abs_sum() const {
        T s = 0;
        for (const T& v : data_) s += std::abs(v);
        return s;
    }

    T max_abs() const {
        T m = 0;
        for (const T& v : data_) m = std::max(m, std::abs(v));
        return m;
    }

    static std::string shape_str(const std::vector<int>& s) {
        std::ostringstream os;
        os << "[";
        for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
        os << "]";
        return os.str();
    }

    std::string shape_str() const { return shape_str(shape_); }

    template <class U>
    Tensor<U> cast() const {
        std::vector<U> d(data_.size());
        for (std::size_t i = 0; i < data_.size(); ++i) d[i] = static_cast<U>(data_[i]);
        return Tensor<U>(shape_, std::move(d));
    }

private:
    static void check_shape(const std::vector<int>& s) {
        for (int d : s)
            if (d <= 0) throw std::invalid_argument("Tensor: nonpositive dimension in " + shape_str(s));
    }

    static std::size_t numel_of(const std::vector<int>& s) {
        std::size_t n = 1;
        for (int d : s) n *= static_cast<std::size_t>(d);
        return n;
    }

    std::size_t idx(int i) const {
        assert(rank() == 1);
        return static_cast<std::size_t>(i);
    }
    std::size_t idx(int i, int j) const {
        assert(rank() == 2);
        return static_cast<std::size_t>(i) * shape_[1] + j;
    }
    std::size_t idx(int i, int j, int k) const {
        assert(rank() == 3);
        return (static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k;
    }
    std::size_t idx(int i, int j, int k, int l) const {
        assert(rank() == 4);
        return ((static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k) * shape_[3] + l;
    }

    std::vector<int> shape_;
    std::vector<T> data_;
};

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

}  // namespace styleplane
