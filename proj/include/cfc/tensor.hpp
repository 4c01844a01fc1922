#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace cfc {

// Dense row-major tensor. Rank is dynamic; the hot paths index through
// raw pointers, so no stride machinery is kept around.
template <class T>
struct Tensor {
    std::vector<int> shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)), data(count(shape), T(0)) {}

    static std::size_t count(const std::vector<int>& s) {
        std::size_t n = 1;
        for (int d : s) {
            if (d < 0) throw std::invalid_argument("negative tensor dimension");
            n *= static_cast<std::size_t>(d);
        }
        return n;
    }

    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }

    static Tensor full(std::vector<int> s, T v) {
        Tensor t(std::move(s));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }

    static Tensor randn(std::vector<int> s, std::mt19937& rng, T stddev = T(1)) {
        Tensor t(std::move(s));
        std::normal_distribution<double> dist(0.0, 1.0);
        for (auto& v : t.data) v = static_cast<T>(dist(rng) * static_cast<double>(stddev));
        return t;
    }

    std::size_t size() const { return data.size(); }
    int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
    T* ptr() { return data.data(); }
    const T* ptr() const { return data.data(); }

    // (b, c, y, x) indexing for rank-4 tensors
    T& at4(int b, int c, int y, int x) {
        return data[((static_cast<std::size_t>(b) * shape[1] + c) * shape[2] + y) * shape[3] + x];
    }
    const T& at4(int b, int c, int y, int x) const {
        return data[((static_cast<std::size_t>(b) * shape[1] + c) * shape[2] + y) * shape[3] + x];
    }
    // (b, y, x) indexing for rank-3 tensors
    T& at3(int b, int y, int x) {
        return data[(static_cast<std::size_t>(b) * shape[1] + y) * shape[2] + x];
    }
    const T& at3(int b, int y, int x) const {
        return data[(static_cast<std::size_t>(b) * shape[1] + y) * shape[2] + x];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    Tensor& operator+=(const Tensor& o) {
        assert(same_shape(o));
        for (std::size_t i = 0; i < data.size(); ++i) data[i] += o.data[i];
        return *this;
    }
    Tensor& operator-=(const Tensor& o) {
        assert(same_shape(o));
        for (std::size_t i = 0; i < data.size(); ++i) data[i] -= o.data[i];
        return *this;
    }
    Tensor& operator*=(T s) {
        for (auto& v : data) v *= s;
        return *this;
    }

    template <class U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }

    T max_abs() const {
        T m = 0;
        for (T v : data) m = std::max(m, static_cast<T>(std::abs(static_cast<double>(v))));
        return m;
    }
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;
using MaskT = Tensor<std::uint8_t>;  // (B, H, W) class-index masks

inline std::string shape_str(const std::vector<int>& s) {
    std::string out = "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        out += std::to_string(s[i]);
        if (i + 1 < s.size()) out += ", ";
    }
    return out + ")";
}

}  // namespace cfc
