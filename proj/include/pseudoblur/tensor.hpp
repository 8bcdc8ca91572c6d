#pragma once

#include <cassert>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace pseudoblur {

// Dense row-major tensor. Network feature maps use (C, H, W) order.
template <typename T>
struct Tensor {
    std::vector<int> shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s, T fill = T(0)) : shape(std::move(s)) {
        data.assign(numel(), fill);
    }

    std::size_t numel() const {
        std::size_t n = 1;
        for (int d : shape) {
            if (d <= 0) throw std::invalid_argument("tensor dims must be positive");
            n *= static_cast<std::size_t>(d);
        }
        return n;
    }

    int dim(int i) const { return shape.at(static_cast<std::size_t>(i)); }
    int rank() const { return static_cast<int>(shape.size()); }

    T& operator[](std::size_t i) { return data[i]; }
    const T& operator[](std::size_t i) const { return data[i]; }

    // (c, y, x) accessors for rank-3 tensors
    T& at(int c, int y, int x) {
        return data[(static_cast<std::size_t>(c) * shape[1] + y) * shape[2] + x];
    }
    const T& at(int c, int y, int x) const {
        return data[(static_cast<std::size_t>(c) * shape[1] + y) * shape[2] + x];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }

    static std::string shape_str(const std::vector<int>& s) {
        std::string out = "(";
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (i) out += ",";
            out += std::to_string(s[i]);
        }
        return out + ")";
    }
};

template <typename T, typename U>
Tensor<T> tensor_cast(const Tensor<U>& src) {
    Tensor<T> out(src.shape);
    for (std::size_t i = 0; i < src.data.size(); ++i) out.data[i] = static_cast<T>(src.data[i]);
    return out;
}

} // namespace pseudoblur
