#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace fdm {

/// Channel-major image shape (C, H, W).
struct Shape {
    int channels = 0;
    int height = 0;
    int width = 0;

    [[nodiscard]] std::size_t size() const {
        return static_cast<std::size_t>(channels) * height * width;
    }
    [[nodiscard]] std::size_t plane() const { return static_cast<std::size_t>(height) * width; }

    friend bool operator==(const Shape&, const Shape&) = default;
};

inline std::string to_string(const Shape& s) {
    return std::to_string(s.channels) + "x" + std::to_string(s.height) + "x" + std::to_string(s.width);
}

template <typename T>
struct BasicTensor {
    Shape shape;
    std::vector<T> data;

    BasicTensor() = default;
    explicit BasicTensor(Shape s, T fill = T(0)) : shape(s), data(s.size(), fill) {}
    BasicTensor(Shape s, std::vector<T> values) : shape(s), data(std::move(values)) {
        if (data.size() != shape.size()) {
            throw std::invalid_argument("tensor data size does not match shape " + to_string(shape));
        }
    }

    [[nodiscard]] std::size_t size() const { return data.size(); }
    T& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * shape.height + y) * shape.width + x]; }
    const T& at(int c, int y, int x) const {
        return data[(static_cast<std::size_t>(c) * shape.height + y) * shape.width + x];
    }
    T* plane(int c) { return data.data() + static_cast<std::size_t>(c) * shape.plane(); }
    const T* plane(int c) const { return data.data() + static_cast<std::size_t>(c) * shape.plane(); }
};

using Tensor = BasicTensor<float>;

inline void require_shape(const Tensor& t, const Shape& expected, const char* what) {
    if (!(t.shape == expected)) {
        throw std::invalid_argument(std::string(what) + ": expected shape " + to_string(expected) + ", got " +
                                    to_string(t.shape));
    }
}

// Elementwise helpers used across modules.
Tensor axpby(double a, const Tensor& x, double b, const Tensor& y);
Tensor scaled(const Tensor& x, double a);
double mean_square(const Tensor& x);
double mean_square_diff(const Tensor& a, const Tensor& b);

}  // namespace fdm
