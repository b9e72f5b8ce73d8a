#pragma once

#include <cmath>
#include <vector>

#include "fdm/rng.hpp"
#include "fdm/tensor.hpp"

namespace fdm::test {

inline Tensor random_tensor(Shape s, std::uint64_t seed, double scale = 1.0) {
    Rng rng(seed, 0x7465);
    Tensor t(s);
    for (float& v : t.data) v = static_cast<float>(scale * rng.normal());
    return t;
}

template <typename T>
std::vector<T> random_vec(std::size_t n, std::uint64_t seed) {
    Rng rng(seed, 0x7466);
    std::vector<T> v(n);
    for (T& x : v) x = static_cast<T>(rng.normal());
    return v;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a.data[i]) - b.data[i]));
    return m;
}

template <typename T, typename U>
double max_abs_diff(const std::vector<T>& a, const std::vector<U>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
    return m;
}

}  // namespace fdm::test
