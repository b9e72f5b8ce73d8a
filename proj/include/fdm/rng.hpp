#pragma once

#include <cstdint>
#include <random>
#include <span>

#include "fdm/tensor.hpp"

namespace fdm {

/// splitmix64 finaliser; used to derive independent stream seeds.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t sub = 0) {
    return mix64(mix64(mix64(seed) ^ stream) ^ (sub * 0x632be59bd9b4e019ULL));
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}
    Rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t sub = 0) : eng_(stream_seed(seed, stream, sub)) {}

    double normal() { return normal_(eng_); }
    double uniform() { return uniform_(eng_); }
    std::uint64_t next() { return eng_(); }
    /// Uniform integer in [0, n).
    std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(eng_); }

    void fill_normal(std::span<float> out) {
        for (float& v : out) v = static_cast<float>(normal_(eng_));
    }
    Tensor normal_tensor(const Shape& s) {
        Tensor t(s);
        fill_normal(t.data);
        return t;
    }

private:
    std::mt19937_64 eng_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace fdm
