#include "fdm/dct.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace fdm {

std::vector<double> dct_basis(int n) {
    std::vector<double> b(static_cast<std::size_t>(n) * n);
    for (int u = 0; u < n; ++u) {
        const double scale = u == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
        for (int x = 0; x < n; ++x) {
            b[static_cast<std::size_t>(u) * n + x] = scale * std::cos(std::numbers::pi * (2 * x + 1) * u / (2.0 * n));
        }
    }
    return b;
}

namespace {

// out = Bh * in * Bw^T  (forward)   or   Bh^T * in * Bw  (inverse), per channel.
Tensor separable(const Tensor& x, bool inverse, const std::vector<double>* response) {
    const int H = x.shape.height;
    const int W = x.shape.width;
    const std::vector<double> bh = dct_basis(H);
    const std::vector<double> bw = W == H ? bh : dct_basis(W);
    Tensor out(x.shape);
#pragma omp parallel for schedule(static) if (x.shape.channels > 1)
    for (int c = 0; c < x.shape.channels; ++c) {
        const float* src = x.plane(c);
        std::vector<double> tmp(static_cast<std::size_t>(H) * W, 0.0);
        std::vector<double> res(static_cast<std::size_t>(H) * W, 0.0);
        // rows: tmp[y][v] = sum_x src[y][x] * Bw(v, x)   (forward)
        for (int y = 0; y < H; ++y) {
            for (int v = 0; v < W; ++v) {
                double acc = 0.0;
                for (int xx = 0; xx < W; ++xx) {
                    const double w = inverse ? bw[static_cast<std::size_t>(xx) * W + v] : bw[static_cast<std::size_t>(v) * W + xx];
                    acc += w * src[static_cast<std::size_t>(y) * W + xx];
                }
                tmp[static_cast<std::size_t>(y) * W + v] = acc;
            }
        }
        for (int u = 0; u < H; ++u) {
            for (int v = 0; v < W; ++v) {
                double acc = 0.0;
                for (int y = 0; y < H; ++y) {
                    const double w = inverse ? bh[static_cast<std::size_t>(y) * H + u] : bh[static_cast<std::size_t>(u) * H + y];
                    acc += w * tmp[static_cast<std::size_t>(y) * W + v];
                }
                res[static_cast<std::size_t>(u) * W + v] = acc;
            }
        }
        if (response != nullptr) {
            for (std::size_t i = 0; i < res.size(); ++i) res[i] *= (*response)[i];
        }
        float* dst = out.plane(c);
        for (std::size_t i = 0; i < res.size(); ++i) dst[i] = static_cast<float>(res[i]);
    }
    return out;
}

}  // namespace

Tensor dct2(const Tensor& x) { return separable(x, false, nullptr); }
Tensor idct2(const Tensor& coeffs) { return separable(coeffs, true, nullptr); }

Tensor gaussian_blur_freq(const Tensor& x, double sigma_b) {
    if (sigma_b < 0.0 || !std::isfinite(sigma_b)) throw std::invalid_argument("blur sigma must be non-negative");
    if (sigma_b == 0.0) return x;
    const int H = x.shape.height;
    const int W = x.shape.width;
    std::vector<double> response(static_cast<std::size_t>(H) * W);
    const double c = std::numbers::pi * std::numbers::pi * sigma_b * sigma_b / 2.0;
    for (int i = 0; i < H; ++i) {
        for (int j = 0; j < W; ++j) {
            const double fi = static_cast<double>(i) / H;
            const double fj = static_cast<double>(j) / W;
            response[static_cast<std::size_t>(i) * W + j] = std::exp(-c * (fi * fi + fj * fj));
        }
    }
    Tensor coeffs = separable(x, false, &response);
    return separable(coeffs, true, nullptr);
}

}  // namespace fdm
