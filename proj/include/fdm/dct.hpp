#pragma once

#include <vector>

#include "fdm/tensor.hpp"

namespace fdm {

/// Orthonormal DCT-II matrix (n x n, row u holds basis vector u).
std::vector<double> dct_basis(int n);

/// Per-channel 2-D DCT-II / inverse of an image.
Tensor dct2(const Tensor& x);
Tensor idct2(const Tensor& coeffs);

/// Gaussian blur with standard deviation sigma_b (pixels) applied in the DCT
/// domain, i.e. with reflecting (Neumann) borders. Coefficient (i, j) is scaled
/// by exp(-(pi^2 sigma_b^2 / 2) * ((i/H)^2 + (j/W)^2)).
Tensor gaussian_blur_freq(const Tensor& x, double sigma_b);

}  // namespace fdm
