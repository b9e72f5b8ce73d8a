#pragma once

// Dense data-parallel kernels. Everything under fdm::kernels is OpenMP-parallel
// and is what the library calls; fdm::kernels::reference holds straightforward
// serial versions kept for tests and the benchmark.
//
// Activations inside the denoiser use a "CNHW" layout: channel-major with the
// batch folded inside each channel, so a 3x3 convolution over a batch is one
// GEMM of shape (C_out x 9*C_in) * (9*C_in x B*H*W).

#include <cstddef>

namespace fdm::kernels {

/// C[M x N] (+)= A[M x K] * B[K x N], all row-major and contiguous.
/// Each output element accumulates over k in increasing order regardless of
/// threading, so results are bit-identical for any thread count or N split.
template <typename T>
void gemm(int M, int N, int K, const T* A, const T* B, T* C, bool accumulate);

template <typename T>
void transpose(int rows, int cols, const T* in, T* out);

/// 3x3, stride 1, zero padding 1. Input is (C, B, H, W); col is (C*9) x (B*H*W).
template <typename T>
void im2col3x3(int C, int B, int H, int W, const T* in, T* col);

/// Adjoint of im2col3x3: scatters col back onto a (C, B, H, W) gradient, overwriting it.
template <typename T>
void col2im3x3(int C, int B, int H, int W, const T* col, T* in_grad);

/// 2x2 mean over `planes` independent HxW planes. H and W must be even.
template <typename T>
void avgpool2(int planes, int H, int W, const T* in, T* out);
template <typename T>
void avgpool2_backward(int planes, int H, int W, const T* grad_out, T* grad_in);

/// Nearest-neighbour 2x enlargement of (planes, H, W) into (planes, 2H, 2W).
template <typename T>
void upsample_nearest2(int planes, int H, int W, const T* in, T* out);
template <typename T>
void upsample_nearest2_backward(int planes, int H, int W, const T* grad_out, T* grad_in);

/// Half-pixel-centred bilinear 2x enlargement with edge clamping.
template <typename T>
void upsample_bilinear2(int planes, int H, int W, const T* in, T* out);

template <typename T>
void silu(std::size_t n, const T* in, T* out);
/// grad_in = grad_out * silu'(pre)
template <typename T>
void silu_backward(std::size_t n, const T* pre, const T* grad_out, T* grad_in);

namespace reference {

template <typename T>
void gemm(int M, int N, int K, const T* A, const T* B, T* C, bool accumulate);

/// Direct 3x3 convolution over a (C_in, B, H, W) input; weight is (C_out, C_in, 3, 3).
template <typename T>
void conv3x3(int C_in, int C_out, int B, int H, int W, const T* in, const T* weight, T* out);

template <typename T>
void avgpool2(int planes, int H, int W, const T* in, T* out);

template <typename T>
void upsample_bilinear2(int planes, int H, int W, const T* in, T* out);

template <typename T>
void silu(std::size_t n, const T* in, T* out);

}  // namespace reference

}  // namespace fdm::kernels
