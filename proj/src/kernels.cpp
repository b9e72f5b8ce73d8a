#include "fdm/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <vector>

namespace fdm::kernels {

namespace {

constexpr int kMR = 8;   // rows of C per micro-tile
constexpr int kNR = 32;  // columns of C per packed B panel

// Full MR x NR tile: acc[r][j] = sum_k A[r][k] * panel[k][j], with A packed k-major (K x MR).
template <typename T>
inline void micro_tile(int K, const T* A, const T* panel, T* C, int ldc, bool accumulate) {
    T acc[kMR][kNR];
    for (int r = 0; r < kMR; ++r) {
        for (int j = 0; j < kNR; ++j) acc[r][j] = T(0);
    }
    for (int k = 0; k < K; ++k) {
        const T* b = panel + static_cast<std::size_t>(k) * kNR;
        for (int r = 0; r < kMR; ++r) {
            const T a = A[static_cast<std::size_t>(k) * kMR + r];
#pragma omp simd
            for (int j = 0; j < kNR; ++j) acc[r][j] += a * b[j];
        }
    }
    for (int r = 0; r < kMR; ++r) {
        T* c = C + static_cast<std::size_t>(r) * ldc;
        if (accumulate) {
            for (int j = 0; j < kNR; ++j) c[j] += acc[r][j];
        } else {
            for (int j = 0; j < kNR; ++j) c[j] = acc[r][j];
        }
    }
}

// Ragged edge tile (rows < MR or cols < NR).
template <typename T>
inline void edge_tile(int rows, int cols, int K, const T* A, int lda, const T* panel, T* C, int ldc,
                      bool accumulate) {
    T acc[kNR];
    for (int r = 0; r < rows; ++r) {
        for (int j = 0; j < kNR; ++j) acc[j] = T(0);
        const T* a_row = A + static_cast<std::size_t>(r) * lda;
        for (int k = 0; k < K; ++k) {
            const T a = a_row[k];
            const T* b = panel + static_cast<std::size_t>(k) * kNR;
#pragma omp simd
            for (int j = 0; j < kNR; ++j) acc[j] += a * b[j];
        }
        T* c = C + static_cast<std::size_t>(r) * ldc;
        for (int j = 0; j < cols; ++j) c[j] = accumulate ? c[j] + acc[j] : acc[j];
    }
}

}  // namespace

template <typename T>
void gemm(int M, int N, int K, const T* A, const T* B, T* C, bool accumulate) {
    if (M <= 0 || N <= 0) return;
    if (K <= 0) {
        if (!accumulate) std::fill(C, C + static_cast<std::size_t>(M) * N, T(0));
        return;
    }
    const int panels = (N + kNR - 1) / kNR;
    std::vector<T> apack(static_cast<std::size_t>(M / kMR) * kMR * K);
    for (int i0 = 0; i0 + kMR <= M; i0 += kMR) {
        for (int k = 0; k < K; ++k) {
            for (int r = 0; r < kMR; ++r) {
                apack[static_cast<std::size_t>(i0) * K + static_cast<std::size_t>(k) * kMR + r] =
                    A[static_cast<std::size_t>(i0 + r) * K + k];
            }
        }
    }
#pragma omp parallel if (static_cast<long long>(M) * N * K > (1 << 16))
    {
        std::vector<T> panel(static_cast<std::size_t>(K) * kNR);
#pragma omp for schedule(static)
        for (int p = 0; p < panels; ++p) {
            const int j0 = p * kNR;
            const int cols = std::min(kNR, N - j0);
            for (int k = 0; k < K; ++k) {
                const T* src = B + static_cast<std::size_t>(k) * N + j0;
                T* dst = panel.data() + static_cast<std::size_t>(k) * kNR;
                int j = 0;
                for (; j < cols; ++j) dst[j] = src[j];
                for (; j < kNR; ++j) dst[j] = T(0);
            }
            int i0 = 0;
            if (cols == kNR) {
                for (; i0 + kMR <= M; i0 += kMR) {
                    micro_tile(K, apack.data() + static_cast<std::size_t>(i0) * K, panel.data(),
                               C + static_cast<std::size_t>(i0) * N + j0, N, accumulate);
                }
            }
            if (i0 < M) {
                edge_tile(M - i0, cols, K, A + static_cast<std::size_t>(i0) * K, K, panel.data(),
                          C + static_cast<std::size_t>(i0) * N + j0, N, accumulate);
            }
        }
    }
}

template <typename T>
void transpose(int rows, int cols, const T* in, T* out) {
    constexpr int kBlock = 32;
#pragma omp parallel for collapse(2) schedule(static) if (static_cast<long long>(rows) * cols > (1 << 15))
    for (int r0 = 0; r0 < rows; r0 += kBlock) {
        for (int c0 = 0; c0 < cols; c0 += kBlock) {
            const int r1 = std::min(rows, r0 + kBlock);
            const int c1 = std::min(cols, c0 + kBlock);
            for (int r = r0; r < r1; ++r) {
                for (int c = c0; c < c1; ++c) {
                    out[static_cast<std::size_t>(c) * rows + r] = in[static_cast<std::size_t>(r) * cols + c];
                }
            }
        }
    }
}

template <typename T>
void im2col3x3(int C, int B, int H, int W, const T* in, T* col) {
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    const std::size_t ncols = static_cast<std::size_t>(B) * plane;
#pragma omp parallel for collapse(2) schedule(static) if (ncols * C > (1 << 14))
    for (int c = 0; c < C; ++c) {
        for (int tap = 0; tap < 9; ++tap) {
            const int dy = tap / 3 - 1;
            const int dx = tap % 3 - 1;
            T* dst = col + (static_cast<std::size_t>(c) * 9 + tap) * ncols;
            for (int b = 0; b < B; ++b) {
                const T* src = in + (static_cast<std::size_t>(c) * B + b) * plane;
                T* d = dst + static_cast<std::size_t>(b) * plane;
                for (int y = 0; y < H; ++y) {
                    const int sy = y + dy;
                    T* drow = d + static_cast<std::size_t>(y) * W;
                    if (sy < 0 || sy >= H) {
                        std::fill(drow, drow + W, T(0));
                        continue;
                    }
                    const T* srow = src + static_cast<std::size_t>(sy) * W;
                    const int x0 = std::max(0, -dx);
                    const int x1 = std::min(W, W - dx);
                    for (int x = 0; x < x0; ++x) drow[x] = T(0);
                    for (int x = x0; x < x1; ++x) drow[x] = srow[x + dx];
                    for (int x = x1; x < W; ++x) drow[x] = T(0);
                }
            }
        }
    }
}

template <typename T>
void col2im3x3(int C, int B, int H, int W, const T* col, T* in_grad) {
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    const std::size_t ncols = static_cast<std::size_t>(B) * plane;
    // Parallel over (c, b) planes; the nine taps for one plane are summed in a fixed order.
#pragma omp parallel for collapse(2) schedule(static) if (ncols * C > (1 << 14))
    for (int c = 0; c < C; ++c) {
        for (int b = 0; b < B; ++b) {
            T* g = in_grad + (static_cast<std::size_t>(c) * B + b) * plane;
            std::fill(g, g + plane, T(0));
            for (int tap = 0; tap < 9; ++tap) {
                const int dy = tap / 3 - 1;
                const int dx = tap % 3 - 1;
                const T* src = col + (static_cast<std::size_t>(c) * 9 + tap) * ncols + static_cast<std::size_t>(b) * plane;
                for (int y = 0; y < H; ++y) {
                    const int sy = y + dy;
                    if (sy < 0 || sy >= H) continue;
                    const T* srow = src + static_cast<std::size_t>(y) * W;
                    T* grow = g + static_cast<std::size_t>(sy) * W;
                    const int x0 = std::max(0, -dx);
                    const int x1 = std::min(W, W - dx);
                    for (int x = x0; x < x1; ++x) grow[x + dx] += srow[x];
                }
            }
        }
    }
}

template <typename T>
void avgpool2(int planes, int H, int W, const T* in, T* out) {
    const int h = H / 2;
    const int w = W / 2;
#pragma omp parallel for schedule(static) if (static_cast<long long>(planes) * H * W > (1 << 15))
    for (int p = 0; p < planes; ++p) {
        const T* src = in + static_cast<std::size_t>(p) * H * W;
        T* dst = out + static_cast<std::size_t>(p) * h * w;
        for (int y = 0; y < h; ++y) {
            const T* r0 = src + static_cast<std::size_t>(2 * y) * W;
            const T* r1 = r0 + W;
            for (int x = 0; x < w; ++x) {
                dst[y * w + x] = T(0.25) * ((r0[2 * x] + r0[2 * x + 1]) + (r1[2 * x] + r1[2 * x + 1]));
            }
        }
    }
}

template <typename T>
void avgpool2_backward(int planes, int H, int W, const T* grad_out, T* grad_in) {
    const int h = H / 2;
    const int w = W / 2;
#pragma omp parallel for schedule(static) if (static_cast<long long>(planes) * H * W > (1 << 15))
    for (int p = 0; p < planes; ++p) {
        const T* g = grad_out + static_cast<std::size_t>(p) * h * w;
        T* dst = grad_in + static_cast<std::size_t>(p) * H * W;
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) dst[y * W + x] = T(0.25) * g[(y / 2) * w + x / 2];
        }
    }
}

template <typename T>
void upsample_nearest2(int planes, int H, int W, const T* in, T* out) {
    const int W2 = 2 * W;
#pragma omp parallel for schedule(static) if (static_cast<long long>(planes) * H * W > (1 << 14))
    for (int p = 0; p < planes; ++p) {
        const T* src = in + static_cast<std::size_t>(p) * H * W;
        T* dst = out + static_cast<std::size_t>(p) * 4 * H * W;
        for (int y = 0; y < 2 * H; ++y) {
            const T* srow = src + static_cast<std::size_t>(y / 2) * W;
            T* drow = dst + static_cast<std::size_t>(y) * W2;
            for (int x = 0; x < W2; ++x) drow[x] = srow[x / 2];
        }
    }
}

template <typename T>
void upsample_nearest2_backward(int planes, int H, int W, const T* grad_out, T* grad_in) {
    const int W2 = 2 * W;
#pragma omp parallel for schedule(static) if (static_cast<long long>(planes) * H * W > (1 << 14))
    for (int p = 0; p < planes; ++p) {
        const T* g = grad_out + static_cast<std::size_t>(p) * 4 * H * W;
        T* dst = grad_in + static_cast<std::size_t>(p) * H * W;
        for (int y = 0; y < H; ++y) {
            const T* r0 = g + static_cast<std::size_t>(2 * y) * W2;
            const T* r1 = r0 + W2;
            for (int x = 0; x < W; ++x) dst[y * W + x] = (r0[2 * x] + r0[2 * x + 1]) + (r1[2 * x] + r1[2 * x + 1]);
        }
    }
}

template <typename T>
void upsample_bilinear2(int planes, int H, int W, const T* in, T* out) {
    const int H2 = 2 * H;
    const int W2 = 2 * W;
#pragma omp parallel
    {
        std::vector<T> mid(W);
#pragma omp for schedule(static)
        for (int p = 0; p < planes; ++p) {
            const T* src = in + static_cast<std::size_t>(p) * H * W;
            T* dst = out + static_cast<std::size_t>(p) * H2 * W2;
            for (int y = 0; y < H2; ++y) {
                // Output row y sits at source coordinate (y + 0.5) / 2 - 0.5.
                const int m = y / 2;
                const int other = (y % 2 == 0) ? std::max(m - 1, 0) : std::min(m + 1, H - 1);
                const T* ra = src + static_cast<std::size_t>(m) * W;
                const T* rb = src + static_cast<std::size_t>(other) * W;
                for (int x = 0; x < W; ++x) mid[x] = T(0.75) * ra[x] + T(0.25) * rb[x];
                T* drow = dst + static_cast<std::size_t>(y) * W2;
                for (int x = 0; x < W; ++x) {
                    const T l = mid[std::max(x - 1, 0)];
                    const T r = mid[std::min(x + 1, W - 1)];
                    drow[2 * x] = T(0.75) * mid[x] + T(0.25) * l;
                    drow[2 * x + 1] = T(0.75) * mid[x] + T(0.25) * r;
                }
            }
        }
    }
}

template <typename T>
void silu(std::size_t n, const T* in, T* out) {
#pragma omp parallel for simd schedule(static) if (n > (1 << 16))
    for (std::size_t i = 0; i < n; ++i) {
        const T v = in[i];
        out[i] = v / (T(1) + std::exp(-v));
    }
}

template <typename T>
void silu_backward(std::size_t n, const T* pre, const T* grad_out, T* grad_in) {
#pragma omp parallel for simd schedule(static) if (n > (1 << 16))
    for (std::size_t i = 0; i < n; ++i) {
        const T v = pre[i];
        const T s = T(1) / (T(1) + std::exp(-v));
        grad_in[i] = grad_out[i] * s * (T(1) + v * (T(1) - s));
    }
}

namespace reference {

template <typename T>
void gemm(int M, int N, int K, const T* A, const T* B, T* C, bool accumulate) {
    for (int i = 0; i < M; ++i) {
        for (int j = 0; j < N; ++j) {
            T acc = T(0);
            for (int k = 0; k < K; ++k) acc += A[static_cast<std::size_t>(i) * K + k] * B[static_cast<std::size_t>(k) * N + j];
            T& c = C[static_cast<std::size_t>(i) * N + j];
            c = accumulate ? c + acc : acc;
        }
    }
}

template <typename T>
void conv3x3(int C_in, int C_out, int B, int H, int W, const T* in, const T* weight, T* out) {
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    for (int o = 0; o < C_out; ++o) {
        for (int b = 0; b < B; ++b) {
            for (int y = 0; y < H; ++y) {
                for (int x = 0; x < W; ++x) {
                    T acc = T(0);
                    for (int c = 0; c < C_in; ++c) {
                        const T* src = in + (static_cast<std::size_t>(c) * B + b) * plane;
                        for (int ky = 0; ky < 3; ++ky) {
                            for (int kx = 0; kx < 3; ++kx) {
                                const int sy = y + ky - 1;
                                const int sx = x + kx - 1;
                                if (sy < 0 || sy >= H || sx < 0 || sx >= W) continue;
                                acc += weight[((static_cast<std::size_t>(o) * C_in + c) * 3 + ky) * 3 + kx] *
                                       src[static_cast<std::size_t>(sy) * W + sx];
                            }
                        }
                    }
                    out[(static_cast<std::size_t>(o) * B + b) * plane + static_cast<std::size_t>(y) * W + x] = acc;
                }
            }
        }
    }
}

template <typename T>
void avgpool2(int planes, int H, int W, const T* in, T* out) {
    const int h = H / 2;
    const int w = W / 2;
    for (int p = 0; p < planes; ++p) {
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                T s = T(0);
                for (int dy = 0; dy < 2; ++dy) {
                    for (int dx = 0; dx < 2; ++dx) s += in[(static_cast<std::size_t>(p) * H + 2 * y + dy) * W + 2 * x + dx];
                }
                out[(static_cast<std::size_t>(p) * h + y) * w + x] = s / T(4);
            }
        }
    }
}

template <typename T>
void upsample_bilinear2(int planes, int H, int W, const T* in, T* out) {
    auto source = [](int i, int n, int& i0, int& i1, double& frac) {
        double s = (i + 0.5) / 2.0 - 0.5;
        if (s < 0.0) s = 0.0;
        i0 = static_cast<int>(std::floor(s));
        if (i0 > n - 1) i0 = n - 1;
        i1 = std::min(i0 + 1, n - 1);
        frac = s - i0;
    };
    for (int p = 0; p < planes; ++p) {
        const T* src = in + static_cast<std::size_t>(p) * H * W;
        T* dst = out + static_cast<std::size_t>(p) * 4 * H * W;
        for (int y = 0; y < 2 * H; ++y) {
            int y0, y1;
            double fy;
            source(y, H, y0, y1, fy);
            for (int x = 0; x < 2 * W; ++x) {
                int x0, x1;
                double fx;
                source(x, W, x0, x1, fx);
                const double top = (1 - fx) * src[y0 * W + x0] + fx * src[y0 * W + x1];
                const double bot = (1 - fx) * src[y1 * W + x0] + fx * src[y1 * W + x1];
                dst[static_cast<std::size_t>(y) * 2 * W + x] = static_cast<T>((1 - fy) * top + fy * bot);
            }
        }
    }
}

template <typename T>
void silu(std::size_t n, const T* in, T* out) {
    for (std::size_t i = 0; i < n; ++i) out[i] = in[i] / (T(1) + std::exp(-in[i]));
}

}  // namespace reference

#define FDM_INSTANTIATE_KERNELS(T)                                                          \
    template void gemm<T>(int, int, int, const T*, const T*, T*, bool);                     \
    template void transpose<T>(int, int, const T*, T*);                                     \
    template void im2col3x3<T>(int, int, int, int, const T*, T*);                           \
    template void col2im3x3<T>(int, int, int, int, const T*, T*);                           \
    template void avgpool2<T>(int, int, int, const T*, T*);                                 \
    template void avgpool2_backward<T>(int, int, int, const T*, T*);                        \
    template void upsample_nearest2<T>(int, int, int, const T*, T*);                        \
    template void upsample_nearest2_backward<T>(int, int, int, const T*, T*);               \
    template void upsample_bilinear2<T>(int, int, int, const T*, T*);                       \
    template void silu<T>(std::size_t, const T*, T*);                                       \
    template void silu_backward<T>(std::size_t, const T*, const T*, T*);                    \
    template void reference::gemm<T>(int, int, int, const T*, const T*, T*, bool);          \
    template void reference::conv3x3<T>(int, int, int, int, int, const T*, const T*, T*);   \
    template void reference::avgpool2<T>(int, int, int, const T*, T*);                      \
    template void reference::upsample_bilinear2<T>(int, int, int, const T*, T*);            \
    template void reference::silu<T>(std::size_t, const T*, T*);

FDM_INSTANTIATE_KERNELS(float)
FDM_INSTANTIATE_KERNELS(double)

}  // namespace fdm::kernels
