#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "fdm/kernels.hpp"

namespace k = fdm::kernels;

namespace {

std::vector<float> random_vec(std::size_t n, unsigned seed) {
    std::mt19937 eng(seed);
    std::normal_distribution<float> d;
    std::vector<float> v(n);
    for (float& x : v) x = d(eng);
    return v;
}

// Conv 3x3 as the denoiser runs it: im2col then GEMM.
void BM_conv3x3_parallel(benchmark::State& st) {
    const int C = static_cast<int>(st.range(0));
    const int B = 16;
    const int H = 16;
    const int W = 16;
    const auto in = random_vec(static_cast<std::size_t>(C) * B * H * W, 1);
    const auto w = random_vec(static_cast<std::size_t>(C) * C * 9, 2);
    std::vector<float> col(static_cast<std::size_t>(C) * 9 * B * H * W);
    std::vector<float> out(static_cast<std::size_t>(C) * B * H * W);
    for (auto _ : st) {
        k::im2col3x3(C, B, H, W, in.data(), col.data());
        k::gemm(C, B * H * W, 9 * C, w.data(), col.data(), out.data(), false);
        benchmark::DoNotOptimize(out.data());
    }
    st.SetItemsProcessed(st.iterations() * 2LL * C * C * 9 * B * H * W);
}

void BM_conv3x3_reference(benchmark::State& st) {
    const int C = static_cast<int>(st.range(0));
    const int B = 16;
    const int H = 16;
    const int W = 16;
    const auto in = random_vec(static_cast<std::size_t>(C) * B * H * W, 1);
    const auto w = random_vec(static_cast<std::size_t>(C) * C * 9, 2);
    std::vector<float> out(static_cast<std::size_t>(C) * B * H * W);
    for (auto _ : st) {
        k::reference::conv3x3(C, C, B, H, W, in.data(), w.data(), out.data());
        benchmark::DoNotOptimize(out.data());
    }
    st.SetItemsProcessed(st.iterations() * 2LL * C * C * 9 * B * H * W);
}

void BM_gemm_parallel(benchmark::State& st) {
    const int n = static_cast<int>(st.range(0));
    const auto a = random_vec(static_cast<std::size_t>(n) * n, 3);
    const auto b = random_vec(static_cast<std::size_t>(n) * n, 4);
    std::vector<float> c(static_cast<std::size_t>(n) * n);
    for (auto _ : st) {
        k::gemm(n, n, n, a.data(), b.data(), c.data(), false);
        benchmark::DoNotOptimize(c.data());
    }
    st.SetItemsProcessed(st.iterations() * 2LL * n * n * n);
}

void BM_gemm_reference(benchmark::State& st) {
    const int n = static_cast<int>(st.range(0));
    const auto a = random_vec(static_cast<std::size_t>(n) * n, 3);
    const auto b = random_vec(static_cast<std::size_t>(n) * n, 4);
    std::vector<float> c(static_cast<std::size_t>(n) * n);
    for (auto _ : st) {
        k::reference::gemm(n, n, n, a.data(), b.data(), c.data(), false);
        benchmark::DoNotOptimize(c.data());
    }
    st.SetItemsProcessed(st.iterations() * 2LL * n * n * n);
}

void BM_avgpool_parallel(benchmark::State& st) {
    const int planes = 256;
    const auto in = random_vec(static_cast<std::size_t>(planes) * 64 * 64, 5);
    std::vector<float> out(static_cast<std::size_t>(planes) * 32 * 32);
    for (auto _ : st) {
        k::avgpool2(planes, 64, 64, in.data(), out.data());
        benchmark::DoNotOptimize(out.data());
    }
}

void BM_avgpool_reference(benchmark::State& st) {
    const int planes = 256;
    const auto in = random_vec(static_cast<std::size_t>(planes) * 64 * 64, 5);
    std::vector<float> out(static_cast<std::size_t>(planes) * 32 * 32);
    for (auto _ : st) {
        k::reference::avgpool2(planes, 64, 64, in.data(), out.data());
        benchmark::DoNotOptimize(out.data());
    }
}

void BM_bilinear_parallel(benchmark::State& st) {
    const int planes = 256;
    const auto in = random_vec(static_cast<std::size_t>(planes) * 32 * 32, 6);
    std::vector<float> out(static_cast<std::size_t>(planes) * 64 * 64);
    for (auto _ : st) {
        k::upsample_bilinear2(planes, 32, 32, in.data(), out.data());
        benchmark::DoNotOptimize(out.data());
    }
}

void BM_bilinear_reference(benchmark::State& st) {
    const int planes = 256;
    const auto in = random_vec(static_cast<std::size_t>(planes) * 32 * 32, 6);
    std::vector<float> out(static_cast<std::size_t>(planes) * 64 * 64);
    for (auto _ : st) {
        k::reference::upsample_bilinear2(planes, 32, 32, in.data(), out.data());
        benchmark::DoNotOptimize(out.data());
    }
}

void BM_silu_parallel(benchmark::State& st) {
    const auto in = random_vec(1 << 20, 7);
    std::vector<float> out(in.size());
    for (auto _ : st) {
        k::silu(in.size(), in.data(), out.data());
        benchmark::DoNotOptimize(out.data());
    }
    st.SetItemsProcessed(st.iterations() * static_cast<long long>(in.size()));
}

void BM_silu_reference(benchmark::State& st) {
    const auto in = random_vec(1 << 20, 7);
    std::vector<float> out(in.size());
    for (auto _ : st) {
        k::reference::silu(in.size(), in.data(), out.data());
        benchmark::DoNotOptimize(out.data());
    }
    st.SetItemsProcessed(st.iterations() * static_cast<long long>(in.size()));
}

}  // namespace

BENCHMARK(BM_conv3x3_parallel)->Arg(16)->Arg(32);
BENCHMARK(BM_conv3x3_reference)->Arg(16)->Arg(32);
BENCHMARK(BM_gemm_parallel)->Arg(128)->Arg(256);
BENCHMARK(BM_gemm_reference)->Arg(128)->Arg(256);
BENCHMARK(BM_avgpool_parallel);
BENCHMARK(BM_avgpool_reference);
BENCHMARK(BM_bilinear_parallel);
BENCHMARK(BM_bilinear_reference);
BENCHMARK(BM_silu_parallel);
BENCHMARK(BM_silu_reference);

BENCHMARK_MAIN();
