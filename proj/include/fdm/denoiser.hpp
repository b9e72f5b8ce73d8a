#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fdm/diffusion.hpp"
#include "fdm/params.hpp"
#include "fdm/schedules.hpp"
#include "fdm/tensor.hpp"

namespace fdm {

struct DenoiserConfig {
    int channels = 32;          // trunk width
    int embed_dim = 32;         // hidden width of the time/stage embedding MLP
    bool zero_init_output = true;
};

inline constexpr int kEmbedFeatures = 32;  // 16 for t, 16 for k

/// Parameters of the two-level trunk plus one input/output adapter pair per
/// distinct stage shape.
template <typename T>
struct DenoiserParams {
    DenoiserConfig config;
    std::vector<Shape> adapter_shapes;
    ParamSet<T> set;

    /// Index into adapter_shapes, or -1 when the shape has no adapter.
    [[nodiscard]] int adapter_for(const Shape& s) const {
        for (std::size_t i = 0; i < adapter_shapes.size(); ++i) {
            if (adapter_shapes[i] == s) return static_cast<int>(i);
        }
        return -1;
    }

    template <typename U>
    [[nodiscard]] DenoiserParams<U> cast() const {
        return DenoiserParams<U>{config, adapter_shapes, set.template cast<U>()};
    }
};

std::string adapter_key(const Shape& s);

template <typename T>
DenoiserParams<T> init_denoiser(const DenoiserConfig& cfg, std::span<const Shape> stage_shapes, std::uint64_t seed);

/// Sinusoidal features of (t, k): 8 sin + 8 cos of 1000 t, then 8 sin + 8 cos of k.
void embed_features(double t, int k, double* out);

/// One batch of equally shaped latents in channel-major (C, B, H, W) order.
template <typename T>
struct DenoiserBatch {
    Shape shape;
    int batch = 0;
    std::vector<T> x;
    std::vector<double> t;
    std::vector<int> k;
};

/// Forward/backward for one batch. The graph keeps the activations of the last
/// forward call so backward can reuse them.
template <typename T>
class DenoiserGraph {
public:
    explicit DenoiserGraph(const DenoiserParams<T>& params) : p_(params) {}

    /// Returns the (2 C_in, B, H, W) output: eps channels first, then delta.
    const std::vector<T>& forward(const DenoiserBatch<T>& in);

    /// Accumulates parameter gradients into `grads` (same layout as the params)
    /// and, if requested, writes d loss / d input into `grad_in`.
    void backward(const std::vector<T>& grad_out, ParamSet<T>& grads, std::vector<T>* grad_in);

private:
    const DenoiserParams<T>& p_;
    const DenoiserBatch<T>* in_ = nullptr;
    int adapter_ = -1;
    int H_ = 0, W_ = 0, B_ = 0, Cin_ = 0;
    std::vector<T> feat_, pre_e_, hid_, pa_, pb_;
    std::vector<T> h0_, col_a1_, a1_, h1_, pool_, col_b1_, b1_, g1_, col_b2_, b2_, g2_, cat_, col_a2_, a2_, h2_;
    std::vector<T> out_;
};

struct DenoiserOutput {
    Tensor eps;
    Tensor delta;
};

DenoiserOutput predict(const DenoiserParams<float>& p, const LatentState& z);
/// Batched prediction; latents are grouped by adapter internally.
std::vector<DenoiserOutput> predict_batch(const DenoiserParams<float>& p, std::span<const LatentState> zs);

/// Coefficients used to invert z = alpha x + sigma eps at (t, k). When alpha(t)
/// is below 1e-6 the inversion is evaluated at 1 - dt/2 instead.
AlphaSigma inversion_coeffs(const NoiseSchedule& ns, double t, int k, double dt = 0.004);

/// x = (z - sigma eps) / alpha.
Tensor x_from_eps(const NoiseSchedule& ns, const LatentState& z, const Tensor& eps, double dt = 0.004);

}  // namespace fdm
