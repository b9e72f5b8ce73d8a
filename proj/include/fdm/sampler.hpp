#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "fdm/denoiser.hpp"
#include "fdm/diffusion.hpp"
#include "fdm/rng.hpp"

namespace fdm {

struct SamplerConfig {
    double eta = 1.0;
    double dt = 0.004;
    std::uint64_t seed = 0;
    ZetaMode zeta = ZetaMode::Drop;
};

void validate(const SamplerConfig& cfg);

/// Descending times t_0 = t_start > ... > t_n = tau_k, with n = max(1, round((t_start - tau_k) / dt))
/// equal steps. t_start defaults to tau_{k+1}.
std::vector<double> stage_grid(const StageSchedule& st, int k, double dt, std::optional<double> t_start = {});

struct StepEvent {
    std::size_t trajectory = 0;
    int k = 0;
    double t = 0.0;       // time the network was evaluated at
    double s = 0.0;       // time of the state after the update
    bool boundary = false;  // true when the update crossed into stage k-1
    const Tensor* z = nullptr;  // state after the update
    const Tensor* x_pred = nullptr;
};

using StepObserver = std::function<void(const StepEvent&)>;

/// Unconditional generation of one trajectory per seed, evaluated in lockstep.
std::vector<Tensor> generate_batch(const DenoiserParams<float>& p, const TransformStack& ts, const NoiseSchedule& ns,
                                   const SamplerConfig& cfg, std::span<const std::uint64_t> seeds,
                                   const StepObserver& observer = {});

Tensor generate(const DenoiserParams<float>& p, const TransformStack& ts, const NoiseSchedule& ns,
                const SamplerConfig& cfg, const StepObserver& observer = {});

/// Same, but with caller-supplied full-size noise (used for the prefix property).
std::vector<Tensor> generate_with_noise(const DenoiserParams<float>& p, const TransformStack& ts,
                                        const NoiseSchedule& ns, const SamplerConfig& cfg,
                                        std::vector<FullNoise> noises, std::span<const std::uint64_t> seeds,
                                        const StepObserver& observer = {});

struct ConditionSpec {
    Tensor x_c;
    int k_c = 0;
    double lambda = 0.1;
    int n_init = 20;
    std::optional<double> T;
};

/// Start time for conditional generation: tau_{k_c+1}, or one grid step below 1 when k_c = K.
double conditional_start_time(const StageSchedule& st, int k_c, double dt, std::optional<double> override_T = {});

/// ||x_theta(z) - x_c||^2 (sum of squares) and, if requested, its gradient in z.
double conditional_objective(const DenoiserParams<float>& p, const NoiseSchedule& ns, const LatentState& z,
                             const Tensor& x_c, double dt, Tensor* grad);

struct ConditionalInit {
    LatentState z;
    std::vector<double> objective;  // value before the first step, then after each accepted step
    double final_lambda = 0.0;
};

/// z_T = alpha(T) x_c + sigma(T) eps, then n_init descent steps on the objective.
/// A step that would increase the objective is retried with lambda halved.
ConditionalInit conditional_init(const DenoiserParams<float>& p, const NoiseSchedule& ns, const Tensor& x_c, int k_c,
                                 double T, double lambda, int n_init, double dt, Rng& rng);

/// Conditional generation from x_c at stage k_c.
Tensor conditional_generate(const DenoiserParams<float>& p, const TransformStack& ts, const NoiseSchedule& ns,
                            const SamplerConfig& cfg, const ConditionSpec& cond, const StepObserver& observer = {},
                            ConditionalInit* init_out = nullptr);

}  // namespace fdm
