#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fdm/config.hpp"
#include "fdm/denoiser.hpp"
#include "fdm/diffusion.hpp"

namespace fdm {

struct CheckResult {
    std::string name;
    bool pass = false;
    double measured = 0.0;
    double threshold = 0.0;
    std::string detail;
};

CheckResult check_stage_schedule(const StageSchedule& st);
/// max |alpha^2 + sigma^2 - 1| over n uniform t (VP only).
CheckResult check_vp_closure(const NoiseSchedule& ns, int n, std::uint64_t seed);
/// Composition of in-stage transitions and of transitions with the marginals.
CheckResult check_chapman_kolmogorov(const NoiseSchedule& ns, int n, std::uint64_t seed);
/// SP: sigma jump at tau_k equals 1/sqrt(d_k gamma_k). VP: SNR jump equals d_k gamma_k.
CheckResult check_rescale_jump(const NoiseSchedule& ns, const TransformStack& ts, std::span<const double> gammas);
/// Monte Carlo patch-SNR ratio across every boundary; measured is the value furthest from 1.
/// With `normalize` the ratio is divided by gamma_k / gamma_signal, which is 1 when the
/// configured gamma matches the signal.
CheckResult check_boundary_snr(const TransformStack& ts, const NoiseSchedule& ns, std::span<const double> gammas,
                               std::span<const Tensor> signals, long draws, std::uint64_t seed,
                               double tolerance = 0.05, bool normalize = true);
/// Moments of q_transition(q_sample(x, s), t) against q_sample(x, t), `pairs` (s, t) per stage.
CheckResult check_marginal_consistency(const TransformStack& ts, const NoiseSchedule& ns, const Tensor& x, long draws,
                                       std::uint64_t seed, int pairs = 3);
/// Reverse posterior (eta = 1) against numerical Bayes on a 1-D grid.
CheckResult check_reverse_posterior(const NoiseSchedule& ns, int cases, std::uint64_t seed);
/// zeta(zeta^-1(eps)) == eps for every boundary.
CheckResult check_boundary_roundtrip(const TransformStack& ts, ZetaMode mode, std::uint64_t seed);
/// Elementwise mean and variance of zeta^-1 outputs over `draws` trajectories.
CheckResult check_boundary_marginals(const TransformStack& ts, ZetaMode mode, long draws, std::uint64_t seed);
CheckResult check_full_noise(const TransformStack& ts, std::uint64_t seed);
/// x_t hits x^k at tau_k and x_hat^k at tau_{k+1}.
CheckResult check_interpolation_endpoints(const TransformStack& ts, const StageSchedule& st, const Tensor& x);

/// Per-step comparison of the staged sampler with a plain single-stage DDIM/DDPM
/// stepper for a K = 0 stack. Measured is the worst relative difference of z.
CheckResult check_k0_reduction(const DenoiserParams<float>& p, const TransformStack& ts, const NoiseSchedule& ns,
                               double eta, double dt, std::uint64_t seed, double tolerance = 1e-5);

struct VerifyOptions {
    long draws = 20000;
    std::uint64_t seed = 0;
    /// Multiply r_k by f before running the checks.
    std::optional<std::pair<int, double>> corrupt_rescale;
};

/// Runs every check that applies to the configuration.
std::vector<CheckResult> run_verify(const ExperimentConfig& cfg, const VerifyOptions& opt);

std::string report_json(const ExperimentConfig& cfg, std::span<const CheckResult> results);

/// Columns t, alpha, sigma, stage on a uniform grid of `points` times.
std::string curves_csv(const NoiseSchedule& ns, int points);

}  // namespace fdm
