#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fdm/tensor.hpp"

namespace fdm {

enum class StageKind { Linear, Cosine };
enum class RescaleMode { None, SP, VP };

StageKind parse_stage_kind(const std::string& s);
RescaleMode parse_rescale_mode(const std::string& s);
std::string to_string(StageKind k);
std::string to_string(RescaleMode m);

/// Stage boundaries 0 = tau[0] < tau[1] < ... < tau[K+1] = 1.
struct StageSchedule {
    int K = 0;
    std::vector<double> tau;
    StageKind kind = StageKind::Linear;

    [[nodiscard]] int stages() const { return K + 1; }
    /// Unique k with tau[k] <= t < tau[k+1]; t = 1 belongs to stage K.
    [[nodiscard]] int stage_of(double t) const;
    [[nodiscard]] double start(int k) const { return tau.at(k); }
    [[nodiscard]] double end(int k) const { return tau.at(k + 1); }
};

StageSchedule build_stage_schedule(int K, StageKind kind);

struct AlphaSigma {
    double alpha = 1.0;
    double sigma = 0.0;
};

/// Cosine base schedule (cos(pi t / 2), sin(pi t / 2)) with a per-stage noise
/// multiplier r_k. SP multiplies sigma by r_k; VP additionally renormalises so
/// that alpha^2 + sigma^2 = 1.
class NoiseSchedule {
public:
    NoiseSchedule(StageSchedule stages, std::vector<double> rescale, RescaleMode mode);

    /// r_0 = 1, r_k = r_{k-1} / sqrt(d_k * gamma_k) with d_k = M_{k-1} / M_k.
    static NoiseSchedule build(const StageSchedule& stages, std::span<const std::size_t> dims,
                               std::span<const double> gammas, RescaleMode mode);

    [[nodiscard]] const StageSchedule& stages() const { return stages_; }
    [[nodiscard]] const std::vector<double>& rescale() const { return rescale_; }
    [[nodiscard]] RescaleMode mode() const { return mode_; }

    [[nodiscard]] AlphaSigma eval(double t) const { return eval_at(t, stages_.stage_of(t)); }
    /// Coefficients of stage k's parameterisation at t. t may be either end of
    /// [tau_k, tau_{k+1}], which gives the one-sided limits at stage boundaries.
    [[nodiscard]] AlphaSigma eval_at(double t, int k) const;

    /// (alpha_{t|s}, sigma_{t|s}) for s <= t in the same stage.
    [[nodiscard]] AlphaSigma transition(double s, double t) const;
    [[nodiscard]] AlphaSigma transition_at(double s, double t, int k) const;

private:
    StageSchedule stages_;
    std::vector<double> rescale_;
    RescaleMode mode_;
};

/// Patch geometry for the resolution-agnostic SNR. `extent` is the patch side
/// in stage-0 pixels; `stage_downscale[k]` is the stage-k spatial reduction.
struct PatchSpec {
    int extent = 1;
    std::vector<int> stage_downscale;
};

class ResolutionLimitError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Patch-averaged signal power over patch-averaged noise power. Returns +inf
/// when the noise patches average to exactly zero.
double patch_snr(const Tensor& signal, const Tensor& noise, const PatchSpec& spec, int stage);

}  // namespace fdm
