#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fdm/schedules.hpp"
#include "fdm/transforms.hpp"

namespace fdm {

struct LatentState {
    Tensor z;
    double t = 0.0;
    int k = 0;
};

/// z_t = alpha_t x_t + sigma_t eps for the stage containing t.
LatentState q_sample(const TransformStack& ts, const NoiseSchedule& ns, const Tensor& x, double t, const Tensor& eps);
/// Same with an explicit stage (t may sit on either end of the stage interval).
LatentState q_sample_at(const TransformStack& ts, const NoiseSchedule& ns, const Tensor& x, double t, int k,
                        const Tensor& eps);

/// Within-stage forward step z_s -> z_t.
LatentState q_transition(const TransformStack& ts, const NoiseSchedule& ns, const Tensor& x, const LatentState& zs,
                         double t, const Tensor& eps);

/// z_s = mean + carry * eps_hat + fresh * eps.
struct PosteriorStep {
    Tensor mean;
    double carry = 0.0;
    double fresh = 0.0;
};

/// Reverse step from t to s inside stage k. `delta_hat` may be null, which
/// drops the degradation term (used in the last stage, where it is zero).
PosteriorStep reverse_posterior(const NoiseSchedule& ns, const Tensor& x_hat, const Tensor* delta_hat, double s,
                                double t, int k, double eta);

Tensor posterior_sample(const PosteriorStep& step, const Tensor& eps_hat, const Tensor* fresh_noise);

enum class ZetaMode { Drop, Average };

ZetaMode parse_zeta_mode(const std::string& s);
std::string to_string(ZetaMode m);

/// zeta: stage-(k-1) noise to stage-k noise.
Tensor boundary_forward(const Tensor& eps, const BlockPartition& part, ZetaMode mode, const Shape& coarse);

/// Pre-sampled full-size noise: a stage-K base plus one complement per
/// boundary k (entries introduced when refining stage k to k-1).
class FullNoise {
public:
    FullNoise() = default;
    FullNoise(Tensor base, std::vector<std::vector<float>> complements, std::uint64_t seed);

    [[nodiscard]] const Tensor& base() const { return base_; }
    [[nodiscard]] std::uint64_t seed() const { return seed_; }
    [[nodiscard]] int K() const { return static_cast<int>(complements_.size()) - 1; }
    /// Complement for boundary k (1..K). Read-only access, no consumption.
    [[nodiscard]] std::span<const float> complement(int k) const;
    std::vector<float>& mutable_complement(int k) { return complements_.at(k); }
    /// Marks boundary k's complement as used; a second take throws.
    std::span<const float> take(int k);
    [[nodiscard]] bool consumed(int k) const { return consumed_.at(k) != 0; }
    [[nodiscard]] std::size_t total_size() const;

private:
    Tensor base_;
    std::vector<std::vector<float>> complements_;  // index 0 unused
    std::vector<char> consumed_;
    std::uint64_t seed_ = 0;
};

FullNoise sample_full_noise(const TransformStack& ts, std::uint64_t seed);

/// Inverse of zeta at boundary k: a stage-(k-1) noise consistent with eps_coarse,
/// using fn's boundary-k complement for the unconstrained directions.
Tensor boundary_reverse(const Tensor& eps_coarse, FullNoise& fn, int k, ZetaMode mode, const BlockPartition& part,
                        const Shape& fine);

}  // namespace fdm
