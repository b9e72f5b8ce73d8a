#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "fdm/denoiser.hpp"
#include "fdm/rng.hpp"
#include "fdm/transforms.hpp"

namespace fdm {

class NonFiniteError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// omega_t = sigmoid(-log(alpha^2 / sigma^2)) = sigma^2 / (alpha^2 + sigma^2).
double p2_weight(const NoiseSchedule& ns, double t);
double p2_weight_at(const NoiseSchedule& ns, double t, int k);

enum class LossWeighting {
    Eps,  // omega on the noise residual: both terms weighted by omega * SNR
    X,    // omega directly on the x and delta residuals
    Simple,  // unit weight on the noise residual, omega * SNR on delta
};

LossWeighting parse_loss_weighting(const std::string& s);
std::string to_string(LossWeighting w);

struct LossConfig {
    LossWeighting weighting = LossWeighting::Eps;
    /// Step size used by the x_from_eps clamp near t = 1.
    double dt = 0.004;
};

struct LossWeights {
    double x = 0.0;
    double delta = 0.0;
};

LossWeights loss_weights(const NoiseSchedule& ns, double t, int k, const LossConfig& cfg);

/// One drawn training example: time, stage, injected noise and the targets.
struct TrainSample {
    double t = 0.0;
    int k = 0;
    Tensor eps;
    Tensor x_t;
    Tensor delta;
};

/// t ~ U[0, 1], eps ~ N(0, I) at the stage shape, targets from the interpolation.
std::vector<TrainSample> draw_training_samples(const TransformStack& ts, const NoiseSchedule& ns,
                                               std::span<const Tensor> x_batch, Rng& rng);

/// Weighted loss of one example given predictions (eps_hat, delta_hat) for z = alpha x_t + sigma eps.
double prediction_loss(const NoiseSchedule& ns, const TrainSample& s, const Tensor& eps_hat, const Tensor& delta_hat,
                       const LossConfig& cfg);

/// Batch-mean loss for fixed draws; accumulates exact gradients into `grads` when given.
template <typename T>
double grad_loss(const DenoiserParams<T>& p, const NoiseSchedule& ns, std::span<const TrainSample> samples,
                 const LossConfig& cfg, ParamSet<T>* grads);

/// Draws (t, eps) from rng and evaluates the loss.
double training_loss(const DenoiserParams<float>& p, const TransformStack& ts, const NoiseSchedule& ns,
                     std::span<const Tensor> x_batch, Rng& rng, const LossConfig& cfg);

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
};

/// Decoupled weight decay Adam; `step` is the 1-based update count.
void adamw_step(ParamSet<float>& params, const ParamSet<float>& grads, ParamSet<float>& m, ParamSet<float>& v,
                long step, const AdamConfig& cfg);

/// ema = decay * ema + (1 - decay) * params.
void ema_update(ParamSet<float>& ema, const ParamSet<float>& params, double decay);

struct TrainConfig {
    int batch = 16;
    AdamConfig adam;
    double ema_decay = 0.9999;
    /// Use min(decay, (1 + n) / (10 + n)) for the n-th update.
    bool ema_warmup = true;
    std::uint64_t seed = 0;
    LossConfig loss;
};

struct TrainState {
    DenoiserParams<float> params;
    ParamSet<float> ema;
    ParamSet<float> m;
    ParamSet<float> v;
    long step = 0;
    long skipped = 0;
};

TrainState init_train_state(DenoiserParams<float> params);

/// Effective EMA decay for the update that produces step `step` (1-based).
double ema_decay_at(const TrainConfig& cfg, long step);

struct StepResult {
    double loss = 0.0;
    bool skipped = false;
};

/// One optimisation step. The (t, eps) draws come from stream (seed, step), so a
/// resumed run repeats exactly what an uninterrupted run would have done.
StepResult train_step(TrainState& st, const TransformStack& ts, const NoiseSchedule& ns,
                      std::span<const Tensor> x_batch, const TrainConfig& cfg);

/// Corpus indices for the batch of a given step, drawn with replacement.
std::vector<std::size_t> batch_indices(std::size_t corpus_size, int batch, std::uint64_t seed, long step);

}  // namespace fdm
