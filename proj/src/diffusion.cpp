#include "fdm/diffusion.hpp"

#include <cmath>
#include <stdexcept>

#include "fdm/rng.hpp"

namespace fdm {

LatentState q_sample_at(const TransformStack& ts, const NoiseSchedule& ns, const Tensor& x, double t, int k,
                        const Tensor& eps) {
    require_shape(eps, ts.shape(k), "q_sample noise");
    const StageTarget tgt = interpolated_target_at(ts, ns.stages(), x, t, k);
    const AlphaSigma c = ns.eval_at(t, k);
    return {axpby(c.alpha, tgt.x_t, c.sigma, eps), t, k};
}

LatentState q_sample(const TransformStack& ts, const NoiseSchedule& ns, const Tensor& x, double t, const Tensor& eps) {
    return q_sample_at(ts, ns, x, t, ns.stages().stage_of(t), eps);
}

LatentState q_transition(const TransformStack& ts, const NoiseSchedule& ns, const Tensor& x, const LatentState& zs,
                         double t, const Tensor& eps) {
    const StageSchedule& st = ns.stages();
    const int k = zs.k;
    if (t < zs.t) throw std::invalid_argument("q_transition requires s <= t");
    if (t > st.end(k) || (t == st.end(k) && k != st.K)) {
        throw std::invalid_argument("q_transition: t leaves stage " + std::to_string(k) + "; use boundary_forward");
    }
    require_shape(eps, ts.shape(k), "q_transition noise");
    if (t == zs.t) return zs;
    const AlphaSigma ts_ = ns.transition_at(zs.t, t, k);
    const AlphaSigma at = ns.eval_at(t, k);
    const Tensor xt = interpolated_target_at(ts, st, x, t, k).x_t;
    const Tensor xs = interpolated_target_at(ts, st, x, zs.t, k).x_t;
    LatentState out{Tensor(zs.z.shape), t, k};
    for (std::size_t i = 0; i < out.z.size(); ++i) {
        const double drift = static_cast<double>(xt.data[i]) - xs.data[i];
        out.z.data[i] = static_cast<float>(ts_.alpha * zs.z.data[i] + at.alpha * drift + ts_.sigma * eps.data[i]);
    }
    return out;
}

PosteriorStep reverse_posterior(const NoiseSchedule& ns, const Tensor& x_hat, const Tensor* delta_hat, double s,
                                double t, int k, double eta) {
    const double tau = ns.stages().start(k);
    if (!(s >= tau && s <= t)) throw std::invalid_argument("reverse_posterior requires tau_k <= s <= t");
    if (eta < 0.0 || eta > 1.0) throw std::invalid_argument("eta must lie in [0, 1]");
    const AlphaSigma at = ns.eval_at(t, k);
    if (at.sigma <= 0.0) throw std::invalid_argument("reverse_posterior: sigma_t = 0 at t = 0");
    const AlphaSigma as = ns.eval_at(s, k);
    const AlphaSigma tr = ns.transition_at(s, t, k);
    const double sbar = as.sigma * tr.sigma / at.sigma;
    const double rem = as.sigma * as.sigma - eta * eta * sbar * sbar;
    if (rem < -1e-12 * std::max(1.0, as.sigma * as.sigma)) {
        throw std::logic_error("reverse_posterior: fresh variance exceeds sigma_s^2");
    }
    PosteriorStep out;
    out.carry = std::sqrt(std::max(0.0, rem));
    out.fresh = eta * sbar;
    out.mean = Tensor(x_hat.shape);
    const double w = t > tau ? (t - s) / (t - tau) : 0.0;
    if (delta_hat != nullptr) require_shape(*delta_hat, x_hat.shape, "reverse_posterior delta");
    for (std::size_t i = 0; i < x_hat.size(); ++i) {
        double v = x_hat.data[i];
        if (delta_hat != nullptr) v += w * delta_hat->data[i];
        out.mean.data[i] = static_cast<float>(as.alpha * v);
    }
    return out;
}

Tensor posterior_sample(const PosteriorStep& step, const Tensor& eps_hat, const Tensor* fresh_noise) {
    require_shape(eps_hat, step.mean.shape, "posterior_sample eps_hat");
    Tensor z(step.mean.shape);
    for (std::size_t i = 0; i < z.size(); ++i) {
        double v = step.mean.data[i] + step.carry * eps_hat.data[i];
        if (fresh_noise != nullptr && step.fresh != 0.0) v += step.fresh * fresh_noise->data[i];
        z.data[i] = static_cast<float>(v);
    }
    return z;
}

ZetaMode parse_zeta_mode(const std::string& s) {
    if (s == "drop" || s == "DROP") return ZetaMode::Drop;
    if (s == "average" || s == "AVERAGE") return ZetaMode::Average;
    throw std::invalid_argument("unknown zeta mode '" + s + "' (expected drop|average)");
}

std::string to_string(ZetaMode m) { return m == ZetaMode::Drop ? "drop" : "average"; }

Tensor boundary_forward(const Tensor& eps, const BlockPartition& part, ZetaMode mode, const Shape& coarse) {
    if (eps.size() != part.fine_size() || coarse.size() != part.coarse) {
        throw std::invalid_argument("boundary_forward: tensor sizes do not match the block partition");
    }
    Tensor out(coarse);
    const std::size_t d = static_cast<std::size_t>(part.d);
    const double gain = 1.0 / std::sqrt(static_cast<double>(d));
    for (std::size_t j = 0; j < part.coarse; ++j) {
        const std::uint32_t* g = part.fine_index.data() + j * d;
        if (mode == ZetaMode::Drop) {
            out.data[j] = eps.data[g[0]];
        } else {
            double s = 0.0;
            for (std::size_t i = 0; i < d; ++i) s += eps.data[g[i]];
            out.data[j] = static_cast<float>(s * gain);  // mean * sqrt(d)
        }
    }
    return out;
}

FullNoise::FullNoise(Tensor base, std::vector<std::vector<float>> complements, std::uint64_t seed)
    : base_(std::move(base)), complements_(std::move(complements)), consumed_(complements_.size(), 0), seed_(seed) {
    if (complements_.empty()) complements_.emplace_back();
    consumed_.assign(complements_.size(), 0);
}

std::span<const float> FullNoise::complement(int k) const {
    if (k < 1 || k > K()) throw std::out_of_range("FullNoise: no complement for boundary " + std::to_string(k));
    return complements_[k];
}

std::span<const float> FullNoise::take(int k) {
    if (k < 1 || k > K()) throw std::out_of_range("FullNoise: no complement for boundary " + std::to_string(k));
    if (consumed_[k]) {
        throw std::logic_error("FullNoise: complement for boundary " + std::to_string(k) + " already consumed");
    }
    consumed_[k] = 1;
    return complements_[k];
}

std::size_t FullNoise::total_size() const {
    std::size_t n = base_.size();
    for (const auto& c : complements_) n += c.size();
    return n;
}

FullNoise sample_full_noise(const TransformStack& ts, std::uint64_t seed) {
    const int K = ts.K();
    // Each component has its own stream, so changing one leaves the others intact.
    Rng base_rng(seed, 0x46554c4cULL, 0);
    Tensor base = base_rng.normal_tensor(ts.shape(K));
    std::vector<std::vector<float>> comps(K + 1);
    for (int k = K; k >= 1; --k) {
        Rng r(seed, 0x46554c4cULL, static_cast<std::uint64_t>(k));
        comps[k].resize(ts.dim(k - 1) - ts.dim(k));
        r.fill_normal(comps[k]);
    }
    return FullNoise(std::move(base), std::move(comps), seed);
}

Tensor boundary_reverse(const Tensor& eps_coarse, FullNoise& fn, int k, ZetaMode mode, const BlockPartition& part,
                        const Shape& fine) {
    if (eps_coarse.size() != part.coarse || fine.size() != part.fine_size()) {
        throw std::invalid_argument("boundary_reverse: tensor sizes do not match the block partition");
    }
    const std::span<const float> extra = fn.take(k);
    const std::size_t d = static_cast<std::size_t>(part.d);
    if (extra.size() != part.coarse * (d - 1)) {
        throw std::invalid_argument("boundary_reverse: complement size does not match boundary " + std::to_string(k));
    }
    Tensor out(fine);
    for (std::size_t j = 0; j < part.coarse; ++j) {
        const std::uint32_t* g = part.fine_index.data() + j * d;
        const float* fresh = extra.data() + j * (d - 1);
        if (mode == ZetaMode::Drop) {
            out.data[g[0]] = eps_coarse.data[j];
            for (std::size_t i = 1; i < d; ++i) out.data[g[i]] = fresh[i - 1];
        } else {
            // Draw the block one element at a time from its conditional given the remaining sum.
            double a = std::sqrt(static_cast<double>(d)) * eps_coarse.data[j];
            for (std::size_t i = 0; i + 1 < d; ++i) {
                const double m = static_cast<double>(d - i);
                const double e = a / m + std::sqrt((m - 1.0) / m) * fresh[i];
                out.data[g[i]] = static_cast<float>(e);
                a -= e;
            }
            out.data[g[d - 1]] = static_cast<float>(a);
        }
    }
    return out;
}

}  // namespace fdm
