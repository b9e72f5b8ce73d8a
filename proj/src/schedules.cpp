#include "fdm/schedules.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace fdm {

StageKind parse_stage_kind(const std::string& s) {
    if (s == "linear" || s == "LINEAR") return StageKind::Linear;
    if (s == "cosine" || s == "COSINE") return StageKind::Cosine;
    throw std::invalid_argument("unknown stage schedule kind '" + s + "' (expected linear|cosine)");
}

RescaleMode parse_rescale_mode(const std::string& s) {
    if (s == "none" || s == "NONE") return RescaleMode::None;
    if (s == "sp" || s == "SP") return RescaleMode::SP;
    if (s == "vp" || s == "VP") return RescaleMode::VP;
    throw std::invalid_argument("unknown rescale mode '" + s + "' (expected NONE|SP|VP)");
}

std::string to_string(StageKind k) { return k == StageKind::Linear ? "linear" : "cosine"; }

std::string to_string(RescaleMode m) {
    switch (m) {
        case RescaleMode::None: return "NONE";
        case RescaleMode::SP: return "SP";
        case RescaleMode::VP: return "VP";
    }
    return "?";
}

int StageSchedule::stage_of(double t) const {
    if (!(t >= 0.0 && t <= 1.0)) {
        throw std::out_of_range("stage_of: t=" + std::to_string(t) + " outside [0, 1]");
    }
    // upper_bound finds the first boundary > t; the stage is the one before it.
    const auto it = std::upper_bound(tau.begin(), tau.end(), t);
    const int k = static_cast<int>(it - tau.begin()) - 1;
    return std::min(k, K);
}

StageSchedule build_stage_schedule(int K, StageKind kind) {
    if (K < 0) throw std::invalid_argument("stage count K must be non-negative");
    StageSchedule s;
    s.K = K;
    s.kind = kind;
    s.tau.resize(K + 2);
    for (int k = 0; k <= K + 1; ++k) {
        const double u = static_cast<double>(k) / (K + 1);
        s.tau[k] = kind == StageKind::Linear ? u : std::cos(std::numbers::pi / 2.0 * (1.0 - u));
    }
    s.tau.front() = 0.0;
    s.tau.back() = 1.0;
    return s;
}

NoiseSchedule::NoiseSchedule(StageSchedule stages, std::vector<double> rescale, RescaleMode mode)
    : stages_(std::move(stages)), rescale_(std::move(rescale)), mode_(mode) {
    if (static_cast<int>(rescale_.size()) != stages_.stages()) {
        throw std::invalid_argument("rescale factors must have one entry per stage");
    }
    for (double r : rescale_) {
        if (!(r > 0.0) || !std::isfinite(r)) throw std::invalid_argument("rescale factors must be positive");
    }
}

NoiseSchedule NoiseSchedule::build(const StageSchedule& stages, std::span<const std::size_t> dims,
                                   std::span<const double> gammas, RescaleMode mode) {
    const int K = stages.K;
    if (static_cast<int>(dims.size()) != K + 1) throw std::invalid_argument("need K+1 stage dimensions");
    if (static_cast<int>(gammas.size()) != K) throw std::invalid_argument("need K signal-power ratios");
    std::vector<double> r(K + 1, 1.0);
    for (int k = 1; k <= K; ++k) {
        if (dims[k] == 0 || dims[k] > dims[k - 1]) {
            throw std::invalid_argument("stage dimensions must be positive and non-increasing");
        }
        if (!(gammas[k - 1] > 0.0)) throw std::invalid_argument("signal-power ratios must be positive");
        const double d = static_cast<double>(dims[k - 1]) / static_cast<double>(dims[k]);
        r[k] = r[k - 1] / std::sqrt(d * gammas[k - 1]);
    }
    return NoiseSchedule(stages, std::move(r), mode);
}

AlphaSigma NoiseSchedule::eval_at(double t, int k) const {
    if (k < 0 || k > stages_.K) throw std::out_of_range("eval_at: stage index out of range");
    const double a = std::cos(std::numbers::pi / 2.0 * t);
    const double b = std::sin(std::numbers::pi / 2.0 * t);
    switch (mode_) {
        case RescaleMode::None: return {a, b};
        case RescaleMode::SP: return {a, rescale_[k] * b};
        case RescaleMode::VP: {
            const double rb = rescale_[k] * b;
            const double n = std::sqrt(a * a + rb * rb);
            return {a / n, rb / n};
        }
    }
    return {a, b};
}

AlphaSigma NoiseSchedule::transition(double s, double t) const {
    const int k = stages_.stage_of(s);
    if (stages_.stage_of(t) != k) {
        throw std::invalid_argument("transition: s and t lie in different stages; use the boundary operator");
    }
    return transition_at(s, t, k);
}

AlphaSigma NoiseSchedule::transition_at(double s, double t, int k) const {
    if (s > t) throw std::invalid_argument("transition requires s <= t");
    const AlphaSigma as = eval_at(s, k);
    const AlphaSigma at = eval_at(t, k);
    const double a = at.alpha / as.alpha;
    const double var = at.sigma * at.sigma - a * a * as.sigma * as.sigma;
    return {a, std::sqrt(std::max(0.0, var))};
}

double patch_snr(const Tensor& signal, const Tensor& noise, const PatchSpec& spec, int stage) {
    require_shape(noise, signal.shape, "patch_snr noise");
    if (stage < 0 || stage >= static_cast<int>(spec.stage_downscale.size())) {
        throw std::out_of_range("patch_snr: stage not described by the patch spec");
    }
    const int scale = spec.stage_downscale[stage];
    if (spec.extent < scale || spec.extent % scale != 0) {
        throw ResolutionLimitError("patch of " + std::to_string(spec.extent) +
                                   " stage-0 pixels is below one element at stage " + std::to_string(stage));
    }
    const int p = spec.extent / scale;
    const Shape& sh = signal.shape;
    if (sh.height % p != 0 || sh.width % p != 0) {
        throw ResolutionLimitError("patch extent does not tile the stage-" + std::to_string(stage) + " grid");
    }
    const double inv = 1.0 / (static_cast<double>(p) * p);
    double sig = 0.0;
    double noi = 0.0;
    for (int c = 0; c < sh.channels; ++c) {
        for (int y0 = 0; y0 < sh.height; y0 += p) {
            for (int x0 = 0; x0 < sh.width; x0 += p) {
                double ms = 0.0;
                double mn = 0.0;
                for (int y = y0; y < y0 + p; ++y) {
                    for (int x = x0; x < x0 + p; ++x) {
                        ms += signal.at(c, y, x);
                        mn += noise.at(c, y, x);
                    }
                }
                ms *= inv;
                mn *= inv;
                sig += ms * ms;
                noi += mn * mn;
            }
        }
    }
    if (noi == 0.0) return std::numeric_limits<double>::infinity();
    return sig / noi;
}

}  // namespace fdm
