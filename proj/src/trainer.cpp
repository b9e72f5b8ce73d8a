#include "fdm/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace fdm {

LossWeighting parse_loss_weighting(const std::string& s) {
    if (s == "eps" || s == "EPS") return LossWeighting::Eps;
    if (s == "x" || s == "X") return LossWeighting::X;
    if (s == "simple") return LossWeighting::Simple;
    throw std::invalid_argument("unknown loss weighting '" + s + "' (expected eps|x|simple)");
}

std::string to_string(LossWeighting w) {
    switch (w) {
        case LossWeighting::Eps: return "eps";
        case LossWeighting::X: return "x";
        case LossWeighting::Simple: return "simple";
    }
    return "eps";
}

double p2_weight_at(const NoiseSchedule& ns, double t, int k) {
    const AlphaSigma c = ns.eval_at(t, k);
    const double s2 = c.sigma * c.sigma;
    return s2 / (c.alpha * c.alpha + s2);
}

double p2_weight(const NoiseSchedule& ns, double t) { return p2_weight_at(ns, t, ns.stages().stage_of(t)); }

LossWeights loss_weights(const NoiseSchedule& ns, double t, int k, const LossConfig& cfg) {
    const AlphaSigma c = ns.eval_at(t, k);
    const double a2 = c.alpha * c.alpha;
    const double s2 = c.sigma * c.sigma;
    const double omega = s2 / (a2 + s2);
    if (cfg.weighting == LossWeighting::X) return {omega, omega};
    const double w = a2 / (a2 + s2);  // omega * SNR
    if (cfg.weighting == LossWeighting::Simple) return {s2 > 0.0 ? std::min(a2 / s2, 1e8) : 1e8, w};
    return {w, w};
}

std::vector<TrainSample> draw_training_samples(const TransformStack& ts, const NoiseSchedule& ns,
                                               std::span<const Tensor> x_batch, Rng& rng) {
    const StageSchedule& st = ns.stages();
    std::vector<TrainSample> out;
    out.reserve(x_batch.size());
    for (const Tensor& x : x_batch) {
        TrainSample s;
        s.t = rng.uniform();
        s.k = st.stage_of(s.t);
        s.eps = rng.normal_tensor(ts.shape(s.k));
        StageTarget tgt = interpolated_target_at(ts, st, x, s.t, s.k);
        s.x_t = std::move(tgt.x_t);
        s.delta = std::move(tgt.delta);
        out.push_back(std::move(s));
    }
    return out;
}

double prediction_loss(const NoiseSchedule& ns, const TrainSample& s, const Tensor& eps_hat, const Tensor& delta_hat,
                       const LossConfig& cfg) {
    require_shape(eps_hat, s.eps.shape, "predicted noise");
    require_shape(delta_hat, s.eps.shape, "predicted degradation");
    const AlphaSigma c = ns.eval_at(s.t, s.k);
    const AlphaSigma inv = inversion_coeffs(ns, s.t, s.k, cfg.dt);
    const LossWeights w = loss_weights(ns, s.t, s.k, cfg);
    double lx = 0.0;
    double ld = 0.0;
    for (std::size_t i = 0; i < s.eps.size(); ++i) {
        const double z = c.alpha * s.x_t.data[i] + c.sigma * s.eps.data[i];
        const double ex = (z - inv.sigma * eps_hat.data[i]) / inv.alpha - s.x_t.data[i];
        const double ed = static_cast<double>(delta_hat.data[i]) - s.delta.data[i];
        lx += ex * ex;
        ld += ed * ed;
    }
    return (w.x * lx + w.delta * ld) / static_cast<double>(s.eps.size());
}

template <typename T>
double grad_loss(const DenoiserParams<T>& p, const NoiseSchedule& ns, std::span<const TrainSample> samples,
                 const LossConfig& cfg, ParamSet<T>* grads) {
    if (samples.empty()) throw std::invalid_argument("grad_loss: empty batch");
    const double inv_batch = 1.0 / static_cast<double>(samples.size());

    std::vector<std::vector<std::size_t>> groups(p.adapter_shapes.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const int a = p.adapter_for(samples[i].eps.shape);
        if (a < 0) throw std::invalid_argument("no adapter for stage shape " + to_string(samples[i].eps.shape));
        groups[a].push_back(i);
    }

    double total = 0.0;
    DenoiserGraph<T> graph(p);
    for (const auto& idx : groups) {
        if (idx.empty()) continue;
        const Shape s = samples[idx.front()].eps.shape;
        const std::size_t plane = s.plane();
        const std::size_t n = s.size();
        const int B = static_cast<int>(idx.size());
        DenoiserBatch<T> batch;
        batch.shape = s;
        batch.batch = B;
        batch.x.resize(n * B);
        std::vector<AlphaSigma> inv(B);
        std::vector<LossWeights> wts(B);
        for (int b = 0; b < B; ++b) {
            const TrainSample& ex = samples[idx[b]];
            batch.t.push_back(ex.t);
            batch.k.push_back(ex.k);
            const AlphaSigma c = ns.eval_at(ex.t, ex.k);
            inv[b] = inversion_coeffs(ns, ex.t, ex.k, cfg.dt);
            wts[b] = loss_weights(ns, ex.t, ex.k, cfg);
            for (int ch = 0; ch < s.channels; ++ch) {
                T* dst = batch.x.data() + (static_cast<std::size_t>(ch) * B + b) * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                    const std::size_t j = static_cast<std::size_t>(ch) * plane + i;
                    dst[i] = static_cast<T>(c.alpha * ex.x_t.data[j] + c.sigma * ex.eps.data[j]);
                }
            }
        }
        const std::vector<T>& out = graph.forward(batch);
        std::vector<T> dout(grads != nullptr ? out.size() : 0);
        for (int b = 0; b < B; ++b) {
            const TrainSample& ex = samples[idx[b]];
            const double ratio = inv[b].sigma / inv[b].alpha;
            double lx = 0.0;
            double ld = 0.0;
            for (int ch = 0; ch < s.channels; ++ch) {
                const std::size_t ze = (static_cast<std::size_t>(ch) * B + b) * plane;
                const std::size_t de = (static_cast<std::size_t>(ch + s.channels) * B + b) * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                    const std::size_t j = static_cast<std::size_t>(ch) * plane + i;
                    const double z = static_cast<double>(batch.x[ze + i]);
                    const double xhat = (z - inv[b].sigma * static_cast<double>(out[ze + i])) / inv[b].alpha;
                    const double ex_ = xhat - ex.x_t.data[j];
                    const double ed = static_cast<double>(out[de + i]) - ex.delta.data[j];
                    lx += ex_ * ex_;
                    ld += ed * ed;
                    if (grads != nullptr) {
                        const double scale = 2.0 * inv_batch / static_cast<double>(n);
                        dout[ze + i] = static_cast<T>(wts[b].x * scale * ex_ * -ratio);
                        dout[de + i] = static_cast<T>(wts[b].delta * scale * ed);
                    }
                }
            }
            const double li = (wts[b].x * lx + wts[b].delta * ld) / static_cast<double>(n);
            if (!std::isfinite(li)) {
                std::ostringstream os;
                os << "non-finite loss at t=" << ex.t << " stage=" << ex.k;
                throw NonFiniteError(os.str());
            }
            total += li;
        }
        if (grads != nullptr) graph.backward(dout, *grads, nullptr);
    }
    return total * inv_batch;
}

template double grad_loss<float>(const DenoiserParams<float>&, const NoiseSchedule&, std::span<const TrainSample>,
                                 const LossConfig&, ParamSet<float>*);
template double grad_loss<double>(const DenoiserParams<double>&, const NoiseSchedule&, std::span<const TrainSample>,
                                  const LossConfig&, ParamSet<double>*);

double training_loss(const DenoiserParams<float>& p, const TransformStack& ts, const NoiseSchedule& ns,
                     std::span<const Tensor> x_batch, Rng& rng, const LossConfig& cfg) {
    if (x_batch.empty()) throw std::invalid_argument("training_loss: empty batch");
    const std::vector<TrainSample> samples = draw_training_samples(ts, ns, x_batch, rng);
    return grad_loss<float>(p, ns, samples, cfg, nullptr);
}

void adamw_step(ParamSet<float>& params, const ParamSet<float>& grads, ParamSet<float>& m, ParamSet<float>& v,
                long step, const AdamConfig& cfg) {
    if (!params.same_layout(grads) || !params.same_layout(m) || !params.same_layout(v)) {
        throw std::invalid_argument("adamw_step: parameter layouts differ");
    }
    if (step < 1) throw std::invalid_argument("adamw_step: step is 1-based");
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& pv = params[i].value;
        const auto& gv = grads[i].value;
        auto& mv = m[i].value;
        auto& vv = v[i].value;
        for (std::size_t j = 0; j < pv.size(); ++j) {
            const double g = gv[j];
            const double mj = cfg.beta1 * mv[j] + (1.0 - cfg.beta1) * g;
            const double vj = cfg.beta2 * vv[j] + (1.0 - cfg.beta2) * g * g;
            mv[j] = static_cast<float>(mj);
            vv[j] = static_cast<float>(vj);
            const double upd = (mj / bc1) / (std::sqrt(vj / bc2) + cfg.eps);
            pv[j] = static_cast<float>(pv[j] - cfg.lr * (upd + cfg.weight_decay * pv[j]));
        }
    }
}

void ema_update(ParamSet<float>& ema, const ParamSet<float>& params, double decay) {
    if (!ema.same_layout(params)) throw std::invalid_argument("ema_update: parameter layouts differ");
    for (std::size_t i = 0; i < ema.size(); ++i) {
        auto& e = ema[i].value;
        const auto& p = params[i].value;
        for (std::size_t j = 0; j < e.size(); ++j) e[j] = static_cast<float>(decay * e[j] + (1.0 - decay) * p[j]);
    }
}

TrainState init_train_state(DenoiserParams<float> params) {
    TrainState st;
    st.ema = params.set;
    st.m = params.set.zeros_like();
    st.v = params.set.zeros_like();
    st.params = std::move(params);
    return st;
}

double ema_decay_at(const TrainConfig& cfg, long step) {
    if (!cfg.ema_warmup) return cfg.ema_decay;
    const double n = static_cast<double>(step);
    return std::min(cfg.ema_decay, (1.0 + n) / (10.0 + n));
}

StepResult train_step(TrainState& st, const TransformStack& ts, const NoiseSchedule& ns,
                      std::span<const Tensor> x_batch, const TrainConfig& cfg) {
    const long next = st.step + 1;
    Rng rng(cfg.seed, 2, static_cast<std::uint64_t>(next));
    const std::vector<TrainSample> samples = draw_training_samples(ts, ns, x_batch, rng);
    ParamSet<float> grads = st.params.set.zeros_like();
    StepResult res;
    try {
        res.loss = grad_loss<float>(st.params, ns, samples, cfg.loss, &grads);
    } catch (const NonFiniteError&) {
        res.loss = std::numeric_limits<double>::quiet_NaN();
        res.skipped = true;
    }
    if (!res.skipped) {
        for (const auto& g : grads) {
            for (float v : g.value) {
                if (!std::isfinite(v)) {
                    res.skipped = true;
                    break;
                }
            }
            if (res.skipped) break;
        }
    }
    st.step = next;
    if (res.skipped) {
        ++st.skipped;
        return res;
    }
    adamw_step(st.params.set, grads, st.m, st.v, next - st.skipped, cfg.adam);
    ema_update(st.ema, st.params.set, ema_decay_at(cfg, next - st.skipped - 1));
    return res;
}

std::vector<std::size_t> batch_indices(std::size_t corpus_size, int batch, std::uint64_t seed, long step) {
    if (corpus_size == 0) throw std::invalid_argument("empty corpus");
    Rng rng(seed, 3, static_cast<std::uint64_t>(step));
    std::vector<std::size_t> idx(static_cast<std::size_t>(batch));
    for (auto& i : idx) i = rng.index(corpus_size);
    return idx;
}

}  // namespace fdm
