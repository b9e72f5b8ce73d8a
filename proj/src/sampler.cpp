#include "fdm/sampler.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace fdm {

void validate(const SamplerConfig& cfg) {
    if (!(cfg.eta >= 0.0 && cfg.eta <= 1.0)) throw std::invalid_argument("sampler eta must lie in [0, 1]");
    if (!(cfg.dt > 0.0 && cfg.dt <= 1.0)) throw std::invalid_argument("sampler dt must lie in (0, 1]");
}

std::vector<double> stage_grid(const StageSchedule& st, int k, double dt, std::optional<double> t_start) {
    const double lo = st.start(k);
    const double hi = t_start.value_or(st.end(k));
    if (!(hi > lo) || hi > st.end(k)) throw std::invalid_argument("stage_grid: start time outside stage");
    const int n = std::max(1, static_cast<int>(std::lround((hi - lo) / dt)));
    const double h = (hi - lo) / n;
    std::vector<double> g(n + 1);
    for (int i = 0; i <= n; ++i) g[i] = hi - i * h;
    g.front() = hi;
    g.back() = lo;
    return g;
}

namespace {

struct Trajectory {
    LatentState z;
    FullNoise fn;
    Rng fresh;
    Tensor x;
};

void check_finite(const Tensor& z, std::size_t traj, int k, double t) {
    for (float v : z.data) {
        if (!std::isfinite(v)) {
            std::ostringstream os;
            os << "non-finite latent in trajectory " << traj << " at stage " << k << ", t=" << t;
            throw std::runtime_error(os.str());
        }
    }
}

void run_stages(const DenoiserParams<float>& p, const TransformStack& ts, const NoiseSchedule& ns,
                const SamplerConfig& cfg, std::vector<Trajectory>& tr, int k_start, double t_start,
                const StepObserver& observer) {
    const StageSchedule& st = ns.stages();
    const int K = st.K;
    std::vector<LatentState> zs(tr.size());
    for (int k = k_start; k >= 0; --k) {
        const std::vector<double> grid = stage_grid(st, k, cfg.dt, k == k_start ? std::optional<double>(t_start)
                                                                                : std::nullopt);
        const int n = static_cast<int>(grid.size()) - 1;
        for (int i = 0; i < n; ++i) {
            const double t = grid[i];
            const double s = grid[i + 1];
            for (std::size_t j = 0; j < tr.size(); ++j) {
                tr[j].z.t = t;
                tr[j].z.k = k;
                zs[j] = tr[j].z;
            }
            // With alpha(t) = 0 the latent is pure noise: eps = z / sigma exactly and x drops out of the step.
            const AlphaSigma ct = ns.eval_at(t, k);
            const bool pure_noise = ct.alpha < 1e-6;
            std::vector<DenoiserOutput> outs;
            if (pure_noise) {
                for (const LatentState& z : zs) outs.push_back({scaled(z.z, 1.0 / ct.sigma), Tensor(z.z.shape)});
            } else {
                outs = predict_batch(p, zs);
            }
            for (std::size_t j = 0; j < tr.size(); ++j) {
                Trajectory& r = tr[j];
                const DenoiserOutput& o = outs[j];
                Tensor x = pure_noise ? Tensor(r.z.z.shape) : x_from_eps(ns, r.z, o.eps, cfg.dt);
                StepEvent ev{j, k, t, s, false, nullptr, &x};
                if (i + 1 < n) {
                    const PosteriorStep step = reverse_posterior(ns, x, k < K ? &o.delta : nullptr, s, t, k, cfg.eta);
                    Tensor noise;
                    if (step.fresh > 0.0) noise = r.fresh.normal_tensor(r.z.z.shape);
                    r.z.z = posterior_sample(step, o.eps, step.fresh > 0.0 ? &noise : nullptr);
                    r.z.t = s;
                } else if (k > 0) {
                    const Tensor eps_rs = boundary_reverse(o.eps, r.fn, k, cfg.zeta, ts.partition(k), ts.shape(k - 1));
                    const AlphaSigma c = ns.eval_at(st.start(k), k - 1);
                    r.z = LatentState{axpby(c.alpha, ts.g_map(x, k), c.sigma, eps_rs), st.start(k), k - 1};
                    ev.boundary = true;
                } else {
                    r.z.t = s;
                }
                check_finite(r.z.z, j, k, t);
                r.x = std::move(x);
                if (observer) {
                    ev.z = &r.z.z;
                    ev.x_pred = &r.x;
                    observer(ev);
                }
            }
        }
    }
}

}  // namespace

std::vector<Tensor> generate_with_noise(const DenoiserParams<float>& p, const TransformStack& ts,
                                        const NoiseSchedule& ns, const SamplerConfig& cfg,
                                        std::vector<FullNoise> noises, std::span<const std::uint64_t> seeds,
                                        const StepObserver& observer) {
    validate(cfg);
    if (noises.size() != seeds.size()) throw std::invalid_argument("one full-size noise per trajectory required");
    const int K = ns.stages().K;
    if (ts.K() != K) throw std::invalid_argument("transform stack and schedule disagree on K");
    const AlphaSigma c1 = ns.eval_at(1.0, K);
    std::vector<Trajectory> tr;
    tr.reserve(seeds.size());
    for (std::size_t j = 0; j < seeds.size(); ++j) {
        require_shape(noises[j].base(), ts.shape(K), "full-size noise base");
        Tensor z0 = scaled(noises[j].base(), c1.sigma);
        tr.push_back(Trajectory{LatentState{std::move(z0), 1.0, K}, std::move(noises[j]), Rng(seeds[j], 1), Tensor()});
    }
    run_stages(p, ts, ns, cfg, tr, K, 1.0, observer);
    std::vector<Tensor> out;
    out.reserve(tr.size());
    for (auto& r : tr) out.push_back(std::move(r.x));
    return out;
}

std::vector<Tensor> generate_batch(const DenoiserParams<float>& p, const TransformStack& ts, const NoiseSchedule& ns,
                                   const SamplerConfig& cfg, std::span<const std::uint64_t> seeds,
                                   const StepObserver& observer) {
    std::vector<FullNoise> noises;
    noises.reserve(seeds.size());
    for (std::uint64_t s : seeds) noises.push_back(sample_full_noise(ts, s));
    return generate_with_noise(p, ts, ns, cfg, std::move(noises), seeds, observer);
}

Tensor generate(const DenoiserParams<float>& p, const TransformStack& ts, const NoiseSchedule& ns,
                const SamplerConfig& cfg, const StepObserver& observer) {
    const std::uint64_t seed = cfg.seed;
    return std::move(generate_batch(p, ts, ns, cfg, std::span<const std::uint64_t>(&seed, 1), observer).front());
}

double conditional_start_time(const StageSchedule& st, int k_c, double dt, std::optional<double> override_T) {
    if (k_c < 0 || k_c > st.K) throw std::out_of_range("condition stage out of range");
    if (override_T) {
        const double T = *override_T;
        if (T == 0.0 && k_c == 0) return 0.0;
        if (!(T > st.start(k_c) && T <= st.end(k_c))) {
            throw std::invalid_argument("conditional T must lie in (tau_k, tau_{k+1}] of the condition stage");
        }
        return T;
    }
    if (k_c < st.K) return st.end(k_c);
    return stage_grid(st, k_c, dt)[1];
}

double conditional_objective(const DenoiserParams<float>& p, const NoiseSchedule& ns, const LatentState& z,
                             const Tensor& x_c, double dt, Tensor* grad) {
    require_shape(x_c, z.z.shape, "condition");
    const Shape s = z.z.shape;
    DenoiserBatch<float> batch;
    batch.shape = s;
    batch.batch = 1;
    batch.x = z.z.data;
    batch.t = {z.t};
    batch.k = {z.k};
    DenoiserGraph<float> graph(p);
    const std::vector<float>& out = graph.forward(batch);
    const AlphaSigma c = inversion_coeffs(ns, z.t, z.k, dt);
    double J = 0.0;
    std::vector<float> dout(grad != nullptr ? out.size() : 0, 0.0f);
    // With B = 1 the eps channels of the output line up with the latent.
    std::vector<double> r(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        const double x = (static_cast<double>(z.z.data[i]) - c.sigma * out[i]) / c.alpha;
        r[i] = x - x_c.data[i];
        J += r[i] * r[i];
        if (grad != nullptr) dout[i] = static_cast<float>(2.0 * r[i] * -c.sigma / c.alpha);
    }
    if (grad != nullptr) {
        ParamSet<float> sink = p.set.zeros_like();
        std::vector<float> gin;
        graph.backward(dout, sink, &gin);
        *grad = Tensor(s);
        for (std::size_t i = 0; i < s.size(); ++i) grad->data[i] = static_cast<float>(2.0 * r[i] / c.alpha + gin[i]);
    }
    return J;
}

ConditionalInit conditional_init(const DenoiserParams<float>& p, const NoiseSchedule& ns, const Tensor& x_c, int k_c,
                                 double T, double lambda, int n_init, double dt, Rng& rng) {
    if (n_init < 0 || !(lambda > 0.0)) throw std::invalid_argument("conditional init needs n_init >= 0, lambda > 0");
    const AlphaSigma c = ns.eval_at(T, k_c);
    ConditionalInit res;
    res.z = LatentState{axpby(c.alpha, x_c, c.sigma, rng.normal_tensor(x_c.shape)), T, k_c};
    res.final_lambda = lambda;
    if (n_init == 0) return res;
    Tensor grad;
    double J = conditional_objective(p, ns, res.z, x_c, dt, &grad);
    res.objective.push_back(J);
    for (int it = 0; it < n_init; ++it) {
        for (const float g : grad.data) {
            if (!std::isfinite(g)) throw std::runtime_error("conditional init: non-finite gradient");
        }
        bool accepted = false;
        for (int tries = 0; tries < 40 && !accepted; ++tries) {
            LatentState cand{axpby(1.0, res.z.z, -lambda, grad), T, k_c};
            const double Jc = conditional_objective(p, ns, cand, x_c, dt, nullptr);
            if (std::isfinite(Jc) && Jc <= J) {
                res.z = std::move(cand);
                J = conditional_objective(p, ns, res.z, x_c, dt, &grad);
                accepted = true;
            } else {
                lambda *= 0.5;
            }
        }
        res.objective.push_back(J);
        if (!accepted) break;
    }
    res.final_lambda = lambda;
    return res;
}

Tensor conditional_generate(const DenoiserParams<float>& p, const TransformStack& ts, const NoiseSchedule& ns,
                            const SamplerConfig& cfg, const ConditionSpec& cond, const StepObserver& observer,
                            ConditionalInit* init_out) {
    validate(cfg);
    const StageSchedule& st = ns.stages();
    require_shape(cond.x_c, ts.shape(cond.k_c), "condition");
    const double T = conditional_start_time(st, cond.k_c, cfg.dt, cond.T);
    if (T == 0.0) return cond.x_c;
    Rng init_rng(cfg.seed, 4);
    ConditionalInit init = conditional_init(p, ns, cond.x_c, cond.k_c, T, cond.lambda, cond.n_init, cfg.dt, init_rng);
    std::vector<Trajectory> tr;
    tr.push_back(Trajectory{init.z, sample_full_noise(ts, cfg.seed), Rng(cfg.seed, 1), Tensor()});
    if (init_out != nullptr) *init_out = std::move(init);
    run_stages(p, ts, ns, cfg, tr, cond.k_c, T, observer);
    return std::move(tr.front().x);
}

}  // namespace fdm
