#include "fdm/verify.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numbers>
#include <sstream>

#include "json.hpp"

#include "fdm/corpus.hpp"
#include "fdm/experiment.hpp"
#include "fdm/rng.hpp"
#include "fdm/sampler.hpp"

namespace fdm {

namespace {

std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(6) << v;
    return os.str();
}

CheckResult make(std::string name, bool pass, double measured, double threshold, std::string detail = {}) {
    return CheckResult{std::move(name), pass, measured, threshold, std::move(detail)};
}

// Sum over patches of the squared patch mean; p is the patch side in elements.
double patch_power(const Tensor& x, int p, double scale) {
    const Shape& sh = x.shape;
    const double inv = 1.0 / (static_cast<double>(p) * p);
    double acc = 0.0;
    for (int c = 0; c < sh.channels; ++c) {
        for (int y0 = 0; y0 < sh.height; y0 += p) {
            for (int x0 = 0; x0 < sh.width; x0 += p) {
                double m = 0.0;
                for (int y = y0; y < y0 + p; ++y) {
                    for (int xx = x0; xx < x0 + p; ++xx) m += x.at(c, y, xx);
                }
                m *= inv * scale;
                acc += m * m;
            }
        }
    }
    return acc;
}

double sample_time(Rng& rng, double lo, double hi) { return lo + (hi - lo) * rng.uniform(); }

}  // namespace

CheckResult check_stage_schedule(const StageSchedule& st) {
    const int K = st.K;
    bool ok = static_cast<int>(st.tau.size()) == K + 2 && st.tau.front() == 0.0 && st.tau.back() == 1.0;
    double min_gap = std::numeric_limits<double>::infinity();
    for (int k = 0; ok && k <= K; ++k) {
        min_gap = std::min(min_gap, st.tau[k + 1] - st.tau[k]);
        if (st.stage_of(st.tau[k]) != k) ok = false;
        if (st.stage_of(0.5 * (st.tau[k] + st.tau[k + 1])) != k) ok = false;
    }
    if (st.stage_of(1.0) != K) ok = false;
    ok = ok && min_gap > 0.0;
    return make("stage_schedule", ok, min_gap, 0.0, "tau_0 = 0, tau_{K+1} = 1, strictly increasing, stage_of consistent");
}

CheckResult check_vp_closure(const NoiseSchedule& ns, int n, std::uint64_t seed) {
    Rng rng(seed, 0x7601);
    double worst = 0.0;
    for (int i = 0; i < n; ++i) {
        const double t = rng.uniform();
        const AlphaSigma c = ns.eval(t);
        worst = std::max(worst, std::abs(c.alpha * c.alpha + c.sigma * c.sigma - 1.0));
    }
    for (int k = 0; k <= ns.stages().K; ++k) {
        for (double t : {ns.stages().start(k), ns.stages().end(k)}) {
            const AlphaSigma c = ns.eval_at(t, k);
            worst = std::max(worst, std::abs(c.alpha * c.alpha + c.sigma * c.sigma - 1.0));
        }
    }
    return make("vp_closure", worst <= 1e-6, worst, 1e-6, std::to_string(n) + " random t plus stage endpoints");
}

CheckResult check_chapman_kolmogorov(const NoiseSchedule& ns, int n, std::uint64_t seed) {
    const StageSchedule& st = ns.stages();
    Rng rng(seed, 0x636b);
    double worst = 0.0;
    bool monotone = true;
    for (int i = 0; i < n; ++i) {
        const int k = static_cast<int>(rng.index(static_cast<std::size_t>(st.K + 1)));
        double a = sample_time(rng, st.start(k), st.end(k));
        double b = sample_time(rng, st.start(k), st.end(k));
        double c = sample_time(rng, st.start(k), st.end(k));
        if (a > b) std::swap(a, b);
        if (b > c) std::swap(b, c);
        if (a > b) std::swap(a, b);
        const AlphaSigma ab = ns.transition_at(a, b, k);
        const AlphaSigma bc = ns.transition_at(b, c, k);
        const AlphaSigma ac = ns.transition_at(a, c, k);
        const double e1 = std::abs(bc.alpha * ab.alpha - ac.alpha);
        const double e2 = std::abs(bc.alpha * bc.alpha * ab.sigma * ab.sigma + bc.sigma * bc.sigma - ac.sigma * ac.sigma);
        // Transition composed with the marginal at a reproduces the marginal at c.
        const AlphaSigma ma = ns.eval_at(a, k);
        const AlphaSigma mc = ns.eval_at(c, k);
        const double e3 = std::abs(ac.alpha * ma.alpha - mc.alpha);
        const double e4 = std::abs(ac.alpha * ac.alpha * ma.sigma * ma.sigma + ac.sigma * ac.sigma - mc.sigma * mc.sigma);
        worst = std::max({worst, e1, e2, e3, e4});
        // Non-negative transition variance means sigma/alpha is non-decreasing.
        if (mc.alpha > 0.0 && ma.alpha > 0.0 && mc.sigma / mc.alpha < ma.sigma / ma.alpha * (1.0 - 1e-12)) {
            monotone = false;
        }
    }
    return make("chapman_kolmogorov", worst <= 1e-6 && monotone, worst, 1e-6,
                monotone ? std::to_string(n) + " triples s < u < t" : "sigma/alpha decreases inside a stage");
}

CheckResult check_rescale_jump(const NoiseSchedule& ns, const TransformStack& ts, std::span<const double> gammas) {
    const StageSchedule& st = ns.stages();
    if (ns.mode() == RescaleMode::None || st.K == 0) {
        return make("rescale_jump", true, 0.0, 0.0, "not applicable (no rescaling or single stage)");
    }
    double worst = 0.0;
    std::ostringstream det;
    for (int k = 1; k <= st.K; ++k) {
        const double tk = st.start(k);
        const AlphaSigma left = ns.eval_at(tk, k - 1);
        const AlphaSigma right = ns.eval_at(tk, k);
        const double dg = ts.ratio(k) * gammas[k - 1];
        double measured = 0.0;
        double expected = 0.0;
        if (ns.mode() == RescaleMode::SP) {
            measured = right.sigma / left.sigma;
            expected = 1.0 / std::sqrt(dg);
            worst = std::max(worst, std::abs(right.alpha - left.alpha));
        } else {
            measured = (right.alpha * right.alpha / (right.sigma * right.sigma)) /
                       (left.alpha * left.alpha / (left.sigma * left.sigma));
            expected = dg;
        }
        worst = std::max(worst, std::abs(measured / expected - 1.0));
        det << (k > 1 ? "; " : "") << "k=" << k << ": " << fmt(measured) << " vs " << fmt(expected);
    }
    const std::string what = ns.mode() == RescaleMode::SP ? "sigma jump vs 1/sqrt(d gamma): " : "SNR jump vs d gamma: ";
    return make("rescale_jump", worst <= 1e-12, worst, 1e-12, what + det.str());
}

CheckResult check_boundary_snr(const TransformStack& ts, const NoiseSchedule& ns, std::span<const double> gammas,
                               std::span<const Tensor> signals, long draws, std::uint64_t seed, double tolerance,
                               bool normalize) {
    const StageSchedule& st = ns.stages();
    if (st.K == 0) return make("boundary_snr", true, 1.0, tolerance, "not applicable (single stage)");
    if (ts.kind() == TransformKind::LinearAE) {
        return make("boundary_snr", true, 1.0, tolerance, "not applicable (latent stage has no spatial patches)");
    }
    if (signals.empty()) throw std::invalid_argument("boundary_snr needs at least one signal");
    const PatchSpec spec = ts.patch_spec();
    double worst_ratio = 1.0;
    std::ostringstream det;
    for (int k = 1; k <= st.K; ++k) {
        const int p_fine = spec.extent / spec.stage_downscale[k - 1];
        const int p_coarse = spec.extent / spec.stage_downscale[k];
        const double tk = st.start(k);
        const AlphaSigma left = ns.eval_at(tk, k - 1);
        const AlphaSigma right = ns.eval_at(tk, k);
        double sig_left = 0.0;
        double sig_right = 0.0;
        for (const Tensor& x : signals) {
            const Tensor xk = ts.forward_to_stage(x, k);
            sig_left += patch_power(ts.g_map(xk, k), p_fine, left.alpha);
            sig_right += patch_power(xk, p_coarse, right.alpha);
        }
        double noi_left = 0.0;
        double noi_right = 0.0;
#pragma omp parallel for reduction(+ : noi_left, noi_right) schedule(static)
        for (long i = 0; i < draws; ++i) {
            Rng rng(seed, 0x736e72, static_cast<std::uint64_t>(k) << 40 | static_cast<std::uint64_t>(i));
            noi_left += patch_power(rng.normal_tensor(ts.shape(k - 1)), p_fine, left.sigma);
            noi_right += patch_power(rng.normal_tensor(ts.shape(k)), p_coarse, right.sigma);
        }
        const double ratio = (sig_right / noi_right) / (sig_left / noi_left);
        // A signal whose power changes by gamma_sig across g is continuous only if
        // the schedule used the same gamma; the expected ratio is gamma_cfg / gamma_sig.
        const double expected = normalize ? gammas[k - 1] / estimate_gamma(ts, signals, k) : 1.0;
        const double rel = ratio / expected;
        if (std::abs(rel - 1.0) > std::abs(worst_ratio - 1.0)) worst_ratio = rel;
        det << (k > 1 ? "; " : "") << "k=" << k << ": " << fmt(ratio) << " (expected " << fmt(expected) << ")";
    }
    return make("boundary_snr", std::abs(worst_ratio - 1.0) <= tolerance, worst_ratio, tolerance,
                "patch SNR after/before each boundary over " + std::to_string(draws) + " draws: " + det.str());
}

CheckResult check_marginal_consistency(const TransformStack& ts, const NoiseSchedule& ns, const Tensor& x, long draws,
                                       std::uint64_t seed, int pairs) {
    const StageSchedule& st = ns.stages();
    Rng trng(seed, 0x6d63);
    double worst_mean = 0.0;
    double worst_var = 0.0;
    for (int k = 0; k <= st.K; ++k) {
        for (int q = 0; q < pairs; ++q) {
            double s = sample_time(trng, st.start(k), st.end(k));
            double t = sample_time(trng, st.start(k), st.end(k));
            if (s > t) std::swap(s, t);
            if (k == 0 && s < 1e-3) s = 1e-3;
            const LatentState ref = q_sample_at(ts, ns, x, t, k, Tensor(ts.shape(k)));
            const double sigma_t = ns.eval_at(t, k).sigma;
            const std::size_t n = ref.z.size();
            std::vector<double> sum(n, 0.0);
            std::vector<double> sq(n, 0.0);
#pragma omp parallel
            {
                std::vector<double> ls(n, 0.0);
                std::vector<double> lq(n, 0.0);
#pragma omp for schedule(static)
                for (long i = 0; i < draws; ++i) {
                    Rng rng(seed, 0x6d6301, static_cast<std::uint64_t>(k * 64 + q) << 40 | static_cast<std::uint64_t>(i));
                    const LatentState zs = q_sample_at(ts, ns, x, s, k, rng.normal_tensor(ts.shape(k)));
                    const LatentState zt = q_transition(ts, ns, x, zs, t, rng.normal_tensor(ts.shape(k)));
                    for (std::size_t j = 0; j < n; ++j) {
                        const double d = static_cast<double>(zt.z.data[j]) - ref.z.data[j];
                        ls[j] += d;
                        lq[j] += d * d;
                    }
                }
#pragma omp critical
                for (std::size_t j = 0; j < n; ++j) {
                    sum[j] += ls[j];
                    sq[j] += lq[j];
                }
            }
            double rms = 0.0;
            double var_ratio = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                const double m = sum[j] / draws;
                const double v = sq[j] / draws - m * m;
                rms += (m / sigma_t) * (m / sigma_t);
                var_ratio += v / (sigma_t * sigma_t);
            }
            rms = std::sqrt(rms / n);
            var_ratio /= n;
            worst_mean = std::max(worst_mean, rms);
            worst_var = std::max(worst_var, std::abs(var_ratio - 1.0));
        }
    }
    // The Monte Carlo floor of the mean statistic is 1/sqrt(draws).
    const double thr = std::max(0.01, 3.0 / std::sqrt(static_cast<double>(draws)));
    const double measured = std::max(worst_mean, worst_var);
    return make("marginal_consistency", measured <= thr, measured, thr,
                "max over stages and (s,t) of pooled mean error/sigma_t (" + fmt(worst_mean) +
                    ") and |var ratio - 1| (" + fmt(worst_var) + "), " + std::to_string(draws) + " draws");
}

CheckResult check_reverse_posterior(const NoiseSchedule& ns, int cases, std::uint64_t seed) {
    const StageSchedule& st = ns.stages();
    Rng rng(seed, 0x7270);
    double worst = 0.0;
    for (int c = 0; c < cases; ++c) {
        const int k = static_cast<int>(rng.index(static_cast<std::size_t>(st.K + 1)));
        const double lo = st.start(k);
        const double hi = std::min(st.end(k), 0.999);
        double s = sample_time(rng, std::max(lo, 0.02), hi);
        double t = sample_time(rng, std::max(lo, 0.02), hi);
        if (s > t) std::swap(s, t);
        if (t - s < 1e-3) continue;
        if (t - lo < 1e-3) continue;
        // Stage endpoint x^k, current mean x_t, and the mean x_s the posterior should target.
        const double xk = rng.normal();
        const double xt = k < st.K ? rng.normal() : xk;
        const double xs = xt + (t - s) / (t - lo) * (xk - xt);
        const AlphaSigma ms = ns.eval_at(s, k);
        const AlphaSigma mt = ns.eval_at(t, k);
        const AlphaSigma tr = ns.transition_at(s, t, k);
        const double zt = mt.alpha * xt + mt.sigma * rng.normal();

        // Bayes on a grid: prior N(alpha_s x_s, sigma_s^2), likelihood of z_t given z_s.
        const double m0 = ms.alpha * xs;
        const int n = 20001;
        const double span = 12.0 * ms.sigma;
        double w_sum = 0.0;
        double m1 = 0.0;
        double m2 = 0.0;
        double lmax = -std::numeric_limits<double>::infinity();
        std::vector<double> logw(n);
        for (int i = 0; i < n; ++i) {
            const double z = m0 - span + 2.0 * span * i / (n - 1);
            const double a = (z - m0) / ms.sigma;
            const double b = (zt - tr.alpha * z - mt.alpha * xt + tr.alpha * ms.alpha * xs) / tr.sigma;
            logw[i] = -0.5 * (a * a + b * b);
            lmax = std::max(lmax, logw[i]);
        }
        for (int i = 0; i < n; ++i) {
            const double z = m0 - span + 2.0 * span * i / (n - 1);
            const double w = std::exp(logw[i] - lmax);
            w_sum += w;
            m1 += w * z;
            m2 += w * z * z;
        }
        const double gm = m1 / w_sum;
        const double gsd = std::sqrt(std::max(0.0, m2 / w_sum - gm * gm));

        Tensor xhat(Shape{1, 1, 1});
        xhat.data[0] = static_cast<float>(xt);
        Tensor delta(Shape{1, 1, 1});
        delta.data[0] = static_cast<float>(xk - xt);
        const PosteriorStep step = reverse_posterior(ns, xhat, k < st.K ? &delta : nullptr, s, t, k, 1.0);
        const double eps_hat = (zt - mt.alpha * xt) / mt.sigma;
        const double pm = static_cast<double>(step.mean.data[0]) + step.carry * eps_hat;
        const double mean_err = std::abs(pm - gm) / std::max(1.0, std::abs(gm));
        const double sd_err = std::abs(step.fresh - gsd) / std::max(1e-3, gsd);
        worst = std::max({worst, mean_err, sd_err});
    }
    return make("reverse_posterior", worst <= 1e-3, worst, 1e-3,
                std::to_string(cases) + " random (s, t, x, z_t) against grid Bayes");
}

CheckResult check_boundary_roundtrip(const TransformStack& ts, ZetaMode mode, std::uint64_t seed) {
    const std::string name = mode == ZetaMode::Drop ? "zeta_roundtrip_drop" : "zeta_roundtrip_average";
    if (ts.K() == 0) return make(name, true, 0.0, 0.0, "not applicable (single stage)");
    double worst = 0.0;
    for (int trial = 0; trial < 8; ++trial) {
        FullNoise fn = sample_full_noise(ts, stream_seed(seed, 0x7a72, trial));
        for (int k = ts.K(); k >= 1; --k) {
            Rng rng(seed, 0x7a73, static_cast<std::uint64_t>(trial * 64 + k));
            const Tensor coarse = rng.normal_tensor(ts.shape(k));
            const Tensor fine = boundary_reverse(coarse, fn, k, mode, ts.partition(k), ts.shape(k - 1));
            const Tensor back = boundary_forward(fine, ts.partition(k), mode, ts.shape(k));
            for (std::size_t i = 0; i < coarse.size(); ++i) {
                worst = std::max(worst, std::abs(static_cast<double>(back.data[i]) - coarse.data[i]));
            }
        }
    }
    const double thr = mode == ZetaMode::Drop ? 0.0 : 8.0 * std::numeric_limits<float>::epsilon();
    return make(name, worst <= thr, worst, thr, "max |zeta(zeta^-1(eps)) - eps| over all boundaries");
}

CheckResult check_boundary_marginals(const TransformStack& ts, ZetaMode mode, long draws, std::uint64_t seed) {
    const std::string name = mode == ZetaMode::Drop ? "zeta_marginals_drop" : "zeta_marginals_average";
    if (ts.K() == 0) return make(name, true, 0.0, 0.05, "not applicable (single stage)");
    double worst = 0.0;
    for (int k = 1; k <= ts.K(); ++k) {
        const std::size_t n = ts.dim(k - 1);
        std::vector<double> sum(n, 0.0);
        std::vector<double> sq(n, 0.0);
#pragma omp parallel
        {
            std::vector<double> ls(n, 0.0);
            std::vector<double> lq(n, 0.0);
#pragma omp for schedule(static)
            for (long i = 0; i < draws; ++i) {
                const std::uint64_t s = stream_seed(seed, 0x7a6d, static_cast<std::uint64_t>(k) << 40 | i);
                FullNoise fn = sample_full_noise(ts, s);
                Rng rng(s, 0x7a6e);
                const Tensor coarse = rng.normal_tensor(ts.shape(k));
                const Tensor fine = boundary_reverse(coarse, fn, k, mode, ts.partition(k), ts.shape(k - 1));
                for (std::size_t j = 0; j < n; ++j) {
                    ls[j] += fine.data[j];
                    lq[j] += static_cast<double>(fine.data[j]) * fine.data[j];
                }
            }
#pragma omp critical
            for (std::size_t j = 0; j < n; ++j) {
                sum[j] += ls[j];
                sq[j] += lq[j];
            }
        }
        for (std::size_t j = 0; j < n; ++j) {
            const double m = sum[j] / draws;
            const double v = sq[j] / draws - m * m;
            worst = std::max({worst, std::abs(m), std::abs(v - 1.0)});
        }
    }
    // 0.05 from 2e4 draws up; fewer draws widen it with the standard error of the variance.
    const double thr = std::max(0.05, 4.5 * std::sqrt(2.0 / static_cast<double>(draws)));
    return make(name, worst <= thr, worst, thr,
                "max elementwise |mean| and |var - 1| of zeta^-1 output over " + std::to_string(draws) + " draws");
}

CheckResult check_full_noise(const TransformStack& ts, std::uint64_t seed) {
    FullNoise fn = sample_full_noise(ts, seed);
    bool ok = fn.base().shape == ts.shape(ts.K()) && fn.total_size() == ts.dim(0);
    for (int k = 1; k <= ts.K(); ++k) ok = ok && fn.complement(k).size() == ts.dim(k - 1) - ts.dim(k);
    return make("full_noise_sizes", ok, static_cast<double>(fn.total_size()), static_cast<double>(ts.dim(0)),
                "base plus complements cover the stage-0 dimension");
}

CheckResult check_interpolation_endpoints(const TransformStack& ts, const StageSchedule& st, const Tensor& x) {
    const std::vector<Tensor> pyr = ts.pyramid(x);
    double worst = 0.0;
    for (int k = 0; k <= st.K; ++k) {
        const StageTarget a = interpolated_target_at(ts, st, x, st.start(k), k);
        const StageTarget b = interpolated_target_at(ts, st, x, st.end(k), k);
        const Tensor xhat = ts.approximation(pyr, k);
        worst = std::max(worst, mean_square_diff(a.x_t, pyr[k]));
        worst = std::max(worst, mean_square_diff(b.x_t, xhat));
        Tensor sum = axpby(1.0, b.x_t, 1.0, b.delta);
        worst = std::max(worst, mean_square_diff(sum, pyr[k]));
    }
    worst = std::sqrt(worst);
    return make("interpolation_endpoints", worst <= 1e-6, worst, 1e-6,
                "RMS of x_t - x^k at tau_k, x_t - x_hat^k at tau_{k+1}, x_t + delta - x^k");
}

CheckResult check_k0_reduction(const DenoiserParams<float>& p, const TransformStack& ts, const NoiseSchedule& ns,
                               double eta, double dt, std::uint64_t seed, double tolerance) {
    const std::string name = "k0_reduction_eta" + fmt(eta);
    if (ts.K() != 0) throw std::invalid_argument("k0 reduction needs a single-stage stack");
    SamplerConfig cfg{eta, dt, seed, ZetaMode::Drop};
    std::vector<Tensor> zs;
    generate_batch(p, ts, ns, cfg, std::span<const std::uint64_t>(&seed, 1),
                   [&](const StepEvent& ev) { zs.push_back(*ev.z); });

    // Single-stage stepper on the base schedule (cos, sin)(pi t / 2).
    auto coef = [](double t) { return AlphaSigma{std::cos(std::numbers::pi / 2 * t), std::sin(std::numbers::pi / 2 * t)}; };
    const int n = std::max(1, static_cast<int>(std::lround(1.0 / dt)));
    Tensor z = scaled(Rng(seed, 0x46554c4cULL, 0).normal_tensor(ts.shape(0)), coef(1.0).sigma);
    Rng fresh(seed, 1);
    double worst = 0.0;
    if (static_cast<int>(zs.size()) != n) {
        return make(name, false, std::numeric_limits<double>::infinity(), tolerance, "step count mismatch");
    }
    for (int i = 0; i < n; ++i) {
        const double t = 1.0 - static_cast<double>(i) / n;
        const double s = 1.0 - static_cast<double>(i + 1) / n;
        const AlphaSigma ct = coef(t);
        const bool pure_noise = ct.alpha < 1e-6;
        const DenoiserOutput o = pure_noise ? DenoiserOutput{scaled(z, 1.0 / ct.sigma), Tensor(z.shape)}
                                            : predict(p, LatentState{z, t, 0});
        if (i + 1 < n) {
            const AlphaSigma cs = coef(s);
            const double a_ts = ct.alpha / cs.alpha;
            const double sbar = cs.sigma * std::sqrt(std::max(0.0, ct.sigma * ct.sigma - a_ts * a_ts * cs.sigma * cs.sigma)) / ct.sigma;
            const double carry = std::sqrt(std::max(0.0, cs.sigma * cs.sigma - eta * eta * sbar * sbar));
            Tensor noise;
            if (eta * sbar > 0.0) noise = fresh.normal_tensor(z.shape);
            Tensor next(z.shape);
            for (std::size_t j = 0; j < z.size(); ++j) {
                const double e = o.eps.data[j];
                const double xh = pure_noise ? 0.0 : (static_cast<double>(z.data[j]) - ct.sigma * e) / ct.alpha;
                double v = cs.alpha * xh + carry * e;
                if (eta * sbar > 0.0) v += eta * sbar * noise.data[j];
                next.data[j] = static_cast<float>(v);
            }
            z = std::move(next);
        }
        const double num = std::sqrt(mean_square_diff(zs[i], z));
        const double den = std::max(std::sqrt(mean_square(z)), 1e-12);
        worst = std::max(worst, num / den);
    }
    return make(name, worst <= tolerance, worst, tolerance,
                "max per-step relative difference of z over " + std::to_string(n) + " steps");
}

std::vector<CheckResult> run_verify(const ExperimentConfig& cfg_in, const VerifyOptions& opt) {
    ExperimentConfig cfg = cfg_in;
    validate(cfg);
    std::vector<Tensor> corpus;
    const int n_signals = 8;
    if (cfg.kind == TransformKind::LinearAE) {
        corpus = synthetic_blobs(256, cfg.size, cfg.channels, cfg.corpus_seed);
    } else {
        corpus = synthetic_blobs(n_signals, cfg.size, cfg.channels, cfg.corpus_seed);
    }
    Experiment ex = build_experiment(cfg, corpus);
    NoiseSchedule ns = ex.ns;
    if (opt.corrupt_rescale) {
        const auto [k, f] = *opt.corrupt_rescale;
        std::vector<double> r = ns.rescale();
        if (k < 0 || k >= static_cast<int>(r.size())) throw ConfigError("corrupt-rescale stage out of range");
        r[k] *= f;
        ns = NoiseSchedule(ex.stages, r, ns.mode());
    }
    const std::uint64_t seed = opt.seed;
    std::vector<CheckResult> out;
    out.push_back(check_stage_schedule(ex.stages));
    if (ns.mode() == RescaleMode::VP) out.push_back(check_vp_closure(ns, 10000, seed));
    out.push_back(check_chapman_kolmogorov(ns, 10000, seed));
    out.push_back(check_rescale_jump(ns, ex.ts, ex.gammas));
    const std::span<const Tensor> signals(corpus.data(), std::min<std::size_t>(corpus.size(), n_signals));
    out.push_back(check_boundary_snr(ex.ts, ns, ex.gammas, signals, opt.draws, seed));

    // Moment checks are elementwise, so a reduced image keeps them fast.
    if (cfg.kind != TransformKind::LinearAE) {
        ExperimentConfig small = cfg;
        small.size = std::min(cfg.size, std::max(8, 1 << (cfg.stages + 1)));
        const std::vector<Tensor> sc = synthetic_blobs(1, small.size, cfg.channels, cfg.corpus_seed);
        Experiment es = build_experiment(small, sc);
        NoiseSchedule sns(es.stages, ns.rescale(), ns.mode());
        out.push_back(check_marginal_consistency(es.ts, sns, sc.front(), opt.draws, seed));
        out.push_back(check_interpolation_endpoints(es.ts, es.stages, sc.front()));
    } else {
        const long draws = std::min<long>(opt.draws, 2000);
        out.push_back(check_marginal_consistency(ex.ts, ns, corpus.front(), draws, seed));
        out.push_back(check_interpolation_endpoints(ex.ts, ex.stages, corpus.front()));
    }
    out.push_back(check_reverse_posterior(ns, 200, seed));
    if (ex.ts.K() > 0) {
        out.push_back(check_boundary_roundtrip(ex.ts, ZetaMode::Drop, seed));
        out.push_back(check_boundary_roundtrip(ex.ts, ZetaMode::Average, seed));
        out.push_back(check_boundary_marginals(ex.ts, cfg.zeta, std::min<long>(opt.draws, 20000), seed));
    }
    out.push_back(check_full_noise(ex.ts, seed));
    if (ex.ts.K() == 0) {
        const DenoiserParams<float> p =
            init_denoiser<float>(DenoiserConfig{8, 16, false}, ex.ts.shapes(), stream_seed(seed, 0x6b30));
        for (double eta : {0.0, 1.0}) out.push_back(check_k0_reduction(p, ex.ts, ns, eta, cfg.dt, seed));
    }
    return out;
}

std::string report_json(const ExperimentConfig& cfg, std::span<const CheckResult> results) {
    nlohmann::json checks = nlohmann::json::array();
    bool all = true;
    for (const CheckResult& r : results) {
        all = all && r.pass;
        checks.push_back({{"name", r.name},
                          {"pass", r.pass},
                          {"measured", r.measured},
                          {"threshold", r.threshold},
                          {"detail", r.detail}});
    }
    nlohmann::json j = {{"config_hash", hex64(config_hash(cfg))}, {"pass", all}, {"checks", checks}};
    return j.dump(2) + "\n";
}

std::string curves_csv(const NoiseSchedule& ns, int points) {
    if (points < 2) throw std::invalid_argument("curves need at least two points");
    std::ostringstream os;
    os << "t,alpha,sigma,stage\n" << std::setprecision(10);
    for (int i = 0; i < points; ++i) {
        const double t = static_cast<double>(i) / (points - 1);
        const int k = ns.stages().stage_of(t);
        const AlphaSigma c = ns.eval_at(t, k);
        os << t << "," << c.alpha << "," << c.sigma << "," << k << "\n";
    }
    return os.str();
}

}  // namespace fdm
