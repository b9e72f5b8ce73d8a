#include <cmath>
#include <limits>

#include "doctest.h"
#include "fdm/diffusion.hpp"
#include "test_util.hpp"

using namespace fdm;

namespace {

struct Setup {
    StageSchedule st = build_stage_schedule(2, StageKind::Cosine);
    TransformStack ts = TransformStack::downsample(Shape{1, 8, 8}, 2);
    NoiseSchedule ns;
    explicit Setup(RescaleMode mode = RescaleMode::VP)
        : ns(NoiseSchedule::build(st, std::vector<std::size_t>{64, 16, 4}, std::vector<double>{1.0, 1.0}, mode)) {}
};

// Posterior of z_s given z_t for one scalar element, by quadrature.
std::pair<double, double> grid_bayes(double prior_mean, double prior_sd, double a_ts, double shift, double sd_ts,
                                     double zt) {
    const int n = 40001;
    double w = 0.0, m1 = 0.0, m2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double z = prior_mean + prior_sd * (-10.0 + 20.0 * i / (n - 1));
        const double a = (z - prior_mean) / prior_sd;
        const double b = (zt - a_ts * z - shift) / sd_ts;
        const double p = std::exp(-0.5 * (a * a + b * b));
        w += p;
        m1 += p * z;
        m2 += p * z * z;
    }
    const double m = m1 / w;
    return {m, std::sqrt(m2 / w - m * m)};
}

}  // namespace

TEST_CASE("q_sample endpoints") {
    Setup s;
    const Tensor x = test::random_tensor(s.ts.shape(0), 1);
    const Tensor eps = test::random_tensor(s.ts.shape(0), 2);
    CHECK(test::max_abs_diff(q_sample(s.ts, s.ns, x, 0.0, eps).z, x) == 0.0);
    for (int k = 1; k <= 2; ++k) {
        const double t = s.st.start(k);
        const LatentState z = q_sample(s.ts, s.ns, x, t, Tensor(s.ts.shape(k)));
        CHECK(z.k == k);
        const Tensor expect = scaled(s.ts.forward_to_stage(x, k), s.ns.eval_at(t, k).alpha);
        CHECK(test::max_abs_diff(z.z, expect) < 1e-6);
    }
    CHECK_THROWS(q_sample(s.ts, s.ns, x, 0.5, eps));  // stage 1 needs a 4x4 noise
}

TEST_CASE("q_transition: identity, last stage, cross-stage rejection") {
    Setup s;
    const Tensor x = test::random_tensor(s.ts.shape(0), 3);
    const LatentState zs = q_sample_at(s.ts, s.ns, x, 0.8, 2, test::random_tensor(s.ts.shape(2), 4));
    const LatentState same = q_transition(s.ts, s.ns, x, zs, 0.8, test::random_tensor(s.ts.shape(2), 5));
    CHECK(test::max_abs_diff(same.z, zs.z) == 0.0);

    // Last stage: plain transition alpha_{t|s} z_s + sigma_{t|s} eps.
    const Tensor e = test::random_tensor(s.ts.shape(2), 6);
    const LatentState zt = q_transition(s.ts, s.ns, x, zs, 0.95, e);
    const AlphaSigma tr = s.ns.transition_at(0.8, 0.95, 2);
    CHECK(test::max_abs_diff(zt.z, axpby(tr.alpha, zs.z, tr.sigma, e)) < 1e-6);

    const LatentState z0 = q_sample_at(s.ts, s.ns, x, 0.1, 0, test::random_tensor(s.ts.shape(0), 7));
    CHECK_THROWS(q_transition(s.ts, s.ns, x, z0, 0.9, test::random_tensor(s.ts.shape(0), 8)));
    CHECK_THROWS(q_transition(s.ts, s.ns, x, zs, 0.7, e));
}

TEST_CASE("property: q_sample then q_transition keeps the marginal moments") {
    Setup s;
    const Tensor x = test::random_tensor(s.ts.shape(0), 9, 0.5);
    Rng trng(10);
    const long draws = 100000;
    for (int k = 0; k <= 2; ++k) {
        for (int pair = 0; pair < 3; ++pair) {
            double a = s.st.start(k) + (s.st.end(k) - s.st.start(k)) * trng.uniform();
            double b = s.st.start(k) + (s.st.end(k) - s.st.start(k)) * trng.uniform();
            if (a > b) std::swap(a, b);
            const AlphaSigma mt = s.ns.eval_at(b, k);
            const Tensor mean = q_sample_at(s.ts, s.ns, x, b, k, Tensor(s.ts.shape(k))).z;
            const std::size_t n = mean.size();
            std::vector<double> m1(n), m2(n);
            for (long d = 0; d < draws; ++d) {
                Rng rng(11, k * 8 + pair, d);
                const LatentState zs = q_sample_at(s.ts, s.ns, x, a, k, rng.normal_tensor(s.ts.shape(k)));
                const LatentState zt = q_transition(s.ts, s.ns, x, zs, b, rng.normal_tensor(s.ts.shape(k)));
                for (std::size_t j = 0; j < n; ++j) {
                    const double v = zt.z.data[j] - mean.data[j];
                    m1[j] += v;
                    m2[j] += v * v;
                }
            }
            double rms = 0.0, var = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                const double m = m1[j] / draws;
                rms += m * m / (mt.sigma * mt.sigma);
                var += (m2[j] / draws - m * m) / (mt.sigma * mt.sigma);
            }
            CHECK(std::sqrt(rms / n) < 0.01);
            CHECK(std::abs(var / n - 1.0) < 0.01);
        }
    }
}

TEST_CASE("reverse posterior: degenerate and deterministic steps") {
    Setup s;
    const Tensor xh = test::random_tensor(s.ts.shape(1), 12);
    const Tensor dh = test::random_tensor(s.ts.shape(1), 13);
    const double t = 0.6;
    const PosteriorStep same = reverse_posterior(s.ns, xh, &dh, t, t, 1, 1.0);
    CHECK(same.carry == doctest::Approx(s.ns.eval_at(t, 1).sigma));
    CHECK(same.fresh == doctest::Approx(0.0));
    CHECK(test::max_abs_diff(same.mean, scaled(xh, s.ns.eval_at(t, 1).alpha)) < 1e-6);
    const PosteriorStep ddim = reverse_posterior(s.ns, xh, &dh, 0.55, t, 1, 0.0);
    CHECK(ddim.fresh == 0.0);
    CHECK(ddim.carry == doctest::Approx(s.ns.eval_at(0.55, 1).sigma));
    // At s = tau_k the mean reaches alpha_s (x_hat + delta) = alpha_s x^k.
    const PosteriorStep end = reverse_posterior(s.ns, xh, &dh, s.st.start(1), t, 1, 1.0);
    CHECK(test::max_abs_diff(end.mean, scaled(axpby(1.0, xh, 1.0, dh), s.ns.eval_at(s.st.start(1), 1).alpha)) < 1e-6);
    CHECK_THROWS(reverse_posterior(s.ns, xh, &dh, 0.2, t, 1, 1.0));
    CHECK_THROWS(reverse_posterior(s.ns, xh, &dh, 0.55, t, 1, 1.5));
}

TEST_CASE("reverse posterior against grid Bayes in 1-D") {
    for (RescaleMode mode : {RescaleMode::SP, RescaleMode::VP}) {
        Setup s(mode);
        Rng rng(14);
        for (int c = 0; c < 60; ++c) {
            const int k = c % 3;
            const double lo = s.st.start(k), hi = std::min(s.st.end(k), 0.99);
            double a = std::max(lo, 0.01) + (hi - std::max(lo, 0.01)) * rng.uniform();
            double b = std::max(lo, 0.01) + (hi - std::max(lo, 0.01)) * rng.uniform();
            if (a > b) std::swap(a, b);
            if (b - a < 1e-3 || b - lo < 1e-3) continue;
            const double xk = rng.normal();
            const double xt = k < 2 ? rng.normal() : xk;
            const double xs = xt + (b - a) / (b - lo) * (xk - xt);
            const AlphaSigma ms = s.ns.eval_at(a, k), mt = s.ns.eval_at(b, k), tr = s.ns.transition_at(a, b, k);
            const double zt = mt.alpha * xt + mt.sigma * rng.normal();
            const auto [gm, gsd] = grid_bayes(ms.alpha * xs, ms.sigma, tr.alpha, mt.alpha * xt - tr.alpha * ms.alpha * xs,
                                              tr.sigma, zt);
            Tensor xh(Shape{1, 1, 1}, static_cast<float>(xt)), dh(Shape{1, 1, 1}, static_cast<float>(xk - xt));
            const PosteriorStep step = reverse_posterior(s.ns, xh, k < 2 ? &dh : nullptr, a, b, k, 1.0);
            const double mean = step.mean.data[0] + step.carry * (zt - mt.alpha * xt) / mt.sigma;
            CHECK(std::abs(mean - gm) < 1e-3 * std::max(1.0, std::abs(gm)));
            CHECK(std::abs(step.fresh - gsd) < 1e-3 * std::max(1e-3, gsd) + 1e-6);
        }
    }
}

TEST_CASE("property: reverse step with the true targets reproduces q_sample(s)") {
    Setup s;
    const Tensor x = test::random_tensor(s.ts.shape(0), 15, 0.5);
    const int k = 1;
    const double a = 0.5, b = 0.7;
    const StageTarget tb = interpolated_target_at(s.ts, s.st, x, b, k);
    const Tensor mean_s = q_sample_at(s.ts, s.ns, x, a, k, Tensor(s.ts.shape(k))).z;
    const double sig_s = s.ns.eval_at(a, k).sigma;
    const long draws = 100000;
    const std::size_t n = mean_s.size();
    std::vector<double> m1(n), m2(n);
    for (long d = 0; d < draws; ++d) {
        Rng rng(16, 0, d);
        const Tensor eps = rng.normal_tensor(s.ts.shape(k));
        const LatentState zt = q_sample_at(s.ts, s.ns, x, b, k, eps);
        const PosteriorStep step = reverse_posterior(s.ns, tb.x_t, &tb.delta, a, b, k, 1.0);
        const Tensor fresh = rng.normal_tensor(s.ts.shape(k));
        const Tensor zs = posterior_sample(step, eps, &fresh);
        for (std::size_t j = 0; j < n; ++j) {
            const double v = zs.data[j] - mean_s.data[j];
            m1[j] += v;
            m2[j] += v * v;
        }
    }
    double rms = 0.0, var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        const double m = m1[j] / draws;
        rms += m * m / (sig_s * sig_s);
        var += (m2[j] / draws - m * m) / (sig_s * sig_s);
    }
    CHECK(std::sqrt(rms / n) < 0.01);
    CHECK(std::abs(var / n - 1.0) < 0.01);
}

TEST_CASE("zeta forward: DROP copies, AVERAGE restores unit variance") {
    const TransformStack ts = TransformStack::downsample(Shape{1, 4, 4}, 1);
    const Tensor e = test::random_tensor(ts.shape(0), 17);
    const Tensor d = boundary_forward(e, ts.partition(1), ZetaMode::Drop, ts.shape(1));
    CHECK(d.data[0] == e.data[0]);
    CHECK(d.data[1] == e.data[2]);
    CHECK(d.data[2] == e.data[8]);
    CHECK(d.data[3] == e.data[10]);
    const Tensor a = boundary_forward(e, ts.partition(1), ZetaMode::Average, ts.shape(1));
    CHECK(a.data[0] == doctest::Approx((e.data[0] + e.data[1] + e.data[4] + e.data[5]) / 2.0));

    for (ZetaMode mode : {ZetaMode::Drop, ZetaMode::Average}) {
        double m2 = 0.0;
        const long draws = 100000;
        for (long i = 0; i < draws; ++i) {
            Rng rng(18, 0, i);
            m2 += mean_square(boundary_forward(rng.normal_tensor(ts.shape(0)), ts.partition(1), mode, ts.shape(1)));
        }
        CHECK(m2 / draws == doctest::Approx(1.0).epsilon(0.05));
    }
}

TEST_CASE("zeta inverse: exact left inverse and standard normal marginals") {
    const TransformStack ts = TransformStack::downsample(Shape{2, 8, 8}, 2);
    for (ZetaMode mode : {ZetaMode::Drop, ZetaMode::Average}) {
        FullNoise fn = sample_full_noise(ts, 19);
        for (int k = 2; k >= 1; --k) {
            const Tensor c = test::random_tensor(ts.shape(k), 20 + k);
            const Tensor f = boundary_reverse(c, fn, k, mode, ts.partition(k), ts.shape(k - 1));
            const Tensor back = boundary_forward(f, ts.partition(k), mode, ts.shape(k));
            if (mode == ZetaMode::Drop) {
                CHECK(test::max_abs_diff(back, c) == 0.0);
            } else {
                CHECK(test::max_abs_diff(back, c) < 4 * std::numeric_limits<float>::epsilon() * 4);
            }
        }
        const long draws = 100000;
        const std::size_t n = ts.dim(0);
        std::vector<double> m1(n), m2(n);
        for (long i = 0; i < draws; ++i) {
            FullNoise g = sample_full_noise(ts, 1000 + i);
            Rng rng(21, 0, i);
            const Tensor f = boundary_reverse(rng.normal_tensor(ts.shape(1)), g, 1, mode, ts.partition(1), ts.shape(0));
            for (std::size_t j = 0; j < n; ++j) {
                m1[j] += f.data[j];
                m2[j] += static_cast<double>(f.data[j]) * f.data[j];
            }
        }
        for (std::size_t j = 0; j < n; ++j) {
            const double m = m1[j] / draws;
            CHECK(std::abs(m) < 0.05);
            CHECK(std::abs(m2[j] / draws - m * m - 1.0) < 0.05);
        }
    }
}

TEST_CASE("AVERAGE inverse: within-block correlation matches the constrained law") {
    // Four iid unit normals conditioned on a zero sum: variance 3/4, covariance -1/4.
    const TransformStack ts = TransformStack::downsample(Shape{1, 2, 2}, 1);
    double cov01 = 0.0;
    const long draws = 100000;
    const Tensor zero(ts.shape(1));
    for (long i = 0; i < draws; ++i) {
        FullNoise g = sample_full_noise(ts, 5000 + i);
        const Tensor f = boundary_reverse(zero, g, 1, ZetaMode::Average, ts.partition(1), ts.shape(0));
        cov01 += static_cast<double>(f.data[0]) * f.data[3];
    }
    CHECK(cov01 / draws == doctest::Approx(-0.25).epsilon(0.04));
}

TEST_CASE("full-size noise") {
    const TransformStack ts = TransformStack::downsample(Shape{3, 32, 32}, 2);
    FullNoise a = sample_full_noise(ts, 22);
    const FullNoise b = sample_full_noise(ts, 22);
    CHECK(a.base().size() == 192);
    CHECK(a.complement(2).size() == 576);
    CHECK(a.complement(1).size() == 2304);
    CHECK(a.total_size() == 3072);
    CHECK(a.base().data == b.base().data);
    CHECK(std::equal(a.complement(1).begin(), a.complement(1).end(), b.complement(1).begin()));
    const FullNoise c = sample_full_noise(ts, 23);
    CHECK(a.base().data != c.base().data);
    a.take(2);
    CHECK(a.consumed(2));
    CHECK_THROWS(a.take(2));

    const TransformStack k0 = TransformStack::downsample(Shape{3, 8, 8}, 0);
    CHECK(sample_full_noise(k0, 1).total_size() == 192);
}
