#include <cmath>
#include <limits>

#include "doctest.h"
#include "fdm/io.hpp"
#include "fdm/trainer.hpp"
#include "test_util.hpp"

using namespace fdm;

namespace {

struct Rig {
    StageSchedule st = build_stage_schedule(1, StageKind::Cosine);
    TransformStack ts = TransformStack::downsample(Shape{1, 8, 8}, 1);
    NoiseSchedule ns = NoiseSchedule::build(st, std::vector<std::size_t>{64, 16}, std::vector<double>{1.0},
                                            RescaleMode::VP);
    std::vector<Tensor> data;
    Rig() {
        for (int i = 0; i < 4; ++i) data.push_back(test::random_tensor(ts.shape(0), 40 + i, 0.5));
    }
    DenoiserParams<float> model(std::uint64_t seed = 1) const {
        return init_denoiser<float>({8, 8, true}, ts.shapes(), seed);
    }
};

bool same(const ParamSet<float>& a, const ParamSet<float>& b) {
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].value != b[i].value) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("p2 weight and loss weights") {
    const StageSchedule st = build_stage_schedule(0, StageKind::Linear);
    const NoiseSchedule ns = NoiseSchedule::build(st, std::vector<std::size_t>{16}, {}, RescaleMode::VP);
    for (double t : {0.1, 0.25, 0.5, 0.75, 0.9}) {
        const double s = std::sin(M_PI * t / 2);
        CHECK(p2_weight(ns, t) == doctest::Approx(s * s));
    }
    for (double t : {0.25, 0.75}) {
        const double c = std::cos(M_PI * t / 2);
        const double s = std::sin(M_PI * t / 2);
        // eps weighting: omega * SNR, which is alpha^2 under VP.
        const LossWeights e = loss_weights(ns, t, 0, LossConfig{});
        CHECK(e.x == doctest::Approx(c * c));
        CHECK(e.delta == doctest::Approx(e.x));
        const LossWeights x = loss_weights(ns, t, 0, LossConfig{LossWeighting::X, 0.004});
        CHECK(x.x == doctest::Approx(s * s));
        CHECK(x.delta == doctest::Approx(x.x));
    }
    CHECK(loss_weights(ns, 1.0, 0, LossConfig{}).x == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(parse_loss_weighting("x") == LossWeighting::X);
    CHECK_THROWS_AS((void)parse_loss_weighting("snr"), std::invalid_argument);
}

TEST_CASE("AdamW two-step values") {
    ParamSet<float> p, g, m, v;
    p.add("w", {1}, 1.0f);
    g.add("w", {1}, 0.5f);
    m.add("w", {1});
    v.add("w", {1});
    const AdamConfig cfg{0.1, 0.9, 0.999, 1e-8, 0.01};
    adamw_step(p, g, m, v, 1, cfg);
    CHECK(p[0].value[0] == doctest::Approx(0.899000002).epsilon(1e-7));
    g[0].value[0] = -0.25f;
    adamw_step(p, g, m, v, 2, cfg);
    CHECK(m[0].value[0] == doctest::Approx(0.02).epsilon(1e-6));
    CHECK(v[0].value[0] == doctest::Approx(0.00031225).epsilon(1e-6));
    CHECK(p[0].value[0] == doctest::Approx(0.8714672987).epsilon(1e-6));
    CHECK_THROWS(adamw_step(p, g, m, v, 0, cfg));
}

TEST_CASE("EMA update and warmup") {
    ParamSet<float> e, p;
    e.add("w", {2}, 1.0f);
    p.add("w", {2}, 0.0f);
    ema_update(e, p, 0.9);
    CHECK(e[0].value[0] == doctest::Approx(0.9));
    TrainConfig cfg;
    cfg.ema_decay = 0.999;
    CHECK(ema_decay_at(cfg, 0) == doctest::Approx(0.1));
    CHECK(ema_decay_at(cfg, 10) == doctest::Approx(11.0 / 20.0));
    CHECK(ema_decay_at(cfg, 100000) == doctest::Approx(0.999));
    cfg.ema_warmup = false;
    CHECK(ema_decay_at(cfg, 0) == doctest::Approx(0.999));
}

TEST_CASE("loss gradient matches central differences") {
    Rig r;
    auto p = init_denoiser<double>({4, 6, false}, r.ts.shapes(), 2);
    Rng rng(3);
    std::vector<TrainSample> samples = draw_training_samples(r.ts, r.ns, r.data, rng);
    samples[0].t = 0.3;  // keep both stages in the batch
    samples[0].k = 0;
    samples[0].eps = test::random_tensor(r.ts.shape(0), 4);
    {
        StageTarget tg = interpolated_target_at(r.ts, r.st, r.data[0], 0.3, 0);
        samples[0].x_t = tg.x_t;
        samples[0].delta = tg.delta;
    }
    samples[1].t = 0.8;
    samples[1].k = 1;
    samples[1].eps = test::random_tensor(r.ts.shape(1), 5);
    {
        StageTarget tg = interpolated_target_at(r.ts, r.st, r.data[1], 0.8, 1);
        samples[1].x_t = tg.x_t;
        samples[1].delta = tg.delta;
    }
    ParamSet<double> g = p.set.zeros_like();
    grad_loss<double>(p, r.ns, samples, LossConfig{}, &g);
    Rng pick(6);
    double worst = 0.0;
    for (std::size_t ti = 0; ti < p.set.size(); ++ti) {
        for (int rep = 0; rep < 3; ++rep) {
            const std::size_t j = pick.index(p.set[ti].value.size());
            auto q = p;
            const double h = 1e-6;
            q.set[ti].value[j] += h;
            const double lp = grad_loss<double>(q, r.ns, samples, LossConfig{}, nullptr);
            q.set[ti].value[j] -= 2 * h;
            const double lm = grad_loss<double>(q, r.ns, samples, LossConfig{}, nullptr);
            const double fd = (lp - lm) / (2 * h);
            worst = std::max(worst, std::abs(fd - g[ti].value[j]) / std::max(1e-6, std::abs(fd) + std::abs(g[ti].value[j])));
        }
    }
    CHECK(worst < 1e-3);
}

TEST_CASE("a non-finite batch is skipped and leaves the weights untouched") {
    Rig r;
    TrainState st = init_train_state(r.model());
    TrainConfig cfg;
    cfg.batch = 2;
    std::vector<Tensor> bad{r.data[0], r.data[1]};
    bad[1].data[5] = std::numeric_limits<float>::quiet_NaN();
    const ParamSet<float> before = st.params.set;
    const StepResult res = train_step(st, r.ts, r.ns, bad, cfg);
    CHECK(res.skipped);
    CHECK(st.step == 1);
    CHECK(st.skipped == 1);
    CHECK(same(st.params.set, before));
    CHECK(same(st.ema, before));
    const StepResult ok = train_step(st, r.ts, r.ns, std::span<const Tensor>(r.data.data(), 2), cfg);
    CHECK_FALSE(ok.skipped);
    CHECK(std::isfinite(ok.loss));
    CHECK(st.step == 2);
    CHECK_FALSE(same(st.params.set, before));
}

TEST_CASE("resuming from a checkpoint reproduces an uninterrupted run bit for bit") {
    Rig r;
    TrainConfig cfg;
    cfg.batch = 3;
    cfg.seed = 9;
    auto batch = [&](long step) {
        std::vector<Tensor> b;
        for (std::size_t i : batch_indices(r.data.size(), cfg.batch, cfg.seed, step)) b.push_back(r.data[i]);
        return b;
    };
    TrainState a = init_train_state(r.model());
    std::vector<double> la;
    for (int i = 0; i < 6; ++i) la.push_back(train_step(a, r.ts, r.ns, batch(a.step + 1), cfg).loss);

    TrainState b = init_train_state(r.model());
    for (int i = 0; i < 3; ++i) train_step(b, r.ts, r.ns, batch(b.step + 1), cfg);
    Checkpoint ck;
    ck.step = b.step;
    ck.skipped = b.skipped;
    ck.adapter_shapes = b.params.adapter_shapes;
    ck.params = b.params.set;
    ck.ema = b.ema;
    ck.adam_m = b.m;
    ck.adam_v = b.v;
    ck.gammas = {1.0};
    Checkpoint back = decode_checkpoint(encode_checkpoint(ck));
    TrainState c{DenoiserParams<float>{b.params.config, back.adapter_shapes, back.params}, back.ema, back.adam_m,
                 back.adam_v, back.step, back.skipped};
    std::vector<double> lc;
    for (int i = 0; i < 3; ++i) lc.push_back(train_step(c, r.ts, r.ns, batch(c.step + 1), cfg).loss);
    CHECK(lc[0] == la[3]);
    CHECK(lc[2] == la[5]);
    CHECK(same(c.params.set, a.params.set));
    CHECK(same(c.ema, a.ema));
    CHECK(same(c.m, a.m));
    CHECK(same(c.v, a.v));
}

TEST_CASE("batch indices are deterministic per step and in range") {
    const auto a = batch_indices(10, 32, 1, 5);
    CHECK(a == batch_indices(10, 32, 1, 5));
    CHECK(a != batch_indices(10, 32, 1, 6));
    for (std::size_t i : a) CHECK(i < 10);
    CHECK_THROWS(batch_indices(0, 4, 1, 1));
}

TEST_CASE("a small model fits a four-image set") {
    Rig r;
    TrainState st = init_train_state(r.model(7));
    TrainConfig cfg;
    cfg.adam.lr = 3e-3;
    cfg.seed = 11;
    // Fixed evaluation draws so the comparison is not noise dominated.
    auto eval = [&](const DenoiserParams<float>& p) {
        double s = 0.0;
        for (int i = 0; i < 8; ++i) {
            Rng rng(12, 0, i);
            s += training_loss(p, r.ts, r.ns, r.data, rng, cfg.loss);
        }
        return s / 8;
    };
    const double before = eval(st.params);
    for (int i = 0; i < 300; ++i) train_step(st, r.ts, r.ns, r.data, cfg);
    const double after = eval(st.params);
    MESSAGE("loss " << before << " -> " << after);
    CHECK(after < 0.5 * before);
}

TEST_CASE("property: oracle predictions give zero loss at every stage") {
    Rig r;
    Rng rng(50);
    for (int trial = 0; trial < 40; ++trial) {
        std::vector<TrainSample> s = draw_training_samples(r.ts, r.ns, std::span<const Tensor>(&r.data[trial % 4], 1), rng);
        if (s[0].t > 0.999) continue;
        CHECK(prediction_loss(r.ns, s[0], s[0].eps, s[0].delta, LossConfig{}) < 1e-12);
    }
}

TEST_CASE("zero predictor: Monte Carlo loss matches the closed form") {
    Rig r;
    const Tensor zero_eps(r.ts.shape(0));
    for (const Tensor& x : {Tensor(r.ts.shape(0), 0.3f), r.data[0]}) {
        for (double t : {0.1, 0.35}) {
            const int k = r.st.stage_of(t);
            REQUIRE(k == 0);
            const StageTarget tg = interpolated_target_at(r.ts, r.st, x, t, k);
            const AlphaSigma c = r.ns.eval_at(t, k);
            const LossWeights w = loss_weights(r.ns, t, k, LossConfig{});
            const double expect = w.x * c.sigma * c.sigma / (c.alpha * c.alpha) + w.delta * mean_square(tg.delta);
            const long draws = 4000;
            double sum = 0.0;
            for (long i = 0; i < draws; ++i) {
                Rng rng(51, 0, i);
                const TrainSample s{t, k, rng.normal_tensor(r.ts.shape(0)), tg.x_t, tg.delta};
                sum += prediction_loss(r.ns, s, zero_eps, zero_eps, LossConfig{});
            }
            const double se = w.x * c.sigma * c.sigma / (c.alpha * c.alpha) * std::sqrt(2.0 / (64.0 * draws));
            CHECK(std::abs(sum / draws - expect) < 3 * se + 1e-12);
        }
    }
    const bool constant_has_no_degradation =
        mean_square(interpolated_target_at(r.ts, r.st, Tensor(r.ts.shape(0), 0.3f), 0.2, 0).delta) < 1e-12;
    CHECK(constant_has_no_degradation);
}

TEST_CASE("batched network loss equals the per-example loss") {
    Rig r;
    const auto p = init_denoiser<float>({8, 8, false}, r.ts.shapes(), 52);
    Rng rng(53);
    const std::vector<TrainSample> s = draw_training_samples(r.ts, r.ns, r.data, rng);
    double ref = 0.0;
    for (const TrainSample& ex : s) {
        const AlphaSigma c = r.ns.eval_at(ex.t, ex.k);
        const DenoiserOutput o = predict(p, LatentState{axpby(c.alpha, ex.x_t, c.sigma, ex.eps), ex.t, ex.k});
        ref += prediction_loss(r.ns, ex, o.eps, o.delta, LossConfig{});
    }
    ref /= static_cast<double>(s.size());
    CHECK(grad_loss<float>(p, r.ns, s, LossConfig{}, nullptr) == doctest::Approx(ref).epsilon(1e-4));
}

TEST_CASE("property: uniform t visits each stage in proportion to its width") {
    const StageSchedule st = build_stage_schedule(3, StageKind::Cosine);
    const TransformStack ts = TransformStack::downsample(Shape{1, 8, 8}, 3);
    const NoiseSchedule ns = NoiseSchedule::build(st, ts.dims(), std::vector<double>(3, 1.0), RescaleMode::VP);
    const std::vector<Tensor> xs(100, Tensor(ts.shape(0), 0.1f));
    std::vector<long> counts(4, 0);
    const long n = 10000;
    for (int b = 0; b < 100; ++b) {
        Rng rng(60, 0, b);
        for (const TrainSample& s : draw_training_samples(ts, ns, xs, rng)) {
            ++counts[s.k];
            CHECK(s.eps.shape == ts.shape(s.k));
        }
    }
    for (int k = 0; k <= 3; ++k) {
        const double p = st.end(k) - st.start(k);
        CHECK(std::abs(counts[k] - n * p) <= 3 * std::sqrt(n * p * (1 - p)));
    }
}
