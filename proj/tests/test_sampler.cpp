#include <cmath>
#include <map>

#include "doctest.h"
#include "fdm/sampler.hpp"
#include "fdm/verify.hpp"
#include "test_util.hpp"

using namespace fdm;

namespace {

struct Rig {
    StageSchedule st;
    TransformStack ts;
    NoiseSchedule ns;
    DenoiserParams<float> p;
    explicit Rig(int K, RescaleMode mode = RescaleMode::VP)
        : st(build_stage_schedule(K, StageKind::Cosine)),
          ts(TransformStack::downsample(Shape{1, 16, 16}, K)),
          ns(NoiseSchedule::build(st, ts.dims(), std::vector<double>(K, 1.0), mode)),
          p(init_denoiser<float>({8, 8, false}, ts.shapes(), 3)) {}
};

}  // namespace

TEST_CASE("stage grid: equal descending steps ending exactly on the stage start") {
    const StageSchedule st = build_stage_schedule(2, StageKind::Linear);
    const auto g = stage_grid(st, 0, 0.004);
    CHECK(g.size() == 84);  // round((1/3) / 0.004) = 83 steps
    CHECK(g.front() == st.end(0));
    CHECK(g.back() == 0.0);
    for (std::size_t i = 1; i < g.size(); ++i) CHECK(g[i - 1] - g[i] == doctest::Approx((1.0 / 3.0) / 83));
    CHECK(stage_grid(st, 2, 0.5).size() == 2);  // never fewer than one step
    const auto part = stage_grid(st, 1, 0.01, 0.5);
    CHECK(part.front() == 0.5);
    CHECK(part.back() == st.start(1));
    CHECK_THROWS(stage_grid(st, 1, 0.01, 0.9));
}

TEST_CASE("sampler config validation") {
    SamplerConfig c;
    c.eta = 1.5;
    CHECK_THROWS(validate(c));
    c.eta = 0.0;
    c.dt = 0.0;
    CHECK_THROWS(validate(c));
}

TEST_CASE("generation is a function of the seed") {
    Rig r(2);
    for (double eta : {0.0, 1.0}) {
        SamplerConfig cfg{eta, 0.05, 7, ZetaMode::Drop};
        const Tensor a = generate(r.p, r.ts, r.ns, cfg);
        const Tensor b = generate(r.p, r.ts, r.ns, cfg);
        CHECK(a.shape == r.ts.shape(0));
        CHECK(a.data == b.data);
        cfg.seed = 8;
        CHECK(generate(r.p, r.ts, r.ns, cfg).data != a.data);
    }
}

TEST_CASE("lockstep batches match one-at-a-time generation") {
    Rig r(2);
    SamplerConfig cfg{1.0, 0.05, 0, ZetaMode::Average};
    const std::vector<std::uint64_t> seeds{11, 12, 13};
    const auto batch = generate_batch(r.p, r.ts, r.ns, cfg, seeds);
    for (std::size_t i = 0; i < seeds.size(); ++i) {
        cfg.seed = seeds[i];
        CHECK(test::max_abs_diff(generate(r.p, r.ts, r.ns, cfg), batch[i]) < 1e-5);
    }
}

TEST_CASE("every step is observed and stages run from K down to 0") {
    Rig r(2);
    const SamplerConfig cfg{0.0, 0.05, 1, ZetaMode::Drop};
    std::vector<int> ks;
    int boundaries = 0;
    double last_t = 2.0;
    generate(r.p, r.ts, r.ns, cfg, [&](const StepEvent& e) {
        ks.push_back(e.k);
        CHECK(e.t < last_t);
        last_t = e.t;
        CHECK(e.z->shape == r.ts.shape(e.boundary ? e.k - 1 : e.k));
        if (e.boundary) ++boundaries;
    });
    CHECK(boundaries == 2);
    CHECK(ks.front() == 2);
    CHECK(ks.back() == 0);
    CHECK(std::is_sorted(ks.rbegin(), ks.rend()));
}

TEST_CASE("property: changing only fine-stage noise leaves the coarse trajectory untouched") {
    Rig r(2);
    for (double eta : {0.0, 1.0}) {
        const SamplerConfig cfg{eta, 0.05, 0, ZetaMode::Drop};
        const std::vector<std::uint64_t> seed{21};
        FullNoise a = sample_full_noise(r.ts, 21);
        FullNoise b = a;
        for (float& v : b.mutable_complement(1)) v = -v + 0.5f;
        std::map<double, Tensor> ra, rb;
        std::vector<Tensor> fa, fb;
        auto rec = [](std::map<double, Tensor>& m) {
            return [&m](const StepEvent& e) {
                if (e.k >= 1) m[e.t] = *e.z;
            };
        };
        fa = generate_with_noise(r.p, r.ts, r.ns, cfg, {a}, seed, rec(ra));
        fb = generate_with_noise(r.p, r.ts, r.ns, cfg, {b}, seed, rec(rb));
        REQUIRE(ra.size() == rb.size());
        for (const auto& [t, z] : ra) {
            const Tensor& w = rb.at(t);
            if (z.shape == r.ts.shape(0)) {
                // The stage-1 to stage-0 crossing is where the complements enter.
                CHECK(test::max_abs_diff(z, w) > 0.0);
            } else {
                CHECK(z.data == w.data);
            }
        }
        CHECK(test::max_abs_diff(fa[0], fb[0]) > 0.0);

        // Replacing the base noise changes the coarse stage from the first step, unless eta = 1.
        const auto copy = [&](int k) { return std::vector<float>(a.complement(k).begin(), a.complement(k).end()); };
        FullNoise c(test::random_tensor(r.ts.shape(2), 22), {{}, copy(1), copy(2)}, 21);
        std::map<double, Tensor> rc;
        generate_with_noise(r.p, r.ts, r.ns, cfg, {c}, seed, rec(rc));
        if (eta < 1.0) {
            CHECK(test::max_abs_diff(rc.begin()->second, ra.begin()->second) > 0.0);
            CHECK(test::max_abs_diff(rc.rbegin()->second, ra.rbegin()->second) > 0.0);
        } else {
            // alpha(1) = 0: the ancestral step carries none of z_1 forward.
            for (const auto& [t, z] : ra) CHECK(z.data == rc.at(t).data);
        }
    }
}

TEST_CASE("with K = 0 the sampler is a plain DDIM/DDPM sampler") {
    Rig r(0);
    for (double eta : {0.0, 0.5, 1.0}) {
        const CheckResult c = check_k0_reduction(r.p, r.ts, r.ns, eta, 0.02, 5);
        INFO(c.detail);
        CHECK(c.pass);
        CHECK(c.measured <= 1e-5);
    }
}

TEST_CASE("conditional objective gradient matches finite differences") {
    Rig r(2);
    const Tensor xc = test::random_tensor(r.ts.shape(1), 30, 0.5);
    const LatentState z{test::random_tensor(r.ts.shape(1), 31), 0.6, 1};
    Tensor g;
    conditional_objective(r.p, r.ns, z, xc, 0.004, &g);
    const Tensor dir = test::random_tensor(r.ts.shape(1), 32);
    double analytic = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) analytic += static_cast<double>(g.data[i]) * dir.data[i];
    const double h = 1e-2;
    const LatentState zp{axpby(1.0, z.z, h, dir), z.t, z.k};
    const LatentState zm{axpby(1.0, z.z, -h, dir), z.t, z.k};
    const double fd = (conditional_objective(r.p, r.ns, zp, xc, 0.004, nullptr) -
                       conditional_objective(r.p, r.ns, zm, xc, 0.004, nullptr)) /
                      (2 * h);
    CHECK(fd == doctest::Approx(analytic).epsilon(2e-3));
}

TEST_CASE("conditional init never increases the objective") {
    Rig r(2);
    const Tensor xc = test::random_tensor(r.ts.shape(1), 33, 0.5);
    Rng rng(34);
    const ConditionalInit ci = conditional_init(r.p, r.ns, xc, 1, r.st.end(1), 1.0, 20, 0.004, rng);
    REQUIRE(ci.objective.size() >= 2);
    for (std::size_t i = 1; i < ci.objective.size(); ++i) CHECK(ci.objective[i] <= ci.objective[i - 1]);
    CHECK(ci.objective.back() < ci.objective.front());
    CHECK(ci.final_lambda <= 1.0);
    CHECK(ci.z.k == 1);
    CHECK(ci.z.t == r.st.end(1));
}

TEST_CASE("conditional generation") {
    Rig r(2);
    const SamplerConfig cfg{1.0, 0.05, 3, ZetaMode::Drop};
    CHECK(conditional_start_time(r.st, 0, 0.05) == r.st.end(0));
    CHECK(conditional_start_time(r.st, 2, 0.05) == doctest::Approx(stage_grid(r.st, 2, 0.05)[1]));
    CHECK_THROWS(conditional_start_time(r.st, 1, 0.05, 0.2));
    CHECK_THROWS(conditional_start_time(r.st, 3, 0.05));

    ConditionSpec c{test::random_tensor(r.ts.shape(1), 35, 0.5), 1, 0.1, 5, {}};
    ConditionalInit init;
    int first_k = -1;
    const Tensor a = conditional_generate(r.p, r.ts, r.ns, cfg, c, [&](const StepEvent& e) {
        if (first_k < 0) first_k = e.k;
    }, &init);
    CHECK(first_k == 1);
    CHECK(a.shape == r.ts.shape(0));
    CHECK(init.objective.size() == 6);
    CHECK(conditional_generate(r.p, r.ts, r.ns, cfg, c).data == a.data);
    CHECK_THROWS(conditional_generate(r.p, r.ts, r.ns, cfg, ConditionSpec{Tensor(r.ts.shape(2)), 1, 0.1, 5, {}}));

    const ConditionSpec zero{test::random_tensor(r.ts.shape(0), 36), 0, 0.1, 5, 0.0};
    CHECK(conditional_generate(r.p, r.ts, r.ns, cfg, zero).data == zero.x_c.data);
}
