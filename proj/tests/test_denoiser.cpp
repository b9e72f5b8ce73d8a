#include <cmath>

#include "doctest.h"
#include "fdm/denoiser.hpp"
#include "test_util.hpp"

using namespace fdm;

namespace {

template <typename T>
DenoiserBatch<T> make_batch(const Shape& s, int B, std::uint64_t seed) {
    DenoiserBatch<T> b;
    b.shape = s;
    b.batch = B;
    b.x = test::random_vec<T>(s.size() * B, seed);
    Rng rng(seed, 1);
    for (int i = 0; i < B; ++i) {
        b.t.push_back(rng.uniform());
        b.k.push_back(i % 2);
    }
    return b;
}

template <typename T>
double dot(const std::vector<T>& a, const std::vector<T>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
    return s;
}

}  // namespace

TEST_CASE("adapters are registered once per distinct stage shape") {
    const std::vector<Shape> shapes{{3, 8, 8}, {3, 4, 4}, {3, 4, 4}, {2, 4, 4}};
    const auto p = init_denoiser<float>({8, 8, true}, shapes, 1);
    CHECK(p.adapter_shapes.size() == 3);
    CHECK(p.adapter_for(Shape{3, 4, 4}) == 1);
    CHECK(p.adapter_for(Shape{1, 4, 4}) == -1);
    CHECK(p.set.contains("out." + adapter_key(Shape{2, 4, 4}) + ".w"));
    CHECK_THROWS(init_denoiser<float>({8, 8, true}, std::vector<Shape>{{1, 5, 5}}, 1));
    CHECK_THROWS(init_denoiser<float>({0, 8, true}, shapes, 1));
}

TEST_CASE("zero-initialised output layer predicts zeros at every stage") {
    const std::vector<Shape> shapes{{3, 8, 8}, {3, 4, 4}};
    const auto p = init_denoiser<float>({8, 8, true}, shapes, 2);
    for (int k = 0; k < 2; ++k) {
        const LatentState z{test::random_tensor(shapes[k], 3 + k), 0.4, k};
        const DenoiserOutput o = predict(p, z);
        CHECK(o.eps.shape == shapes[k]);
        CHECK(o.delta.shape == shapes[k]);
        CHECK(mean_square(o.eps) == 0.0);
        CHECK(mean_square(o.delta) == 0.0);
    }
    CHECK_THROWS(predict(p, LatentState{Tensor(Shape{3, 2, 2}), 0.1, 2}));
}

TEST_CASE("time/stage features") {
    double f[kEmbedFeatures];
    embed_features(0.0, 0, f);
    for (int i = 0; i < 8; ++i) {
        CHECK(f[i] == 0.0);
        CHECK(f[8 + i] == 1.0);
        CHECK(f[16 + i] == 0.0);
        CHECK(f[24 + i] == 1.0);
    }
    embed_features(0.25, 2, f);
    CHECK(f[0] == doctest::Approx(std::sin(250.0)));
    CHECK(f[9] == doctest::Approx(std::cos(250.0 * std::exp(-std::log(10000.0) / 8.0))));
    CHECK(f[17] == doctest::Approx(std::sin(2.0 * std::exp(-std::log(100.0) / 8.0))));
}

TEST_CASE("backward matches central differences in double precision") {
    const std::vector<Shape> shapes{{2, 4, 4}, {2, 2, 2}};
    auto p = init_denoiser<double>({4, 6, false}, shapes, 5);
    // Nonzero biases so their gradients are exercised away from zero.
    Rng brng(6);
    for (auto& t : p.set) {
        if (t.dims.size() == 1) {
            for (double& v : t.value) v = 0.3 * brng.normal();
        }
    }
    for (int si = 0; si < 2; ++si) {
        const DenoiserBatch<double> in = make_batch<double>(shapes[si], 3, 7 + si);
        DenoiserGraph<double> g(p);
        const std::vector<double> out = g.forward(in);
        const std::vector<double> w = test::random_vec<double>(out.size(), 9 + si);
        ParamSet<double> grads = p.set.zeros_like();
        std::vector<double> gin;
        g.backward(w, grads, &gin);
        REQUIRE(gin.size() == in.x.size());

        auto loss = [&](const DenoiserParams<double>& q, const DenoiserBatch<double>& b) {
            DenoiserGraph<double> gg(q);
            return dot(gg.forward(b), w);
        };
        const double h = 1e-6;
        double worst = 0.0;
        Rng pick(11 + si);
        for (std::size_t ti = 0; ti < p.set.size(); ++ti) {
            if (p.set[ti].name.find(adapter_key(shapes[1 - si])) != std::string::npos) {
                // The other stage's adapter takes no part in this forward pass.
                for (double v : grads[ti].value) CHECK(v == 0.0);
                continue;
            }
            for (int r = 0; r < 4; ++r) {
                const std::size_t j = pick.index(p.set[ti].value.size());
                auto q = p;
                q.set[ti].value[j] += h;
                const double lp = loss(q, in);
                q.set[ti].value[j] -= 2 * h;
                const double lm = loss(q, in);
                const double fd = (lp - lm) / (2 * h);
                const double an = grads[ti].value[j];
                worst = std::max(worst, std::abs(fd - an) / std::max(1e-4, std::abs(fd) + std::abs(an)));
            }
        }
        for (int r = 0; r < 8; ++r) {
            const std::size_t j = pick.index(in.x.size());
            auto b = in;
            b.x[j] += h;
            const double lp = loss(p, b);
            b.x[j] -= 2 * h;
            const double lm = loss(p, b);
            const double fd = (lp - lm) / (2 * h);
            worst = std::max(worst, std::abs(fd - gin[j]) / std::max(1e-4, std::abs(fd) + std::abs(gin[j])));
        }
        CHECK(worst < 1e-3);
    }
}

TEST_CASE("float graph agrees with the double graph") {
    const std::vector<Shape> shapes{{3, 8, 8}};
    const auto pd = init_denoiser<double>({8, 8, false}, shapes, 12);
    const auto pf = pd.cast<float>();
    const auto bd = make_batch<double>(shapes[0], 2, 13);
    DenoiserBatch<float> bf{bd.shape, bd.batch, {}, bd.t, bd.k};
    for (double v : bd.x) bf.x.push_back(static_cast<float>(v));
    DenoiserGraph<double> gd(pd);
    DenoiserGraph<float> gf(pf);
    const auto od = gd.forward(bd);
    const auto of = gf.forward(bf);
    double scale = 0.0;
    for (double v : od) scale = std::max(scale, std::abs(v));
    CHECK(test::max_abs_diff(of, od) < 1e-4 * std::max(1.0, scale));
}

TEST_CASE("predict_batch equals per-latent predict, across mixed shapes") {
    const std::vector<Shape> shapes{{1, 8, 8}, {1, 4, 4}};
    const auto p = init_denoiser<float>({8, 8, false}, shapes, 14);
    std::vector<LatentState> zs;
    for (int i = 0; i < 40; ++i) {
        const int k = i % 3 == 0 ? 1 : 0;
        zs.push_back({test::random_tensor(shapes[k], 100 + i), 0.01 * i, k});
    }
    const auto batched = predict_batch(p, zs);
    for (std::size_t i = 0; i < zs.size(); ++i) {
        const DenoiserOutput one = predict(p, zs[i]);
        CHECK(test::max_abs_diff(one.eps, batched[i].eps) < 1e-5);
        CHECK(test::max_abs_diff(one.delta, batched[i].delta) < 1e-5);
    }
}

TEST_CASE("x_from_eps inverts the forward map and clamps near t = 1") {
    const StageSchedule st = build_stage_schedule(1, StageKind::Linear);
    const NoiseSchedule ns = NoiseSchedule::build(st, std::vector<std::size_t>{16, 4}, std::vector<double>{1.0}, RescaleMode::VP);
    const Tensor x = test::random_tensor(Shape{1, 2, 2}, 15);
    const Tensor e = test::random_tensor(Shape{1, 2, 2}, 16);
    const AlphaSigma c = ns.eval_at(0.8, 1);
    const LatentState z{axpby(c.alpha, x, c.sigma, e), 0.8, 1};
    CHECK(test::max_abs_diff(x_from_eps(ns, z, e), x) < 1e-5);
    const AlphaSigma at1 = inversion_coeffs(ns, 1.0, 1, 0.004);
    const AlphaSigma ref = ns.eval_at(0.998, 1);
    CHECK(at1.alpha == doctest::Approx(ref.alpha));
    CHECK(at1.sigma == doctest::Approx(ref.sigma));
    CHECK(inversion_coeffs(ns, 0.7, 1).alpha == doctest::Approx(ns.eval_at(0.7, 1).alpha));
}

TEST_CASE("property: each stage's adapters only affect that stage") {
    const std::vector<Shape> shapes{{3, 8, 8}, {3, 4, 4}};
    auto p = init_denoiser<float>({8, 8, false}, shapes, 17);
    const LatentState z0{test::random_tensor(shapes[0], 18), 0.2, 0};
    const LatentState z1{test::random_tensor(shapes[1], 19), 0.7, 1};
    const DenoiserOutput before0 = predict(p, z0);
    const DenoiserOutput before1 = predict(p, z1);
    for (const char* dir : {"in.", "out."}) {
        for (float& v : p.set.get(std::string(dir) + adapter_key(shapes[1]) + ".w").value) v += 0.5f;
    }
    const DenoiserOutput after0 = predict(p, z0);
    CHECK(after0.eps.data == before0.eps.data);
    CHECK(after0.delta.data == before0.delta.data);
    CHECK(test::max_abs_diff(predict(p, z1).eps, before1.eps) > 1e-3);
}
