#include "fdm/denoiser.hpp"

#include <cmath>
#include <stdexcept>

#include "fdm/kernels.hpp"
#include "fdm/rng.hpp"

namespace fdm {

std::string adapter_key(const Shape& s) { return to_string(s); }

void embed_features(double t, int k, double* out) {
    for (int i = 0; i < 8; ++i) {
        const double ft = std::exp(-std::log(10000.0) * i / 8.0);
        const double fk = std::exp(-std::log(100.0) * i / 8.0);
        out[i] = std::sin(1000.0 * t * ft);
        out[8 + i] = std::cos(1000.0 * t * ft);
        out[16 + i] = std::sin(k * fk);
        out[24 + i] = std::cos(k * fk);
    }
}

template <typename T>
DenoiserParams<T> init_denoiser(const DenoiserConfig& cfg, std::span<const Shape> stage_shapes, std::uint64_t seed) {
    if (cfg.channels <= 0 || cfg.embed_dim <= 0) throw std::invalid_argument("denoiser widths must be positive");
    DenoiserParams<T> p;
    p.config = cfg;
    for (const Shape& s : stage_shapes) {
        if (s.height % 2 != 0 || s.width % 2 != 0) {
            throw std::invalid_argument("denoiser needs even spatial extents, stage shape " + to_string(s));
        }
        if (p.adapter_for(s) < 0) p.adapter_shapes.push_back(s);
    }
    if (p.adapter_shapes.empty()) throw std::invalid_argument("denoiser needs at least one stage shape");

    const int C = cfg.channels;
    const int E = cfg.embed_dim;
    auto& ps = p.set;
    ps.add("embed.w", {E, kEmbedFeatures});
    ps.add("embed.b", {E});
    ps.add("embed.a.w", {C, E});
    ps.add("embed.a.b", {C});
    ps.add("embed.b.w", {C, E});
    ps.add("embed.b.b", {C});
    ps.add("conv.a1.w", {C, C, 3, 3});
    ps.add("conv.a1.b", {C});
    ps.add("conv.b1.w", {C, C, 3, 3});
    ps.add("conv.b1.b", {C});
    ps.add("conv.b2.w", {C, C, 3, 3});
    ps.add("conv.b2.b", {C});
    ps.add("conv.a2.w", {C, 2 * C, 3, 3});
    ps.add("conv.a2.b", {C});
    for (const Shape& s : p.adapter_shapes) {
        const std::string key = adapter_key(s);
        ps.add("in." + key + ".w", {C, s.channels});
        ps.add("in." + key + ".b", {C});
        ps.add("out." + key + ".w", {2 * s.channels, C});
        ps.add("out." + key + ".b", {2 * s.channels});
    }

    Rng rng(seed, 0x494e4954ULL);
    for (auto& t : ps) {
        if (t.dims.size() < 2) continue;  // biases start at zero
        const bool is_out = t.name.rfind("out.", 0) == 0;
        if (is_out && cfg.zero_init_output) continue;
        std::size_t fan_in = 1;
        for (std::size_t i = 1; i < t.dims.size(); ++i) fan_in *= static_cast<std::size_t>(t.dims[i]);
        const double stdev = std::sqrt(1.0 / static_cast<double>(fan_in));
        for (T& v : t.value) v = static_cast<T>(stdev * rng.normal());
    }
    return p;
}

namespace {

// C[M x N] (+)= A[M x K] * B^T where B is [N x K].
template <typename T>
void gemm_nt(int M, int N, int K, const T* A, const T* B, T* C, bool accumulate, std::vector<T>& scratch) {
    scratch.resize(static_cast<std::size_t>(K) * N);
    kernels::transpose(N, K, B, scratch.data());
    kernels::gemm(M, N, K, A, scratch.data(), C, accumulate);
}

// C[M x N] (+)= A^T * B where A is [K x M].
template <typename T>
void gemm_tn(int M, int N, int K, const T* A, const T* B, T* C, bool accumulate, std::vector<T>& scratch) {
    scratch.resize(static_cast<std::size_t>(K) * M);
    kernels::transpose(K, M, A, scratch.data());
    kernels::gemm(M, N, K, scratch.data(), B, C, accumulate);
}

template <typename T>
void add_row_bias(int rows, std::size_t cols, const T* bias, T* x) {
#pragma omp parallel for schedule(static) if (rows * cols > (1 << 15))
    for (int r = 0; r < rows; ++r) {
        T* row = x + static_cast<std::size_t>(r) * cols;
        for (std::size_t j = 0; j < cols; ++j) row[j] += bias[r];
    }
}

template <typename T>
void add_row_sums(int rows, std::size_t cols, const T* x, T* out) {
    for (int r = 0; r < rows; ++r) {
        const T* row = x + static_cast<std::size_t>(r) * cols;
        T s = 0;
        for (std::size_t j = 0; j < cols; ++j) s += row[j];
        out[r] += s;
    }
}

// Adds v[c, b] over every (c, b) plane.
template <typename T>
void add_plane_bias(int C, int B, std::size_t plane, const T* v, T* x) {
    for (int c = 0; c < C; ++c) {
        for (int b = 0; b < B; ++b) {
            T* dst = x + (static_cast<std::size_t>(c) * B + b) * plane;
            const T add = v[static_cast<std::size_t>(c) * B + b];
            for (std::size_t i = 0; i < plane; ++i) dst[i] += add;
        }
    }
}

template <typename T>
void plane_sums(int C, int B, std::size_t plane, const T* x, T* out) {
    for (int c = 0; c < C; ++c) {
        for (int b = 0; b < B; ++b) {
            const T* src = x + (static_cast<std::size_t>(c) * B + b) * plane;
            T s = 0;
            for (std::size_t i = 0; i < plane; ++i) s += src[i];
            out[static_cast<std::size_t>(c) * B + b] = s;
        }
    }
}

template <typename T>
T* grad_of(ParamSet<T>& g, const std::string& name) {
    return g.get(name).value.data();
}

}  // namespace

template <typename T>
const std::vector<T>& DenoiserGraph<T>::forward(const DenoiserBatch<T>& in) {
    adapter_ = p_.adapter_for(in.shape);
    if (adapter_ < 0) throw std::invalid_argument("no stage adapter registered for shape " + to_string(in.shape));
    if (in.batch <= 0 || in.t.size() != static_cast<std::size_t>(in.batch) ||
        in.k.size() != static_cast<std::size_t>(in.batch) || in.x.size() != in.shape.size() * in.batch) {
        throw std::invalid_argument("denoiser batch is inconsistent");
    }
    in_ = &in;
    const int C = p_.config.channels;
    const int E = p_.config.embed_dim;
    B_ = in.batch;
    H_ = in.shape.height;
    W_ = in.shape.width;
    Cin_ = in.shape.channels;
    const std::size_t plane = static_cast<std::size_t>(H_) * W_;
    const std::size_t P = plane * B_;
    const int h = H_ / 2;
    const int w = W_ / 2;
    const std::size_t plane_h = static_cast<std::size_t>(h) * w;
    const std::size_t Ph = plane_h * B_;
    const std::string key = adapter_key(in.shape);
    const auto& ps = p_.set;

    // Embedding MLP, (features x B) layout.
    feat_.assign(static_cast<std::size_t>(kEmbedFeatures) * B_, T(0));
    for (int b = 0; b < B_; ++b) {
        double f[kEmbedFeatures];
        embed_features(in.t[b], in.k[b], f);
        for (int i = 0; i < kEmbedFeatures; ++i) feat_[static_cast<std::size_t>(i) * B_ + b] = static_cast<T>(f[i]);
    }
    pre_e_.resize(static_cast<std::size_t>(E) * B_);
    kernels::gemm(E, B_, kEmbedFeatures, ps.get("embed.w").value.data(), feat_.data(), pre_e_.data(), false);
    add_row_bias(E, B_, ps.get("embed.b").value.data(), pre_e_.data());
    hid_.resize(pre_e_.size());
    kernels::silu(hid_.size(), pre_e_.data(), hid_.data());
    pa_.resize(static_cast<std::size_t>(C) * B_);
    pb_.resize(static_cast<std::size_t>(C) * B_);
    kernels::gemm(C, B_, E, ps.get("embed.a.w").value.data(), hid_.data(), pa_.data(), false);
    add_row_bias(C, B_, ps.get("embed.a.b").value.data(), pa_.data());
    kernels::gemm(C, B_, E, ps.get("embed.b.w").value.data(), hid_.data(), pb_.data(), false);
    add_row_bias(C, B_, ps.get("embed.b.b").value.data(), pb_.data());

    // Input adapter.
    h0_.resize(static_cast<std::size_t>(C) * P);
    kernels::gemm(C, static_cast<int>(P), Cin_, ps.get("in." + key + ".w").value.data(), in.x.data(), h0_.data(), false);
    add_row_bias(C, P, ps.get("in." + key + ".b").value.data(), h0_.data());
    add_plane_bias(C, B_, plane, pa_.data(), h0_.data());

    // Full-resolution level.
    col_a1_.resize(static_cast<std::size_t>(9) * C * P);
    kernels::im2col3x3(C, B_, H_, W_, h0_.data(), col_a1_.data());
    a1_.resize(static_cast<std::size_t>(C) * P);
    kernels::gemm(C, static_cast<int>(P), 9 * C, ps.get("conv.a1.w").value.data(), col_a1_.data(), a1_.data(), false);
    add_row_bias(C, P, ps.get("conv.a1.b").value.data(), a1_.data());
    h1_.resize(a1_.size());
    kernels::silu(h1_.size(), a1_.data(), h1_.data());

    // Half-resolution level.
    pool_.resize(static_cast<std::size_t>(C) * Ph);
    kernels::avgpool2(C * B_, H_, W_, h1_.data(), pool_.data());
    col_b1_.resize(static_cast<std::size_t>(9) * C * Ph);
    kernels::im2col3x3(C, B_, h, w, pool_.data(), col_b1_.data());
    b1_.resize(static_cast<std::size_t>(C) * Ph);
    kernels::gemm(C, static_cast<int>(Ph), 9 * C, ps.get("conv.b1.w").value.data(), col_b1_.data(), b1_.data(), false);
    add_row_bias(C, Ph, ps.get("conv.b1.b").value.data(), b1_.data());
    add_plane_bias(C, B_, plane_h, pb_.data(), b1_.data());
    g1_.resize(b1_.size());
    kernels::silu(g1_.size(), b1_.data(), g1_.data());
    col_b2_.resize(col_b1_.size());
    kernels::im2col3x3(C, B_, h, w, g1_.data(), col_b2_.data());
    b2_.resize(b1_.size());
    kernels::gemm(C, static_cast<int>(Ph), 9 * C, ps.get("conv.b2.w").value.data(), col_b2_.data(), b2_.data(), false);
    add_row_bias(C, Ph, ps.get("conv.b2.b").value.data(), b2_.data());
    g2_.resize(b2_.size());
    kernels::silu(g2_.size(), b2_.data(), g2_.data());

    // Back up, concatenated with the skip.
    cat_.resize(static_cast<std::size_t>(2) * C * P);
    std::copy(h1_.begin(), h1_.end(), cat_.begin());
    kernels::upsample_nearest2(C * B_, h, w, g2_.data(), cat_.data() + static_cast<std::size_t>(C) * P);
    col_a2_.resize(static_cast<std::size_t>(18) * C * P);
    kernels::im2col3x3(2 * C, B_, H_, W_, cat_.data(), col_a2_.data());
    a2_.resize(static_cast<std::size_t>(C) * P);
    kernels::gemm(C, static_cast<int>(P), 18 * C, ps.get("conv.a2.w").value.data(), col_a2_.data(), a2_.data(), false);
    add_row_bias(C, P, ps.get("conv.a2.b").value.data(), a2_.data());
    h2_.resize(a2_.size());
    kernels::silu(h2_.size(), a2_.data(), h2_.data());

    // Output adapter.
    out_.resize(static_cast<std::size_t>(2) * Cin_ * P);
    kernels::gemm(2 * Cin_, static_cast<int>(P), C, ps.get("out." + key + ".w").value.data(), h2_.data(), out_.data(),
                  false);
    add_row_bias(2 * Cin_, P, ps.get("out." + key + ".b").value.data(), out_.data());
    return out_;
}

template <typename T>
void DenoiserGraph<T>::backward(const std::vector<T>& grad_out, ParamSet<T>& g, std::vector<T>* grad_in) {
    if (in_ == nullptr) throw std::logic_error("backward called before forward");
    if (grad_out.size() != out_.size()) throw std::invalid_argument("gradient size does not match the output");
    const int C = p_.config.channels;
    const int E = p_.config.embed_dim;
    const std::size_t plane = static_cast<std::size_t>(H_) * W_;
    const int P = static_cast<int>(plane * B_);
    const int h = H_ / 2;
    const int w = W_ / 2;
    const std::size_t plane_h = static_cast<std::size_t>(h) * w;
    const int Ph = static_cast<int>(plane_h * B_);
    const std::string key = adapter_key(in_->shape);
    const auto& ps = p_.set;
    std::vector<T> scratch;

    // Output adapter.
    gemm_nt(2 * Cin_, C, P, grad_out.data(), h2_.data(), grad_of(g, "out." + key + ".w"), true, scratch);
    add_row_sums(2 * Cin_, P, grad_out.data(), grad_of(g, "out." + key + ".b"));
    std::vector<T> dh2(static_cast<std::size_t>(C) * P);
    gemm_tn(C, P, 2 * Cin_, ps.get("out." + key + ".w").value.data(), grad_out.data(), dh2.data(), false, scratch);

    // conv a2.
    std::vector<T> da2(dh2.size());
    kernels::silu_backward(da2.size(), a2_.data(), dh2.data(), da2.data());
    dh2 = {};
    gemm_nt(C, 18 * C, P, da2.data(), col_a2_.data(), grad_of(g, "conv.a2.w"), true, scratch);
    add_row_sums(C, P, da2.data(), grad_of(g, "conv.a2.b"));
    std::vector<T> dcol(static_cast<std::size_t>(18) * C * P);
    gemm_tn(18 * C, P, C, ps.get("conv.a2.w").value.data(), da2.data(), dcol.data(), false, scratch);
    std::vector<T> dcat(static_cast<std::size_t>(2) * C * P);
    kernels::col2im3x3(2 * C, B_, H_, W_, dcol.data(), dcat.data());

    // Half-resolution branch.
    std::vector<T> dg2(static_cast<std::size_t>(C) * Ph);
    kernels::upsample_nearest2_backward(C * B_, h, w, dcat.data() + static_cast<std::size_t>(C) * P, dg2.data());
    std::vector<T> db2(dg2.size());
    kernels::silu_backward(db2.size(), b2_.data(), dg2.data(), db2.data());
    gemm_nt(C, 9 * C, Ph, db2.data(), col_b2_.data(), grad_of(g, "conv.b2.w"), true, scratch);
    add_row_sums(C, Ph, db2.data(), grad_of(g, "conv.b2.b"));
    dcol.resize(static_cast<std::size_t>(9) * C * Ph);
    gemm_tn(9 * C, Ph, C, ps.get("conv.b2.w").value.data(), db2.data(), dcol.data(), false, scratch);
    std::vector<T> dg1(dg2.size());
    kernels::col2im3x3(C, B_, h, w, dcol.data(), dg1.data());
    std::vector<T> db1(dg1.size());
    kernels::silu_backward(db1.size(), b1_.data(), dg1.data(), db1.data());
    gemm_nt(C, 9 * C, Ph, db1.data(), col_b1_.data(), grad_of(g, "conv.b1.w"), true, scratch);
    add_row_sums(C, Ph, db1.data(), grad_of(g, "conv.b1.b"));
    std::vector<T> dpb(static_cast<std::size_t>(C) * B_);
    plane_sums(C, B_, plane_h, db1.data(), dpb.data());
    gemm_tn(9 * C, Ph, C, ps.get("conv.b1.w").value.data(), db1.data(), dcol.data(), false, scratch);
    std::vector<T> dpool(dg1.size());
    kernels::col2im3x3(C, B_, h, w, dcol.data(), dpool.data());

    // Full-resolution level: skip gradient plus pooled gradient.
    std::vector<T> dh1(static_cast<std::size_t>(C) * P);
    kernels::avgpool2_backward(C * B_, H_, W_, dpool.data(), dh1.data());
    for (std::size_t i = 0; i < dh1.size(); ++i) dh1[i] += dcat[i];
    dcat = {};
    std::vector<T> da1(dh1.size());
    kernels::silu_backward(da1.size(), a1_.data(), dh1.data(), da1.data());
    gemm_nt(C, 9 * C, P, da1.data(), col_a1_.data(), grad_of(g, "conv.a1.w"), true, scratch);
    add_row_sums(C, P, da1.data(), grad_of(g, "conv.a1.b"));
    dcol.resize(static_cast<std::size_t>(9) * C * P);
    gemm_tn(9 * C, P, C, ps.get("conv.a1.w").value.data(), da1.data(), dcol.data(), false, scratch);
    std::vector<T> dh0(static_cast<std::size_t>(C) * P);
    kernels::col2im3x3(C, B_, H_, W_, dcol.data(), dh0.data());

    // Input adapter.
    gemm_nt(C, Cin_, P, dh0.data(), in_->x.data(), grad_of(g, "in." + key + ".w"), true, scratch);
    add_row_sums(C, P, dh0.data(), grad_of(g, "in." + key + ".b"));
    std::vector<T> dpa(static_cast<std::size_t>(C) * B_);
    plane_sums(C, B_, plane, dh0.data(), dpa.data());
    if (grad_in != nullptr) {
        grad_in->resize(in_->x.size());
        gemm_tn(Cin_, P, C, ps.get("in." + key + ".w").value.data(), dh0.data(), grad_in->data(), false, scratch);
    }

    // Embedding MLP.
    gemm_nt(C, E, B_, dpa.data(), hid_.data(), grad_of(g, "embed.a.w"), true, scratch);
    add_row_sums(C, B_, dpa.data(), grad_of(g, "embed.a.b"));
    gemm_nt(C, E, B_, dpb.data(), hid_.data(), grad_of(g, "embed.b.w"), true, scratch);
    add_row_sums(C, B_, dpb.data(), grad_of(g, "embed.b.b"));
    std::vector<T> dhid(static_cast<std::size_t>(E) * B_);
    gemm_tn(E, B_, C, ps.get("embed.a.w").value.data(), dpa.data(), dhid.data(), false, scratch);
    gemm_tn(E, B_, C, ps.get("embed.b.w").value.data(), dpb.data(), dhid.data(), true, scratch);
    std::vector<T> dpre(dhid.size());
    kernels::silu_backward(dpre.size(), pre_e_.data(), dhid.data(), dpre.data());
    gemm_nt(E, kEmbedFeatures, B_, dpre.data(), feat_.data(), grad_of(g, "embed.w"), true, scratch);
    add_row_sums(E, B_, dpre.data(), grad_of(g, "embed.b"));
}

template class DenoiserGraph<float>;
template class DenoiserGraph<double>;
template DenoiserParams<float> init_denoiser<float>(const DenoiserConfig&, std::span<const Shape>, std::uint64_t);
template DenoiserParams<double> init_denoiser<double>(const DenoiserConfig&, std::span<const Shape>, std::uint64_t);

namespace {

constexpr int kPredictChunk = 32;

void predict_group(const DenoiserParams<float>& p, std::span<const LatentState> zs, const std::vector<std::size_t>& idx,
                   std::vector<DenoiserOutput>& out) {
    const Shape s = zs[idx.front()].z.shape;
    const std::size_t plane = s.plane();
    DenoiserGraph<float> graph(p);
    for (std::size_t start = 0; start < idx.size(); start += kPredictChunk) {
        const int B = static_cast<int>(std::min<std::size_t>(kPredictChunk, idx.size() - start));
        DenoiserBatch<float> batch;
        batch.shape = s;
        batch.batch = B;
        batch.x.resize(s.size() * B);
        for (int b = 0; b < B; ++b) {
            const LatentState& z = zs[idx[start + b]];
            batch.t.push_back(z.t);
            batch.k.push_back(z.k);
            for (int c = 0; c < s.channels; ++c) {
                std::copy(z.z.plane(c), z.z.plane(c) + plane,
                          batch.x.data() + (static_cast<std::size_t>(c) * B + b) * plane);
            }
        }
        const std::vector<float>& o = graph.forward(batch);
        for (int b = 0; b < B; ++b) {
            DenoiserOutput& r = out[idx[start + b]];
            r.eps = Tensor(s);
            r.delta = Tensor(s);
            for (int c = 0; c < s.channels; ++c) {
                const float* e = o.data() + (static_cast<std::size_t>(c) * B + b) * plane;
                const float* d = o.data() + (static_cast<std::size_t>(c + s.channels) * B + b) * plane;
                std::copy(e, e + plane, r.eps.plane(c));
                std::copy(d, d + plane, r.delta.plane(c));
            }
        }
    }
}

}  // namespace

std::vector<DenoiserOutput> predict_batch(const DenoiserParams<float>& p, std::span<const LatentState> zs) {
    std::vector<DenoiserOutput> out(zs.size());
    std::vector<std::vector<std::size_t>> groups(p.adapter_shapes.size());
    for (std::size_t i = 0; i < zs.size(); ++i) {
        const int a = p.adapter_for(zs[i].z.shape);
        if (a < 0) throw std::invalid_argument("no stage adapter registered for shape " + to_string(zs[i].z.shape));
        groups[a].push_back(i);
    }
    for (const auto& g : groups) {
        if (!g.empty()) predict_group(p, zs, g, out);
    }
    return out;
}

DenoiserOutput predict(const DenoiserParams<float>& p, const LatentState& z) {
    return std::move(predict_batch(p, std::span<const LatentState>(&z, 1)).front());
}

AlphaSigma inversion_coeffs(const NoiseSchedule& ns, double t, int k, double dt) {
    AlphaSigma c = ns.eval_at(t, k);
    if (c.alpha < 1e-6) c = ns.eval_at(std::max(ns.stages().start(k), 1.0 - dt / 2.0), k);
    if (c.alpha < 1e-6) throw std::invalid_argument("x_from_eps: alpha vanishes even after clamping t");
    return c;
}

Tensor x_from_eps(const NoiseSchedule& ns, const LatentState& z, const Tensor& eps, double dt) {
    require_shape(eps, z.z.shape, "x_from_eps noise");
    const AlphaSigma c = inversion_coeffs(ns, z.t, z.k, dt);
    Tensor x(z.z.shape);
    for (std::size_t i = 0; i < x.size(); ++i) {
        x.data[i] = static_cast<float>((static_cast<double>(z.z.data[i]) - c.sigma * eps.data[i]) / c.alpha);
    }
    return x;
}

}  // namespace fdm
