#include "fdm/transforms.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "fdm/dct.hpp"
#include "fdm/kernels.hpp"

namespace fdm {

TransformKind parse_transform_kind(const std::string& s) {
    if (s == "DS" || s == "ds") return TransformKind::DS;
    if (s == "BLUR_U" || s == "blur_u") return TransformKind::BlurU;
    if (s == "BLUR_G" || s == "blur_g") return TransformKind::BlurG;
    if (s == "LINEAR_AE" || s == "linear_ae") return TransformKind::LinearAE;
    throw std::invalid_argument("unknown transform kind '" + s + "' (expected DS|BLUR_U|BLUR_G|LINEAR_AE)");
}

std::string to_string(TransformKind k) {
    switch (k) {
        case TransformKind::DS: return "DS";
        case TransformKind::BlurU: return "BLUR_U";
        case TransformKind::BlurG: return "BLUR_G";
        case TransformKind::LinearAE: return "LINEAR_AE";
    }
    return "?";
}

double blur_sigma(const StageSchedule& stages, int k, double sigma_max) {
    if (k < 0 || k > stages.K + 1) throw std::out_of_range("blur_sigma: stage out of range");
    const double s = std::sin(std::numbers::pi / 2.0 * stages.tau[k]);
    return sigma_max * s * s;
}

namespace {

Tensor downsample2(const Tensor& x) {
    if (x.shape.height % 2 != 0 || x.shape.width % 2 != 0) {
        throw std::invalid_argument("downsample needs even spatial extents, got " + to_string(x.shape));
    }
    Tensor out(Shape{x.shape.channels, x.shape.height / 2, x.shape.width / 2});
    kernels::avgpool2(x.shape.channels, x.shape.height, x.shape.width, x.data.data(), out.data.data());
    return out;
}

Tensor upsample2(const Tensor& x) {
    Tensor out(Shape{x.shape.channels, x.shape.height * 2, x.shape.width * 2});
    kernels::upsample_bilinear2(x.shape.channels, x.shape.height, x.shape.width, x.data.data(), out.data.data());
    return out;
}

void check_even_chain(Shape base, int K) {
    if (K < 0) throw std::invalid_argument("stage count must be non-negative");
    const int f = 1 << K;
    if (base.height % f != 0 || base.width % f != 0) {
        throw std::invalid_argument("image extent " + to_string(base) + " cannot be halved " + std::to_string(K) +
                                    " times");
    }
}

}  // namespace

TransformStack TransformStack::downsample(Shape base, int K) {
    check_even_chain(base, K);
    TransformStack ts;
    ts.kind_ = TransformKind::DS;
    for (int k = 0; k <= K; ++k) {
        ts.shapes_.push_back(Shape{base.channels, base.height >> k, base.width >> k});
        ts.downscale_.push_back(1 << k);
    }
    ts.blur_sigmas_.assign(K + 1, 0.0);
    ts.build_partitions();
    return ts;
}

TransformStack TransformStack::blur_upsample(Shape base, int K) {
    check_even_chain(base, K);
    TransformStack ts;
    ts.kind_ = TransformKind::BlurU;
    ts.shapes_.assign(K + 1, base);
    ts.downscale_.assign(K + 1, 1);
    ts.blur_sigmas_.assign(K + 1, 0.0);
    ts.build_partitions();
    return ts;
}

TransformStack TransformStack::gaussian_blur(Shape base, const StageSchedule& stages, double sigma_max) {
    TransformStack ts;
    ts.kind_ = TransformKind::BlurG;
    ts.shapes_.assign(stages.K + 1, base);
    ts.downscale_.assign(stages.K + 1, 1);
    for (int k = 0; k <= stages.K; ++k) ts.blur_sigmas_.push_back(blur_sigma(stages, k, sigma_max));
    ts.build_partitions();
    return ts;
}

TransformStack TransformStack::linear_autoencoder(std::shared_ptr<const LinearAutoencoder> ae) {
    if (!ae) throw std::invalid_argument("linear autoencoder stack needs a fitted model");
    TransformStack ts;
    ts.kind_ = TransformKind::LinearAE;
    ts.shapes_ = {ae->input_shape(), ae->latent_shape()};
    const int scale = ae->input_shape().height / std::max(1, ae->latent_shape().height);
    ts.downscale_ = {1, std::max(1, scale)};
    ts.blur_sigmas_ = {0.0, 0.0};
    ts.ae_ = std::move(ae);
    ts.build_partitions();
    return ts;
}

void TransformStack::build_partitions() {
    partitions_.assign(shapes_.size(), BlockPartition{});
    for (int k = 1; k <= K(); ++k) {
        const Shape& fine = shapes_[k - 1];
        const Shape& coarse = shapes_[k];
        BlockPartition p;
        p.coarse = coarse.size();
        if (fine.size() % coarse.size() != 0) {
            throw std::invalid_argument("stage dimensions are not an integer multiple at boundary " + std::to_string(k));
        }
        p.d = static_cast<int>(fine.size() / coarse.size());
        p.fine_index.resize(p.fine_size());
        if (kind_ == TransformKind::DS) {
            std::size_t j = 0;
            for (int c = 0; c < coarse.channels; ++c) {
                for (int y = 0; y < coarse.height; ++y) {
                    for (int x = 0; x < coarse.width; ++x, ++j) {
                        auto idx = [&](int yy, int xx) {
                            return static_cast<std::uint32_t>((static_cast<std::size_t>(c) * fine.height + yy) * fine.width + xx);
                        };
                        p.fine_index[4 * j + 0] = idx(2 * y, 2 * x);  // kept under DROP
                        p.fine_index[4 * j + 1] = idx(2 * y, 2 * x + 1);
                        p.fine_index[4 * j + 2] = idx(2 * y + 1, 2 * x);
                        p.fine_index[4 * j + 3] = idx(2 * y + 1, 2 * x + 1);
                    }
                }
            }
        } else {
            // Contiguous flat grouping (identity when d = 1).
            for (std::size_t i = 0; i < p.fine_index.size(); ++i) p.fine_index[i] = static_cast<std::uint32_t>(i);
        }
        partitions_[k] = std::move(p);
    }
}

std::vector<std::size_t> TransformStack::dims() const {
    std::vector<std::size_t> d;
    for (const Shape& s : shapes_) d.push_back(s.size());
    return d;
}

double TransformStack::ratio(int k) const {
    if (k < 1 || k > K()) throw std::out_of_range("ratio: boundary index out of range");
    return static_cast<double>(dim(k - 1)) / static_cast<double>(dim(k));
}

Tensor TransformStack::forward_to_stage(const Tensor& x, int k) const {
    require_shape(x, shapes_.front(), "forward_to_stage input");
    if (k < 0 || k > K()) throw std::out_of_range("forward_to_stage: stage out of range");
    switch (kind_) {
        case TransformKind::DS: {
            Tensor y = x;
            for (int i = 0; i < k; ++i) y = downsample2(y);
            return y;
        }
        case TransformKind::BlurU: {
            Tensor y = x;
            for (int i = 0; i < k; ++i) y = downsample2(y);
            for (int i = 0; i < k; ++i) y = upsample2(y);
            return y;
        }
        case TransformKind::BlurG: return gaussian_blur_freq(x, blur_sigmas_[k]);
        case TransformKind::LinearAE: return k == 0 ? x : ae_->encode(x);
    }
    return x;
}

Tensor TransformStack::step_forward(const Tensor& prev, int k) const {
    if (k < 1 || k > K()) throw std::out_of_range("step_forward: stage out of range");
    require_shape(prev, shapes_[k - 1], "step_forward input");
    switch (kind_) {
        case TransformKind::DS: return downsample2(prev);
        case TransformKind::BlurG: {
            const double a = blur_sigmas_[k - 1];
            const double b = blur_sigmas_[k];
            return gaussian_blur_freq(prev, std::sqrt(std::max(0.0, b * b - a * a)));
        }
        case TransformKind::LinearAE: return ae_->encode(prev);
        case TransformKind::BlurU: break;
    }
    throw std::logic_error("BLUR_U stages have no single-step forward map");
}

Tensor TransformStack::g_map(const Tensor& xk, int k) const {
    if (k < 1 || k > K()) throw std::out_of_range("g_map: stage 0 has no predecessor");
    require_shape(xk, shapes_[k], "g_map input");
    switch (kind_) {
        case TransformKind::DS: return upsample2(xk);
        case TransformKind::BlurU:
        case TransformKind::BlurG: return xk;
        case TransformKind::LinearAE: return ae_->decode(xk);
    }
    return xk;
}

std::vector<Tensor> TransformStack::pyramid(const Tensor& x) const {
    std::vector<Tensor> out;
    out.reserve(shapes_.size());
    out.push_back(x);
    for (int k = 1; k <= K(); ++k) {
        if (kind_ == TransformKind::BlurU || kind_ == TransformKind::BlurG) {
            out.push_back(forward_to_stage(x, k));
        } else {
            out.push_back(step_forward(out.back(), k));
        }
    }
    return out;
}

Tensor TransformStack::approximation(std::span<const Tensor> pyr, int k) const {
    if (k < K()) return g_map(pyr[k + 1], k + 1);
    return pyr[k];
}

PatchSpec TransformStack::patch_spec() const {
    PatchSpec p;
    p.stage_downscale = downscale_;
    p.extent = downscale_.back();
    return p;
}

StageTarget interpolate_stage(const Tensor& xk, const Tensor& xhat, const StageSchedule& stages, double t, int k) {
    require_shape(xhat, xk.shape, "interpolation endpoints");
    const double t0 = stages.start(k);
    const double t1 = stages.end(k);
    StageTarget out;
    out.stage = k;
    if (k == stages.K) {
        out.x_t = xk;
        out.delta = Tensor(xk.shape);
        return out;
    }
    const double w = (t - t0) / (t1 - t0);  // weight on xhat
    out.x_t = Tensor(xk.shape);
    out.delta = Tensor(xk.shape);
    for (std::size_t i = 0; i < xk.size(); ++i) {
        const double v = w * xhat.data[i] + (1.0 - w) * xk.data[i];
        out.x_t.data[i] = static_cast<float>(v);
        out.delta.data[i] = static_cast<float>(xk.data[i] - v);
    }
    return out;
}

StageTarget interpolated_target_at(const TransformStack& ts, const StageSchedule& stages, const Tensor& x, double t,
                                   int k) {
    if (k < 0 || k > stages.K || stages.K != ts.K()) throw std::out_of_range("interpolated_target: bad stage");
    const Tensor xk = ts.forward_to_stage(x, k);
    if (k == stages.K) return interpolate_stage(xk, xk, stages, t, k);
    const Tensor next = k + 1 <= ts.K() && ts.kind() != TransformKind::BlurU ? ts.step_forward(xk, k + 1)
                                                                             : ts.forward_to_stage(x, k + 1);
    return interpolate_stage(xk, ts.g_map(next, k + 1), stages, t, k);
}

StageTarget interpolated_target(const TransformStack& ts, const StageSchedule& stages, const Tensor& x, double t) {
    return interpolated_target_at(ts, stages, x, t, stages.stage_of(t));
}

double estimate_gamma(const TransformStack& ts, std::span<const Tensor> dataset, int k) {
    if (dataset.empty()) throw std::invalid_argument("estimate_gamma: empty dataset");
    if (k < 1 || k > ts.K()) throw std::out_of_range("estimate_gamma: stage must be in 1..K");
    double num = 0.0;
    double den = 0.0;
    for (const Tensor& x : dataset) {
        const Tensor xk = ts.forward_to_stage(x, k);
        num += mean_square(ts.g_map(xk, k));
        den += mean_square(xk);
    }
    if (den == 0.0) throw std::invalid_argument("estimate_gamma: stage signal has zero power");
    return num / den;
}

// --- tensor helpers ---------------------------------------------------------

Tensor axpby(double a, const Tensor& x, double b, const Tensor& y) {
    require_shape(y, x.shape, "axpby");
    Tensor out(x.shape);
    for (std::size_t i = 0; i < x.size(); ++i) out.data[i] = static_cast<float>(a * x.data[i] + b * y.data[i]);
    return out;
}

Tensor scaled(const Tensor& x, double a) {
    Tensor out(x.shape);
    for (std::size_t i = 0; i < x.size(); ++i) out.data[i] = static_cast<float>(a * x.data[i]);
    return out;
}

double mean_square(const Tensor& x) {
    double s = 0.0;
    for (float v : x.data) s += static_cast<double>(v) * v;
    return x.data.empty() ? 0.0 : s / static_cast<double>(x.size());
}

double mean_square_diff(const Tensor& a, const Tensor& b) {
    require_shape(b, a.shape, "mean_square_diff");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a.data[i]) - b.data[i];
        s += d * d;
    }
    return a.data.empty() ? 0.0 : s / static_cast<double>(a.size());
}

}  // namespace fdm
