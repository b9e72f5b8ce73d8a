#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fdm/schedules.hpp"
#include "fdm/tensor.hpp"

namespace fdm {

enum class TransformKind { DS, BlurU, BlurG, LinearAE };

TransformKind parse_transform_kind(const std::string& s);
std::string to_string(TransformKind k);

/// Frozen linear autoencoder: encode(x) = E (x - mean), decode(z) = E^T z + mean,
/// where E has orthonormal rows spanning the principal subspace of the fit set.
class LinearAutoencoder {
public:
    LinearAutoencoder(Shape input, Shape latent, std::vector<float> encoder, std::vector<float> mean);

    /// Principal-subspace fit by randomised subspace iteration.
    static LinearAutoencoder fit(std::span<const Tensor> data, Shape latent, std::uint64_t seed, int iterations = 12);

    [[nodiscard]] Tensor encode(const Tensor& x) const;
    [[nodiscard]] Tensor decode(const Tensor& z) const;

    [[nodiscard]] const Shape& input_shape() const { return input_; }
    [[nodiscard]] const Shape& latent_shape() const { return latent_; }
    /// Row-major (latent size) x (input size).
    [[nodiscard]] const std::vector<float>& encoder() const { return encoder_; }
    [[nodiscard]] const std::vector<float>& mean() const { return mean_; }

private:
    Shape input_;
    Shape latent_;
    std::vector<float> encoder_;
    std::vector<float> mean_;
};

/// Grouping of fine-stage indices under each coarse index at a stage boundary.
/// Group j occupies fine_index[j*d .. j*d + d); its first entry is the element
/// kept by the DROP noise operator.
struct BlockPartition {
    std::size_t coarse = 0;
    int d = 1;
    std::vector<std::uint32_t> fine_index;

    [[nodiscard]] std::size_t fine_size() const { return coarse * static_cast<std::size_t>(d); }
};

/// sigma_B(k) = sigma_max * sin^2(pi/2 * tau_k).
double blur_sigma(const StageSchedule& stages, int k, double sigma_max = 15.0);

/// The transformation sequence f_0..f_K together with the inverse maps g.
class TransformStack {
public:
    static TransformStack downsample(Shape base, int K);
    static TransformStack blur_upsample(Shape base, int K);
    static TransformStack gaussian_blur(Shape base, const StageSchedule& stages, double sigma_max = 15.0);
    static TransformStack linear_autoencoder(std::shared_ptr<const LinearAutoencoder> ae);

    [[nodiscard]] TransformKind kind() const { return kind_; }
    [[nodiscard]] int K() const { return static_cast<int>(shapes_.size()) - 1; }
    [[nodiscard]] const Shape& shape(int k) const { return shapes_.at(k); }
    [[nodiscard]] const std::vector<Shape>& shapes() const { return shapes_; }
    [[nodiscard]] std::size_t dim(int k) const { return shapes_.at(k).size(); }
    [[nodiscard]] std::vector<std::size_t> dims() const;
    /// d_k = M_{k-1} / M_k.
    [[nodiscard]] double ratio(int k) const;
    [[nodiscard]] double stage_blur_sigma(int k) const { return blur_sigmas_.at(k); }
    [[nodiscard]] const LinearAutoencoder* autoencoder() const { return ae_.get(); }
    [[nodiscard]] std::shared_ptr<const LinearAutoencoder> autoencoder_ptr() const { return ae_; }

    /// x^k = f_{0:k}(x).
    [[nodiscard]] Tensor forward_to_stage(const Tensor& x, int k) const;
    /// f_k applied to a stage-(k-1) tensor. BLUR_U stages are defined directly
    /// from the stage-0 image and have no single-step form.
    [[nodiscard]] Tensor step_forward(const Tensor& prev, int k) const;
    /// g_k: stage-k tensor to its stage-(k-1) approximation.
    [[nodiscard]] Tensor g_map(const Tensor& xk, int k) const;
    /// x^0 .. x^K.
    [[nodiscard]] std::vector<Tensor> pyramid(const Tensor& x) const;
    /// x_hat^k = g_{k+1}(x^{k+1}) for k < K, x^K otherwise.
    [[nodiscard]] Tensor approximation(std::span<const Tensor> pyramid, int k) const;

    [[nodiscard]] const BlockPartition& partition(int k) const { return partitions_.at(k); }
    /// Patch footprint that maps onto one element at the coarsest stage.
    [[nodiscard]] PatchSpec patch_spec() const;

private:
    TransformKind kind_ = TransformKind::DS;
    std::vector<Shape> shapes_;
    std::vector<double> blur_sigmas_;
    std::vector<int> downscale_;
    std::vector<BlockPartition> partitions_;  // index k: boundary between stage k-1 and k (entry 0 unused)
    std::shared_ptr<const LinearAutoencoder> ae_;

    void build_partitions();
};

struct StageTarget {
    Tensor x_t;
    Tensor delta;
    int stage = 0;
};

/// Interpolated diffusion mean x_t and degradation delta_t = x^k - x_t.
StageTarget interpolated_target(const TransformStack& ts, const StageSchedule& stages, const Tensor& x, double t);
/// Same, for an explicit stage k with t anywhere in the closed interval [tau_k, tau_{k+1}].
StageTarget interpolated_target_at(const TransformStack& ts, const StageSchedule& stages, const Tensor& x, double t,
                                   int k);
/// Interpolation from precomputed stage signal x^k and its approximation x_hat^k.
StageTarget interpolate_stage(const Tensor& xk, const Tensor& xhat, const StageSchedule& stages, double t, int k);

/// gamma_k = E[mean(x_hat^{k-1})^2] / E[mean(x^k)^2] over the dataset, x_hat^{k-1} = g_k(x^k).
double estimate_gamma(const TransformStack& ts, std::span<const Tensor> dataset, int k);

}  // namespace fdm
