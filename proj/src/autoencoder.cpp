#include <Eigen/Dense>
#include <stdexcept>

#include "fdm/rng.hpp"
#include "fdm/transforms.hpp"

namespace fdm {

LinearAutoencoder::LinearAutoencoder(Shape input, Shape latent, std::vector<float> encoder, std::vector<float> mean)
    : input_(input), latent_(latent), encoder_(std::move(encoder)), mean_(std::move(mean)) {
    if (latent_.size() == 0 || latent_.size() > input_.size()) {
        throw std::invalid_argument("latent size must be in 1..input size");
    }
    if (encoder_.size() != latent_.size() * input_.size() || mean_.size() != input_.size()) {
        throw std::invalid_argument("autoencoder parameter sizes do not match shapes");
    }
}

LinearAutoencoder LinearAutoencoder::fit(std::span<const Tensor> data, Shape latent, std::uint64_t seed,
                                         int iterations) {
    if (data.empty()) throw std::invalid_argument("autoencoder fit needs data");
    const Shape input = data.front().shape;
    const Eigen::Index n = static_cast<Eigen::Index>(data.size());
    const Eigen::Index N = static_cast<Eigen::Index>(input.size());
    const Eigen::Index L = static_cast<Eigen::Index>(latent.size());
    if (L > N) throw std::invalid_argument("latent larger than input");

    Eigen::MatrixXd X(n, N);
    for (Eigen::Index i = 0; i < n; ++i) {
        require_shape(data[i], input, "autoencoder fit sample");
        for (Eigen::Index j = 0; j < N; ++j) X(i, j) = data[i].data[j];
    }
    const Eigen::RowVectorXd mu = X.colwise().mean();
    X.rowwise() -= mu;

    // Randomised subspace iteration for the top-L right singular vectors.
    Rng rng(seed, 0x41450000ULL);
    Eigen::MatrixXd Q(N, L);
    for (Eigen::Index j = 0; j < L; ++j) {
        for (Eigen::Index i = 0; i < N; ++i) Q(i, j) = rng.normal();
    }
    for (int it = 0; it < std::max(1, iterations); ++it) {
        Eigen::MatrixXd Y = X.transpose() * (X * Q);
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(Y);
        Q = qr.householderQ() * Eigen::MatrixXd::Identity(N, L);
    }
    // Rayleigh-Ritz: rotate the basis onto principal directions, largest first.
    const Eigen::MatrixXd B = X * Q;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(B.transpose() * B);
    const Eigen::MatrixXd V = Q * eig.eigenvectors().rowwise().reverse();

    std::vector<float> enc(static_cast<std::size_t>(L * N));
    for (Eigen::Index r = 0; r < L; ++r) {
        // Sign convention: largest-magnitude entry positive, so fits are reproducible.
        Eigen::Index arg = 0;
        V.col(r).cwiseAbs().maxCoeff(&arg);
        const double sgn = V(arg, r) < 0.0 ? -1.0 : 1.0;
        for (Eigen::Index c = 0; c < N; ++c) enc[static_cast<std::size_t>(r * N + c)] = static_cast<float>(sgn * V(c, r));
    }
    std::vector<float> mean(static_cast<std::size_t>(N));
    for (Eigen::Index j = 0; j < N; ++j) mean[j] = static_cast<float>(mu(j));
    return LinearAutoencoder(input, latent, std::move(enc), std::move(mean));
}

Tensor LinearAutoencoder::encode(const Tensor& x) const {
    require_shape(x, input_, "autoencoder encode");
    const std::size_t N = input_.size();
    const std::size_t L = latent_.size();
    std::vector<double> centred(N);
    for (std::size_t j = 0; j < N; ++j) centred[j] = static_cast<double>(x.data[j]) - mean_[j];
    Tensor z(latent_);
#pragma omp parallel for schedule(static)
    for (std::size_t r = 0; r < L; ++r) {
        const float* row = encoder_.data() + r * N;
        double acc = 0.0;
        for (std::size_t j = 0; j < N; ++j) acc += row[j] * centred[j];
        z.data[r] = static_cast<float>(acc);
    }
    return z;
}

Tensor LinearAutoencoder::decode(const Tensor& z) const {
    require_shape(z, latent_, "autoencoder decode");
    const std::size_t N = input_.size();
    const std::size_t L = latent_.size();
    Tensor x(input_);
#pragma omp parallel for schedule(static)
    for (std::size_t j = 0; j < N; ++j) {
        double acc = mean_[j];
        for (std::size_t r = 0; r < L; ++r) acc += static_cast<double>(encoder_[r * N + j]) * z.data[r];
        x.data[j] = static_cast<float>(acc);
    }
    return x;
}

}  // namespace fdm
