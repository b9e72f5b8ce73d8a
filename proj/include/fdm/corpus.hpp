#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fdm/tensor.hpp"

namespace fdm {

/// Gaussian blobs with per-blob colour gradients over a soft background, in [-1, 1].
std::vector<Tensor> synthetic_blobs(int n, int size, int channels, std::uint64_t seed);

/// Every *.png under `dir` (sorted by name), centre-cropped to square,
/// bilinearly resized to size x size and scaled to [-1, 1].
std::vector<Tensor> load_png_dir(const std::string& dir, int size, int channels);

/// "blobs,n=2048,size=32" or "dir:<path>".
std::vector<Tensor> load_corpus(const std::string& source, int size, int channels, std::uint64_t seed);

/// FNV-1a over shapes and float bit patterns.
std::uint64_t corpus_hash(std::span<const Tensor> corpus);

/// Channel statistics of pixel values pooled over all images and positions.
struct ChannelStats {
    int channels = 0;
    std::vector<double> mean;
    std::vector<double> cov;  // channels x channels, row-major

    [[nodiscard]] std::vector<double> stddev() const;
};

ChannelStats channel_stats(std::span<const Tensor> images);

/// Bilinear resize of each channel (half-pixel centres, edge clamped).
Tensor resize_bilinear(const Tensor& x, int height, int width);

}  // namespace fdm
