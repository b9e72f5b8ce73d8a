#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fdm/params.hpp"
#include "fdm/tensor.hpp"
#include "fdm/transforms.hpp"

namespace fdm {

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Writes `bytes` to `path` through a temporary file and a rename.
void atomic_write(const std::string& path, const std::string& bytes);
std::string read_file(const std::string& path);

/// Raw tensor: "FDMT", u32 version, u32 rank, u64 dims[rank], f32 data (little-endian, row-major).
std::string encode_tensor(const Tensor& t);
Tensor decode_tensor(const std::string& bytes);
void write_tensor(const std::string& path, const Tensor& t);
Tensor read_tensor(const std::string& path);

/// 8-bit PNG of a 1- or 3-channel tensor, mapping [-1, 1] to [0, 255] with clamping.
std::string encode_png(const Tensor& t);
void write_png(const std::string& path, const Tensor& t);
/// Reads a PNG as `channels` (1 or 3) channels in [-1, 1].
Tensor read_png(const std::string& path, int channels);

/// Tiles equally shaped images into a grid with `pad` pixels of -1 between them.
Tensor contact_sheet(std::span<const Tensor> images, int cols, int pad = 2);

struct Checkpoint {
    std::uint64_t config_hash = 0;
    std::string config_text;
    long step = 0;
    long skipped = 0;
    std::vector<Shape> adapter_shapes;
    ParamSet<float> params;
    ParamSet<float> ema;
    ParamSet<float> adam_m;
    ParamSet<float> adam_v;
    std::vector<double> gammas;
    std::shared_ptr<const LinearAutoencoder> autoencoder;
};

std::string encode_checkpoint(const Checkpoint& c);
Checkpoint decode_checkpoint(const std::string& bytes);
void save_checkpoint(const std::string& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace fdm
