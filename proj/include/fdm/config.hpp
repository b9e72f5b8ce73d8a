#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "fdm/diffusion.hpp"
#include "fdm/schedules.hpp"
#include "fdm/trainer.hpp"
#include "fdm/transforms.hpp"

namespace fdm {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
    // [transform]
    TransformKind kind = TransformKind::DS;
    int stages = 2;  // K
    int size = 32;
    int channels = 3;
    double blur_sigma_max = 15.0;
    int latent_size = 8;
    int latent_channels = 4;
    // [schedule]
    StageKind stage_kind = StageKind::Cosine;
    RescaleMode rescale = RescaleMode::VP;
    std::string gamma = "auto";  // "auto", "estimate", or comma-separated gamma_1..gamma_K
    ZetaMode zeta = ZetaMode::Drop;
    // [model]
    int model_channels = 32;
    int embed_dim = 32;
    bool zero_init_output = true;
    // [corpus]
    std::string corpus_source = "blobs,n=2048,size=32";
    std::uint64_t corpus_seed = 0;
    // [trainer]
    long steps = 5000;
    int batch = 16;
    double lr = 1e-3;
    double weight_decay = 1e-4;
    double ema_decay = 0.9999;
    bool ema_warmup = true;
    std::uint64_t seed = 0;
    LossWeighting loss_weighting = LossWeighting::Eps;
    long checkpoint_every = 1000;
    long log_every = 50;
    // [sampler]
    double eta = 1.0;
    double dt = 0.004;
    std::uint64_t sampler_seed = 0;
    int n_init = 20;
    double lambda = 0.1;
    // [output]
    std::string out_dir = "runs/default";
};

/// Every recognised "section.key" in canonical order.
std::vector<std::string> config_keys();

/// Parses INI text ("[section]" headers, "key = value" lines, '#' or ';' comments)
/// on top of the defaults. Unknown sections or keys are errors.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);

/// Sets one dotted key ("trainer.lr") from its textual value.
void apply_override(ExperimentConfig& cfg, const std::string& dotted_key, const std::string& value);
std::string get_value(const ExperimentConfig& cfg, const std::string& dotted_key);

/// Checks cross-field consistency (shapes vs K vs kind, ranges).
void validate(const ExperimentConfig& cfg);

/// Canonical INI text of every key.
std::string canonical_text(const ExperimentConfig& cfg);

/// Keys that define the trained model; sampler, output and run-length keys are excluded.
bool is_identity_key(const std::string& dotted_key);

/// FNV-1a over the canonical "key = value" lines of the identity keys.
std::uint64_t config_hash(const ExperimentConfig& cfg);

/// Human-readable "key: a -> b" lines for identity keys that differ.
std::vector<std::string> config_diff(const ExperimentConfig& a, const ExperimentConfig& b);

std::string hex64(std::uint64_t v);

}  // namespace fdm
