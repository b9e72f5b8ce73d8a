#pragma once

#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fdm/config.hpp"
#include "fdm/io.hpp"
#include "fdm/trainer.hpp"

namespace fdm {

/// Everything derived from a config: stage schedule, transform stack, gammas, noise schedule.
struct Experiment {
    ExperimentConfig cfg;
    StageSchedule stages;
    TransformStack ts;
    std::vector<double> gammas;
    NoiseSchedule ns;
};

TransformStack build_transform_stack(const ExperimentConfig& cfg, const StageSchedule& stages,
                                     std::shared_ptr<const LinearAutoencoder> ae);

/// gamma_1..gamma_K per schedule.gamma: "auto" is 1 for DS and blur stacks and
/// estimated for LINEAR_AE; "estimate" always estimates; otherwise the listed values.
/// Values are rounded to float so a checkpoint reproduces them exactly.
std::vector<double> resolve_gammas(const ExperimentConfig& cfg, const TransformStack& ts, std::span<const Tensor> corpus);

/// Builds the experiment, fitting the autoencoder on the corpus when the stack needs one.
Experiment build_experiment(const ExperimentConfig& cfg, std::span<const Tensor> corpus);
/// Rebuilds the experiment from the transform state stored in a checkpoint.
Experiment experiment_from_checkpoint(const ExperimentConfig& cfg, const Checkpoint& ck);

std::vector<Tensor> load_experiment_corpus(const ExperimentConfig& cfg);

/// Returns 0 on success, 2 on a config/usage problem (diagnostics go to `err`).
int cmd_train(const ExperimentConfig& cfg, bool resume, std::ostream& out, std::ostream& err);
int cmd_sample(const ExperimentConfig& cfg, const std::string& checkpoint, int n, std::ostream& out, std::ostream& err);
int cmd_condgen(const ExperimentConfig& cfg, const std::string& checkpoint, const std::string& input, int k_c, int n,
                std::optional<double> T, std::ostream& out, std::ostream& err);
int cmd_estimate_gamma(const ExperimentConfig& cfg, std::ostream& out, std::ostream& err);

/// Loads a checkpoint and refuses (with a diff on `err`) when its config hash differs.
std::optional<Checkpoint> load_compatible_checkpoint(const ExperimentConfig& cfg, const std::string& path,
                                                     std::ostream& err);

}  // namespace fdm
