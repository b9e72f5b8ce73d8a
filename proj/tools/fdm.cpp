#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "fdm/config.hpp"
#include "fdm/experiment.hpp"
#include "fdm/verify.hpp"

namespace {

// Turns leftover "--section.key=value" / "--section.key value" arguments into overrides.
void apply_overrides(fdm::ExperimentConfig& cfg, const std::vector<std::string>& extra) {
    for (std::size_t i = 0; i < extra.size(); ++i) {
        std::string a = extra[i];
        if (a.rfind("--", 0) != 0) throw fdm::ConfigError("unexpected argument '" + a + "'");
        a = a.substr(2);
        std::string key;
        std::string value;
        const auto eq = a.find('=');
        if (eq != std::string::npos) {
            key = a.substr(0, eq);
            value = a.substr(eq + 1);
        } else {
            if (i + 1 >= extra.size()) throw fdm::ConfigError("override --" + a + " needs a value");
            key = a;
            value = extra[++i];
        }
        if (key.find('.') == std::string::npos) throw fdm::ConfigError("unknown option --" + key);
        fdm::apply_override(cfg, key, value);
    }
}

std::pair<int, double> parse_corruption(const std::string& s) {
    const auto colon = s.find(':');
    if (colon == std::string::npos) throw fdm::ConfigError("--corrupt-rescale expects k:factor");
    return {std::stoi(s.substr(0, colon)), std::stod(s.substr(colon + 1))};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-stage signal-transformed diffusion models"};
    app.require_subcommand(1);
    std::string config_path;
    app.add_option("-c,--config", config_path, "INI configuration file")->check(CLI::ExistingFile);

    auto* train = app.add_subcommand("train", "Train a denoiser");
    bool resume = false;
    train->add_flag("--resume", resume, "Continue from <output.dir>/latest.fdmc");

    auto* sample = app.add_subcommand("sample", "Generate unconditional samples");
    std::string checkpoint;
    int n = 1;
    sample->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
    sample->add_option("-n", n, "Number of samples");

    auto* condgen = app.add_subcommand("condgen", "Generate from a degraded condition");
    std::string input;
    int k_c = 1;
    std::optional<double> T;
    condgen->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
    condgen->add_option("--input", input, "Condition image (.png) or tensor (.fdmt)")->required();
    condgen->add_option("--stage", k_c, "Stage index of the condition");
    condgen->add_option("-n", n, "Number of samples");
    condgen->add_option("--T", T, "Start time override");

    auto* verify = app.add_subcommand("verify", "Check schedule, process and boundary invariants");
    std::string curves;
    std::string corrupt;
    fdm::VerifyOptions vopt;
    verify->add_option("--curves", curves, "Also write alpha/sigma curves as CSV");
    verify->add_option("--corrupt-rescale", corrupt, "Fault injection: multiply r_k by f (k:f)");
    verify->add_option("--draws", vopt.draws, "Monte Carlo draws");
    verify->add_option("--seed", vopt.seed, "Seed for the Monte Carlo checks");

    auto* gamma = app.add_subcommand("estimate-gamma", "Estimate per-boundary signal power ratios");

    for (auto* sub : {train, sample, condgen, verify, gamma}) {
        sub->add_option("-c,--config", config_path, "INI configuration file")->check(CLI::ExistingFile);
        sub->allow_extras();
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    fdm::ExperimentConfig cfg;
    try {
        if (!config_path.empty()) cfg = fdm::load_config(config_path);
        for (auto* sub : app.get_subcommands()) apply_overrides(cfg, sub->remaining());
        fdm::validate(cfg);
        if (!corrupt.empty()) vopt.corrupt_rescale = parse_corruption(corrupt);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }

    try {
        if (train->parsed()) return fdm::cmd_train(cfg, resume, std::cout, std::cerr);
        if (sample->parsed()) return fdm::cmd_sample(cfg, checkpoint, n, std::cout, std::cerr);
        if (condgen->parsed()) return fdm::cmd_condgen(cfg, checkpoint, input, k_c, n, T, std::cout, std::cerr);
        if (gamma->parsed()) return fdm::cmd_estimate_gamma(cfg, std::cout, std::cerr);
        if (verify->parsed()) {
            const std::vector<fdm::CheckResult> res = fdm::run_verify(cfg, vopt);
            std::cout << fdm::report_json(cfg, res);
            bool ok = true;
            for (const auto& r : res) {
                std::cerr << (r.pass ? "PASS " : "FAIL ") << r.name << " measured=" << r.measured
                          << " threshold=" << r.threshold << "\n";
                ok = ok && r.pass;
            }
            if (!curves.empty()) {
                const fdm::Experiment ex = fdm::build_experiment(
                    cfg, cfg.kind == fdm::TransformKind::LinearAE ? fdm::load_experiment_corpus(cfg)
                                                                  : std::vector<fdm::Tensor>{});
                std::ofstream(curves) << fdm::curves_csv(ex.ns, 1001);
            }
            return ok ? 0 : 1;
        }
    } catch (const fdm::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const fdm::FormatError& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
