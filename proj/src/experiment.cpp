#include "fdm/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "json.hpp"

#include "fdm/corpus.hpp"
#include "fdm/sampler.hpp"

namespace fdm {

namespace fs = std::filesystem;

TransformStack build_transform_stack(const ExperimentConfig& cfg, const StageSchedule& stages,
                                     std::shared_ptr<const LinearAutoencoder> ae) {
    const Shape base{cfg.channels, cfg.size, cfg.size};
    switch (cfg.kind) {
        case TransformKind::DS: return TransformStack::downsample(base, cfg.stages);
        case TransformKind::BlurU: return TransformStack::blur_upsample(base, cfg.stages);
        case TransformKind::BlurG: return TransformStack::gaussian_blur(base, stages, cfg.blur_sigma_max);
        case TransformKind::LinearAE:
            if (!ae) throw std::logic_error("LINEAR_AE stack requested without a fitted autoencoder");
            return TransformStack::linear_autoencoder(std::move(ae));
    }
    throw std::logic_error("unhandled transform kind");
}

std::vector<double> resolve_gammas(const ExperimentConfig& cfg, const TransformStack& ts, std::span<const Tensor> corpus) {
    std::vector<double> g;
    const bool estimate = cfg.gamma == "estimate" || (cfg.gamma == "auto" && cfg.kind == TransformKind::LinearAE);
    if (estimate) {
        for (int k = 1; k <= ts.K(); ++k) g.push_back(estimate_gamma(ts, corpus, k));
    } else if (cfg.gamma == "auto") {
        g.assign(ts.K(), 1.0);
    } else {
        std::istringstream is(cfg.gamma);
        std::string part;
        while (std::getline(is, part, ',')) g.push_back(std::stod(part));
    }
    for (double& v : g) v = static_cast<float>(v);
    return g;
}

namespace {

Experiment assemble(const ExperimentConfig& cfg, std::shared_ptr<const LinearAutoencoder> ae,
                    std::span<const Tensor> corpus, const std::vector<double>* stored_gammas) {
    validate(cfg);
    StageSchedule stages = build_stage_schedule(cfg.stages, cfg.stage_kind);
    TransformStack ts = build_transform_stack(cfg, stages, std::move(ae));
    std::vector<double> gammas = stored_gammas != nullptr ? *stored_gammas : resolve_gammas(cfg, ts, corpus);
    if (static_cast<int>(gammas.size()) != cfg.stages) throw ConfigError("stored gammas do not match transform.stages");
    const std::vector<std::size_t> dims = ts.dims();
    NoiseSchedule ns = NoiseSchedule::build(stages, dims, gammas, cfg.rescale);
    return Experiment{cfg, std::move(stages), std::move(ts), std::move(gammas), std::move(ns)};
}

std::string fixed(double v, int prec) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(prec) << v;
    return os.str();
}

}  // namespace

Experiment build_experiment(const ExperimentConfig& cfg, std::span<const Tensor> corpus) {
    std::shared_ptr<const LinearAutoencoder> ae;
    if (cfg.kind == TransformKind::LinearAE) {
        if (corpus.empty()) throw ConfigError("LINEAR_AE needs a corpus to fit the autoencoder");
        ae = std::make_shared<LinearAutoencoder>(LinearAutoencoder::fit(
            corpus, Shape{cfg.latent_channels, cfg.latent_size, cfg.latent_size}, cfg.corpus_seed));
    }
    return assemble(cfg, std::move(ae), corpus, nullptr);
}

Experiment experiment_from_checkpoint(const ExperimentConfig& cfg, const Checkpoint& ck) {
    return assemble(cfg, ck.autoencoder, {}, &ck.gammas);
}

std::vector<Tensor> load_experiment_corpus(const ExperimentConfig& cfg) {
    return load_corpus(cfg.corpus_source, cfg.size, cfg.channels, cfg.corpus_seed);
}

std::optional<Checkpoint> load_compatible_checkpoint(const ExperimentConfig& cfg, const std::string& path,
                                                     std::ostream& err) {
    Checkpoint ck = load_checkpoint(path);
    if (ck.config_hash != config_hash(cfg)) {
        err << "checkpoint " << path << " was trained with a different configuration (hash " << hex64(ck.config_hash)
            << ", current " << hex64(config_hash(cfg)) << ")\n";
        try {
            for (const std::string& d : config_diff(parse_config(ck.config_text), cfg)) err << "  " << d << "\n";
        } catch (const ConfigError&) {
            err << "  (stored configuration could not be parsed)\n";
        }
        return std::nullopt;
    }
    return ck;
}

int cmd_train(const ExperimentConfig& cfg, bool resume, std::ostream& out, std::ostream& err) {
    validate(cfg);
    const std::vector<Tensor> corpus = load_experiment_corpus(cfg);
    if (corpus.empty()) {
        err << "corpus is empty\n";
        return 2;
    }
    const fs::path dir(cfg.out_dir);
    const std::string latest = (dir / "latest.fdmc").string();
    const std::string log_path = (dir / "train_log.csv").string();

    std::optional<Experiment> ex;
    std::optional<TrainState> st;
    std::string log = "step,loss,wall_time\n";
    if (resume && fs::exists(latest)) {
        std::optional<Checkpoint> ck = load_compatible_checkpoint(cfg, latest, err);
        if (!ck) return 2;
        ex = experiment_from_checkpoint(cfg, *ck);
        DenoiserParams<float> p{DenoiserConfig{cfg.model_channels, cfg.embed_dim, cfg.zero_init_output},
                                ck->adapter_shapes, std::move(ck->params)};
        st = TrainState{std::move(p), std::move(ck->ema), std::move(ck->adam_m), std::move(ck->adam_v), ck->step,
                        ck->skipped};
        if (fs::exists(log_path)) {
            // Keep log rows up to the checkpointed step.
            std::istringstream is(read_file(log_path));
            std::string line;
            std::getline(is, line);
            while (std::getline(is, line)) {
                if (!line.empty() && std::stol(line.substr(0, line.find(','))) <= st->step) log += line + "\n";
            }
        }
        out << "resuming from step " << st->step << "\n";
    } else {
        ex = build_experiment(cfg, corpus);
        DenoiserConfig dc{cfg.model_channels, cfg.embed_dim, cfg.zero_init_output};
        st = init_train_state(init_denoiser<float>(dc, ex->ts.shapes(), cfg.seed));
    }
    out << "corpus " << corpus.size() << " images, hash " << hex64(corpus_hash(corpus)) << "; parameters "
        << st->params.set.count() << "; gammas";
    for (double g : ex->gammas) out << " " << g;
    out << "\n";

    TrainConfig tc;
    tc.batch = cfg.batch;
    tc.adam.lr = cfg.lr;
    tc.adam.weight_decay = cfg.weight_decay;
    tc.ema_decay = cfg.ema_decay;
    tc.ema_warmup = cfg.ema_warmup;
    tc.seed = cfg.seed;
    tc.loss.weighting = cfg.loss_weighting;

    auto save = [&]() {
        Checkpoint ck;
        ck.config_hash = config_hash(cfg);
        ck.config_text = canonical_text(cfg);
        ck.step = st->step;
        ck.skipped = st->skipped;
        ck.adapter_shapes = st->params.adapter_shapes;
        ck.params = st->params.set;
        ck.ema = st->ema;
        ck.adam_m = st->m;
        ck.adam_v = st->v;
        ck.gammas = ex->gammas;
        ck.autoencoder = ex->ts.autoencoder_ptr();
        const std::string bytes = encode_checkpoint(ck);
        char name[32];
        std::snprintf(name, sizeof name, "ckpt_%06ld.fdmc", st->step);
        atomic_write((dir / name).string(), bytes);
        atomic_write(latest, bytes);
        atomic_write(log_path, log);
    };

    const auto t0 = std::chrono::steady_clock::now();
    double window = 0.0;
    long window_n = 0;
    while (st->step < cfg.steps) {
        const std::vector<std::size_t> idx = batch_indices(corpus.size(), cfg.batch, cfg.seed, st->step + 1);
        std::vector<Tensor> batch;
        batch.reserve(idx.size());
        for (std::size_t i : idx) batch.push_back(corpus[i]);
        const StepResult r = train_step(*st, ex->ts, ex->ns, batch, tc);
        const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        log += std::to_string(st->step) + "," + (r.skipped ? std::string("nan") : fixed(r.loss, 6)) + "," +
               fixed(wall, 3) + "\n";
        if (r.skipped) {
            err << "step " << st->step << ": non-finite loss or gradient, update skipped\n";
        } else {
            window += r.loss;
            ++window_n;
        }
        if (st->step % cfg.log_every == 0) {
            out << "step " << st->step << " loss " << fixed(window_n > 0 ? window / window_n : 0.0, 5) << " ("
                << fixed(wall, 1) << " s)" << std::endl;
            window = 0.0;
            window_n = 0;
        }
        if (cfg.checkpoint_every > 0 && st->step % cfg.checkpoint_every == 0) save();
    }
    save();
    out << "wrote " << latest << "\n";
    return 0;
}

namespace {

void write_sample(const fs::path& dir, const std::string& stem, const Tensor& x, const nlohmann::json& meta) {
    if (x.shape.channels == 1 || x.shape.channels == 3) write_png((dir / (stem + ".png")).string(), x);
    write_tensor((dir / (stem + ".fdmt")).string(), x);
    atomic_write((dir / (stem + ".json")).string(), meta.dump(2) + "\n");
}

int grid_cols(std::size_t n) {
    int c = 1;
    while (static_cast<std::size_t>(c) * c < n) ++c;
    return c;
}

}  // namespace

int cmd_sample(const ExperimentConfig& cfg, const std::string& checkpoint, int n, std::ostream& out, std::ostream& err) {
    validate(cfg);
    if (n <= 0) {
        err << "sample count must be positive\n";
        return 2;
    }
    std::optional<Checkpoint> ck = load_compatible_checkpoint(cfg, checkpoint, err);
    if (!ck) return 2;
    const Experiment ex = experiment_from_checkpoint(cfg, *ck);
    const DenoiserParams<float> p{DenoiserConfig{cfg.model_channels, cfg.embed_dim, cfg.zero_init_output},
                                  ck->adapter_shapes, std::move(ck->ema)};
    SamplerConfig sc{cfg.eta, cfg.dt, cfg.sampler_seed, cfg.zeta};
    const fs::path dir = fs::path(cfg.out_dir) / "samples";
    std::vector<Tensor> all;
    constexpr int kChunk = 64;
    for (int start = 0; start < n; start += kChunk) {
        std::vector<std::uint64_t> seeds;
        for (int i = start; i < std::min(n, start + kChunk); ++i) seeds.push_back(cfg.sampler_seed + static_cast<std::uint64_t>(i));
        std::vector<Tensor> xs = generate_batch(p, ex.ts, ex.ns, sc, seeds);
        for (std::size_t j = 0; j < xs.size(); ++j) {
            const int idx = start + static_cast<int>(j);
            nlohmann::json meta = {{"index", idx},
                                   {"seed", seeds[j]},
                                   {"eta", cfg.eta},
                                   {"dt", cfg.dt},
                                   {"zeta", to_string(cfg.zeta)},
                                   {"config_hash", hex64(config_hash(cfg))},
                                   {"checkpoint_step", ck->step}};
            char stem[32];
            std::snprintf(stem, sizeof stem, "sample_%04d", idx);
            write_sample(dir, stem, xs[j], meta);
            all.push_back(std::move(xs[j]));
        }
        out << "generated " << all.size() << "/" << n << "\n";
    }
    if (n > 1 && (all.front().shape.channels == 1 || all.front().shape.channels == 3)) {
        write_png((dir / "grid.png").string(), contact_sheet(all, grid_cols(all.size())));
    }
    out << "wrote " << n << " samples to " << dir.string() << "\n";
    return 0;
}

int cmd_condgen(const ExperimentConfig& cfg, const std::string& checkpoint, const std::string& input, int k_c, int n,
                std::optional<double> T, std::ostream& out, std::ostream& err) {
    validate(cfg);
    std::optional<Checkpoint> ck = load_compatible_checkpoint(cfg, checkpoint, err);
    if (!ck) return 2;
    const Experiment ex = experiment_from_checkpoint(cfg, *ck);
    if (k_c < 0 || k_c > ex.ts.K()) {
        err << "condition stage must lie in 0.." << ex.ts.K() << "\n";
        return 2;
    }
    const DenoiserParams<float> p{DenoiserConfig{cfg.model_channels, cfg.embed_dim, cfg.zero_init_output},
                                  ck->adapter_shapes, std::move(ck->ema)};
    Tensor src;
    const std::string ext = fs::path(input).extension().string();
    if (ext == ".png") {
        src = read_png(input, cfg.channels);
        if (src.shape.height != cfg.size || src.shape.width != cfg.size) src = resize_bilinear(src, cfg.size, cfg.size);
    } else {
        src = read_tensor(input);
    }
    Tensor x_c;
    if (src.shape == ex.ts.shape(k_c)) {
        x_c = src;
    } else if (src.shape == ex.ts.shape(0)) {
        x_c = ex.ts.forward_to_stage(src, k_c);
    } else {
        err << "condition input has shape " << to_string(src.shape) << ", expected " << to_string(ex.ts.shape(k_c))
            << " or a stage-0 image\n";
        return 2;
    }
    const fs::path dir = fs::path(cfg.out_dir) / "condgen";
    std::vector<Tensor> all;
    for (int i = 0; i < n; ++i) {
        SamplerConfig sc{cfg.eta, cfg.dt, cfg.sampler_seed + static_cast<std::uint64_t>(i), cfg.zeta};
        ConditionSpec cond{x_c, k_c, cfg.lambda, cfg.n_init, T};
        ConditionalInit init;
        Tensor x = conditional_generate(p, ex.ts, ex.ns, sc, cond, {}, &init);
        const double mse = mean_square_diff(ex.ts.forward_to_stage(x, k_c), x_c);
        nlohmann::json meta = {{"index", i},
                               {"seed", sc.seed},
                               {"eta", cfg.eta},
                               {"dt", cfg.dt},
                               {"condition_stage", k_c},
                               {"T", conditional_start_time(ex.stages, k_c, cfg.dt, T)},
                               {"init_objective", init.objective},
                               {"redegraded_mse", mse},
                               {"config_hash", hex64(config_hash(cfg))},
                               {"checkpoint_step", ck->step}};
        char stem[32];
        std::snprintf(stem, sizeof stem, "cond_%04d", i);
        write_sample(dir, stem, x, meta);
        out << stem << ": re-degraded MSE " << mse << "\n";
        all.push_back(std::move(x));
    }
    if (n > 1 && (all.front().shape.channels == 1 || all.front().shape.channels == 3)) {
        write_png((dir / "grid.png").string(), contact_sheet(all, grid_cols(all.size())));
    }
    return 0;
}

int cmd_estimate_gamma(const ExperimentConfig& cfg, std::ostream& out, std::ostream& err) {
    validate(cfg);
    const std::vector<Tensor> corpus = load_experiment_corpus(cfg);
    if (corpus.empty()) {
        err << "corpus is empty\n";
        return 2;
    }
    ExperimentConfig c = cfg;
    c.gamma = "estimate";
    const Experiment ex = build_experiment(c, corpus);
    out << "stage,gamma,d\n";
    for (int k = 1; k <= ex.ts.K(); ++k) {
        out << k << "," << std::setprecision(6) << ex.gammas[k - 1] << "," << ex.ts.ratio(k) << "\n";
    }
    return 0;
}

}  // namespace fdm
