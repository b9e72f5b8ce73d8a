#include "fdm/config.hpp"

#include <charconv>
#include <cstdio>
#include <functional>
#include <iomanip>
#include <sstream>

#include "fdm/io.hpp"

namespace fdm {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

template <typename V>
V parse_number(const std::string& key, const std::string& v) {
    V out{};
    const char* b = v.data();
    const char* e = v.data() + v.size();
    const auto res = std::from_chars(b, e, out);
    if (res.ec != std::errc() || res.ptr != e) throw ConfigError("invalid value '" + v + "' for " + key);
    return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("invalid boolean '" + v + "' for " + key);
}

std::string fmt_double(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

struct Field {
    std::string key;
    bool identity;
    std::function<void(ExperimentConfig&, const std::string&)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

template <typename V>
Field num(const std::string& key, bool id, V ExperimentConfig::*m) {
    return {key, id, [key, m](ExperimentConfig& c, const std::string& v) { c.*m = parse_number<V>(key, v); },
            [m](const ExperimentConfig& c) {
                if constexpr (std::is_floating_point_v<V>) {
                    return fmt_double(c.*m);
                } else {
                    return std::to_string(c.*m);
                }
            }};
}

Field flag(const std::string& key, bool id, bool ExperimentConfig::*m) {
    return {key, id, [key, m](ExperimentConfig& c, const std::string& v) { c.*m = parse_bool(key, v); },
            [m](const ExperimentConfig& c) { return std::string(c.*m ? "true" : "false"); }};
}

Field text(const std::string& key, bool id, std::string ExperimentConfig::*m) {
    return {key, id, [m](ExperimentConfig& c, const std::string& v) { c.*m = v; },
            [m](const ExperimentConfig& c) { return c.*m; }};
}

template <typename E>
Field enumeration(const std::string& key, bool id, E ExperimentConfig::*m, E (*parse)(const std::string&)) {
    return {key, id,
            [key, m, parse](ExperimentConfig& c, const std::string& v) {
                try {
                    c.*m = parse(v);
                } catch (const std::invalid_argument& e) {
                    throw ConfigError(key + ": " + e.what());
                }
            },
            [m](const ExperimentConfig& c) { return to_string(c.*m); }};
}

const std::vector<Field>& fields() {
    static const std::vector<Field> f = {
        enumeration<TransformKind>("transform.kind", true, &ExperimentConfig::kind, &parse_transform_kind),
        num<int>("transform.stages", true, &ExperimentConfig::stages),
        num<int>("transform.size", true, &ExperimentConfig::size),
        num<int>("transform.channels", true, &ExperimentConfig::channels),
        num<double>("transform.blur_sigma_max", true, &ExperimentConfig::blur_sigma_max),
        num<int>("transform.latent_size", true, &ExperimentConfig::latent_size),
        num<int>("transform.latent_channels", true, &ExperimentConfig::latent_channels),
        enumeration<StageKind>("schedule.stage_kind", true, &ExperimentConfig::stage_kind, &parse_stage_kind),
        enumeration<RescaleMode>("schedule.rescale", true, &ExperimentConfig::rescale, &parse_rescale_mode),
        text("schedule.gamma", true, &ExperimentConfig::gamma),
        enumeration<ZetaMode>("schedule.zeta", false, &ExperimentConfig::zeta, &parse_zeta_mode),
        num<int>("model.channels", true, &ExperimentConfig::model_channels),
        num<int>("model.embed_dim", true, &ExperimentConfig::embed_dim),
        flag("model.zero_init_output", true, &ExperimentConfig::zero_init_output),
        text("corpus.source", true, &ExperimentConfig::corpus_source),
        num<std::uint64_t>("corpus.seed", true, &ExperimentConfig::corpus_seed),
        num<long>("trainer.steps", false, &ExperimentConfig::steps),
        num<int>("trainer.batch", true, &ExperimentConfig::batch),
        num<double>("trainer.lr", true, &ExperimentConfig::lr),
        num<double>("trainer.weight_decay", true, &ExperimentConfig::weight_decay),
        num<double>("trainer.ema_decay", true, &ExperimentConfig::ema_decay),
        flag("trainer.ema_warmup", true, &ExperimentConfig::ema_warmup),
        num<std::uint64_t>("trainer.seed", true, &ExperimentConfig::seed),
        enumeration<LossWeighting>("trainer.loss_weighting", true, &ExperimentConfig::loss_weighting,
                                   &parse_loss_weighting),
        num<long>("trainer.checkpoint_every", false, &ExperimentConfig::checkpoint_every),
        num<long>("trainer.log_every", false, &ExperimentConfig::log_every),
        num<double>("sampler.eta", false, &ExperimentConfig::eta),
        num<double>("sampler.dt", false, &ExperimentConfig::dt),
        num<std::uint64_t>("sampler.seed", false, &ExperimentConfig::sampler_seed),
        num<int>("sampler.n_init", false, &ExperimentConfig::n_init),
        num<double>("sampler.lambda", false, &ExperimentConfig::lambda),
        text("output.dir", false, &ExperimentConfig::out_dir),
    };
    return f;
}

const Field& field(const std::string& key) {
    for (const Field& f : fields()) {
        if (f.key == key) return f;
    }
    throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

std::vector<std::string> config_keys() {
    std::vector<std::string> out;
    for (const Field& f : fields()) out.push_back(f.key);
    return out;
}

void apply_override(ExperimentConfig& cfg, const std::string& dotted_key, const std::string& value) {
    field(dotted_key).set(cfg, trim(value));
}

std::string get_value(const ExperimentConfig& cfg, const std::string& dotted_key) { return field(dotted_key).get(cfg); }

ExperimentConfig parse_config(const std::string& text) {
    ExperimentConfig cfg;
    std::istringstream is(text);
    std::string line;
    std::string section;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find_first_of("#;");
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError("line " + std::to_string(lineno) + ": malformed section header");
            section = trim(line.substr(1, line.size() - 2));
            bool known = false;
            for (const Field& f : fields()) known = known || f.key.rfind(section + ".", 0) == 0;
            if (!known) throw ConfigError("line " + std::to_string(lineno) + ": unknown section [" + section + "]");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
        if (section.empty()) throw ConfigError("line " + std::to_string(lineno) + ": key outside any section");
        const std::string key = section + "." + trim(line.substr(0, eq));
        try {
            apply_override(cfg, key, line.substr(eq + 1));
        } catch (const ConfigError& e) {
            throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::string text;
    try {
        text = read_file(path);
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
    return parse_config(text);
}

void validate(const ExperimentConfig& c) {
    auto fail = [](const std::string& m) { throw ConfigError(m); };
    if (c.stages < 0) fail("transform.stages must be >= 0");
    if (c.size <= 0 || c.channels <= 0) fail("transform.size and transform.channels must be positive");
    if (c.kind == TransformKind::DS || c.kind == TransformKind::BlurU) {
        const int f = 1 << (c.stages + 1);  // every stage must stay even for the trunk's pooling
        if (c.size % f != 0) {
            fail("transform.size " + std::to_string(c.size) + " cannot be halved " + std::to_string(c.stages) +
                 " times and still pool once more");
        }
    }
    if (c.kind == TransformKind::LinearAE) {
        if (c.stages != 1) fail("LINEAR_AE needs transform.stages = 1");
        if (c.latent_size <= 0 || c.latent_channels <= 0 || c.latent_size % 2 != 0) {
            fail("latent size must be positive and even, latent channels positive");
        }
        const std::size_t m0 = static_cast<std::size_t>(c.channels) * c.size * c.size;
        const std::size_t m1 = static_cast<std::size_t>(c.latent_channels) * c.latent_size * c.latent_size;
        if (m1 > m0 || m0 % m1 != 0) fail("latent size must divide the image size");
    }
    if (c.size % 2 != 0) fail("transform.size must be even");
    if (c.blur_sigma_max < 0.0) fail("transform.blur_sigma_max must be >= 0");
    if (c.model_channels <= 0 || c.embed_dim <= 0) fail("model widths must be positive");
    if (c.steps < 0 || c.batch <= 0) fail("trainer.steps >= 0 and trainer.batch > 0 required");
    if (!(c.lr > 0.0) || c.weight_decay < 0.0) fail("trainer.lr must be > 0 and weight_decay >= 0");
    if (!(c.ema_decay >= 0.0 && c.ema_decay <= 1.0)) fail("trainer.ema_decay must lie in [0, 1]");
    if (c.checkpoint_every < 0 || c.log_every <= 0) fail("trainer.checkpoint_every >= 0, log_every > 0 required");
    if (!(c.eta >= 0.0 && c.eta <= 1.0)) fail("sampler.eta must lie in [0, 1]");
    if (!(c.dt > 0.0 && c.dt <= 1.0)) fail("sampler.dt must lie in (0, 1]");
    if (c.n_init < 0 || !(c.lambda > 0.0)) fail("sampler.n_init >= 0 and sampler.lambda > 0 required");
    if (c.gamma != "auto" && c.gamma != "estimate") {
        std::istringstream is(c.gamma);
        std::string part;
        int n = 0;
        while (std::getline(is, part, ',')) {
            const double g = parse_number<double>("schedule.gamma", trim(part));
            if (!(g > 0.0)) fail("schedule.gamma entries must be positive");
            ++n;
        }
        if (n != c.stages) fail("schedule.gamma needs one entry per stage boundary (" + std::to_string(c.stages) + ")");
    }
}

std::string canonical_text(const ExperimentConfig& cfg) {
    std::ostringstream os;
    std::string section;
    for (const Field& f : fields()) {
        const auto dot = f.key.find('.');
        const std::string s = f.key.substr(0, dot);
        if (s != section) {
            if (!section.empty()) os << "\n";
            os << "[" << s << "]\n";
            section = s;
        }
        os << f.key.substr(dot + 1) << " = " << f.get(cfg) << "\n";
    }
    return os.str();
}

bool is_identity_key(const std::string& dotted_key) { return field(dotted_key).identity; }

std::uint64_t config_hash(const ExperimentConfig& cfg) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const Field& f : fields()) {
        if (!f.identity) continue;
        const std::string line = f.key + "=" + f.get(cfg) + "\n";
        for (unsigned char ch : line) {
            h ^= ch;
            h *= 0x100000001b3ULL;
        }
    }
    return h;
}

std::vector<std::string> config_diff(const ExperimentConfig& a, const ExperimentConfig& b) {
    std::vector<std::string> out;
    for (const Field& f : fields()) {
        if (!f.identity) continue;
        const std::string va = f.get(a);
        const std::string vb = f.get(b);
        if (va != vb) out.push_back(f.key + ": " + va + " -> " + vb);
    }
    return out;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace fdm
