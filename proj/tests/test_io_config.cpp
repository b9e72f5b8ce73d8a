#include <algorithm>
#include <filesystem>
#include <sstream>

#include "doctest.h"
#include "fdm/corpus.hpp"
#include "fdm/experiment.hpp"
#include "fdm/io.hpp"
#include "json.hpp"
#include "test_util.hpp"

using namespace fdm;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
    const fs::path d = fs::temp_directory_path() / ("fdm_test_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

ExperimentConfig tiny_config(const fs::path& out) {
    ExperimentConfig c;
    c.size = 8;
    c.channels = 1;
    c.stages = 1;
    c.corpus_source = "blobs,n=16,size=8";
    c.model_channels = 8;
    c.embed_dim = 8;
    c.steps = 6;
    c.batch = 4;
    c.checkpoint_every = 3;
    c.log_every = 100;
    c.dt = 0.05;
    c.out_dir = out.string();
    return c;
}

}  // namespace

TEST_CASE("raw tensor round trip and format errors") {
    const Tensor t = test::random_tensor(Shape{3, 5, 7}, 1);
    const std::string b = encode_tensor(t);
    const Tensor u = decode_tensor(b);
    CHECK(u.shape == t.shape);
    CHECK(u.data == t.data);
    CHECK_THROWS_AS(decode_tensor(b.substr(0, b.size() - 1)), FormatError);
    std::string bad = b;
    bad[0] = 'X';
    CHECK_THROWS_AS(decode_tensor(bad), FormatError);
}

TEST_CASE("png round trip quantises to 8 bits") {
    const fs::path d = temp_dir("png");
    for (int c : {1, 3}) {
        Tensor t = test::random_tensor(Shape{c, 6, 9}, 2, 0.3);
        for (float& v : t.data) v = std::clamp(v, -1.0f, 1.0f);
        t.data[0] = 3.0f;  // clamped
        write_png((d / "x.png").string(), t);
        const Tensor u = read_png((d / "x.png").string(), c);
        CHECK(u.shape == t.shape);
        CHECK(u.data[0] == doctest::Approx(1.0));
        double worst = 0.0;
        for (std::size_t i = 1; i < t.size(); ++i) worst = std::max(worst, std::abs(double(u.data[i]) - t.data[i]));
        CHECK(worst <= 1.0 / 255.0 + 1e-6);
    }
    const Tensor g = read_png((d / "x.png").string(), 1);
    CHECK(g.shape == Shape{1, 6, 9});
}

TEST_CASE("contact sheet layout") {
    std::vector<Tensor> ims(5, Tensor(Shape{1, 4, 4}, 0.5f));
    const Tensor s = contact_sheet(ims, 3, 2);
    CHECK(s.shape == Shape{1, 2 * 4 + 3 * 2, 3 * 4 + 4 * 2});
    CHECK(s.data[0] == -1.0f);
    CHECK(s.at(0, 2, 2) == 0.5f);
}

TEST_CASE("checkpoint round trip keeps every field") {
    Checkpoint c;
    c.config_hash = 0x1234abcdULL;
    c.config_text = "[transform]\nkind = DS\n";
    c.step = 77;
    c.skipped = 2;
    const auto p = init_denoiser<float>({4, 4, false}, std::vector<Shape>{{1, 4, 4}, {1, 2, 2}}, 1);
    c.adapter_shapes = p.adapter_shapes;
    c.params = p.set;
    c.ema = p.set;
    c.adam_m = p.set.zeros_like();
    c.adam_v = p.set;
    c.gammas = {static_cast<double>(0.983f)};  // gammas are stored as float
    const Checkpoint d = decode_checkpoint(encode_checkpoint(c));
    CHECK(d.config_hash == c.config_hash);
    CHECK(d.config_text == c.config_text);
    CHECK(d.step == 77);
    CHECK(d.skipped == 2);
    CHECK(d.adapter_shapes == c.adapter_shapes);
    CHECK(d.gammas == c.gammas);
    REQUIRE(d.params.same_layout(c.params));
    for (std::size_t i = 0; i < c.params.size(); ++i) CHECK(d.params[i].value == c.params[i].value);
    CHECK(d.autoencoder == nullptr);
    const std::string b = encode_checkpoint(c);
    CHECK_THROWS_AS(decode_checkpoint(b.substr(0, b.size() / 2)), FormatError);
}

TEST_CASE("config parsing, overrides and validation") {
    const ExperimentConfig c = parse_config(
        "# comment\n[transform]\nkind = BLUR_G\nstages = 3\n[schedule]\nrescale = SP\n"
        "[trainer]\nlr = 5e-4 ; inline\n[sampler]\neta = 0\n");
    CHECK(c.kind == TransformKind::BlurG);
    CHECK(c.stages == 3);
    CHECK(c.rescale == RescaleMode::SP);
    CHECK(c.lr == doctest::Approx(5e-4));
    CHECK(c.eta == 0.0);
    CHECK_THROWS_AS(parse_config("[transform]\nkinds = DS\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[nowhere]\nx = 1\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[transform]\nstages = two\n"), ConfigError);

    ExperimentConfig d = c;
    apply_override(d, "trainer.batch", "8");
    CHECK(d.batch == 8);
    CHECK(get_value(d, "trainer.batch") == "8");
    CHECK_THROWS_AS(apply_override(d, "trainer.bogus", "1"), ConfigError);

    ExperimentConfig e;
    e.size = 30;  // not divisible by 2^K
    CHECK_THROWS_AS(validate(e), ConfigError);

    // Canonical text parses back to the same config.
    CHECK(canonical_text(parse_config(canonical_text(c))) == canonical_text(c));
    CHECK(config_keys().size() > 20);
}

TEST_CASE("config hash covers identity keys only") {
    const ExperimentConfig a;
    ExperimentConfig b = a;
    b.eta = 0.0;
    b.dt = 0.01;
    b.out_dir = "elsewhere";
    b.steps = 10;
    CHECK(config_hash(a) == config_hash(b));
    CHECK(config_diff(a, b).empty());
    b.lr = 2e-3;
    CHECK(config_hash(a) != config_hash(b));
    const auto diff = config_diff(a, b);
    REQUIRE(diff.size() == 1);
    CHECK(diff[0].find("trainer.lr") != std::string::npos);
    CHECK(is_identity_key("transform.kind"));
    CHECK_FALSE(is_identity_key("sampler.eta"));
    CHECK(hex64(255) == "00000000000000ff");
}

TEST_CASE("synthetic corpus is deterministic") {
    const auto a = load_corpus("blobs,n=8,size=16", 16, 3, 0);
    const auto b = synthetic_blobs(8, 16, 3, 0);
    REQUIRE(a.size() == 8);
    CHECK(corpus_hash(a) == corpus_hash(b));
    CHECK(corpus_hash(a) != corpus_hash(synthetic_blobs(8, 16, 3, 1)));
    for (const Tensor& x : a) {
        CHECK(x.shape == Shape{3, 16, 16});
        for (float v : x.data) CHECK((v >= -1.0f && v <= 1.0f));
    }
    CHECK(hex64(corpus_hash(a)) == "f5a62dd376c872bd");
    CHECK_THROWS(load_corpus("blobs,n=8,size=32", 16, 3, 0));
    CHECK_THROWS(load_corpus("cats", 16, 3, 0));
}

TEST_CASE("png directory corpus") {
    const fs::path d = temp_dir("pngdir");
    write_png((d / "b.png").string(), Tensor(Shape{3, 12, 8}, 0.0f));
    write_png((d / "a.png").string(), Tensor(Shape{3, 4, 4}, 1.0f));
    const auto c = load_corpus("dir:" + d.string(), 4, 3, 0);
    REQUIRE(c.size() == 2);
    CHECK(c[0].data[0] == doctest::Approx(1.0));
    CHECK(c[1].shape == Shape{3, 4, 4});
}

TEST_CASE("train, resume, refuse a changed config, then sample") {
    const fs::path d = temp_dir("run");
    ExperimentConfig cfg = tiny_config(d);
    std::ostringstream out, err;
    REQUIRE(cmd_train(cfg, false, out, err) == 0);
    CHECK(fs::exists(d / "latest.fdmc"));
    CHECK(fs::exists(d / "ckpt_000003.fdmc"));
    CHECK(fs::exists(d / "ckpt_000006.fdmc"));
    const Checkpoint full = load_checkpoint((d / "latest.fdmc").string());
    CHECK(full.step == 6);

    // Resume from step 3 and finish: same weights as the straight run.
    fs::copy_file(d / "ckpt_000003.fdmc", d / "latest.fdmc", fs::copy_options::overwrite_existing);
    REQUIRE(cmd_train(cfg, true, out, err) == 0);
    const Checkpoint resumed = load_checkpoint((d / "latest.fdmc").string());
    CHECK(resumed.step == 6);
    for (std::size_t i = 0; i < full.params.size(); ++i) CHECK(resumed.params[i].value == full.params[i].value);
    const std::string log = read_file((d / "train_log.csv").string());
    CHECK(log.rfind("step,loss,wall_time\n", 0) == 0);

    ExperimentConfig changed = cfg;
    changed.lr = 0.5;
    std::ostringstream err2;
    CHECK(cmd_train(changed, true, out, err2) == 2);
    CHECK(err2.str().find("trainer.lr") != std::string::npos);
    CHECK(cmd_sample(changed, (d / "latest.fdmc").string(), 1, out, err2) == 2);

    // Sampler keys are free to change.
    ExperimentConfig samp = cfg;
    samp.eta = 0.0;
    REQUIRE(cmd_sample(samp, (d / "latest.fdmc").string(), 3, out, err) == 0);
    const Tensor s0 = read_tensor((d / "samples" / "sample_0000.fdmt").string());
    CHECK(fs::exists(d / "samples" / "sample_0002.png"));
    {
        const auto meta = nlohmann::json::parse(read_file((d / "samples" / "sample_0001.json").string()));
        CHECK(meta["seed"] == cfg.sampler_seed + 1);
        CHECK(meta["eta"] == 0.0);
        CHECK(meta["dt"] == cfg.dt);
        CHECK(meta["config_hash"] == hex64(config_hash(cfg)));
    }
    CHECK(fs::exists(d / "samples" / "grid.png"));
    REQUIRE(cmd_sample(samp, (d / "latest.fdmc").string(), 1, out, err) == 0);
    CHECK(read_tensor((d / "samples" / "sample_0000.fdmt").string()).data == s0.data);

    REQUIRE(cmd_condgen(samp, (d / "latest.fdmc").string(), (d / "samples" / "sample_0000.fdmt").string(), 0, 2, {},
                        out, err) == 0);
    CHECK(fs::exists(d / "condgen" / "cond_0001.json"));

    std::ostringstream g;
    REQUIRE(cmd_estimate_gamma(cfg, g, err) == 0);
    CHECK(g.str().rfind("stage,gamma,d\n", 0) == 0);
}
