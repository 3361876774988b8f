#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "vibra_sr/dataset.hpp"
#include "vibra_sr/metrics.hpp"
#include "vibra_sr/training.hpp"

using namespace vibra_sr;
using Catch::Approx;
namespace fs = std::filesystem;

namespace {

std::string temp_dir(const std::string& tag) {
    fs::path p = fs::temp_directory_path() / ("vibra_sr_train_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p.string();
}

// Small-window config so the suite stays fast.
ModelConfig micro_config() {
    ModelConfig cfg = ModelConfig::tiny();
    cfg.window_samples = 1280;
    return cfg;
}

PairManifest micro_manifest(const std::string& dir, double seconds, uint64_t seed) {
    CorpusSpec spec;
    spec.total_seconds = seconds;
    spec.speakers = 1;
    spec.clip_seconds = seconds;
    spec.seed = seed;
    PairManifest clean = generate_clean_corpus(dir + "/clean", spec);
    return derive_pretrain_inputs(clean, dir + "/inputs", 4000, DownsampleScheme::decimate);
}

}  // namespace

TEST_CASE("checkpoint round trip is bit identical", "[training][checkpoint]") {
    std::string dir = temp_dir("ckpt");
    ModelConfig cfg = micro_config();
    Model model(cfg, 77);
    CheckpointMeta meta{cfg, 123, 4, 99};
    save_checkpoint(model, dir + "/m.ckpt", meta);

    CheckpointMeta back_meta;
    Model back = load_checkpoint(dir + "/m.ckpt", &back_meta);
    REQUIRE(back_meta.step == 123);
    REQUIRE(back_meta.epoch == 4);
    REQUIRE(back_meta.seed == 99);

    // Bit-identical parameters and forward outputs.
    const auto& a = model.params().entries();
    const auto& b = back.params().entries();
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) REQUIRE(a[i].var->value.data == b[i].var->value.data);

    Rng rng(5);
    std::vector<double> w(static_cast<size_t>(cfg.window_samples));
    for (double& v : w) v = rng.uniform(-1.0, 1.0);
    REQUIRE(model.enhance_window(w) == back.enhance_window(w));
}

TEST_CASE("pretrain epochs=0 is a config error", "[training][error]") {
    std::string dir = temp_dir("epochs0");
    PairManifest m = micro_manifest(dir, 0.48, 1);
    TrainConfig tc;
    tc.epochs = 0;
    REQUIRE_THROWS_AS(pretrain(micro_config(), m, nullptr, tc, dir + "/run"), ConfigError);
}

TEST_CASE("same seed gives identical per-epoch losses", "[training][determinism]") {
    std::string dir = temp_dir("determinism");
    PairManifest m = micro_manifest(dir, 0.96, 2);
    TrainConfig tc;
    tc.epochs = 3;
    tc.batch_size = 4;
    tc.learning_rate = 1e-3;
    tc.seed = 4242;
    TrainState a = pretrain(micro_config(), m, nullptr, tc, dir + "/run_a");
    TrainState b = pretrain(micro_config(), m, nullptr, tc, dir + "/run_b");
    REQUIRE(a.history.size() == b.history.size());
    for (size_t i = 0; i < a.history.size(); ++i) {
        REQUIRE(a.history[i].total == Approx(b.history[i].total).margin(1e-6));
        REQUIRE(a.history[i].val_total == Approx(b.history[i].val_total).margin(1e-6));
    }
    // Different seed diverges.
    tc.seed = 777;
    TrainState c = pretrain(micro_config(), m, nullptr, tc, dir + "/run_c");
    REQUIRE(c.history.back().total != Approx(a.history.back().total).margin(1e-12));
}

TEST_CASE("losses stay finite over a short run", "[training][stability]") {
    std::string dir = temp_dir("finite");
    PairManifest m = micro_manifest(dir, 0.96, 3);
    TrainConfig tc;
    tc.epochs = 4;
    tc.batch_size = 4;
    tc.learning_rate = 1e-3;
    TrainState s = pretrain(micro_config(), m, nullptr, tc, dir + "/run");
    for (const auto& h : s.history) {
        REQUIRE(std::isfinite(h.total));
        REQUIRE(std::isfinite(h.val_total));
        REQUIRE(h.wall_s > 0.0);
    }
    REQUIRE(fs::exists(dir + "/run/training_log.csv"));
    REQUIRE(fs::exists(dir + "/run/final.ckpt"));
}

TEST_CASE("zero-epoch finetune returns the checkpoint unchanged", "[training][finetune]") {
    std::string dir = temp_dir("ft0");
    ModelConfig cfg = micro_config();
    Model model(cfg, 31);
    CheckpointMeta meta{cfg, 10, 2, 31};
    save_checkpoint(model, dir + "/src.ckpt", meta);

    PairManifest m = micro_manifest(dir, 0.48, 4);
    TrainConfig tc;
    tc.phase = "finetune";
    tc.epochs = 0;
    TrainState s = finetune(dir + "/src.ckpt", m, tc, dir + "/run");
    Model back = load_checkpoint(s.checkpoint_path);
    const auto& a = model.params().entries();
    const auto& b = back.params().entries();
    for (size_t i = 0; i < a.size(); ++i) REQUIRE(a[i].var->value.data == b[i].var->value.data);
}

TEST_CASE("finetune rejects mismatched architectures listing fields", "[training][finetune][error]") {
    std::string dir = temp_dir("ftmismatch");
    ModelConfig cfg = micro_config();
    Model model(cfg, 31);
    save_checkpoint(model, dir + "/src.ckpt", {cfg, 0, 0, 31});
    PairManifest m = micro_manifest(dir, 0.48, 5);
    ModelConfig other = cfg;
    other.ssm_state_dim = 8;
    TrainConfig tc;
    tc.phase = "finetune";
    tc.epochs = 1;
    REQUIRE_THROWS_WITH(finetune(dir + "/src.ckpt", m, tc, dir + "/run", &other),
                        Catch::Matchers::ContainsSubstring("ssm_state_dim"));
}

TEST_CASE("finetune improves val loss on a shifted speaker and logs wall time", "[training][finetune][slow]") {
    std::string dir = temp_dir("ftimprove");
    ModelConfig cfg = micro_config();

    // Base checkpoint: brief pretraining on speaker A.
    PairManifest base = micro_manifest(dir + "/base", 1.92, 6);
    TrainConfig tc;
    tc.epochs = 2;
    tc.batch_size = 4;
    tc.learning_rate = 1e-3;
    TrainState pre = pretrain(cfg, base, nullptr, tc, dir + "/pre");

    // New "speaker": shifted f0/formants.
    CorpusSpec user_spec;
    user_spec.total_seconds = 1.92;
    user_spec.speakers = 1;
    user_spec.clip_seconds = 1.92;
    user_spec.seed = 1234;
    PairManifest user_clean = generate_clean_corpus(dir + "/user_clean", user_spec);
    PairManifest user = derive_pretrain_inputs(user_clean, dir + "/user_in", 4000,
                                               DownsampleScheme::decimate);

    // Val loss of the unadapted checkpoint on the user's data.
    Model unadapted = load_checkpoint(dir + "/pre/final.ckpt");
    WindowingPlan plan = training_window_plan(cfg);
    auto user_windows = load_pairs(user, plan, cfg.target_rate_hz);
    double before = evaluate_loss(unadapted, user_windows, {}, false);

    TrainConfig ft;
    ft.phase = "finetune";
    ft.epochs = 6;
    ft.batch_size = 4;
    ft.learning_rate = 2e-3;
    TrainState state = finetune(dir + "/pre/final.ckpt", user, ft, dir + "/ft");
    Model adapted = load_checkpoint(dir + "/ft/final.ckpt");
    double after = evaluate_loss(adapted, user_windows, {}, false);
    REQUIRE(after < before);

    // Per-epoch wall time is positive and roughly stable.
    double min_wall = 1e30, max_wall = 0.0;
    for (const auto& h : state.history) {
        REQUIRE(h.wall_s > 0.0);
        min_wall = std::min(min_wall, h.wall_s);
        max_wall = std::max(max_wall, h.wall_s);
    }
    REQUIRE(max_wall <= 2.5 * min_wall);  // +-50% band around the midpoint, loosely
}

TEST_CASE("identity-initialized enhance returns the pre-upsampled input", "[training][enhance]") {
    ModelConfig cfg = micro_config();
    Model model(cfg, 1);
    model.zero_all_parameters();

    SyntheticSpeechSpec spec;
    spec.duration_s = 0.6;
    spec.seed = 15;
    AudioSignal clean = synth_speech(spec);
    AudioSignal low = decimate(clean, 4);
    AudioSignal up = upsample_to_grid(low, 16000, UpsampleMethod::spline);

    AudioSignal out = enhance(model, low, 16000);
    REQUIRE(out.samples.size() == up.samples.size());
    double err = 0.0;
    for (size_t i = 0; i < out.samples.size(); ++i) {
        double d = out.samples[i] - up.samples[i];
        err += d * d;
    }
    err = std::sqrt(err / static_cast<double>(out.samples.size()));
    REQUIRE(err <= 1e-6);
}

TEST_CASE("enhance output duration tracks the input duration", "[training][enhance]") {
    ModelConfig cfg = micro_config();
    Model model(cfg, 2);
    SyntheticSpeechSpec spec;
    spec.duration_s = 0.777;  // awkward length, forces tail padding
    spec.seed = 16;
    AudioSignal clean = synth_speech(spec);
    AudioSignal low = decimate(clean, 4);
    AudioSignal out = enhance(model, low, 16000);
    REQUIRE(out.sample_rate_hz == 16000);
    REQUIRE(static_cast<int64_t>(out.samples.size()) == low.length() * 4);
}

TEST_CASE("chunked enhancement equals whole-signal enhancement", "[training][enhance][stream]") {
    ModelConfig cfg = micro_config();
    Model model(cfg, 3);
    SyntheticSpeechSpec spec;
    spec.duration_s = 1.0;
    spec.seed = 17;
    AudioSignal clean = synth_speech(spec);
    AudioSignal low = decimate(clean, 4);

    AudioSignal whole = enhance(model, low, 16000);
    AudioSignal chunked = enhance_chunked(model, low, 16000, /*chunk_samples=*/1777);
    REQUIRE(whole.samples.size() == chunked.samples.size());
    double err = 0.0;
    for (size_t i = 0; i < whole.samples.size(); ++i) {
        double d = whole.samples[i] - chunked.samples[i];
        err += d * d;
    }
    err = std::sqrt(err / static_cast<double>(whole.samples.size()));
    REQUIRE(err <= 1e-5);
}

TEST_CASE("latency measurement contract", "[training][latency]") {
    ModelConfig cfg = micro_config();
    Model model(cfg, 4);
    LatencyReport r = measure_inference_latency(model, {}, /*runs=*/21, /*warmup=*/2);
    REQUIRE(r.median_ms > 0.0);
    REQUIRE(r.cv < 0.5);
    REQUIRE(r.window_ms == Approx(1000.0 * cfg.window_samples / cfg.target_rate_hz));
}
