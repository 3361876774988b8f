#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "vibra_sr/dataset.hpp"
#include "vibra_sr/fft.hpp"
#include "vibra_sr/metrics.hpp"

using namespace vibra_sr;
using Catch::Approx;
namespace fs = std::filesystem;

namespace {

std::string temp_dir(const std::string& tag) {
    fs::path p = fs::temp_directory_path() / ("vibra_sr_test_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p.string();
}

}  // namespace

TEST_CASE("synth_speech determinism and sizing", "[dataset][synth]") {
    SyntheticSpeechSpec spec;
    spec.duration_s = 0.512;
    spec.seed = 42;
    AudioSignal a = synth_speech(spec);
    AudioSignal b = synth_speech(spec);
    REQUIRE(a.samples == b.samples);  // bit identical
    REQUIRE(a.samples.size() == 8192);
    for (double v : a.samples) {
        REQUIRE(v <= 1.0);
        REQUIRE(v >= -1.0);
    }
}

TEST_CASE("synth_speech puts spectral peaks at the requested formants", "[dataset][synth][oracle]") {
    SyntheticSpeechSpec spec;
    spec.duration_s = 1.0;
    spec.seed = 7;
    spec.f0_hz = 140.0;
    spec.formant_centers_hz = {700.0, 1250.0, 2600.0};
    AudioSignal sig = synth_speech(spec);

    std::vector<double> mag = magnitude_spectrum(sig.samples);
    double bin_hz = static_cast<double>(sig.sample_rate_hz) / ((mag.size() - 1) * 2);
    for (double fc : spec.formant_centers_hz) {
        // FFT-peak oracle: strongest bin within +-100 Hz of the formant.
        size_t lo = static_cast<size_t>((fc - 100.0) / bin_hz);
        size_t hi = static_cast<size_t>((fc + 100.0) / bin_hz);
        size_t best = lo;
        for (size_t k = lo; k <= hi; ++k)
            if (mag[k] > mag[best]) best = k;
        double peak_hz = best * bin_hz;
        INFO("formant " << fc << " peak " << peak_hz);
        REQUIRE(std::abs(peak_hz - fc) <= 20.0);
    }
}

TEST_CASE("synth_speech validates its spec", "[dataset][synth][error]") {
    SyntheticSpeechSpec bad;
    bad.f0_hz = 500.0;
    bad.formant_centers_hz = {300.0};
    REQUIRE_THROWS_AS(synth_speech(bad), ConfigError);
}

TEST_CASE("make_pretrain_pair basics", "[dataset][pairs]") {
    SyntheticSpeechSpec spec;
    spec.duration_s = 2.0;
    spec.seed = 99;
    AudioSignal clean = synth_speech(spec);

    SECTION("degenerate identity pair at equal rates") {
        auto [input, target] = make_pretrain_pair(clean, 16000, DownsampleScheme::decimate);
        REQUIRE(input.samples == clean.samples);
        REQUIRE(target.samples == clean.samples);
    }
    SECTION("input matches target grid and length") {
        auto [input, target] = make_pretrain_pair(clean, 4000, DownsampleScheme::decimate);
        REQUIRE(input.sample_rate_hz == 16000);
        REQUIRE(input.samples.size() == target.samples.size());
    }
    SECTION("invalid ratio is an error") {
        REQUIRE_THROWS_AS(make_pretrain_pair(clean, 3000, DownsampleScheme::decimate), ConfigError);
    }
}

TEST_CASE("filtered pairs keep the passband, raw decimation aliases", "[dataset][pairs][oracle]") {
    // 2 s of a 1 kHz tone: in the passband of the 2 kHz anti-alias filter,
    // reconstructed by filter_decimate + spline with >= 0.9 peak ratio.
    AudioSignal tone;
    tone.sample_rate_hz = 16000;
    tone.samples.resize(32000);
    for (size_t i = 0; i < tone.samples.size(); ++i)
        tone.samples[i] = std::sin(kTwoPi * 1000.0 * static_cast<double>(i) / 16000.0);

    auto [input, target] = make_pretrain_pair(tone, 4000, DownsampleScheme::filter_decimate);
    auto in_mag = magnitude_spectrum(target.samples);
    auto out_mag = magnitude_spectrum(input.samples);
    double in_peak = *std::max_element(in_mag.begin(), in_mag.end());
    double out_peak = *std::max_element(out_mag.begin(), out_mag.end());
    REQUIRE(out_peak >= 0.9 * in_peak);

    // Direct decimation of a 3 kHz tone must alias: energy appears below
    // 2 kHz on the upsampled grid.
    AudioSignal high = tone;
    for (size_t i = 0; i < high.samples.size(); ++i)
        high.samples[i] = std::sin(kTwoPi * 3000.0 * static_cast<double>(i) / 16000.0);
    auto [aliased, target2] = make_pretrain_pair(high, 4000, DownsampleScheme::decimate);
    auto [bin, freq] = dominant_peak_hz(aliased.samples, 16000);
    REQUIRE(freq < 2000.0);  // folded under the low-rate Nyquist
}

TEST_CASE("manifest round trip and validation", "[dataset][manifest]") {
    std::string dir = temp_dir("manifest");
    PairManifest m;
    m.split = "train";
    m.entries.push_back({"a.wav", "b.wav", "spk0", "clean", 2.0});
    m.entries.push_back({"c.wav", "d.wav", "spk1", "pretrain:decimate@4000", 3.5});
    write_manifest(dir + "/m.csv", m);
    PairManifest back = read_manifest(dir + "/m.csv", "train");
    REQUIRE(back.entries.size() == 2);
    REQUIRE(back.entries[1].speaker_id == "spk1");
    REQUIRE(back.entries[1].duration_s == Approx(3.5));

    REQUIRE_THROWS_AS(read_manifest(dir + "/missing.csv"), ConfigError);
    REQUIRE_THROWS_AS(read_manifest(dir + "/m.csv", "holdout"), ConfigError);
}

TEST_CASE("split disjointness check", "[dataset][manifest][property]") {
    PairManifest train, val;
    train.split = "train";
    val.split = "val";
    train.entries.push_back({"a", "b", "spk0", "clean", 1.0});
    val.entries.push_back({"c", "d", "spk1", "clean", 1.0});
    REQUIRE_NOTHROW(check_split_disjoint({&train, &val}));
    val.entries.push_back({"e", "f", "spk0", "clean", 1.0});
    REQUIRE_THROWS_AS(check_split_disjoint({&train, &val}), ConfigError);
}

TEST_CASE("load_pairs windows aligned pairs", "[dataset][loader]") {
    std::string dir = temp_dir("loader");
    SyntheticSpeechSpec spec;
    spec.duration_s = 2.0;
    spec.seed = 3;
    AudioSignal clean = synth_speech(spec);
    auto [input, target] = make_pretrain_pair(clean, 4000, DownsampleScheme::decimate);
    write_wav(dir + "/in.wav", input);
    write_wav(dir + "/tg.wav", target);

    PairManifest m;
    m.entries.push_back({dir + "/in.wav", dir + "/tg.wav", "spk0", "pretrain", 2.0});
    WindowingPlan plan{8192, 4096, TailPolicy::drop};

    SECTION("2 s at 16 kHz with 512 ms / 50% gives 6 aligned pairs") {
        // Count oracle: floor((32000 - 8192)/4096) + 1 = 6.
        auto pairs = load_pairs(m, plan, 16000);
        REQUIRE(pairs.size() == 6);
        for (const auto& p : pairs) {
            REQUIRE(p.input.size() == 8192);
            REQUIRE(p.target.size() == 8192);
        }
    }
    SECTION("empty manifest yields an empty stream") {
        PairManifest empty;
        REQUIRE(load_pairs(empty, plan).empty());
    }
    SECTION("misaligned pair errors naming the entry") {
        AudioSignal short_target = target;
        short_target.samples.resize(target.samples.size() - 2 * 8192 - 100);
        write_wav(dir + "/tg_short.wav", short_target);
        PairManifest bad;
        bad.entries.push_back({dir + "/in.wav", dir + "/tg_short.wav", "spk0", "pretrain", 2.0});
        REQUIRE_THROWS_WITH(load_pairs(bad, plan),
                            Catch::Matchers::ContainsSubstring("tg_short.wav"));
    }
}

TEST_CASE("emitted input windows regenerate from target windows", "[dataset][loader][property]") {
    // The input stream is a deterministic function of the target stream and
    // the downsampling scheme: regenerate and compare on the waveform level.
    std::string dir = temp_dir("regen");
    SyntheticSpeechSpec spec;
    spec.duration_s = 1.536;
    spec.seed = 8;
    AudioSignal clean = synth_speech(spec);
    auto [input, target] = make_pretrain_pair(clean, 4000, DownsampleScheme::decimate);
    write_wav(dir + "/in.wav", input);
    write_wav(dir + "/tg.wav", target);

    AudioSignal tg_back = read_wav_mono(dir + "/tg.wav");
    auto [regen, tgt2] = make_pretrain_pair(tg_back, 4000, DownsampleScheme::decimate);
    AudioSignal in_back = read_wav_mono(dir + "/in.wav");
    REQUIRE(regen.samples.size() == in_back.samples.size());
    for (size_t i = 0; i < regen.samples.size(); ++i)
        // Both sides went through 16-bit quantization once.
        REQUIRE(regen.samples[i] == Approx(in_back.samples[i]).margin(2.0 / 32767.0));
}

TEST_CASE("corpus generation covers the requested seconds and speakers", "[dataset][corpus]") {
    std::string dir = temp_dir("corpus");
    CorpusSpec spec;
    spec.total_seconds = 10.0;
    spec.speakers = 2;
    spec.seed = 5;
    PairManifest clean = generate_clean_corpus(dir, spec);
    double total = 0.0;
    std::set<std::string> speakers;
    for (const auto& e : clean.entries) {
        total += e.duration_s;
        speakers.insert(e.speaker_id);
        REQUIRE(fs::exists(e.target_path));
    }
    REQUIRE(total >= 10.0);
    REQUIRE(speakers.size() == 2);

    PairManifest derived = derive_pretrain_inputs(clean, dir + "/inputs", 4000,
                                                  DownsampleScheme::decimate);
    REQUIRE(derived.entries.size() == clean.entries.size());
    REQUIRE(derived.entries[0].placement_tag == "pretrain:decimate@4000");
    REQUIRE(fs::exists(derived.entries[0].input_path));
}
