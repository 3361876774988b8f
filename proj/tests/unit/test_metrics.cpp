#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "vibra_sr/dataset.hpp"
#include "vibra_sr/metrics.hpp"

using namespace vibra_sr;
using Catch::Approx;

namespace {

AudioSignal noise_signal(int64_t n, uint64_t seed, double amp = 0.5) {
    Rng rng(seed);
    AudioSignal s;
    s.sample_rate_hz = 16000;
    s.samples.resize(static_cast<size_t>(n));
    for (double& v : s.samples) v = amp * rng.uniform(-1.0, 1.0);
    return s;
}

AudioSignal speechy(double seconds, uint64_t seed) {
    SyntheticSpeechSpec spec;
    spec.duration_s = seconds;
    spec.seed = seed;
    return synth_speech(spec);
}

}  // namespace

TEST_CASE("snr sentinel and exact anchors", "[metrics][snr]") {
    AudioSignal x = noise_signal(4096, 1);

    SECTION("identical signals hit the +inf sentinel") {
        REQUIRE(std::isinf(snr(x, x)));
        REQUIRE(snr(x, x) > 0);
    }
    SECTION("zero test signal scores exactly 0 dB") {
        AudioSignal zero = x;
        for (double& v : zero.samples) v = 0.0;
        REQUIRE(snr(x, zero) == Approx(0.0).margin(1e-12));
    }
    SECTION("crafted pair with residual energy ratio 0.1 scores 10 dB") {
        // y = x * (1 - delta) scales the magnitude spectrum uniformly, so
        // sum(|X|-|Y|)^2 = delta^2 sum |X|^2; delta = 10^{-1/2} gives 10 dB.
        double delta = std::pow(10.0, -0.5);
        AudioSignal y = x;
        for (double& v : y.samples) v *= (1.0 - delta);
        REQUIRE(snr(x, y) == Approx(10.0).margin(1e-9));
    }
    SECTION("all-zero reference is an error") {
        AudioSignal zero = x;
        for (double& v : zero.samples) v = 0.0;
        REQUIRE_THROWS_AS(snr(zero, x), ConfigError);
    }
    SECTION("length mismatch is an error") {
        AudioSignal shorter = noise_signal(100, 2);
        REQUIRE_THROWS_AS(snr(x, shorter), ConfigError);
    }
}

TEST_CASE("snr decreases monotonically with noise power", "[metrics][snr][property]") {
    AudioSignal x = speechy(0.5, 3);
    AudioSignal noise = noise_signal(x.length(), 4, 1.0);
    noise.sample_rate_hz = x.sample_rate_hz;
    double prev = std::numeric_limits<double>::infinity();
    for (double sigma : {0.001, 0.01, 0.1, 0.5}) {
        AudioSignal y = x;
        for (int64_t i = 0; i < y.length(); ++i)
            y.samples[static_cast<size_t>(i)] += sigma * noise.samples[static_cast<size_t>(i)];
        double s = snr(x, y);
        REQUIRE(s < prev);
        prev = s;
    }
}

TEST_CASE("lsd anchors", "[metrics][lsd]") {
    AudioSignal x = noise_signal(8192, 5, 0.8);

    SECTION("identical signals score zero") {
        REQUIRE(lsd(x, x) == Approx(0.0).margin(1e-12));
    }
    SECTION("scaling the waveform by e shifts log magnitudes by exactly 1") {
        AudioSignal y = x;
        for (double& v : y.samples) v *= std::exp(1.0);
        REQUIRE(lsd(x, y) == Approx(1.0).margin(1e-6));
        // symmetric under the sign of the log offset
        REQUIRE(lsd(y, x) == Approx(lsd(x, y)).margin(1e-12));
    }
    SECTION("matches a direct double-loop oracle on small spectra") {
        StftResolution res{16, 8, 16};
        AudioSignal a = noise_signal(32, 6);  // 3 frames, 9 bins
        AudioSignal b = noise_signal(32, 7);
        SpectralFrame X = stft_magnitude(a.samples, res, 16000);
        SpectralFrame Y = stft_magnitude(b.samples, res, 16000);
        double acc = 0.0;
        for (int64_t t = 0; t < X.frames(); ++t) {
            double fr = 0.0;
            for (int64_t k = 0; k < X.bins(); ++k) {
                double d = std::log(std::max(X.X.at(t, k), kLsdMagFloor)) -
                           std::log(std::max(Y.X.at(t, k), kLsdMagFloor));
                fr += d * d;
            }
            acc += std::sqrt(fr / static_cast<double>(X.bins()));
        }
        acc /= static_cast<double>(X.frames());
        REQUIRE(lsd(a, b, res) == Approx(acc).margin(1e-12));
    }
    SECTION("length mismatch is an error") {
        AudioSignal shorter = noise_signal(4096, 8);
        REQUIRE_THROWS_AS(lsd(x, shorter), ConfigError);
    }
}

TEST_CASE("stoi pipeline on synthetic speech", "[metrics][stoi]") {
    AudioSignal ref = speechy(1.5, 9);

    SECTION("self-intelligibility is essentially perfect") {
        REQUIRE(stoi(ref, ref) >= 0.99);
    }
    SECTION("white noise against speech scores low (regression anchor)") {
        AudioSignal noise = noise_signal(ref.length(), 10, 0.9);
        noise.sample_rate_hz = ref.sample_rate_hz;
        double score = stoi(ref, noise);
        REQUIRE(score <= 0.3);
    }
    SECTION("score is non-increasing as additive noise grows") {
        AudioSignal noise = noise_signal(ref.length(), 11, 1.0);
        double prev = 1.1;
        for (double sigma : {0.01, 0.1, 0.5}) {
            AudioSignal test = ref;
            for (int64_t i = 0; i < test.length(); ++i)
                test.samples[static_cast<size_t>(i)] += sigma * noise.samples[static_cast<size_t>(i)];
            double s = stoi(ref, test);
            REQUIRE(s <= prev + 1e-9);
            prev = s;
        }
    }
    SECTION("deterministic for fixed inputs and clamped") {
        AudioSignal noise = noise_signal(ref.length(), 12, 0.2);
        AudioSignal test = ref;
        for (int64_t i = 0; i < test.length(); ++i)
            test.samples[static_cast<size_t>(i)] += noise.samples[static_cast<size_t>(i)];
        double a = stoi(ref, test);
        double b = stoi(ref, test);
        REQUIRE(a == b);
        REQUIRE(a >= -1.0);
        REQUIRE(a <= 1.0);
    }
    SECTION("too-short input is an error") {
        AudioSignal tiny = speechy(0.1, 13);
        REQUIRE_THROWS_AS(stoi(tiny, tiny), ConfigError);
    }
}

TEST_CASE("pesq adapter contract", "[metrics][pesq]") {
    namespace fs = std::filesystem;

    SECTION("unset tool yields absent value with a note") {
        unsetenv(kPesqToolEnv);
        std::string note;
        auto score = pesq_external("a.wav", "b.wav", &note);
        REQUIRE_FALSE(score.has_value());
        REQUIRE(note.find("pesq unavailable") != std::string::npos);
    }
    SECTION("a conforming tool's output is parsed") {
        fs::path tool = fs::temp_directory_path() / "fake_pesq.sh";
        {
            std::ofstream os(tool);
            os << "#!/bin/sh\necho 'P.862 Prediction (Raw MOS, MOS-LQO): = 3.10'\n";
        }
        fs::permissions(tool, fs::perms::owner_all);
        setenv(kPesqToolEnv, tool.c_str(), 1);
        std::string note;
        auto score = pesq_external("a.wav", "b.wav", &note);
        REQUIRE(score.has_value());
        REQUIRE(*score == Approx(3.10));
        unsetenv(kPesqToolEnv);
    }
    SECTION("a crashing tool yields absent value with a note") {
        fs::path tool = fs::temp_directory_path() / "broken_pesq.sh";
        {
            std::ofstream os(tool);
            os << "#!/bin/sh\nexit 3\n";
        }
        fs::permissions(tool, fs::perms::owner_all);
        setenv(kPesqToolEnv, tool.c_str(), 1);
        std::string note;
        auto score = pesq_external("a.wav", "b.wav", &note);
        REQUIRE_FALSE(score.has_value());
        REQUIRE(note.find("pesq unavailable") != std::string::npos);
        unsetenv(kPesqToolEnv);
    }
}

TEST_CASE("evaluate_pair aggregates all metrics", "[metrics][report]") {
    unsetenv(kPesqToolEnv);
    AudioSignal ref = speechy(1.0, 14);
    MetricReport r = evaluate_pair(ref, ref);
    REQUIRE(std::isinf(r.snr_db));
    REQUIRE(r.lsd == Approx(0.0).margin(1e-12));
    REQUIRE(r.stoi >= 0.99);
    REQUIRE_FALSE(r.pesq.has_value());
    REQUIRE(r.notes.find("pesq unavailable") != std::string::npos);
}
