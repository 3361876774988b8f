#pragma once

#include <cmath>
#include <complex>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "vibra_sr/audio.hpp"
#include "vibra_sr/common.hpp"
#include "vibra_sr/dsp.hpp"
#include "vibra_sr/fft.hpp"
#include "vibra_sr/stft.hpp"

namespace vibra_sr {

struct MetricReport {
    double snr_db = 0.0;
    double lsd = 0.0;
    double stoi = 0.0;
    std::optional<double> pesq;
    std::string notes;
};

// ---------------------------------------------------------------------------
// SNR
// ---------------------------------------------------------------------------

// 10 log10(sum x^2 / sum (x-y)^2) over the magnitude spectra of ref and test
// (the time-domain reading is appended to `notes` by callers that want it).
// Identical signals return the +infinity sentinel.
inline double snr(const AudioSignal& ref, const AudioSignal& test) {
    if (ref.length() != test.length()) throw ConfigError("snr: length mismatch");
    if (ref.length() == 0) throw ConfigError("snr: empty signals");
    std::vector<double> mx = magnitude_spectrum(ref.samples);
    std::vector<double> my = magnitude_spectrum(test.samples);
    double sx = 0.0, sd = 0.0;
    for (size_t k = 0; k < mx.size(); ++k) {
        sx += mx[k] * mx[k];
        double d = mx[k] - my[k];
        sd += d * d;
    }
    if (sx == 0.0) throw ConfigError("snr: reference is identically zero");
    if (sd == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(sx / sd);
}

inline double snr_time_domain(const AudioSignal& ref, const AudioSignal& test) {
    if (ref.length() != test.length()) throw ConfigError("snr: length mismatch");
    double sx = 0.0, sd = 0.0;
    for (int64_t i = 0; i < ref.length(); ++i) {
        double x = ref.samples[static_cast<size_t>(i)];
        double d = x - test.samples[static_cast<size_t>(i)];
        sx += x * x;
        sd += d * d;
    }
    if (sx == 0.0) throw ConfigError("snr: reference is identically zero");
    if (sd == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(sx / sd);
}

// ---------------------------------------------------------------------------
// LSD
// ---------------------------------------------------------------------------

inline constexpr double kLsdMagFloor = 1e-7;

// Mean over frames of sqrt(mean over bins of (log X - log X^hat)^2), natural
// log, magnitudes floored at kLsdMagFloor.
inline double lsd(const AudioSignal& ref, const AudioSignal& test,
                  const StftResolution& res = StftResolution{2048, 512, 2048}) {
    if (ref.length() != test.length()) throw ConfigError("lsd: length mismatch");
    SpectralFrame X = stft_magnitude(ref.samples, res, ref.sample_rate_hz);
    SpectralFrame Y = stft_magnitude(test.samples, res, test.sample_rate_hz);
    int64_t T = X.frames(), K = X.bins();
    double acc = 0.0;
    for (int64_t t = 0; t < T; ++t) {
        double frame = 0.0;
        for (int64_t k = 0; k < K; ++k) {
            double lx = std::log(std::max(X.X.at(t, k), kLsdMagFloor));
            double ly = std::log(std::max(Y.X.at(t, k), kLsdMagFloor));
            frame += (lx - ly) * (lx - ly);
        }
        acc += std::sqrt(frame / static_cast<double>(K));
    }
    return acc / static_cast<double>(T);
}

// ---------------------------------------------------------------------------
// STOI
// ---------------------------------------------------------------------------

namespace stoi_detail {

inline constexpr int kFs = 10000;        // analysis rate
inline constexpr int kFrameLen = 256;    // 25.6 ms
inline constexpr int kHop = 128;
inline constexpr int kFft = 512;
inline constexpr int kBands = 15;
inline constexpr double kBandStartHz = 150.0;
inline constexpr int kSegFrames = 30;    // 384 ms
inline constexpr double kDynRangeDb = 40.0;
inline constexpr double kClipDb = -15.0;

struct Frames {
    // band-energy matrix (bands x frames)
    std::vector<std::vector<double>> band;
    int64_t count = 0;
};

inline std::vector<std::pair<int, int>> band_bins() {
    std::vector<std::pair<int, int>> out;
    for (int j = 0; j < kBands; ++j) {
        double cf = kBandStartHz * std::pow(2.0, j / 3.0);
        double lo = cf / std::pow(2.0, 1.0 / 6.0);
        double hi = cf * std::pow(2.0, 1.0 / 6.0);
        int klo = static_cast<int>(std::ceil(lo * kFft / kFs));
        int khi = static_cast<int>(std::floor(hi * kFft / kFs));
        out.emplace_back(klo, khi);
    }
    return out;
}

}  // namespace stoi_detail

// Short-time objective intelligibility: resample to 10 kHz, drop frames more
// than 40 dB below the loudest reference frame, collect 15 one-third-octave
// band envelopes from 150 Hz, and average the clipped normalized correlation
// over 384 ms segments. Result clamped to [-1, 1].
inline double stoi(const AudioSignal& ref, const AudioSignal& test) {
    using namespace stoi_detail;
    if (ref.sample_rate_hz != test.sample_rate_hz) throw ConfigError("stoi: sample rates must match");
    int64_t n = std::min(ref.length(), test.length());
    if (n == 0) throw ConfigError("stoi: empty signals");
    std::vector<double> x(ref.samples.begin(), ref.samples.begin() + n);
    std::vector<double> y(test.samples.begin(), test.samples.begin() + n);
    if (ref.sample_rate_hz != kFs) {
        x = resample_rational(x, ref.sample_rate_hz, kFs);
        y = resample_rational(y, ref.sample_rate_hz, kFs);
    }

    int64_t frames = x.size() >= kFrameLen
                         ? 1 + (static_cast<int64_t>(x.size()) - kFrameLen) / kHop
                         : 0;
    if (frames < 1) throw ConfigError("stoi: input too short");

    // Silent-frame removal keyed on reference frame energy.
    std::vector<double> hann(kFrameLen);
    for (int i = 0; i < kFrameLen; ++i)
        hann[static_cast<size_t>(i)] = 0.5 - 0.5 * std::cos(kTwoPi * (i + 1.0) / (kFrameLen + 1.0));
    std::vector<double> energy_db(static_cast<size_t>(frames));
    double max_db = -std::numeric_limits<double>::infinity();
    for (int64_t f = 0; f < frames; ++f) {
        double e = 0.0;
        for (int i = 0; i < kFrameLen; ++i) {
            double v = x[static_cast<size_t>(f * kHop + i)] * hann[static_cast<size_t>(i)];
            e += v * v;
        }
        double db = 10.0 * std::log10(e + 1e-300);
        energy_db[static_cast<size_t>(f)] = db;
        max_db = std::max(max_db, db);
    }
    std::vector<int64_t> keep;
    for (int64_t f = 0; f < frames; ++f)
        if (energy_db[static_cast<size_t>(f)] > max_db - kDynRangeDb) keep.push_back(f);
    if (static_cast<int64_t>(keep.size()) < kSegFrames)
        throw ConfigError("stoi: fewer than 384 ms of active speech after silence removal");

    // One-third-octave band envelopes for both signals over the kept frames.
    const FftPlan& plan = FftPlan::get(kFft);
    auto bands = band_bins();
    auto band_energies = [&](const std::vector<double>& sig) {
        std::vector<std::vector<double>> out(kBands, std::vector<double>(keep.size(), 0.0));
        std::vector<std::complex<double>> buf;
        for (size_t fi = 0; fi < keep.size(); ++fi) {
            buf.assign(kFft, {0.0, 0.0});
            int64_t off = keep[fi] * kHop;
            for (int i = 0; i < kFrameLen; ++i)
                buf[static_cast<size_t>(i)] = {sig[static_cast<size_t>(off + i)] * hann[static_cast<size_t>(i)], 0.0};
            plan.forward(buf);
            for (int j = 0; j < kBands; ++j) {
                double acc = 0.0;
                for (int k = bands[static_cast<size_t>(j)].first; k <= bands[static_cast<size_t>(j)].second; ++k)
                    acc += std::norm(buf[static_cast<size_t>(k)]);
                out[static_cast<size_t>(j)][fi] = std::sqrt(acc);
            }
        }
        return out;
    };
    auto xb = band_energies(x);
    auto yb = band_energies(y);

    double clip_gain = 1.0 + std::pow(10.0, -kClipDb / 20.0);
    double acc = 0.0;
    int64_t count = 0;
    for (size_t m = kSegFrames; m <= keep.size(); ++m) {
        for (int j = 0; j < kBands; ++j) {
            const double* xs = &xb[static_cast<size_t>(j)][m - kSegFrames];
            const double* ys = &yb[static_cast<size_t>(j)][m - kSegFrames];
            double nx = 0.0, ny = 0.0;
            for (int i = 0; i < kSegFrames; ++i) {
                nx += xs[i] * xs[i];
                ny += ys[i] * ys[i];
            }
            double alpha = ny > 0.0 ? std::sqrt(nx / ny) : 0.0;
            double mean_x = 0.0, mean_y = 0.0;
            double yc[kSegFrames];
            for (int i = 0; i < kSegFrames; ++i) {
                yc[i] = std::min(ys[i] * alpha, xs[i] * clip_gain);
                mean_x += xs[i];
                mean_y += yc[i];
            }
            mean_x /= kSegFrames;
            mean_y /= kSegFrames;
            double num = 0.0, dx = 0.0, dy = 0.0;
            for (int i = 0; i < kSegFrames; ++i) {
                double a = xs[i] - mean_x;
                double b = yc[i] - mean_y;
                num += a * b;
                dx += a * a;
                dy += b * b;
            }
            double denom = std::sqrt(dx * dy);
            acc += denom > 0.0 ? num / denom : 0.0;
            ++count;
        }
    }
    double score = count ? acc / static_cast<double>(count) : 0.0;
    return std::max(-1.0, std::min(1.0, score));
}

// ---------------------------------------------------------------------------
// PESQ adapter
// ---------------------------------------------------------------------------

inline const char* kPesqToolEnv = "VIBRA_SR_PESQ_TOOL";

// Shells out to the configured PESQ tool; absent tool or any failure yields
// an absent value plus a note, never an error.
inline std::optional<double> pesq_external(const std::string& ref_path, const std::string& test_path,
                                           std::string* note) {
    const char* tool = std::getenv(kPesqToolEnv);
    if (!tool || !*tool) {
        if (note) *note = "pesq unavailable (set VIBRA_SR_PESQ_TOOL)";
        return std::nullopt;
    }
    std::string cmd = std::string(tool) + " '" + ref_path + "' '" + test_path + "' 2>/dev/null";
    FILE* pipe = popen(cmd.c_str(), "r");
    if (!pipe) {
        if (note) *note = "pesq unavailable (tool failed to start)";
        return std::nullopt;
    }
    std::string out;
    char buf[256];
    while (fgets(buf, sizeof(buf), pipe)) out += buf;
    int rc = pclose(pipe);
    if (rc != 0) {
        if (note) *note = "pesq unavailable (tool exited " + std::to_string(rc) + ")";
        return std::nullopt;
    }
    // Last parseable float in the output is the score.
    std::optional<double> score;
    size_t i = 0;
    while (i < out.size()) {
        char* end = nullptr;
        const char* start = out.c_str() + i;
        double v = std::strtod(start, &end);
        if (end == start) {
            ++i;
        } else {
            score = v;
            i = static_cast<size_t>(end - out.c_str());
        }
    }
    if (!score && note) *note = "pesq unavailable (no score in tool output)";
    return score;
}

// ---------------------------------------------------------------------------
// Aggregate evaluation
// ---------------------------------------------------------------------------

inline MetricReport evaluate_pair(const AudioSignal& ref, const AudioSignal& test,
                                  const std::string& ref_path = "", const std::string& test_path = "") {
    MetricReport r;
    r.snr_db = snr(ref, test);
    r.lsd = lsd(ref, test);
    try {
        r.stoi = stoi(ref, test);
    } catch (const ConfigError& e) {
        r.stoi = std::numeric_limits<double>::quiet_NaN();
        r.notes += std::string("stoi skipped: ") + e.what() + "; ";
    }
    double td = snr_time_domain(ref, test);
    r.notes += "time_domain_snr_db=" + (std::isinf(td) ? std::string("inf") : std::to_string(td)) + "; ";
    if (!ref_path.empty() && !test_path.empty()) {
        std::string note;
        r.pesq = pesq_external(ref_path, test_path, &note);
        if (!note.empty()) r.notes += note + "; ";
    } else {
        r.notes += "pesq unavailable (no file paths); ";
    }
    return r;
}

}  // namespace vibra_sr
