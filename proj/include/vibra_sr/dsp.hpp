#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "vibra_sr/audio.hpp"
#include "vibra_sr/common.hpp"
#include "vibra_sr/fft.hpp"

namespace vibra_sr {

// ---------------------------------------------------------------------------
// Windowing
// ---------------------------------------------------------------------------

enum class TailPolicy { drop, zero_pad };

struct WindowingPlan {
    int64_t window_len_samples = 8192;
    int64_t hop_samples = 4096;
    TailPolicy tail_policy = TailPolicy::drop;

    void validate() const {
        if (window_len_samples <= 0) throw ConfigError("windowing: window length must be positive");
        if (hop_samples <= 0 || hop_samples > window_len_samples)
            throw ConfigError("windowing: need 0 < hop <= window length");
    }
};

// Window start offsets for a signal of the given length. With drop policy
// only fully covered windows are kept; with zero_pad the last window may
// extend past the end (count = ceil((len - window)/hop) + 1).
inline std::vector<int64_t> window_offsets(int64_t len, const WindowingPlan& plan) {
    plan.validate();
    std::vector<int64_t> offsets;
    if (len <= 0) return offsets;
    if (plan.tail_policy == TailPolicy::drop) {
        for (int64_t off = 0; off + plan.window_len_samples <= len; off += plan.hop_samples)
            offsets.push_back(off);
    } else {
        int64_t off = 0;
        offsets.push_back(off);
        while (off + plan.window_len_samples < len) {
            off += plan.hop_samples;
            offsets.push_back(off);
        }
    }
    return offsets;
}

inline std::vector<AudioSignal> window_signal(const AudioSignal& sig, const WindowingPlan& plan) {
    plan.validate();
    if (sig.length() < 1) throw ConfigError("windowing: signal must have at least one sample");
    std::vector<AudioSignal> out;
    for (int64_t off : window_offsets(sig.length(), plan)) {
        AudioSignal w;
        w.sample_rate_hz = sig.sample_rate_hz;
        w.bits_per_sample = sig.bits_per_sample;
        w.samples.resize(static_cast<size_t>(plan.window_len_samples), 0.0);
        int64_t n = std::min(plan.window_len_samples, sig.length() - off);
        for (int64_t i = 0; i < n; ++i) w.samples[static_cast<size_t>(i)] = sig.samples[static_cast<size_t>(off + i)];
        out.push_back(std::move(w));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Decimation and upsampling
// ---------------------------------------------------------------------------

inline AudioSignal decimate(const AudioSignal& sig, int factor) {
    if (factor < 1) throw ConfigError("decimate: factor must be >= 1");
    if (sig.sample_rate_hz % factor != 0)
        throw ConfigError("decimate: factor " + std::to_string(factor) +
                          " does not divide sample rate " + std::to_string(sig.sample_rate_hz));
    AudioSignal out;
    out.sample_rate_hz = sig.sample_rate_hz / factor;
    out.bits_per_sample = sig.bits_per_sample;
    for (int64_t i = 0; i < sig.length(); i += factor) out.samples.push_back(sig.samples[static_cast<size_t>(i)]);
    return out;
}

enum class UpsampleMethod { spline, zero_order_hold };

namespace detail {

// Natural cubic spline second derivatives at integer knots (Thomas solve).
inline std::vector<double> spline_second_derivatives(const std::vector<double>& y) {
    size_t n = y.size();
    std::vector<double> m(n, 0.0);
    if (n < 3) return m;
    std::vector<double> c(n, 0.0), d(n, 0.0);
    // Rows i = 1..n-2: m[i-1] + 4 m[i] + m[i+1] = 6 (y[i+1] - 2 y[i] + y[i-1])
    c[1] = 4.0;
    d[1] = 6.0 * (y[2] - 2.0 * y[1] + y[0]);
    for (size_t i = 2; i + 1 < n; ++i) {
        double w = 1.0 / c[i - 1];
        c[i] = 4.0 - w;
        d[i] = 6.0 * (y[i + 1] - 2.0 * y[i] + y[i - 1]) - w * d[i - 1];
    }
    for (size_t i = n - 2; i >= 1; --i) {
        m[i] = (d[i] - (i + 2 < n ? m[i + 1] : 0.0)) / c[i];
        if (i == 1) break;
    }
    return m;
}

inline double spline_eval(const std::vector<double>& y, const std::vector<double>& m, double u) {
    size_t n = y.size();
    if (n == 1) return y[0];
    double fi = std::floor(u);
    int64_t i = static_cast<int64_t>(fi);
    if (i < 0) i = 0;
    if (i > static_cast<int64_t>(n) - 2) i = static_cast<int64_t>(n) - 2;  // extend end segments
    double t = u - static_cast<double>(i);
    double a = y[static_cast<size_t>(i)];
    double b = y[static_cast<size_t>(i + 1)];
    double ma = m[static_cast<size_t>(i)];
    double mb = m[static_cast<size_t>(i + 1)];
    double omt = 1.0 - t;
    return ma * omt * omt * omt / 6.0 + mb * t * t * t / 6.0 +
           (a - ma / 6.0) * omt + (b - mb / 6.0) * t;
}

}  // namespace detail

// Lifts a low-rate signal onto an integer-multiple target grid. Output length
// is exactly input length * ratio; spline interpolation passes through every
// original sample, zero-order hold repeats it.
inline AudioSignal upsample_to_grid(const AudioSignal& sig, int target_rate_hz, UpsampleMethod method) {
    if (target_rate_hz <= 0) throw ConfigError("upsample: target rate must be positive");
    if (target_rate_hz % sig.sample_rate_hz != 0)
        throw ConfigError("upsample: target rate " + std::to_string(target_rate_hz) +
                          " is not an integer multiple of " + std::to_string(sig.sample_rate_hz));
    int ratio = target_rate_hz / sig.sample_rate_hz;
    AudioSignal out;
    out.sample_rate_hz = target_rate_hz;
    out.bits_per_sample = sig.bits_per_sample;
    out.samples.resize(sig.samples.size() * static_cast<size_t>(ratio));
    if (sig.samples.empty()) return out;

    if (method == UpsampleMethod::zero_order_hold || sig.samples.size() == 1) {
        for (size_t i = 0; i < out.samples.size(); ++i)
            out.samples[i] = sig.samples[i / static_cast<size_t>(ratio)];
        return out;
    }
    std::vector<double> m = detail::spline_second_derivatives(sig.samples);
    for (size_t i = 0; i < out.samples.size(); ++i)
        out.samples[i] = detail::spline_eval(sig.samples, m, static_cast<double>(i) / ratio);
    return out;
}

// ---------------------------------------------------------------------------
// Butterworth filters as cascaded second-order sections
// ---------------------------------------------------------------------------

enum class FilterKind { lowpass, highpass };

struct FilterSpec {
    FilterKind kind = FilterKind::lowpass;
    int order = 1;
    double cutoff_hz = 2000.0;

    void validate() const {
        if (order < 1) throw ConfigError("filter: order must be >= 1");
        if (cutoff_hz <= 0.0) throw ConfigError("filter: cutoff must be positive");
    }
};

struct Biquad {
    double b0 = 1.0, b1 = 0.0, b2 = 0.0;  // feedforward
    double a1 = 0.0, a2 = 0.0;            // feedback (a0 normalized to 1)
};

// Bilinear-transform Butterworth. High orders are only usable in this
// cascaded form; a direct-form order-100 polynomial overflows double range.
inline std::vector<Biquad> butterworth_sos(const FilterSpec& spec, int sample_rate_hz) {
    spec.validate();
    if (spec.cutoff_hz >= 0.5 * sample_rate_hz)
        throw ConfigError("filter: cutoff must be below Nyquist");
    double warped = std::tan(kPi * spec.cutoff_hz / sample_rate_hz);
    int n = spec.order;
    std::vector<Biquad> sos;
    bool highpass = spec.kind == FilterKind::highpass;

    for (int k = 0; k < n / 2; ++k) {
        // Conjugate pole pair at angle theta from the negative real axis.
        double theta = kPi * (2.0 * k + 1.0) / (2.0 * n);
        double a = 2.0 * warped * std::cos(theta);  // -2 Re(p)
        double b = warped * warped;                 // |p|^2
        double den = 1.0 + a + b;
        Biquad q;
        if (highpass) {
            q.b0 = 1.0 / den;
            q.b1 = -2.0 / den;
            q.b2 = 1.0 / den;
        } else {
            q.b0 = b / den;
            q.b1 = 2.0 * b / den;
            q.b2 = b / den;
        }
        q.a1 = (2.0 * b - 2.0) / den;
        q.a2 = (1.0 - a + b) / den;
        sos.push_back(q);
    }
    if (n % 2 == 1) {
        double den = 1.0 + warped;
        Biquad q;
        if (highpass) {
            q.b0 = 1.0 / den;
            q.b1 = -1.0 / den;
        } else {
            q.b0 = warped / den;
            q.b1 = warped / den;
        }
        q.a1 = (warped - 1.0) / den;
        sos.push_back(q);
    }
    return sos;
}

// Causal filtering, direct form II transposed, zero initial state.
inline std::vector<double> sos_filter(const std::vector<Biquad>& sos, const std::vector<double>& x) {
    std::vector<double> y = x;
    for (const Biquad& q : sos) {
        double s1 = 0.0, s2 = 0.0;
        for (double& v : y) {
            double in = v;
            double out = q.b0 * in + s1;
            s1 = q.b1 * in - q.a1 * out + s2;
            s2 = q.b2 * in - q.a2 * out;
            v = out;
        }
    }
    return y;
}

inline AudioSignal apply_filter(const AudioSignal& sig, const FilterSpec& spec) {
    AudioSignal out = sig;
    out.samples = sos_filter(butterworth_sos(spec, sig.sample_rate_hz), sig.samples);
    for (double v : out.samples)
        if (!std::isfinite(v)) throw RuntimeFailure("filter: unstable realization (non-finite output)");
    return out;
}

inline AudioSignal lowpass_decimate(const AudioSignal& sig, const FilterSpec& spec, int factor) {
    if (spec.kind != FilterKind::lowpass) throw ConfigError("lowpass_decimate: filter must be lowpass");
    if (factor < 1) throw ConfigError("lowpass_decimate: factor must be >= 1");
    if (sig.sample_rate_hz % factor != 0)
        throw ConfigError("lowpass_decimate: factor does not divide sample rate");
    double out_nyquist = 0.5 * sig.sample_rate_hz / factor;
    if (spec.cutoff_hz > out_nyquist)
        throw ConfigError("lowpass_decimate: cutoff above output Nyquist");
    return decimate(apply_filter(sig, spec), factor);
}

// Anti-alias filter used ahead of decimation throughout: 100th-order
// Butterworth at the output Nyquist, realized as 50 biquads.
inline FilterSpec antialias_spec(int output_rate_hz) {
    FilterSpec spec;
    spec.kind = FilterKind::lowpass;
    spec.order = 100;
    spec.cutoff_hz = 0.5 * output_rate_hz;
    return spec;
}

// ---------------------------------------------------------------------------
// Sensor preprocessing
// ---------------------------------------------------------------------------

// Accelerometer pickup: remove the DC offset per axis, then average the
// three zero-mean axes into a single speech channel.
inline AudioSignal preprocess_accel(const TriAxialSignal& tri) {
    tri.validate();
    if (tri.x.empty()) throw ConfigError("preprocess_accel: empty input");
    auto mean = [](const std::vector<double>& v) {
        double acc = 0.0;
        for (double s : v) acc += s;
        return acc / static_cast<double>(v.size());
    };
    double mx = mean(tri.x), my = mean(tri.y), mz = mean(tri.z);
    AudioSignal out;
    out.sample_rate_hz = tri.sample_rate_hz;
    out.samples.resize(tri.x.size());
    for (size_t i = 0; i < tri.x.size(); ++i)
        out.samples[i] = ((tri.x[i] - mx) + (tri.y[i] - my) + (tri.z[i] - mz)) / 3.0;
    return out;
}

// Removes body-movement energy (single-digit Hz) ahead of enhancement.
inline AudioSignal movement_highpass(const AudioSignal& sig) {
    if (sig.sample_rate_hz <= 20) throw ConfigError("movement_highpass: sample rate must exceed 20 Hz");
    FilterSpec spec;
    spec.kind = FilterKind::highpass;
    spec.order = 1;
    spec.cutoff_hz = 10.0;
    return apply_filter(sig, spec);
}

// ---------------------------------------------------------------------------
// Overlap-add recombination
// ---------------------------------------------------------------------------

// Raised-cosine crossfade, offset half a sample so no weight is exactly zero.
// At 50% overlap interior weights sum to 1.
inline std::vector<double> crossfade_window(int64_t len) {
    std::vector<double> w(static_cast<size_t>(len));
    for (int64_t i = 0; i < len; ++i)
        w[static_cast<size_t>(i)] = 0.5 - 0.5 * std::cos(kTwoPi * (static_cast<double>(i) + 0.5) / static_cast<double>(len));
    return w;
}

// Recombines processed windows at their original offsets, normalizing by the
// accumulated crossfade weight so coverage gaps at the edges do not attenuate.
inline std::vector<double> overlap_add(const std::vector<std::vector<double>>& windows,
                                       const std::vector<int64_t>& offsets, int64_t total_len) {
    if (windows.size() != offsets.size()) throw ConfigError("overlap_add: window/offset count mismatch");
    std::vector<double> acc(static_cast<size_t>(total_len), 0.0);
    std::vector<double> wacc(static_cast<size_t>(total_len), 0.0);
    for (size_t wi = 0; wi < windows.size(); ++wi) {
        const std::vector<double>& win = windows[wi];
        std::vector<double> fade = crossfade_window(static_cast<int64_t>(win.size()));
        int64_t off = offsets[wi];
        for (size_t i = 0; i < win.size(); ++i) {
            int64_t t = off + static_cast<int64_t>(i);
            if (t < 0 || t >= total_len) continue;
            acc[static_cast<size_t>(t)] += win[i] * fade[i];
            wacc[static_cast<size_t>(t)] += fade[i];
        }
    }
    for (size_t t = 0; t < acc.size(); ++t)
        if (wacc[t] > 0.0) acc[t] /= wacc[t];
    return acc;
}

// ---------------------------------------------------------------------------
// Rational resampling (windowed-sinc), used by the intelligibility metric
// ---------------------------------------------------------------------------

inline std::vector<double> resample_rational(const std::vector<double>& x, int from_rate, int to_rate) {
    if (from_rate <= 0 || to_rate <= 0) throw ConfigError("resample: rates must be positive");
    if (from_rate == to_rate) return x;
    if (x.empty()) return {};
    double ratio = static_cast<double>(to_rate) / from_rate;
    double cutoff = 0.5 * std::min(1.0, ratio);  // cycles per input sample
    const int halfwidth = 32;
    auto kernel = [&](double t) {
        if (std::abs(t) >= halfwidth) return 0.0;
        double v = (t == 0.0) ? 2.0 * cutoff
                              : std::sin(kTwoPi * cutoff * t) / (kPi * t);
        double w = 0.5 + 0.5 * std::cos(kPi * t / halfwidth);  // Hann taper
        return v * w;
    };
    int64_t out_len = static_cast<int64_t>(std::ceil(static_cast<double>(x.size()) * ratio));
    std::vector<double> y(static_cast<size_t>(out_len), 0.0);
    for (int64_t j = 0; j < out_len; ++j) {
        double p = static_cast<double>(j) / ratio;
        int64_t lo = static_cast<int64_t>(std::ceil(p - halfwidth));
        int64_t hi = static_cast<int64_t>(std::floor(p + halfwidth));
        double acc = 0.0, wsum = 0.0;
        for (int64_t n = lo; n <= hi; ++n) {
            double w = kernel(p - static_cast<double>(n));
            wsum += w;
            if (n >= 0 && n < static_cast<int64_t>(x.size())) acc += w * x[static_cast<size_t>(n)];
        }
        y[static_cast<size_t>(j)] = (wsum != 0.0) ? acc / wsum : 0.0;
    }
    return y;
}

}  // namespace vibra_sr
