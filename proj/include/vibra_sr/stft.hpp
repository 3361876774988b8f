#pragma once

#include <cmath>
#include <complex>
#include <string>
#include <vector>

#include "vibra_sr/autodiff.hpp"
#include "vibra_sr/common.hpp"
#include "vibra_sr/fft.hpp"
#include "vibra_sr/tensor.hpp"

namespace vibra_sr {

struct StftResolution {
    int fft_bins = 2048;
    int hop = 512;
    int window_len = 2048;

    void validate() const {
        if (fft_bins <= 0 || hop <= 0 || window_len <= 0)
            throw ConfigError("stft: all resolution fields must be positive");
        if (window_len > fft_bins) throw ConfigError("stft: window_len must be <= fft_bins");
        if (hop > window_len) throw ConfigError("stft: hop must be <= window_len");
        if ((fft_bins & (fft_bins - 1)) != 0) throw ConfigError("stft: fft_bins must be a power of two");
    }
};

// The three resolutions used by the multi-resolution spectral loss.
inline std::vector<StftResolution> loss_stft_resolutions() {
    return {{512, 50, 240}, {1024, 120, 600}, {2048, 240, 1200}};
}

// Magnitude spectrogram (frames x bins) with per-frame columns; frame_rate
// and bin_hz describe the grid.
struct SpectralFrame {
    Tensor X;  // (T frames x K bins), nonnegative
    double frame_rate = 0.0;
    double bin_hz = 0.0;

    int64_t frames() const { return X.dim(0); }
    int64_t bins() const { return X.dim(1); }
};

inline SpectralFrame stft_magnitude(const std::vector<double>& x, const StftResolution& res,
                                    double sample_rate_hz = 16000.0) {
    res.validate();
    if (static_cast<int64_t>(x.size()) < res.window_len)
        throw ConfigError("stft: signal shorter than analysis window (" +
                          std::to_string(x.size()) + " < " + std::to_string(res.window_len) + ")");
    ad::Var xs = ad::constant(Tensor::from({static_cast<int64_t>(x.size())}, x));
    ad::Var mag = ad::stft_mag(nullptr, xs, res.fft_bins, res.hop, res.window_len);
    SpectralFrame sf;
    sf.X = std::move(mag->value);
    sf.frame_rate = sample_rate_hz / res.hop;
    sf.bin_hz = sample_rate_hz / res.fft_bins;
    return sf;
}

}  // namespace vibra_sr
