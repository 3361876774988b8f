#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <vector>

#include "vibra_sr/common.hpp"

namespace vibra_sr {

inline constexpr double kPi = 3.141592653589793238462643383279502884;
inline constexpr double kTwoPi = 2.0 * kPi;

// Iterative radix-2 FFT with cached twiddle/bit-reversal tables.
// Sizes used here are all powers of two (512..65536).
class FftPlan {
public:
    explicit FftPlan(size_t n) : n_(n) {
        if (n == 0 || (n & (n - 1)) != 0)
            throw ConfigError("fft: size must be a power of two, got " + std::to_string(n));
        rev_.resize(n);
        size_t log2n = 0;
        while ((size_t{1} << log2n) < n) ++log2n;
        for (size_t i = 0; i < n; ++i) {
            size_t r = 0;
            for (size_t b = 0; b < log2n; ++b)
                if (i & (size_t{1} << b)) r |= size_t{1} << (log2n - 1 - b);
            rev_[i] = r;
        }
        tw_.resize(n / 2);
        for (size_t k = 0; k < n / 2; ++k) {
            double a = -kTwoPi * static_cast<double>(k) / static_cast<double>(n);
            tw_[k] = {std::cos(a), std::sin(a)};
        }
    }

    size_t size() const { return n_; }

    // In-place forward DFT: X_k = sum_i x_i exp(-2*pi*j*k*i/n).
    void forward(std::vector<std::complex<double>>& x) const {
        if (x.size() != n_) throw ConfigError("fft: buffer size mismatch");
        for (size_t i = 0; i < n_; ++i) {
            size_t r = rev_[i];
            if (i < r) std::swap(x[i], x[r]);
        }
        for (size_t len = 2; len <= n_; len <<= 1) {
            size_t half = len >> 1;
            size_t step = n_ / len;
            for (size_t i = 0; i < n_; i += len) {
                for (size_t k = 0; k < half; ++k) {
                    std::complex<double> w = tw_[k * step];
                    std::complex<double> u = x[i + k];
                    std::complex<double> v = x[i + k + half] * w;
                    x[i + k] = u + v;
                    x[i + k + half] = u - v;
                }
            }
        }
    }

    // Inverse transform without the 1/n factor: y_i = sum_k X_k exp(+2*pi*j*k*i/n).
    void backward_unscaled(std::vector<std::complex<double>>& x) const {
        for (auto& v : x) v = std::conj(v);
        forward(x);
        for (auto& v : x) v = std::conj(v);
    }

    static const FftPlan& get(size_t n) {
        static std::mutex mu;
        static std::map<size_t, std::unique_ptr<FftPlan>> cache;
        std::lock_guard<std::mutex> lock(mu);
        auto it = cache.find(n);
        if (it == cache.end())
            it = cache.emplace(n, std::make_unique<FftPlan>(n)).first;
        return *it->second;
    }

private:
    size_t n_;
    std::vector<size_t> rev_;
    std::vector<std::complex<double>> tw_;
};

inline size_t next_pow2(size_t n) {
    size_t p = 1;
    while (p < n) p <<= 1;
    return p;
}

// Magnitude spectrum |FFT(x)| over the whole signal zero-padded to the next
// power of two; one-sided (bins 0..n/2).
inline std::vector<double> magnitude_spectrum(const std::vector<double>& x) {
    size_t n = next_pow2(x.size() < 2 ? 2 : x.size());
    const FftPlan& plan = FftPlan::get(n);
    std::vector<std::complex<double>> buf(n, {0.0, 0.0});
    for (size_t i = 0; i < x.size(); ++i) buf[i] = {x[i], 0.0};
    plan.forward(buf);
    std::vector<double> mag(n / 2 + 1);
    for (size_t k = 0; k <= n / 2; ++k) mag[k] = std::abs(buf[k]);
    return mag;
}

// Index of the largest one-sided magnitude bin, and its frequency in Hz.
inline std::pair<size_t, double> dominant_peak_hz(const std::vector<double>& x, double sample_rate_hz) {
    std::vector<double> mag = magnitude_spectrum(x);
    size_t fft_n = (mag.size() - 1) * 2;
    size_t best = 0;
    for (size_t k = 1; k < mag.size(); ++k)
        if (mag[k] > mag[best]) best = k;
    return {best, static_cast<double>(best) * sample_rate_hz / static_cast<double>(fft_n)};
}

}  // namespace vibra_sr
