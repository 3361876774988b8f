#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "vibra_sr/common.hpp"

namespace vibra_sr {

// Mono sample sequence. Samples are dimensionless amplitudes, nominally in
// [-1, 1]; bits_per_sample records the source/sink PCM depth.
struct AudioSignal {
    std::vector<double> samples;
    int sample_rate_hz = 16000;
    int bits_per_sample = 16;

    int64_t length() const { return static_cast<int64_t>(samples.size()); }
    double duration_s() const {
        return static_cast<double>(samples.size()) / sample_rate_hz;
    }

    void validate() const {
        if (sample_rate_hz <= 0) throw ConfigError("audio: sample_rate_hz must be positive");
        if (bits_per_sample <= 0) throw ConfigError("audio: bits_per_sample must be positive");
        for (double v : samples)
            if (!std::isfinite(v)) throw ConfigError("audio: non-finite sample");
    }
};

struct TriAxialSignal {
    std::vector<double> x, y, z;
    int sample_rate_hz = 16000;

    void validate() const {
        if (sample_rate_hz <= 0) throw ConfigError("triaxial: sample_rate_hz must be positive");
        if (x.size() != y.size() || y.size() != z.size())
            throw ConfigError("triaxial: axes must have equal length");
    }
};

inline double signal_rms(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    double acc = 0.0;
    for (double s : v) acc += s * s;
    return std::sqrt(acc / static_cast<double>(v.size()));
}

// ---------------------------------------------------------------------------
// WAV I/O: 16-bit PCM little-endian, mono for AudioSignal, 3-channel for
// TriAxialSignal.
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u32(std::ostream& os, uint32_t v) {
    char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                 static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    os.write(b, 4);
}

inline void put_u16(std::ostream& os, uint16_t v) {
    char b[2] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff)};
    os.write(b, 2);
}

inline uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

inline uint16_t get_u16(std::istream& is) {
    unsigned char b[2];
    is.read(reinterpret_cast<char*>(b), 2);
    return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

inline int16_t quantize16(double v) {
    double scaled = std::nearbyint(v * 32767.0);
    if (scaled > 32767.0) scaled = 32767.0;
    if (scaled < -32768.0) scaled = -32768.0;
    return static_cast<int16_t>(scaled);
}

}  // namespace detail

inline void write_wav(const std::string& path, const std::vector<std::vector<double>>& channels,
                      int sample_rate_hz) {
    if (channels.empty()) throw ConfigError("wav: no channels to write");
    size_t frames = channels[0].size();
    for (const auto& ch : channels)
        if (ch.size() != frames) throw ConfigError("wav: channel length mismatch");

    std::ofstream os(path, std::ios::binary);
    if (!os) throw RuntimeFailure("wav: cannot open for writing: " + path);

    uint16_t nch = static_cast<uint16_t>(channels.size());
    uint32_t data_bytes = static_cast<uint32_t>(frames * nch * 2);
    uint32_t byte_rate = static_cast<uint32_t>(sample_rate_hz) * nch * 2;

    os.write("RIFF", 4);
    detail::put_u32(os, 36 + data_bytes);
    os.write("WAVE", 4);
    os.write("fmt ", 4);
    detail::put_u32(os, 16);
    detail::put_u16(os, 1);  // PCM
    detail::put_u16(os, nch);
    detail::put_u32(os, static_cast<uint32_t>(sample_rate_hz));
    detail::put_u32(os, byte_rate);
    detail::put_u16(os, static_cast<uint16_t>(nch * 2));
    detail::put_u16(os, 16);
    os.write("data", 4);
    detail::put_u32(os, data_bytes);
    for (size_t i = 0; i < frames; ++i) {
        for (const auto& ch : channels) {
            int16_t s = detail::quantize16(ch[i]);
            char b[2] = {static_cast<char>(s & 0xff), static_cast<char>((s >> 8) & 0xff)};
            os.write(b, 2);
        }
    }
    if (!os) throw RuntimeFailure("wav: write failed: " + path);
}

inline void write_wav(const std::string& path, const AudioSignal& sig) {
    write_wav(path, {sig.samples}, sig.sample_rate_hz);
}

inline void write_wav(const std::string& path, const TriAxialSignal& tri) {
    write_wav(path, {tri.x, tri.y, tri.z}, tri.sample_rate_hz);
}

// Reads a PCM16 WAV; returns one vector per channel.
inline std::vector<std::vector<double>> read_wav_channels(const std::string& path, int* rate_out) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("wav: cannot open: " + path);

    char tag[4];
    is.read(tag, 4);
    if (std::memcmp(tag, "RIFF", 4) != 0) throw ConfigError("wav: not a RIFF file: " + path);
    detail::get_u32(is);
    is.read(tag, 4);
    if (std::memcmp(tag, "WAVE", 4) != 0) throw ConfigError("wav: not a WAVE file: " + path);

    uint16_t nch = 0, bits = 0, fmt = 0;
    uint32_t rate = 0;
    bool got_fmt = false;
    std::vector<std::vector<double>> channels;

    while (is && !is.eof()) {
        if (!is.read(tag, 4)) break;
        uint32_t chunk_len = detail::get_u32(is);
        if (std::memcmp(tag, "fmt ", 4) == 0) {
            fmt = detail::get_u16(is);
            nch = detail::get_u16(is);
            rate = detail::get_u32(is);
            detail::get_u32(is);
            detail::get_u16(is);
            bits = detail::get_u16(is);
            if (chunk_len > 16) is.seekg(chunk_len - 16, std::ios::cur);
            got_fmt = true;
        } else if (std::memcmp(tag, "data", 4) == 0) {
            if (!got_fmt) throw ConfigError("wav: data chunk before fmt: " + path);
            if (fmt != 1 || bits != 16)
                throw ConfigError("wav: only 16-bit PCM supported: " + path);
            size_t frames = chunk_len / (static_cast<size_t>(nch) * 2);
            channels.assign(nch, std::vector<double>(frames));
            std::vector<char> raw(chunk_len);
            is.read(raw.data(), static_cast<std::streamsize>(chunk_len));
            for (size_t i = 0; i < frames; ++i) {
                for (size_t c = 0; c < nch; ++c) {
                    size_t off = (i * nch + c) * 2;
                    int16_t s = static_cast<int16_t>(
                        static_cast<unsigned char>(raw[off]) |
                        (static_cast<unsigned char>(raw[off + 1]) << 8));
                    channels[c][i] = static_cast<double>(s) / 32767.0;
                }
            }
            break;
        } else {
            is.seekg(chunk_len + (chunk_len & 1), std::ios::cur);
        }
    }
    if (channels.empty()) throw ConfigError("wav: no data chunk: " + path);
    if (rate_out) *rate_out = static_cast<int>(rate);
    return channels;
}

inline AudioSignal read_wav_mono(const std::string& path) {
    int rate = 0;
    auto channels = read_wav_channels(path, &rate);
    if (channels.size() != 1)
        throw ConfigError("wav: expected mono, got " + std::to_string(channels.size()) +
                          " channels: " + path);
    AudioSignal sig;
    sig.samples = std::move(channels[0]);
    sig.sample_rate_hz = rate;
    return sig;
}

// Tri-axial input: 3-channel WAV, or CSV with header "x,y,z".
inline TriAxialSignal read_triaxial(const std::string& path, int csv_rate_hz = 16000) {
    TriAxialSignal tri;
    if (path.size() >= 4 && path.substr(path.size() - 4) == ".csv") {
        std::ifstream is(path);
        if (!is) throw ConfigError("csv: cannot open: " + path);
        std::string line;
        if (!std::getline(is, line)) throw ConfigError("csv: empty file: " + path);
        auto strip = [](std::string s) {
            while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.pop_back();
            return s;
        };
        if (strip(line) != "x,y,z")
            throw ConfigError("csv: expected header 'x,y,z': " + path);
        while (std::getline(is, line)) {
            line = strip(line);
            if (line.empty()) continue;
            std::istringstream ls(line);
            std::string cell;
            double v[3];
            for (int i = 0; i < 3; ++i) {
                if (!std::getline(ls, cell, ',')) throw ConfigError("csv: short row: " + path);
                v[i] = std::stod(cell);
            }
            tri.x.push_back(v[0]);
            tri.y.push_back(v[1]);
            tri.z.push_back(v[2]);
        }
        tri.sample_rate_hz = csv_rate_hz;
    } else {
        int rate = 0;
        auto channels = read_wav_channels(path, &rate);
        if (channels.size() != 3)
            throw ConfigError("triaxial wav: expected 3 channels, got " +
                              std::to_string(channels.size()) + ": " + path);
        tri.x = std::move(channels[0]);
        tri.y = std::move(channels[1]);
        tri.z = std::move(channels[2]);
        tri.sample_rate_hz = rate;
    }
    tri.validate();
    return tri;
}

}  // namespace vibra_sr
