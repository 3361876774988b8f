#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "vibra_sr/audio.hpp"
#include "vibra_sr/common.hpp"
#include "vibra_sr/dsp.hpp"
#include "vibra_sr/fft.hpp"

namespace vibra_sr {

// ---------------------------------------------------------------------------
// Manifests
// ---------------------------------------------------------------------------

struct ManifestEntry {
    std::string input_path;
    std::string target_path;
    std::string speaker_id;
    std::string placement_tag;
    double duration_s = 0.0;
};

struct PairManifest {
    std::vector<ManifestEntry> entries;
    std::string split = "train";  // train | val | test

    void validate_split() const {
        if (split != "train" && split != "val" && split != "test")
            throw ConfigError("manifest: split must be train, val or test");
    }
};

inline void write_manifest(const std::string& path, const PairManifest& m) {
    std::ofstream os(path);
    if (!os) throw RuntimeFailure("manifest: cannot write " + path);
    os << "input,target,speaker,placement,duration_s\n";
    for (const auto& e : m.entries)
        os << e.input_path << ',' << e.target_path << ',' << e.speaker_id << ','
           << e.placement_tag << ',' << e.duration_s << '\n';
}

inline PairManifest read_manifest(const std::string& path, const std::string& split = "train") {
    std::ifstream is(path);
    if (!is) throw ConfigError("manifest: cannot open " + path);
    std::string line;
    if (!std::getline(is, line)) throw ConfigError("manifest: empty file " + path);
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (line != "input,target,speaker,placement,duration_s")
        throw ConfigError("manifest: bad header in " + path);
    PairManifest m;
    m.split = split;
    m.validate_split();
    while (std::getline(is, line)) {
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
        if (line.empty()) continue;
        std::istringstream ls(line);
        ManifestEntry e;
        std::string dur;
        if (!std::getline(ls, e.input_path, ',') || !std::getline(ls, e.target_path, ',') ||
            !std::getline(ls, e.speaker_id, ',') || !std::getline(ls, e.placement_tag, ',') ||
            !std::getline(ls, dur, ','))
            throw ConfigError("manifest: short row in " + path + ": " + line);
        e.duration_s = std::stod(dur);
        if (e.duration_s <= 0.0) throw ConfigError("manifest: nonpositive duration in " + path);
        m.entries.push_back(std::move(e));
    }
    return m;
}

// No speaker may appear in more than one split.
inline void check_split_disjoint(const std::vector<const PairManifest*>& manifests) {
    std::map<std::string, std::string> seen;  // speaker -> split
    for (const PairManifest* m : manifests) {
        for (const auto& e : m->entries) {
            auto it = seen.find(e.speaker_id);
            if (it != seen.end() && it->second != m->split)
                throw ConfigError("manifest: speaker '" + e.speaker_id + "' appears in splits '" +
                                  it->second + "' and '" + m->split + "'");
            seen[e.speaker_id] = m->split;
        }
    }
}

// ---------------------------------------------------------------------------
// Synthetic speech-like corpus
// ---------------------------------------------------------------------------

struct SyntheticSpeechSpec {
    double f0_hz = 150.0;
    std::vector<double> formant_centers_hz{730.0, 1090.0, 2440.0};
    double duration_s = 1.0;
    uint64_t seed = 1;
    int sample_rate_hz = 16000;

    void validate() const {
        if (f0_hz <= 0.0 || duration_s <= 0.0 || sample_rate_hz <= 0)
            throw ConfigError("synth: f0, duration and rate must be positive");
        if (formant_centers_hz.empty()) throw ConfigError("synth: need at least one formant");
        double nyq = 0.5 * sample_rate_hz;
        for (double f : formant_centers_hz) {
            if (f <= f0_hz) throw ConfigError("synth: formants must lie above f0");
            if (f >= nyq) throw ConfigError("synth: formants must lie below Nyquist");
        }
    }
};

// Deterministic speech-like signal: harmonic series at f0 shaped by formant
// resonances, a carrier line at each formant center (the resonance ringing),
// slow amplitude modulation, and a low noise floor. Peak-normalized to 0.9.
inline AudioSignal synth_speech(const SyntheticSpeechSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    int64_t n = static_cast<int64_t>(std::llround(spec.duration_s * spec.sample_rate_hz));
    AudioSignal out;
    out.sample_rate_hz = spec.sample_rate_hz;
    out.samples.assign(static_cast<size_t>(n), 0.0);

    double nyq = 0.5 * spec.sample_rate_hz;
    auto formant_gain = [&](double f) {
        double g = 0.0;
        for (double fc : spec.formant_centers_hz) {
            double d = (f - fc) / 110.0;
            g += 1.0 / (1.0 + d * d);
        }
        return g;
    };

    int harmonics = static_cast<int>((nyq - 1.0) / spec.f0_hz);
    std::vector<double> amp(static_cast<size_t>(harmonics)), phase(static_cast<size_t>(harmonics));
    for (int k = 0; k < harmonics; ++k) {
        double f = (k + 1) * spec.f0_hz;
        amp[static_cast<size_t>(k)] = formant_gain(f) / std::sqrt(static_cast<double>(k + 1));
        phase[static_cast<size_t>(k)] = rng.uniform(0.0, kTwoPi);
    }
    std::vector<double> fphase(spec.formant_centers_hz.size());
    for (double& p : fphase) p = rng.uniform(0.0, kTwoPi);
    double am_phase = rng.uniform(0.0, kTwoPi);

    for (int64_t i = 0; i < n; ++i) {
        double t = static_cast<double>(i) / spec.sample_rate_hz;
        double v = 0.0;
        for (int k = 0; k < harmonics; ++k)
            v += amp[static_cast<size_t>(k)] *
                 std::sin(kTwoPi * (k + 1) * spec.f0_hz * t + phase[static_cast<size_t>(k)]);
        for (size_t fi = 0; fi < spec.formant_centers_hz.size(); ++fi)
            v += 1.5 / static_cast<double>(fi + 1) *
                 std::sin(kTwoPi * spec.formant_centers_hz[fi] * t + fphase[fi]);
        double am = 0.65 + 0.35 * std::sin(kTwoPi * 2.7 * t + am_phase);
        out.samples[static_cast<size_t>(i)] = v * am + 0.01 * (2.0 * rng.uniform() - 1.0);
    }
    double peak = 0.0;
    for (double v : out.samples) peak = std::max(peak, std::abs(v));
    if (peak > 0.0)
        for (double& v : out.samples) v *= 0.9 / peak;
    return out;
}

// ---------------------------------------------------------------------------
// Pretraining pair synthesis
// ---------------------------------------------------------------------------

enum class DownsampleScheme { decimate, filter_decimate };

inline DownsampleScheme scheme_from_string(const std::string& s) {
    if (s == "decimate") return DownsampleScheme::decimate;
    if (s == "filter_decimate") return DownsampleScheme::filter_decimate;
    throw ConfigError("scheme: unknown downsampling scheme '" + s + "'");
}

inline std::string scheme_to_string(DownsampleScheme s) {
    return s == DownsampleScheme::decimate ? "decimate" : "filter_decimate";
}

// target = clean; input = clean taken down to low_rate_hz by the chosen
// scheme, then lifted back onto the clean grid by spline interpolation and
// trimmed/padded to the target length.
inline std::pair<AudioSignal, AudioSignal> make_pretrain_pair(const AudioSignal& clean,
                                                              int low_rate_hz,
                                                              DownsampleScheme scheme) {
    if (low_rate_hz <= 0) throw ConfigError("pretrain pair: low rate must be positive");
    if (clean.sample_rate_hz % low_rate_hz != 0)
        throw ConfigError("pretrain pair: low rate " + std::to_string(low_rate_hz) +
                          " does not divide clean rate " + std::to_string(clean.sample_rate_hz));
    int factor = clean.sample_rate_hz / low_rate_hz;
    if (factor == 1) return {clean, clean};

    AudioSignal low = scheme == DownsampleScheme::decimate
                          ? decimate(clean, factor)
                          : lowpass_decimate(clean, antialias_spec(low_rate_hz), factor);
    AudioSignal input = upsample_to_grid(low, clean.sample_rate_hz, UpsampleMethod::spline);
    input.samples.resize(clean.samples.size(), 0.0);
    return {std::move(input), clean};
}

// ---------------------------------------------------------------------------
// Window pair loading
// ---------------------------------------------------------------------------

struct WindowPair {
    std::vector<double> input;
    std::vector<double> target;
};

namespace detail {

// Cross-correlation lag estimate over the leading seconds, search +-max_lag.
inline int64_t estimate_lag(const std::vector<double>& a, const std::vector<double>& b,
                            int64_t max_lag, int64_t probe_len) {
    int64_t n = std::min<int64_t>({probe_len, static_cast<int64_t>(a.size()),
                                   static_cast<int64_t>(b.size())});
    if (n < 2 * max_lag + 2) return 0;
    int64_t best_lag = 0;
    double best = -std::numeric_limits<double>::infinity();
    for (int64_t lag = -max_lag; lag <= max_lag; ++lag) {
        double acc = 0.0;
        for (int64_t i = std::max<int64_t>(0, -lag); i < n && i + lag < n; ++i)
            acc += a[static_cast<size_t>(i + lag)] * b[static_cast<size_t>(i)];
        if (acc > best) {
            best = acc;
            best_lag = lag;
        }
    }
    return best_lag;
}

}  // namespace detail

// Loads every aligned window pair in manifest order (offsets ascending within
// a file). Both files must share the target grid; durations differing by more
// than one window are an error naming the entry. Optional cross-correlation
// trim (+-50 ms) guards against capture-rig offsets in real recordings.
inline std::vector<WindowPair> load_pairs(const PairManifest& manifest, const WindowingPlan& plan,
                                          int expected_rate_hz = 0, bool xcorr_align = false) {
    plan.validate();
    std::vector<WindowPair> out;
    for (const auto& e : manifest.entries) {
        AudioSignal in = read_wav_mono(e.input_path);
        AudioSignal tg = read_wav_mono(e.target_path);
        if (in.sample_rate_hz != tg.sample_rate_hz)
            throw ConfigError("pairs: sample rate mismatch for " + e.input_path);
        if (expected_rate_hz && in.sample_rate_hz != expected_rate_hz)
            throw ConfigError("pairs: expected " + std::to_string(expected_rate_hz) + " Hz, got " +
                              std::to_string(in.sample_rate_hz) + " in " + e.input_path);
        int64_t diff = std::abs(in.length() - tg.length());
        if (diff > plan.window_len_samples)
            throw ConfigError("pairs: durations differ by more than one window for entry input=" +
                              e.input_path + " target=" + e.target_path);
        if (xcorr_align) {
            int64_t max_lag = in.sample_rate_hz / 20;  // 50 ms
            int64_t lag = detail::estimate_lag(tg.samples, in.samples, max_lag,
                                               2 * in.sample_rate_hz);
            if (lag > 0) tg.samples.erase(tg.samples.begin(), tg.samples.begin() + lag);
            else if (lag < 0) in.samples.erase(in.samples.begin(), in.samples.begin() + (-lag));
        }
        int64_t n = std::min(in.length(), tg.length());
        in.samples.resize(static_cast<size_t>(n));
        tg.samples.resize(static_cast<size_t>(n));
        if (n < 1) continue;
        for (int64_t off : window_offsets(n, plan)) {
            WindowPair wp;
            wp.input.assign(static_cast<size_t>(plan.window_len_samples), 0.0);
            wp.target.assign(static_cast<size_t>(plan.window_len_samples), 0.0);
            int64_t m = std::min(plan.window_len_samples, n - off);
            for (int64_t i = 0; i < m; ++i) {
                wp.input[static_cast<size_t>(i)] = in.samples[static_cast<size_t>(off + i)];
                wp.target[static_cast<size_t>(i)] = tg.samples[static_cast<size_t>(off + i)];
            }
            out.push_back(std::move(wp));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Desk-scale corpus generation
// ---------------------------------------------------------------------------

struct CorpusSpec {
    double total_seconds = 60.0;
    int speakers = 3;
    double clip_seconds = 3.072;  // multiple of the 512 ms window
    uint64_t seed = 7;
    int sample_rate_hz = 16000;
};

// Writes clean speech-like clips plus manifest rows; speakers differ in f0
// and formant layout. Returns the manifest (targets only; inputs are derived
// by the prepare step).
inline PairManifest generate_clean_corpus(const std::string& out_dir, const CorpusSpec& spec) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    PairManifest manifest;
    manifest.split = "train";
    Rng rng(spec.seed);
    int clips = static_cast<int>(std::ceil(spec.total_seconds / spec.clip_seconds));
    for (int i = 0; i < clips; ++i) {
        int speaker = i % spec.speakers;
        SyntheticSpeechSpec s;
        s.f0_hz = 120.0 + 35.0 * speaker + rng.uniform(-8.0, 8.0);
        s.formant_centers_hz = {600.0 + 90.0 * speaker + rng.uniform(-30.0, 30.0),
                                1100.0 + 130.0 * speaker + rng.uniform(-40.0, 40.0),
                                2500.0 + 210.0 * speaker + rng.uniform(-60.0, 60.0),
                                3400.0 + 150.0 * speaker + rng.uniform(-60.0, 60.0)};
        s.duration_s = spec.clip_seconds;
        s.seed = rng.next_u64();
        s.sample_rate_hz = spec.sample_rate_hz;
        AudioSignal clip = synth_speech(s);
        std::string path = out_dir + "/clean_" + std::to_string(i) + ".wav";
        write_wav(path, clip);
        ManifestEntry e;
        e.input_path = path;  // placeholder until inputs are derived
        e.target_path = path;
        e.speaker_id = "spk" + std::to_string(speaker);
        e.placement_tag = "clean";
        e.duration_s = clip.duration_s();
        manifest.entries.push_back(std::move(e));
    }
    return manifest;
}

// Derives (input, target) WAV pairs from a clean manifest with the chosen
// downsampling scheme; placement_tag records "pretrain:<scheme>@<rate>".
inline PairManifest derive_pretrain_inputs(const PairManifest& clean, const std::string& out_dir,
                                           int low_rate_hz, DownsampleScheme scheme) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    PairManifest out;
    out.split = clean.split;
    int idx = 0;
    for (const auto& e : clean.entries) {
        AudioSignal target = read_wav_mono(e.target_path);
        auto [input, tgt] = make_pretrain_pair(target, low_rate_hz, scheme);
        std::string in_path = out_dir + "/input_" + std::to_string(idx) + ".wav";
        write_wav(in_path, input);
        ManifestEntry ne;
        ne.input_path = in_path;
        ne.target_path = e.target_path;
        ne.speaker_id = e.speaker_id;
        ne.placement_tag = "pretrain:" + scheme_to_string(scheme) + "@" + std::to_string(low_rate_hz);
        ne.duration_s = e.duration_s;
        out.entries.push_back(std::move(ne));
        ++idx;
    }
    return out;
}

// VCTK-like ingestion: scans dir/<speaker>/*.wav into a clean manifest.
inline PairManifest ingest_clean_tree(const std::string& root) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(root)) throw ConfigError("ingest: not a directory: " + root);
    PairManifest m;
    m.split = "train";
    std::vector<fs::path> speakers;
    for (const auto& d : fs::directory_iterator(root))
        if (d.is_directory()) speakers.push_back(d.path());
    std::sort(speakers.begin(), speakers.end());
    for (const auto& sp : speakers) {
        std::vector<fs::path> wavs;
        for (const auto& f : fs::directory_iterator(sp))
            if (f.path().extension() == ".wav") wavs.push_back(f.path());
        std::sort(wavs.begin(), wavs.end());
        for (const auto& w : wavs) {
            AudioSignal sig = read_wav_mono(w.string());
            ManifestEntry e;
            e.input_path = w.string();
            e.target_path = w.string();
            e.speaker_id = sp.filename().string();
            e.placement_tag = "clean";
            e.duration_s = sig.duration_s();
            m.entries.push_back(std::move(e));
        }
    }
    return m;
}

}  // namespace vibra_sr
