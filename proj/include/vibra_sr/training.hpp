#pragma once

#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "vibra_sr/audio.hpp"
#include "vibra_sr/autodiff.hpp"
#include "vibra_sr/common.hpp"
#include "vibra_sr/dataset.hpp"
#include "vibra_sr/dsp.hpp"
#include "vibra_sr/model.hpp"
#include "vibra_sr/objectives.hpp"

namespace vibra_sr {

// ---------------------------------------------------------------------------
// Configuration and state
// ---------------------------------------------------------------------------

struct TrainConfig {
    int epochs = 30;
    int batch_size = 16;
    double learning_rate = 3e-4;
    uint64_t seed = 0x5eed;
    std::string phase = "pretrain";  // pretrain | finetune
    std::optional<double> max_wall_minutes;
    double grad_clip_norm = 5.0;
    bool use_mse = false;

    void validate() const {
        if (phase != "pretrain" && phase != "finetune")
            throw ConfigError("train: phase must be pretrain or finetune");
        if (epochs < 1 && phase == "pretrain") throw ConfigError("train: epochs must be >= 1");
        if (epochs < 0) throw ConfigError("train: epochs must be >= 0");
        if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
        if (learning_rate <= 0.0) throw ConfigError("train: learning_rate must be positive");
        if (max_wall_minutes && *max_wall_minutes <= 0.0)
            throw ConfigError("train: max_wall_minutes must be positive");
    }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"epochs", c.epochs},
                       {"batch_size", c.batch_size},
                       {"learning_rate", c.learning_rate},
                       {"seed", c.seed},
                       {"phase", c.phase},
                       {"grad_clip_norm", c.grad_clip_norm},
                       {"use_mse", c.use_mse}};
    if (c.max_wall_minutes) j["max_wall_minutes"] = *c.max_wall_minutes;
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    TrainConfig defaults;
    c = defaults;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& k = it.key();
        if (k == "epochs") c.epochs = it->get<int>();
        else if (k == "batch_size") c.batch_size = it->get<int>();
        else if (k == "learning_rate") c.learning_rate = it->get<double>();
        else if (k == "seed") c.seed = it->get<uint64_t>();
        else if (k == "phase") c.phase = it->get<std::string>();
        else if (k == "max_wall_minutes") c.max_wall_minutes = it->get<double>();
        else if (k == "grad_clip_norm") c.grad_clip_norm = it->get<double>();
        else if (k == "use_mse") c.use_mse = it->get<bool>();
        else throw ConfigError("train config: unknown key '" + k + "'");
    }
}

struct EpochLog {
    int epoch = 0;
    int64_t step = 0;
    double mae = 0.0;
    double stft_total = 0.0;
    double total = 0.0;
    double val_total = 0.0;
    double wall_s = 0.0;
};

struct TrainState {
    int64_t step = 0;
    int epoch = 0;
    double best_val_loss = std::numeric_limits<double>::infinity();
    uint64_t seed = 0;
    std::string checkpoint_path;
    std::vector<EpochLog> history;
};

// ---------------------------------------------------------------------------
// Checkpointing
// ---------------------------------------------------------------------------

struct CheckpointMeta {
    ModelConfig config;
    int64_t step = 0;
    int epoch = 0;
    uint64_t seed = 0;
};

inline constexpr char kCheckpointMagic[8] = {'V', 'S', 'R', 'C', 'K', 'P', 'T', '1'};

// Self-describing binary: magic, JSON header (config, step, seed, tensor
// directory), then raw little-endian doubles. Round-trips bit-exactly.
inline void save_checkpoint(const Model& model, const std::string& path, const CheckpointMeta& meta) {
    nlohmann::json header;
    header["config"] = meta.config;
    header["step"] = meta.step;
    header["epoch"] = meta.epoch;
    header["seed"] = meta.seed;
    nlohmann::json tensors = nlohmann::json::array();
    for (const auto& e : model.params().entries()) {
        nlohmann::json t;
        t["name"] = e.name;
        t["shape"] = e.var->value.shape;
        tensors.push_back(t);
    }
    header["tensors"] = tensors;
    std::string hs = header.dump();

    std::ofstream os(path, std::ios::binary);
    if (!os) throw RuntimeFailure("checkpoint: cannot write " + path);
    os.write(kCheckpointMagic, 8);
    uint64_t hlen = hs.size();
    os.write(reinterpret_cast<const char*>(&hlen), 8);
    os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto& e : model.params().entries())
        os.write(reinterpret_cast<const char*>(e.var->value.data.data()),
                 static_cast<std::streamsize>(e.var->value.data.size() * sizeof(double)));
    if (!os) throw RuntimeFailure("checkpoint: write failed " + path);
}

inline Model load_checkpoint(const std::string& path, CheckpointMeta* meta_out = nullptr) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("checkpoint: cannot open " + path);
    char magic[8];
    is.read(magic, 8);
    if (std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw ConfigError("checkpoint: bad magic in " + path);
    uint64_t hlen = 0;
    is.read(reinterpret_cast<char*>(&hlen), 8);
    std::string hs(hlen, '\0');
    is.read(hs.data(), static_cast<std::streamsize>(hlen));
    nlohmann::json header = nlohmann::json::parse(hs);

    CheckpointMeta meta;
    meta.config = header.at("config").get<ModelConfig>();
    meta.step = header.at("step").get<int64_t>();
    meta.epoch = header.at("epoch").get<int>();
    meta.seed = header.at("seed").get<uint64_t>();

    Model model(meta.config, meta.seed ? meta.seed : 1);
    auto& entries = model.params().entries();
    const auto& tensors = header.at("tensors");
    if (tensors.size() != entries.size())
        throw ConfigError("checkpoint: tensor count mismatch in " + path);
    for (size_t i = 0; i < entries.size(); ++i) {
        std::string name = tensors[i].at("name").get<std::string>();
        std::vector<int64_t> shape = tensors[i].at("shape").get<std::vector<int64_t>>();
        if (name != entries[i].name || shape != entries[i].var->value.shape)
            throw ConfigError("checkpoint: tensor '" + name + "' does not match model layout");
        is.read(reinterpret_cast<char*>(entries[i].var->value.data.data()),
                static_cast<std::streamsize>(entries[i].var->value.data.size() * sizeof(double)));
    }
    if (!is) throw ConfigError("checkpoint: truncated file " + path);
    if (meta_out) *meta_out = meta;
    return model;
}

// ---------------------------------------------------------------------------
// Adam optimizer
// ---------------------------------------------------------------------------

class Adam {
public:
    Adam(ParamStore& params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : params_(params), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
        for (const auto& e : params.entries()) {
            m_.push_back(std::vector<double>(e.var->value.data.size(), 0.0));
            v_.push_back(std::vector<double>(e.var->value.data.size(), 0.0));
        }
    }

    // Applies one update from the gradients currently held in the params.
    void step() {
        ++t_;
        double bc1 = 1.0 - std::pow(beta1_, t_);
        double bc2 = 1.0 - std::pow(beta2_, t_);
        auto& entries = params_.entries();
        for (size_t p = 0; p < entries.size(); ++p) {
            auto& node = *entries[p].var;
            if (node.grad.data.empty()) continue;
            for (size_t i = 0; i < node.value.data.size(); ++i) {
                double g = node.grad.data[i];
                m_[p][i] = beta1_ * m_[p][i] + (1.0 - beta1_) * g;
                v_[p][i] = beta2_ * v_[p][i] + (1.0 - beta2_) * g * g;
                double mhat = m_[p][i] / bc1;
                double vhat = v_[p][i] / bc2;
                node.value.data[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
            }
        }
    }

private:
    ParamStore& params_;
    double lr_, beta1_, beta2_, eps_;
    int64_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

namespace detail {

inline void zero_param_grads(ParamStore& params) {
    for (auto& e : params.entries()) e.var->zero_grad();
}

inline void scale_param_grads(ParamStore& params, double s) {
    for (auto& e : params.entries())
        for (double& g : e.var->grad.data) g *= s;
}

inline double clip_param_grads(ParamStore& params, double max_norm) {
    double sq = 0.0;
    for (auto& e : params.entries())
        for (double g : e.var->grad.data) sq += g * g;
    double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) scale_param_grads(params, max_norm / norm);
    return norm;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

inline void write_training_log(const std::string& path, const std::vector<EpochLog>& history) {
    std::ofstream os(path);
    if (!os) throw RuntimeFailure("train: cannot write log " + path);
    os << "step,epoch,mae,stft_total,total,val_total,wall_s\n";
    os.precision(12);
    for (const auto& h : history)
        os << h.step << ',' << h.epoch << ',' << h.mae << ',' << h.stft_total << ',' << h.total
           << ',' << h.val_total << ',' << h.wall_s << '\n';
}

// Mean loss over pairs without touching gradients.
inline double evaluate_loss(const Model& model, const std::vector<WindowPair>& pairs,
                            const std::vector<TargetSpectra>& cache, bool use_mse) {
    if (pairs.empty()) return 0.0;
    double acc = 0.0;
    for (size_t i = 0; i < pairs.size(); ++i) {
        ad::Var in = ad::constant(Tensor::from({1, static_cast<int64_t>(pairs[i].input.size())},
                                               pairs[i].input));
        ad::Var pred = model.forward(nullptr, in, false, nullptr, nullptr);
        ad::Var tgt = ad::constant(Tensor::from({1, static_cast<int64_t>(pairs[i].target.size())},
                                                pairs[i].target));
        LossGraph g = training_loss_graph(nullptr, pred, tgt, loss_stft_resolutions(),
                                          cache.empty() ? nullptr : &cache[i], use_mse);
        acc += g.total->value[0];
    }
    return acc / static_cast<double>(pairs.size());
}

struct TrainRunResult {
    TrainState state;
    std::vector<EpochLog> history;
};

// Shared pretrain/finetune loop: shuffled window batches, Adam with gradient
// clipping, per-epoch train/val rows, best checkpoint kept by val loss.
inline TrainState run_training(Model& model, const std::vector<WindowPair>& train_pairs,
                               const std::vector<WindowPair>& val_pairs, const TrainConfig& tc,
                               const std::string& out_dir) {
    namespace fs = std::filesystem;
    tc.validate();
    if (train_pairs.empty()) throw ConfigError("train: no training windows");
    fs::create_directories(out_dir);

    std::vector<TargetSpectra> train_cache(train_pairs.size());
    for (size_t i = 0; i < train_pairs.size(); ++i)
        train_cache[i] = precompute_target_spectra(train_pairs[i].target, loss_stft_resolutions());
    std::vector<TargetSpectra> val_cache(val_pairs.size());
    for (size_t i = 0; i < val_pairs.size(); ++i)
        val_cache[i] = precompute_target_spectra(val_pairs[i].target, loss_stft_resolutions());

    Rng root(tc.seed);
    Rng dropout_rng = root.fork(0xd0);
    Adam adam(model.params(), tc.learning_rate);

    TrainState state;
    state.seed = tc.seed;
    auto t_start = std::chrono::steady_clock::now();

    std::vector<size_t> order(train_pairs.size());
    std::iota(order.begin(), order.end(), size_t{0});

    for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
        auto t_epoch = std::chrono::steady_clock::now();
        Rng shuffle_rng = root.fork(static_cast<uint64_t>(epoch));
        shuffle_rng.shuffle(order);

        double ep_mae = 0.0, ep_stft = 0.0, ep_total = 0.0;
        int64_t ep_items = 0;

        for (size_t pos = 0; pos < order.size(); pos += static_cast<size_t>(tc.batch_size)) {
            size_t end = std::min(order.size(), pos + static_cast<size_t>(tc.batch_size));
            detail::zero_param_grads(model.params());
            int64_t batch_id = static_cast<int64_t>(pos / static_cast<size_t>(tc.batch_size));
            for (size_t b = pos; b < end; ++b) {
                size_t idx = order[b];
                ad::Tape tape;
                ad::Var in = ad::constant(Tensor::from(
                    {1, static_cast<int64_t>(train_pairs[idx].input.size())}, train_pairs[idx].input));
                ad::Var pred = model.forward(&tape, in, true, &dropout_rng, nullptr);
                ad::Var tgt = ad::constant(Tensor::from(
                    {1, static_cast<int64_t>(train_pairs[idx].target.size())}, train_pairs[idx].target));
                LossGraph g = training_loss_graph(&tape, pred, tgt, loss_stft_resolutions(),
                                                  &train_cache[idx], tc.use_mse);
                double total = g.total->value[0];
                if (!std::isfinite(total))
                    throw RuntimeFailure("train: non-finite loss at step " +
                                         std::to_string(state.step) + " batch " +
                                         std::to_string(batch_id));
                ep_mae += g.mae->value[0];
                ep_stft += g.stft_total->value[0];
                ep_total += total;
                ++ep_items;
                tape.backward(g.total);
                tape.clear();
            }
            detail::scale_param_grads(model.params(), 1.0 / static_cast<double>(end - pos));
            detail::clip_param_grads(model.params(), tc.grad_clip_norm);
            adam.step();
            ++state.step;
        }

        state.epoch = epoch;
        EpochLog log;
        log.epoch = epoch;
        log.step = state.step;
        log.mae = ep_mae / static_cast<double>(ep_items);
        log.stft_total = ep_stft / static_cast<double>(ep_items);
        log.total = ep_total / static_cast<double>(ep_items);
        log.val_total = val_pairs.empty() ? log.total
                                          : evaluate_loss(model, val_pairs, val_cache, tc.use_mse);
        log.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_epoch).count();
        state.history.push_back(log);

        if (log.val_total < state.best_val_loss) {
            state.best_val_loss = log.val_total;
            CheckpointMeta meta{model.config(), state.step, state.epoch, tc.seed};
            state.checkpoint_path = out_dir + "/best.ckpt";
            save_checkpoint(model, state.checkpoint_path, meta);
        }

        write_training_log(out_dir + "/training_log.csv", state.history);

        if (tc.max_wall_minutes) {
            double mins =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count() / 60.0;
            if (mins >= *tc.max_wall_minutes) break;
        }
    }

    CheckpointMeta meta{model.config(), state.step, state.epoch, tc.seed};
    save_checkpoint(model, out_dir + "/final.ckpt", meta);
    if (state.checkpoint_path.empty()) state.checkpoint_path = out_dir + "/final.ckpt";
    return state;
}

inline WindowingPlan training_window_plan(const ModelConfig& cfg) {
    WindowingPlan plan;
    plan.window_len_samples = cfg.window_samples;
    plan.hop_samples = cfg.window_samples / 2;  // 50% overlap
    plan.tail_policy = TailPolicy::drop;
    return plan;
}

// Pretraining: paired (downsampled clean, clean) windows.
inline TrainState pretrain(const ModelConfig& cfg, const PairManifest& train_manifest,
                           const PairManifest* val_manifest, const TrainConfig& tc,
                           const std::string& out_dir) {
    tc.validate();
    if (tc.epochs < 1) throw ConfigError("train: epochs must be >= 1");
    cfg.validate();
    Model model(cfg, tc.seed);
    WindowingPlan plan = training_window_plan(cfg);
    std::vector<WindowPair> train_pairs = load_pairs(train_manifest, plan, cfg.target_rate_hz);
    std::vector<WindowPair> val_pairs =
        val_manifest ? load_pairs(*val_manifest, plan, cfg.target_rate_hz) : std::vector<WindowPair>{};
    if (val_manifest) check_split_disjoint({&train_manifest, val_manifest});
    return run_training(model, train_pairs, val_pairs, tc, out_dir);
}

// Fine-tuning to an individual: loads the checkpoint, keeps every weight
// trainable, trains on the user's paired windows.
inline TrainState finetune(const std::string& checkpoint_path, const PairManifest& user_pairs,
                           const TrainConfig& tc, const std::string& out_dir,
                           const ModelConfig* expected_cfg = nullptr) {
    namespace fs = std::filesystem;
    tc.validate();
    if (user_pairs.entries.empty()) throw ConfigError("finetune: user_pairs manifest is empty");
    CheckpointMeta meta;
    Model model = load_checkpoint(checkpoint_path, &meta);
    if (expected_cfg) {
        nlohmann::json a = meta.config, b = *expected_cfg;
        if (a != b) {
            std::string diffs;
            for (auto it = b.begin(); it != b.end(); ++it)
                if (a.at(it.key()) != it.value()) diffs += it.key() + " ";
            throw ConfigError("finetune: config/checkpoint architecture mismatch in fields: " + diffs);
        }
    }
    if (tc.epochs == 0) {
        fs::create_directories(out_dir);
        TrainState state;
        state.step = meta.step;
        state.epoch = meta.epoch;
        state.seed = tc.seed;
        state.checkpoint_path = out_dir + "/final.ckpt";
        save_checkpoint(model, state.checkpoint_path, meta);
        write_training_log(out_dir + "/training_log.csv", {});
        return state;
    }
    WindowingPlan plan = training_window_plan(model.config());
    std::vector<WindowPair> pairs = load_pairs(user_pairs, plan, model.config().target_rate_hz,
                                               /*xcorr_align=*/true);
    TrainState state = run_training(model, pairs, {}, tc, out_dir);
    state.step += meta.step;
    return state;
}

// ---------------------------------------------------------------------------
// Enhancement (inference)
// ---------------------------------------------------------------------------

// Lifts the signal to the target grid, enhances 50%-overlapped windows, and
// recombines with a raised-cosine crossfade. Output length equals the
// pre-upsampled input length.
inline AudioSignal enhance(const Model& model, const AudioSignal& sig, int target_rate_hz) {
    const ModelConfig& cfg = model.config();
    AudioSignal up = sig.sample_rate_hz == target_rate_hz
                         ? sig
                         : upsample_to_grid(sig, target_rate_hz, UpsampleMethod::spline);
    WindowingPlan plan;
    plan.window_len_samples = cfg.window_samples;
    plan.hop_samples = cfg.window_samples / 2;
    plan.tail_policy = TailPolicy::zero_pad;  // enhance the full signal

    std::vector<int64_t> offsets = window_offsets(up.length(), plan);
    std::vector<std::vector<double>> processed;
    processed.reserve(offsets.size());
    for (int64_t off : offsets) {
        std::vector<double> w(static_cast<size_t>(plan.window_len_samples), 0.0);
        int64_t m = std::min(plan.window_len_samples, up.length() - off);
        for (int64_t i = 0; i < m; ++i) w[static_cast<size_t>(i)] = up.samples[static_cast<size_t>(off + i)];
        processed.push_back(model.enhance_window(w));
    }
    AudioSignal out;
    out.sample_rate_hz = target_rate_hz;
    out.samples = overlap_add(processed, offsets, up.length());
    return out;
}

// Streaming variant: consumes the pre-upsampled signal in chunks, emitting
// samples once every window covering them has been processed. Matches the
// whole-signal path exactly (same offsets, same crossfade).
class StreamingEnhancer {
public:
    StreamingEnhancer(const Model& model, int target_rate_hz)
        : model_(model), rate_(target_rate_hz),
          window_(model.config().window_samples), hop_(model.config().window_samples / 2) {}

    // Push target-grid samples; returns finalized output samples.
    std::vector<double> push(const std::vector<double>& chunk) {
        buf_.insert(buf_.end(), chunk.begin(), chunk.end());
        return drain(false);
    }

    // Flush the tail (zero-padded final windows), returning the remainder.
    std::vector<double> finish() { return drain(true); }

    int64_t total_emitted() const { return emitted_; }

private:
    std::vector<double> drain(bool final) {
        // Process every window fully contained in the buffer; on finish also
        // the zero-padded tail windows.
        while (true) {
            int64_t off = next_window_ * hop_;
            int64_t have = base_ + static_cast<int64_t>(buf_.size());
            bool full = off + window_ <= have;
            bool tail = final && off < have;
            if (!full && !tail) break;
            std::vector<double> w(static_cast<size_t>(window_), 0.0);
            for (int64_t i = 0; i < window_; ++i) {
                int64_t t = off + i - base_;
                if (t >= 0 && t < static_cast<int64_t>(buf_.size())) w[static_cast<size_t>(i)] = buf_[static_cast<size_t>(t)];
            }
            std::vector<double> y = model_.enhance_window(w);
            std::vector<double> fade = crossfade_window(window_);
            ensure_acc(off + window_);
            for (int64_t i = 0; i < window_; ++i) {
                acc_[static_cast<size_t>(off + i - acc_base_)] += y[static_cast<size_t>(i)] * fade[static_cast<size_t>(i)];
                wacc_[static_cast<size_t>(off + i - acc_base_)] += fade[static_cast<size_t>(i)];
            }
            ++next_window_;
        }
        // Samples before the next window's start are final.
        int64_t have = base_ + static_cast<int64_t>(buf_.size());
        int64_t ready = final ? have : std::min(have, next_window_ * hop_);
        std::vector<double> out;
        for (int64_t t = ready_; t < ready; ++t) {
            size_t i = static_cast<size_t>(t - acc_base_);
            double w = i < wacc_.size() ? wacc_[i] : 0.0;
            out.push_back(w > 0.0 ? acc_[i] / w : 0.0);
        }
        ready_ = ready;
        emitted_ += static_cast<int64_t>(out.size());
        // Drop consumed input (keep one window of context).
        int64_t keep_from = std::max<int64_t>(base_, next_window_ * hop_);
        if (keep_from > base_) {
            buf_.erase(buf_.begin(), buf_.begin() + (keep_from - base_));
            base_ = keep_from;
        }
        return out;
    }

    void ensure_acc(int64_t upto) {
        if (acc_.empty()) acc_base_ = 0;
        int64_t need = upto - acc_base_;
        if (need > static_cast<int64_t>(acc_.size())) {
            acc_.resize(static_cast<size_t>(need), 0.0);
            wacc_.resize(static_cast<size_t>(need), 0.0);
        }
    }

    const Model& model_;
    int rate_;
    int64_t window_, hop_;
    std::vector<double> buf_;
    int64_t base_ = 0;        // absolute index of buf_[0]
    int64_t next_window_ = 0;
    std::vector<double> acc_, wacc_;
    int64_t acc_base_ = 0;
    int64_t ready_ = 0;
    int64_t emitted_ = 0;
};

inline AudioSignal enhance_chunked(const Model& model, const AudioSignal& sig, int target_rate_hz,
                                   int64_t chunk_samples) {
    AudioSignal up = sig.sample_rate_hz == target_rate_hz
                         ? sig
                         : upsample_to_grid(sig, target_rate_hz, UpsampleMethod::spline);
    StreamingEnhancer se(model, target_rate_hz);
    AudioSignal out;
    out.sample_rate_hz = target_rate_hz;
    for (int64_t off = 0; off < up.length(); off += chunk_samples) {
        int64_t n = std::min(chunk_samples, up.length() - off);
        std::vector<double> chunk(up.samples.begin() + off, up.samples.begin() + off + n);
        std::vector<double> part = se.push(chunk);
        out.samples.insert(out.samples.end(), part.begin(), part.end());
    }
    std::vector<double> tail = se.finish();
    out.samples.insert(out.samples.end(), tail.begin(), tail.end());
    out.samples.resize(static_cast<size_t>(up.length()), 0.0);
    return out;
}

// ---------------------------------------------------------------------------
// Latency
// ---------------------------------------------------------------------------

struct LatencyReport {
    double median_ms = 0.0;
    double cv = 0.0;  // coefficient of variation across runs
    bool real_time = false;
    double window_ms = 0.0;
};

inline LatencyReport measure_inference_latency(const Model& model, const std::vector<double>& window,
                                               int runs = 21, int warmup = 3) {
    if (runs < 1) throw ConfigError("latency: runs must be >= 1");
    std::vector<double> w = window;
    if (w.empty()) w.assign(static_cast<size_t>(model.config().window_samples), 0.0);
    for (int i = 0; i < warmup; ++i) model.enhance_window(w);
    std::vector<double> times;
    for (int i = 0; i < runs; ++i) {
        auto t0 = std::chrono::steady_clock::now();
        model.enhance_window(w);
        times.push_back(
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    }
    std::vector<double> sorted = times;
    std::sort(sorted.begin(), sorted.end());
    LatencyReport r;
    r.median_ms = sorted[sorted.size() / 2];
    double mean = 0.0;
    for (double t : times) mean += t;
    mean /= static_cast<double>(times.size());
    double var = 0.0;
    for (double t : times) var += (t - mean) * (t - mean);
    var /= static_cast<double>(times.size());
    r.cv = mean > 0.0 ? std::sqrt(var) / mean : 0.0;
    r.window_ms = 1000.0 * static_cast<double>(w.size()) / model.config().target_rate_hz;
    r.real_time = r.median_ms < r.window_ms;
    return r;
}

}  // namespace vibra_sr
