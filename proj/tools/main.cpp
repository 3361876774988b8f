// vibra_sr command-line tool: data preparation, pretraining, fine-tuning,
// enhancement, evaluation, ablation reports, and the sampling/power budget.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "vibra_sr/audio.hpp"
#include "vibra_sr/budget.hpp"
#include "vibra_sr/common.hpp"
#include "vibra_sr/dataset.hpp"
#include "vibra_sr/dsp.hpp"
#include "vibra_sr/metrics.hpp"
#include "vibra_sr/model.hpp"
#include "vibra_sr/reporting.hpp"
#include "vibra_sr/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace vibra_sr;

namespace {

struct GlobalOpts {
    std::string config_path;
    std::vector<std::string> overrides;
    uint64_t seed = 0x5eed;
    bool seed_set = false;
    std::string out_dir;
};

json load_config_json(const GlobalOpts& g) {
    json cfg = json::object();
    if (!g.config_path.empty()) {
        std::ifstream is(g.config_path);
        if (!is) throw ConfigError("config: cannot open " + g.config_path);
        try {
            is >> cfg;
        } catch (const std::exception& e) {
            throw ConfigError(std::string("config: parse failure: ") + e.what());
        }
    }
    for (const auto& kv : g.overrides) {
        auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
        std::string key = kv.substr(0, eq);
        std::string value = kv.substr(eq + 1);
        auto dot = key.find('.');
        if (dot == std::string::npos)
            throw ConfigError("--set keys are dotted (model.* or train.*), got '" + key + "'");
        std::string section = key.substr(0, dot);
        std::string field = key.substr(dot + 1);
        if (section != "model" && section != "train")
            throw ConfigError("--set section must be model or train, got '" + section + "'");
        json parsed;
        try {
            parsed = json::parse(value);
        } catch (...) {
            parsed = value;  // bare strings allowed
        }
        cfg[section][field] = parsed;
    }
    return cfg;
}

ModelConfig model_config_from(const json& cfg) {
    ModelConfig mc;
    if (cfg.contains("model")) mc = cfg.at("model").get<ModelConfig>();
    mc.validate();
    return mc;
}

TrainConfig train_config_from(const json& cfg, const GlobalOpts& g) {
    TrainConfig tc;
    if (cfg.contains("train")) tc = cfg.at("train").get<TrainConfig>();
    if (g.seed_set) tc.seed = g.seed;
    return tc;
}

void check_known_sections(const json& cfg) {
    for (auto it = cfg.begin(); it != cfg.end(); ++it)
        if (it.key() != "model" && it.key() != "train")
            throw ConfigError("config: unknown section '" + it.key() + "'");
}

void write_resolved_config(const std::string& out_dir, const std::string& command, const json& cfg,
                           const TrainConfig* tc, const ModelConfig* mc) {
    fs::create_directories(out_dir);
    json j;
    j["command"] = command;
    j["config"] = cfg;
    if (mc) j["model"] = *mc;
    if (tc) j["train"] = *tc;
    write_json_file(out_dir + "/resolved_config.json", j);
}

std::vector<int> parse_rate_list(const std::string& csv) {
    std::vector<int> rates;
    std::istringstream is(csv);
    std::string tok;
    while (std::getline(is, tok, ',')) {
        if (tok.empty()) continue;
        rates.push_back(std::stoi(tok));
    }
    if (rates.empty()) throw ConfigError("sweep: no rates given");
    return rates;
}

// ---------------------------------------------------------------------------
// prepare
// ---------------------------------------------------------------------------

int cmd_prepare(const GlobalOpts& g, double seconds, int speakers, int low_rate,
                const std::string& scheme_str, const std::string& clean_dir, double val_fraction) {
    json cfg = load_config_json(g);
    check_known_sections(cfg);
    ModelConfig mc = model_config_from(cfg);
    std::string out = g.out_dir;
    fs::create_directories(out);

    PairManifest clean;
    if (!clean_dir.empty()) {
        clean = ingest_clean_tree(clean_dir);
    } else {
        CorpusSpec spec;
        spec.total_seconds = seconds;
        spec.speakers = speakers;
        spec.seed = g.seed;
        spec.sample_rate_hz = mc.target_rate_hz;
        clean = generate_clean_corpus(out + "/clean", spec);
    }
    DownsampleScheme scheme = scheme_from_string(scheme_str);
    PairManifest pairs = derive_pretrain_inputs(clean, out + "/inputs", low_rate, scheme);

    // Split by speaker so train/val stay disjoint.
    std::vector<std::string> speakers_seen;
    for (const auto& e : pairs.entries)
        if (std::find(speakers_seen.begin(), speakers_seen.end(), e.speaker_id) == speakers_seen.end())
            speakers_seen.push_back(e.speaker_id);
    size_t val_speakers = val_fraction > 0.0 && speakers_seen.size() > 1
                              ? std::max<size_t>(1, static_cast<size_t>(val_fraction * speakers_seen.size()))
                              : 0;
    PairManifest train_m, val_m;
    train_m.split = "train";
    val_m.split = "val";
    for (const auto& e : pairs.entries) {
        size_t idx = static_cast<size_t>(
            std::find(speakers_seen.begin(), speakers_seen.end(), e.speaker_id) - speakers_seen.begin());
        bool is_val = val_speakers > 0 && idx >= speakers_seen.size() - val_speakers;
        (is_val ? val_m : train_m).entries.push_back(e);
    }
    write_manifest(out + "/train_manifest.csv", train_m);
    if (!val_m.entries.empty()) write_manifest(out + "/val_manifest.csv", val_m);
    write_resolved_config(out, "prepare", cfg, nullptr, &mc);
    std::cout << "prepared " << train_m.entries.size() << " train and " << val_m.entries.size()
              << " val clips under " << out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// pretrain / finetune
// ---------------------------------------------------------------------------

int cmd_pretrain(const GlobalOpts& g, const std::string& train_manifest,
                 const std::string& val_manifest) {
    json cfg = load_config_json(g);
    check_known_sections(cfg);
    ModelConfig mc = model_config_from(cfg);
    TrainConfig tc = train_config_from(cfg, g);
    tc.phase = "pretrain";
    write_resolved_config(g.out_dir, "pretrain", cfg, &tc, &mc);
    PairManifest train_m = read_manifest(train_manifest, "train");
    std::optional<PairManifest> val_m;
    if (!val_manifest.empty()) val_m = read_manifest(val_manifest, "val");
    TrainState state = pretrain(mc, train_m, val_m ? &*val_m : nullptr, tc, g.out_dir);
    emit_loss_curve(g.out_dir);
    std::cout << "pretrain done: epochs=" << state.epoch << " steps=" << state.step
              << " best_val=" << state.best_val_loss << " checkpoint=" << state.checkpoint_path
              << "\n";
    return 0;
}

int cmd_finetune(const GlobalOpts& g, const std::string& checkpoint, const std::string& manifest) {
    json cfg = load_config_json(g);
    check_known_sections(cfg);
    TrainConfig tc = train_config_from(cfg, g);
    tc.phase = "finetune";
    std::optional<ModelConfig> expected;
    if (cfg.contains("model")) {
        expected = cfg.at("model").get<ModelConfig>();
        expected->validate();
    }
    write_resolved_config(g.out_dir, "finetune", cfg, &tc, expected ? &*expected : nullptr);
    PairManifest user_m = read_manifest(manifest, "train");
    TrainState state = finetune(checkpoint, user_m, tc, g.out_dir, expected ? &*expected : nullptr);
    if (tc.epochs > 0) emit_loss_curve(g.out_dir);
    std::cout << "finetune done: epochs=" << state.epoch << " steps=" << state.step
              << " checkpoint=" << state.checkpoint_path << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// enhance
// ---------------------------------------------------------------------------

int cmd_enhance(const GlobalOpts& g, const std::string& checkpoint, const std::string& in_path,
                const std::string& out_wav, bool accel_input, bool movement_filter,
                const std::string& dump_spec) {
    json cfg = load_config_json(g);
    check_known_sections(cfg);
    CheckpointMeta meta;
    Model model = load_checkpoint(checkpoint, &meta);
    write_resolved_config(g.out_dir, "enhance", cfg, nullptr, &meta.config);

    AudioSignal sig;
    if (accel_input) {
        TriAxialSignal tri = read_triaxial(in_path);
        sig = preprocess_accel(tri);
    } else {
        sig = read_wav_mono(in_path);
    }
    if (movement_filter) sig = movement_highpass(sig);
    AudioSignal out = enhance(model, sig, meta.config.target_rate_hz);
    std::string out_path = out_wav.empty() ? g.out_dir + "/enhanced.wav" : out_wav;
    fs::create_directories(fs::path(out_path).parent_path().empty()
                               ? "."
                               : fs::path(out_path).parent_path().string());
    write_wav(out_path, out);
    if (!dump_spec.empty()) dump_spectrogram_csv(dump_spec, out);
    std::cout << "enhanced " << sig.duration_s() << " s -> " << out.duration_s() << " s at "
              << out.sample_rate_hz << " Hz: " << out_path << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

void print_metrics(const MetricReport& r) {
    std::cout << "snr_db=" << format_metric(r.snr_db) << " lsd=" << format_metric(r.lsd)
              << " stoi=" << format_metric(r.stoi)
              << " pesq=" << (r.pesq ? format_metric(*r.pesq) : std::string("n/a")) << "\n";
    if (!r.notes.empty()) std::cout << "notes: " << r.notes << "\n";
}

int cmd_evaluate(const GlobalOpts& g, std::vector<std::string> positional,
                 const std::string& manifest, const std::string& checkpoint,
                 const std::string& sweep_rates, const std::string& plots_from) {
    json cfg = load_config_json(g);
    check_known_sections(cfg);
    std::string out = g.out_dir;

    if (!plots_from.empty()) {
        emit_plots_csv(plots_from);
        std::cout << "plots written under " << plots_from << "\n";
        return 0;
    }

    write_resolved_config(out, "evaluate", cfg, nullptr, nullptr);

    if (!sweep_rates.empty()) {
        // Metric-vs-sampling-rate sweep on a clean reference clip.
        if (positional.size() != 1)
            throw ConfigError("evaluate --sweep-rates needs one clean reference wav");
        AudioSignal clean = read_wav_mono(positional[0]);
        std::optional<Model> model;
        if (!checkpoint.empty()) model.emplace(load_checkpoint(checkpoint));
        std::vector<int> rates = parse_rate_list(sweep_rates);
        std::ofstream os(out + "/rate_sweep.csv");
        if (!os) throw RuntimeFailure("evaluate: cannot write rate_sweep.csv");
        os << "rate_hz,data_rate_kbps,snr_db,lsd,stoi\n";
        for (int rate : rates) {
            auto [input, target] = make_pretrain_pair(clean, rate, DownsampleScheme::decimate);
            AudioSignal test = input;
            if (model) test = enhance(*model, input, clean.sample_rate_hz);
            test.samples.resize(target.samples.size(), 0.0);
            MetricReport r = evaluate_pair(target, test);
            os << rate << ',' << data_rate_kbps(rate) << ',' << format_metric(r.snr_db) << ','
               << format_metric(r.lsd) << ',' << format_metric(r.stoi) << '\n';
        }
        std::cout << "sweep written: " << out + "/rate_sweep.csv" << "\n";
        return 0;
    }

    if (!manifest.empty()) {
        PairManifest m = read_manifest(manifest, "test");
        std::optional<Model> model;
        if (!checkpoint.empty()) model.emplace(load_checkpoint(checkpoint));
        std::ofstream os(out + "/metrics.csv");
        os << "input,target," << metric_csv_header() << "\n";
        for (const auto& e : m.entries) {
            AudioSignal tgt = read_wav_mono(e.target_path);
            AudioSignal in = read_wav_mono(e.input_path);
            AudioSignal test = model ? enhance(*model, in, tgt.sample_rate_hz) : in;
            test.samples.resize(tgt.samples.size(), 0.0);
            MetricReport r = evaluate_pair(tgt, test, e.target_path, e.input_path);
            os << e.input_path << ',' << e.target_path << ',' << metric_csv_row(r) << "\n";
        }
        std::cout << "metrics written: " << out + "/metrics.csv" << "\n";
        return 0;
    }

    if (positional.size() != 2)
        throw ConfigError("evaluate needs `ref.wav test.wav`, --manifest, --sweep-rates or --plots-from");
    AudioSignal ref = read_wav_mono(positional[0]);
    AudioSignal test = read_wav_mono(positional[1]);
    if (ref.length() != test.length())
        throw ConfigError("evaluate: signals differ in length (" + std::to_string(ref.length()) +
                          " vs " + std::to_string(test.length()) + ")");
    MetricReport r = evaluate_pair(ref, test, positional[0], positional[1]);
    print_metrics(r);
    json j = r;
    write_json_file(out + "/metrics.json", j);
    std::ofstream os(out + "/metrics.csv");
    os << metric_csv_header() << "\n" << metric_csv_row(r) << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

int cmd_ablate(const GlobalOpts& g, const std::string& variants_csv) {
    json cfg = load_config_json(g);
    check_known_sections(cfg);
    ModelConfig mc = model_config_from(cfg);
    write_resolved_config(g.out_dir, "ablate", cfg, nullptr, &mc);

    std::vector<std::string> variants;
    std::istringstream is(variants_csv);
    std::string tok;
    while (std::getline(is, tok, ',')) variants.push_back(tok);
    if (variants.empty()) throw ConfigError("ablate: no variants given");

    json table = json::array();
    std::cout << "variant,parameters\n";
    for (const auto& v : variants) {
        ModelConfig vc = build_ablation(mc, ablation_from_string(v));
        int64_t count = count_parameters(vc);
        std::cout << v << "," << count << "\n";
        table.push_back({{"variant", v}, {"parameters", count}});
    }
    write_json_file(g.out_dir + "/ablation.json", table);
    return 0;
}

// ---------------------------------------------------------------------------
// budget
// ---------------------------------------------------------------------------

int cmd_budget(const GlobalOpts& g, int rate, const std::string& checkpoint, bool measure_latency) {
    json cfg = load_config_json(g);
    check_known_sections(cfg);
    write_resolved_config(g.out_dir, "budget", cfg, nullptr, nullptr);

    BudgetReport report = make_budget_report(rate);
    std::cout << "rate_hz,data_rate_kbps,power_mw,fit_mw\n";
    for (const auto& p : report.points)
        std::cout << p.sample_rate_hz << ',' << p.data_rate_kbps << ',' << p.power_mw << ','
                  << report.fitted_model.predict(p.data_rate_kbps) << "\n";
    std::cout << "operating point " << rate << " Hz: " << data_rate_kbps(rate) << " kbps, battery improvement vs 16 kHz: "
              << report.battery_improvement_pct << "%\n";

    if (measure_latency) {
        if (checkpoint.empty()) throw ConfigError("budget: --measure-latency needs --checkpoint");
        CheckpointMeta meta;
        Model model = load_checkpoint(checkpoint, &meta);
        LatencyReport lat = measure_inference_latency(model, {});
        report.inference_ms_per_window = lat.median_ms;
        report.real_time = lat.real_time;
        std::cout << "inference: " << lat.median_ms << " ms per " << lat.window_ms
                  << " ms window, real_time=" << (lat.real_time ? "true" : "false") << "\n";
    }
    json j = report;
    write_json_file(g.out_dir + "/budget.json", j);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Speech super-resolution and bone-conduction enhancement toolkit"};
    app.require_subcommand(1);

    GlobalOpts g;
    app.add_option("--config", g.config_path, "JSON config file with model/train sections");
    app.add_option("--set", g.overrides, "Override config entries, e.g. --set model.depth=3");
    app.add_option("--seed", g.seed, "Random seed")->each([&](const std::string&) { g.seed_set = true; });
    app.add_option("--out", g.out_dir, "Output directory");

    // prepare
    auto* prepare = app.add_subcommand("prepare", "Generate or ingest a corpus and derive training pairs");
    double seconds = 60.0;
    int speakers = 3;
    int low_rate = 4000;
    std::string scheme = "decimate";
    std::string clean_dir;
    double val_fraction = 0.0;
    prepare->add_option("--seconds", seconds, "Total synthetic corpus length");
    prepare->add_option("--speakers", speakers, "Synthetic speaker count");
    prepare->add_option("--rate", low_rate, "Low sampling rate for inputs");
    prepare->add_option("--scheme", scheme, "decimate | filter_decimate");
    prepare->add_option("--clean-dir", clean_dir, "Ingest a directory tree of clean wavs instead");
    prepare->add_option("--val-fraction", val_fraction, "Fraction of speakers held out for validation");

    // pretrain
    auto* pretrain_cmd = app.add_subcommand("pretrain", "Pretrain on (downsampled clean, clean) pairs");
    std::string train_manifest, val_manifest;
    pretrain_cmd->add_option("--train-manifest", train_manifest, "Training manifest CSV")->required();
    pretrain_cmd->add_option("--val-manifest", val_manifest, "Validation manifest CSV");

    // finetune
    auto* finetune_cmd = app.add_subcommand("finetune", "Fine-tune a checkpoint on user pairs");
    std::string ft_checkpoint, ft_manifest;
    finetune_cmd->add_option("--checkpoint", ft_checkpoint, "Pretrained checkpoint")->required();
    finetune_cmd->add_option("--manifest", ft_manifest, "User paired-data manifest")->required();

    // enhance
    auto* enhance_cmd = app.add_subcommand("enhance", "Enhance a recording with a checkpoint");
    std::string en_checkpoint, en_in, en_out, en_spec;
    bool en_accel = false, en_movement = false;
    enhance_cmd->add_option("--checkpoint", en_checkpoint, "Checkpoint")->required();
    enhance_cmd->add_option("--in", en_in, "Input wav (or 3-channel wav/csv with --accel)")->required();
    enhance_cmd->add_option("--out-wav", en_out, "Output wav path");
    enhance_cmd->add_flag("--accel", en_accel, "Treat input as tri-axial accelerometer data");
    enhance_cmd->add_flag("--movement-filter", en_movement, "Apply the 10 Hz movement highpass");
    enhance_cmd->add_option("--dump-spectrogram", en_spec, "Write output spectrogram grid CSV");

    // evaluate
    auto* evaluate_cmd = app.add_subcommand("evaluate", "Compute SNR/LSD/STOI (and PESQ via external tool)");
    std::vector<std::string> ev_pos;
    std::string ev_manifest, ev_checkpoint, ev_sweep, ev_plots;
    evaluate_cmd->add_option("files", ev_pos, "ref.wav test.wav");
    evaluate_cmd->add_option("--manifest", ev_manifest, "Evaluate every pair in a manifest");
    evaluate_cmd->add_option("--checkpoint", ev_checkpoint, "Enhance inputs before scoring");
    evaluate_cmd->add_option("--sweep-rates", ev_sweep, "Comma list of input rates, e.g. 500,1000,2000,4000");
    evaluate_cmd->add_option("--plots-from", ev_plots, "Regenerate plot CSVs from a run directory");

    // ablate
    auto* ablate_cmd = app.add_subcommand("ablate", "Parameter-count table for architecture variants");
    std::string variants = "full,remove_safilm,replace_mamba_with_attention";
    ablate_cmd->add_option("--variants", variants, "Comma list of variants");

    // budget
    auto* budget_cmd = app.add_subcommand("budget", "Sampling-rate -> data-rate -> power budget");
    int budget_rate = 4000;
    std::string budget_checkpoint;
    bool budget_latency = false;
    budget_cmd->add_option("--rate", budget_rate, "Operating sampling rate");
    budget_cmd->add_option("--checkpoint", budget_checkpoint, "Checkpoint for latency measurement");
    budget_cmd->add_flag("--measure-latency", budget_latency, "Measure per-window inference latency");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (g.out_dir.empty()) g.out_dir = "runs/" + app.get_subcommands().front()->get_name();
        if (*prepare) return cmd_prepare(g, seconds, speakers, low_rate, scheme, clean_dir, val_fraction);
        if (*pretrain_cmd) return cmd_pretrain(g, train_manifest, val_manifest);
        if (*finetune_cmd) return cmd_finetune(g, ft_checkpoint, ft_manifest);
        if (*enhance_cmd) return cmd_enhance(g, en_checkpoint, en_in, en_out, en_accel, en_movement, en_spec);
        if (*evaluate_cmd) return cmd_evaluate(g, ev_pos, ev_manifest, ev_checkpoint, ev_sweep, ev_plots);
        if (*ablate_cmd) return cmd_ablate(g, variants);
        if (*budget_cmd) return cmd_budget(g, budget_rate, budget_checkpoint, budget_latency);
        throw ConfigError("no command selected");
    } catch (const ConfigError& e) {
        std::cerr << "error: config: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: runtime: " << e.what() << "\n";
        return 1;
    }
}
