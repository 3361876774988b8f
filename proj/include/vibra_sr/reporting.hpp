#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "vibra_sr/common.hpp"
#include "vibra_sr/metrics.hpp"
#include "vibra_sr/stft.hpp"

namespace vibra_sr {

inline std::string format_metric(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    std::ostringstream os;
    os.precision(6);
    os << std::fixed << v;
    return os.str();
}

inline nlohmann::json metric_json(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    return v;
}

inline void to_json(nlohmann::json& j, const MetricReport& r) {
    j = nlohmann::json::object();
    j["snr_db"] = metric_json(r.snr_db);
    j["lsd"] = metric_json(r.lsd);
    j["stoi"] = metric_json(r.stoi);
    if (r.pesq) j["pesq"] = *r.pesq;
    else j["pesq"] = nullptr;
    j["notes"] = r.notes;
}

inline std::string metric_csv_header() { return "snr_db,lsd,stoi,pesq,notes"; }

inline std::string metric_csv_row(const MetricReport& r) {
    std::string pesq = r.pesq ? format_metric(*r.pesq) : "";
    std::string notes = r.notes;
    for (char& c : notes)
        if (c == ',') c = ';';
    return format_metric(r.snr_db) + "," + format_metric(r.lsd) + "," + format_metric(r.stoi) +
           "," + pesq + "," + notes;
}

// loss_curve.csv: one row per epoch, derived from the training log.
inline void emit_loss_curve(const std::string& run_dir) {
    namespace fs = std::filesystem;
    std::string log_path = run_dir + "/training_log.csv";
    std::ifstream is(log_path);
    if (!is) throw ConfigError("plots: no training_log.csv in " + run_dir);
    std::string header;
    std::getline(is, header);
    std::ofstream os(run_dir + "/loss_curve.csv");
    if (!os) throw RuntimeFailure("plots: cannot write loss_curve.csv");
    os << "epoch,total,val_total\n";
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        // columns: step,epoch,mae,stft_total,total,val_total,wall_s
        std::istringstream ls(line);
        std::string step, epoch, mae, stft, total, val;
        std::getline(ls, step, ',');
        std::getline(ls, epoch, ',');
        std::getline(ls, mae, ',');
        std::getline(ls, stft, ',');
        std::getline(ls, total, ',');
        std::getline(ls, val, ',');
        os << epoch << ',' << total << ',' << val << '\n';
    }
}

// Numeric spectrogram grid (rows = frames, cols = bins) for plotting.
inline void dump_spectrogram_csv(const std::string& path, const AudioSignal& sig,
                                 const StftResolution& res = StftResolution{512, 128, 512}) {
    SpectralFrame sf = stft_magnitude(sig.samples, res, sig.sample_rate_hz);
    std::ofstream os(path);
    if (!os) throw RuntimeFailure("plots: cannot write " + path);
    os.precision(8);
    for (int64_t t = 0; t < sf.frames(); ++t) {
        for (int64_t k = 0; k < sf.bins(); ++k) {
            if (k) os << ',';
            os << sf.X.at(t, k);
        }
        os << '\n';
    }
}

// Regenerates plot-ready CSVs from a finished run directory.
inline void emit_plots_csv(const std::string& run_dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(run_dir)) throw ConfigError("plots: not a directory: " + run_dir);
    bool any = false;
    if (fs::exists(run_dir + "/training_log.csv")) {
        emit_loss_curve(run_dir);
        any = true;
    }
    if (!any) throw ConfigError("plots: run dir has no logs: " + run_dir);
}

inline void write_json_file(const std::string& path, const nlohmann::json& j) {
    std::ofstream os(path);
    if (!os) throw RuntimeFailure("cannot write " + path);
    os << j.dump(2) << '\n';
}

}  // namespace vibra_sr
