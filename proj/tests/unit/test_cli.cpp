#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "vibra_sr/dataset.hpp"
#include "vibra_sr/reporting.hpp"
#include "vibra_sr/training.hpp"

using namespace vibra_sr;
using Catch::Approx;
namespace fs = std::filesystem;

namespace {

#ifndef VIBRA_SR_CLI_PATH
#error "VIBRA_SR_CLI_PATH must point at the built binary"
#endif

struct RunResult {
    int exit_code = -1;
    std::string output;
};

std::string temp_dir(const std::string& tag) {
    fs::path p = fs::temp_directory_path() / ("vibra_sr_cli_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p.string();
}

RunResult run_cli(const std::string& args, const std::string& tag) {
    std::string log = temp_dir("log_" + tag) + "/out.txt";
    std::string cmd = std::string(VIBRA_SR_CLI_PATH) + " " + args + " >" + log + " 2>&1";
    int rc = std::system(cmd.c_str());
    RunResult r;
    r.exit_code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
    std::ifstream is(log);
    std::stringstream ss;
    ss << is.rdbuf();
    r.output = ss.str();
    return r;
}

std::string read_file(const std::string& path) {
    std::ifstream is(path);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("evaluate of identical files reports lsd 0 and the snr sentinel", "[cli][evaluate]") {
    std::string dir = temp_dir("eval");
    SyntheticSpeechSpec spec;
    spec.duration_s = 1.0;
    spec.seed = 21;
    AudioSignal sig = synth_speech(spec);
    write_wav(dir + "/ref.wav", sig);

    RunResult r = run_cli("--out " + dir + "/out evaluate " + dir + "/ref.wav " + dir + "/ref.wav",
                          "eval");
    INFO(r.output);
    REQUIRE(r.exit_code == 0);
    REQUIRE(r.output.find("snr_db=inf") != std::string::npos);
    REQUIRE(r.output.find("lsd=0.000000") != std::string::npos);
    REQUIRE(fs::exists(dir + "/out/metrics.json"));
    REQUIRE(fs::exists(dir + "/out/resolved_config.json"));

    auto j = nlohmann::json::parse(read_file(dir + "/out/metrics.json"));
    REQUIRE(j["snr_db"] == "inf");
    REQUIRE(j["lsd"].get<double>() == Approx(0.0).margin(1e-9));
}

TEST_CASE("ablate prints the published parameter ordering", "[cli][ablate]") {
    std::string dir = temp_dir("ablate");
    RunResult r = run_cli("--out " + dir +
                              " ablate --variants full,remove_safilm,replace_mamba_with_attention",
                          "ablate");
    INFO(r.output);
    REQUIRE(r.exit_code == 0);
    auto j = nlohmann::json::parse(read_file(dir + "/ablation.json"));
    REQUIRE(j.size() == 3);
    int64_t full = 0, nosafilm = 0, attn = 0;
    for (const auto& row : j) {
        if (row["variant"] == "full") full = row["parameters"].get<int64_t>();
        if (row["variant"] == "remove_safilm") nosafilm = row["parameters"].get<int64_t>();
        if (row["variant"] == "replace_mamba_with_attention") attn = row["parameters"].get<int64_t>();
    }
    REQUIRE(nosafilm < full);
    REQUIRE(full < attn);
}

TEST_CASE("budget reports 64 kbps and ~101.9% improvement at 4 kHz", "[cli][budget]") {
    std::string dir = temp_dir("budget");
    RunResult r = run_cli("--out " + dir + " budget --rate 4000", "budget");
    INFO(r.output);
    REQUIRE(r.exit_code == 0);
    REQUIRE(r.output.find("64 kbps") != std::string::npos);
    REQUIRE(r.output.find("101.869") != std::string::npos);
    auto j = nlohmann::json::parse(read_file(dir + "/budget.json"));
    REQUIRE(j["battery_improvement_pct"].get<double>() == Approx(101.8691589).epsilon(1e-6));
}

TEST_CASE("bad config exits 2 with a machine-parsable error", "[cli][errors]") {
    std::string dir = temp_dir("badcfg");
    RunResult r = run_cli("--out " + dir + " --set model.bogus_field=1 ablate", "badcfg");
    REQUIRE(r.exit_code == 2);
    REQUIRE(r.output.find("error: config:") != std::string::npos);

    RunResult r2 = run_cli("--out " + dir + " evaluate missing_a.wav missing_b.wav", "missing");
    REQUIRE(r2.exit_code == 2);
    REQUIRE(r2.output.find("error:") != std::string::npos);
}

TEST_CASE("prepare -> pretrain -> enhance -> evaluate workflow", "[cli][workflow][slow]") {
    std::string dir = temp_dir("flow");

    RunResult prep = run_cli("--seed 11 --out " + dir + "/data prepare --seconds 2 --speakers 1" +
                                 " --rate 4000 --scheme decimate",
                             "prep");
    INFO(prep.output);
    REQUIRE(prep.exit_code == 0);
    REQUIRE(fs::exists(dir + "/data/train_manifest.csv"));

    std::string tiny =
        " --set model.down_filters=[4,8,16] --set model.down_kernels=[5,3,3]"
        " --set model.up_filters=[32,16,4] --set model.up_kernels=[3,3,5]"
        " --set model.safilm_blocks=4 --set model.safilm_layers=1"
        " --set model.attn_ffn_mult=2 --set model.ssm_state_dim=2 --set model.bottleneck_layers=1"
        " --set model.dropout_p=0.0 --set model.window_samples=1280";
    RunResult train = run_cli("--seed 11 --out " + dir + "/run pretrain --train-manifest " + dir +
                                  "/data/train_manifest.csv" + tiny +
                                  " --set train.epochs=2 --set train.batch_size=4",
                              "train");
    INFO(train.output);
    REQUIRE(train.exit_code == 0);
    REQUIRE(fs::exists(dir + "/run/final.ckpt"));
    REQUIRE(fs::exists(dir + "/run/training_log.csv"));
    REQUIRE(fs::exists(dir + "/run/loss_curve.csv"));
    REQUIRE(fs::exists(dir + "/run/resolved_config.json"));

    // loss_curve.csv has one row per epoch plus header.
    std::string curve = read_file(dir + "/run/loss_curve.csv");
    REQUIRE(std::count(curve.begin(), curve.end(), '\n') == 3);

    // Enhance the first derived input.
    PairManifest m = read_manifest(dir + "/data/train_manifest.csv");
    REQUIRE_FALSE(m.entries.empty());
    RunResult enh = run_cli("--out " + dir + "/enh enhance --checkpoint " + dir +
                                "/run/final.ckpt --in " + m.entries[0].input_path + " --out-wav " +
                                dir + "/enh/out.wav",
                            "enhance");
    INFO(enh.output);
    REQUIRE(enh.exit_code == 0);
    REQUIRE(fs::exists(dir + "/enh/out.wav"));

    RunResult ev = run_cli("--out " + dir + "/metrics evaluate " + m.entries[0].target_path + " " +
                               dir + "/enh/out.wav",
                           "eval2");
    INFO(ev.output);
    REQUIRE(ev.exit_code == 0);

    // Rate sweep on the clean clip: 4 rows, monotone data-rate column.
    RunResult sweep = run_cli("--out " + dir + "/sweep evaluate --sweep-rates 500,1000,2000,4000 " +
                                  m.entries[0].target_path,
                              "sweep");
    INFO(sweep.output);
    REQUIRE(sweep.exit_code == 0);
    std::ifstream is(dir + "/sweep/rate_sweep.csv");
    std::string line;
    std::getline(is, line);
    REQUIRE(line == "rate_hz,data_rate_kbps,snr_db,lsd,stoi");
    double prev_rate = 0.0;
    int rows = 0;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        ++rows;
        std::istringstream ls(line);
        std::string rate_s, kbps_s;
        std::getline(ls, rate_s, ',');
        std::getline(ls, kbps_s, ',');
        double kbps = std::stod(kbps_s);
        REQUIRE(kbps > prev_rate);
        prev_rate = kbps;
    }
    REQUIRE(rows == 4);
}

TEST_CASE("plots regeneration from a run dir and the empty-dir error", "[cli][plots]") {
    std::string dir = temp_dir("plots");
    fs::create_directories(dir + "/empty");
    RunResult bad = run_cli("evaluate --plots-from " + dir + "/empty", "plots_bad");
    REQUIRE(bad.exit_code == 2);

    // Synthesize a plausible run dir.
    fs::create_directories(dir + "/run");
    {
        std::ofstream os(dir + "/run/training_log.csv");
        os << "step,epoch,mae,stft_total,total,val_total,wall_s\n";
        os << "5,1,0.1,0.5,0.6,0.7,1.2\n";
        os << "10,2,0.05,0.4,0.45,0.5,1.1\n";
    }
    RunResult ok = run_cli("evaluate --plots-from " + dir + "/run", "plots_ok");
    INFO(ok.output);
    REQUIRE(ok.exit_code == 0);
    std::string curve = read_file(dir + "/run/loss_curve.csv");
    REQUIRE(curve.find("epoch,total,val_total") != std::string::npos);
    REQUIRE(curve.find("2,0.45,0.5") != std::string::npos);
}

TEST_CASE("identical seeds give identical enhance outputs (idempotence)", "[cli][determinism]") {
    std::string dir = temp_dir("idem");
    SyntheticSpeechSpec spec;
    spec.duration_s = 0.4;
    spec.seed = 5;
    AudioSignal sig = synth_speech(spec);
    AudioSignal low = decimate(sig, 4);
    write_wav(dir + "/low.wav", low);

    ModelConfig cfg = ModelConfig::tiny();
    cfg.window_samples = 1280;
    Model model(cfg, 9);
    save_checkpoint(model, dir + "/m.ckpt", {cfg, 0, 0, 9});

    for (int i = 0; i < 2; ++i) {
        RunResult r = run_cli("--out " + dir + "/out" + std::to_string(i) + " enhance --checkpoint " +
                                  dir + "/m.ckpt --in " + dir + "/low.wav --out-wav " + dir +
                                  "/out" + std::to_string(i) + "/e.wav",
                              "idem" + std::to_string(i));
        REQUIRE(r.exit_code == 0);
    }
    REQUIRE(read_file(dir + "/out0/e.wav") == read_file(dir + "/out1/e.wav"));
}
