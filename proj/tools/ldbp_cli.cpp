// Command-line front end: simulation, filter design, training, evaluation,
// parameter grid search, gradient checking and complexity reporting, all
// driven by one JSON configuration document.
//
// Exit codes: 0 success; 2 configuration or usage error; 3 runtime failure
// (I/O or a numerical failure, which aborts with the offending stage named).

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ldbp/experiment.hpp"
#include "ldbp/trace_io.hpp"

namespace {

namespace fs = std::filesystem;

struct Options {
    std::string config_path;
    std::string out_dir;      // overrides the config when non-empty
    std::string equalizers;   // comma-separated override
    std::string model_path;   // overrides ldbp.checkpoint when non-empty
    std::optional<std::uint64_t> seed;
    unsigned threads = 1;
};

ldbp::ExperimentConfig load_config(const Options& opt) {
    ldbp::ExperimentConfig cfg = ldbp::load_experiment_config(opt.config_path);
    if (!opt.out_dir.empty()) cfg.out_dir = opt.out_dir;
    if (opt.seed) cfg.seed = *opt.seed;
    if (!opt.equalizers.empty()) {
        cfg.equalizers.clear();
        std::stringstream ss(opt.equalizers);
        std::string item;
        while (std::getline(ss, item, ',')) cfg.equalizers.push_back(item);
    }
    if (!opt.model_path.empty()) cfg.ldbp.checkpoint = opt.model_path;
    ldbp::validate_config(cfg);
    return cfg;
}

void write_config_stamp(const ldbp::ExperimentConfig& cfg) {
    fs::create_directories(cfg.out_dir);
    std::ofstream out(fs::path(cfg.out_dir) / "config_resolved.json", std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + cfg.out_dir + "/config_resolved.json");
    nlohmann::json j = ldbp::experiment_config_json(cfg);
    j["config_hash"] = ldbp::config_hash(cfg);
    out << j.dump(2) << "\n";
}

int cmd_simulate(const ldbp::ExperimentConfig& cfg) {
    write_config_stamp(cfg);
    const ldbp::SimContext ctx = ldbp::make_sim_context(cfg);
    const std::vector<double> powers = ldbp::sweep_powers(cfg.sweep);
    const fs::path dir = fs::path(cfg.out_dir) / "traces";
    fs::create_directories(dir);

    nlohmann::json manifest;
    manifest["config_hash"] = ldbp::config_hash(cfg);
    manifest["entries"] = nlohmann::json::array();
    for (std::size_t p = 0; p < powers.size(); ++p)
        for (std::size_t t = 0; t < cfg.sweep.traces_per_power; ++t) {
            const std::uint64_t frame_seed =
                ldbp::mix_seed(cfg.seed, p, t, ldbp::seed_purpose::sweep_frame);
            const std::uint64_t noise_seed =
                ldbp::mix_seed(cfg.seed, p, t, ldbp::seed_purpose::sweep_noise);
            const ldbp::PowerTrace trace =
                ldbp::simulate_power_trace(cfg, ctx, powers[p], frame_seed, noise_seed);

            std::ostringstream stem;
            stem << "p" << p << "_t" << t;
            const std::string trace_base = (dir / ("trace_" + stem.str())).string();
            const std::string frame_base = (dir / ("frame_" + stem.str())).string();

            ldbp::TraceMeta meta;
            meta.baud_rate_hz = cfg.transmitter.baud_hz;
            meta.launch_power_dbm = powers[p];
            meta.seed = frame_seed;
            meta.generator = "channel-sim";
            meta.constellation = cfg.transmitter.constellation;
            ldbp::write_trace(trace_base, trace.rx2, meta);
            ldbp::write_frame(frame_base, trace.frame, powers[p]);
            manifest["entries"].push_back({{"power_dbm", powers[p]},
                                           {"trace_index", t},
                                           {"trace", trace_base},
                                           {"frame", frame_base}});
        }
    std::ofstream mout(dir / "manifest.json", std::ios::trunc);
    if (!mout) throw std::runtime_error("cannot write trace manifest");
    mout << manifest.dump(2) << "\n";
    std::cout << "wrote " << manifest["entries"].size() << " traces to " << dir.string() << "\n";
    return 0;
}

int cmd_design_filters(const ldbp::ExperimentConfig& cfg) {
    write_config_stamp(cfg);
    const ldbp::LdbpModel model = ldbp::build_initial_model(cfg);
    const fs::path path = fs::path(cfg.out_dir) / "model_init.ckpt";
    ldbp::save_checkpoint(path.string(), model, {0, ldbp::config_hash(cfg)});

    const ldbp::ComplexityReport report = ldbp::complexity_report(model);
    nlohmann::json j;
    j["config_hash"] = ldbp::config_hash(cfg);
    j["n_layers"] = model.n_layers();
    j["per_layer_active_taps"] = report.per_layer_active_taps;
    j["total_active_taps"] = report.total_active_taps;
    j["overall_impulse_length"] = report.overall_impulse_length;
    std::ofstream out(fs::path(cfg.out_dir) / "design_report.json", std::ios::trunc);
    out << j.dump(2) << "\n";
    std::cout << "designed " << model.n_layers() << " layers, " << report.total_active_taps
              << " active taps per polarization -> " << path.string() << "\n";
    return 0;
}

int cmd_train(const ldbp::ExperimentConfig& cfg) {
    write_config_stamp(cfg);
    ldbp::LdbpModel model = ldbp::build_initial_model(cfg);
    const ldbp::TrainConfig tc = ldbp::training_config(cfg, model);
    std::cout << "simulating " << cfg.train.power_set_dbm.size() * cfg.train.traces_per_power
              << " training traces...\n";
    const std::vector<ldbp::PowerTrace> data = ldbp::build_training_data(cfg);
    const ldbp::RealFirTaps mf =
        ldbp::rrc_taps(cfg.transmitter.rolloff, cfg.transmitter.rrc_span_symbols,
                       cfg.receiver.sps);
    std::cout << "training " << tc.n_iterations << " iterations (batch " << tc.batch_size
              << ", segment " << tc.segment_symbols << " symbols)...\n";
    const ldbp::TrainResult result = ldbp::train(model, data, mf, tc);

    const fs::path model_path = fs::path(cfg.out_dir) / "model.ckpt";
    ldbp::save_checkpoint(model_path.string(), model,
                          {tc.n_iterations, ldbp::config_hash(cfg)});
    ldbp::save_history((fs::path(cfg.out_dir) / "history.csv").string(), result.history);
    double final_loss = 0.0;
    if (!result.history.empty()) final_loss = result.history.back().loss;
    std::cout << "final batch loss " << final_loss << ", "
              << model.total_active_taps() << " active taps -> " << model_path.string() << "\n";
    return 0;
}

int cmd_evaluate(const ldbp::ExperimentConfig& cfg, unsigned threads) {
    write_config_stamp(cfg);
    const ldbp::SweepResult result = ldbp::run_sweep(cfg, nullptr, threads);
    ldbp::write_sweep_result(cfg.out_dir, result);
    std::cout << "power sweep (" << result.powers_dbm.size() << " powers x "
              << cfg.sweep.traces_per_power << " traces), config " << result.config_hash << "\n";
    for (const auto& s : result.summaries) {
        std::cout << "  " << s.name << ": peak " << s.peak_snr_db << " dB at "
                  << s.optimal_power_dbm << " dBm";
        if (!std::isnan(s.gain_over_edc_db))
            std::cout << " (" << (s.gain_over_edc_db >= 0 ? "+" : "") << s.gain_over_edc_db
                      << " dB vs edc)";
        std::cout << "\n";
    }
    std::cout << "results in " << cfg.out_dir << "\n";
    return 0;
}

int cmd_gridsearch(const ldbp::ExperimentConfig& cfg) {
    write_config_stamp(cfg);
    const ldbp::GridSearchResult result = ldbp::run_grid_search(cfg);
    ldbp::write_grid_result(cfg.out_dir, cfg, result);
    std::cout << "best gamma " << result.best_gamma << " /W/km, beta2 " << result.best_beta2
              << " ps^2/km, mean SNR " << result.best_mean_snr_db << " dB -> " << cfg.out_dir
              << "/gridsearch.csv\n";
    return 0;
}

int cmd_gradcheck(const ldbp::ExperimentConfig& cfg) {
    write_config_stamp(cfg);
    const ldbp::GradcheckResult result = ldbp::run_gradcheck(cfg.gradcheck, cfg.seed);
    std::ofstream out(fs::path(cfg.out_dir) / "gradcheck.json", std::ios::trunc);
    out << ldbp::gradcheck_report_json(cfg, result).dump(2) << "\n";
    for (const auto& point : result.curve)
        std::cout << "fd_step " << point.fd_step << ": max rel err " << point.max_rel_err << "\n";
    return 0;
}

int cmd_report(const ldbp::ExperimentConfig& cfg) {
    if (cfg.ldbp.checkpoint.empty())
        throw ldbp::ConfigError("report needs a model: set ldbp.checkpoint or pass --model");
    write_config_stamp(cfg);
    const ldbp::LdbpModel model = ldbp::load_checkpoint(cfg.ldbp.checkpoint);
    const ldbp::ComplexityReport report = ldbp::complexity_report(model);
    const ldbp::FiberParams est = ldbp::estimate_fiber(cfg);
    const double total_km = est.span_length_km * static_cast<double>(cfg.link.n_spans);
    const double rate = ldbp::receiver_rate_hz(cfg);

    nlohmann::json j;
    j["config_hash"] = ldbp::config_hash(cfg);
    j["per_layer_active_taps"] = report.per_layer_active_taps;
    j["total_active_taps"] = report.total_active_taps;
    j["overall_impulse_length"] = report.overall_impulse_length;
    j["cd_memory"] = nlohmann::json::array();
    std::cout << "model: " << model.n_layers() << " layers, " << report.total_active_taps
              << " active taps, overall impulse length " << report.overall_impulse_length << "\n";
    for (double f : cfg.report.delta_f_fractions) {
        const std::size_t taps =
            ldbp::cd_memory_estimate(est.beta2_ps2_per_km, total_km, f * rate, 1.0 / rate);
        j["cd_memory"].push_back(
            {{"delta_f_fraction", f}, {"delta_f_hz", f * rate}, {"taps", taps}});
        std::cout << "cd memory at " << 100.0 * f << "% bandwidth: " << taps << " taps\n";
    }
    std::ofstream out(fs::path(cfg.out_dir) / "report.json", std::ios::trunc);
    out << j.dump(2) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ldbp: fiber nonlinearity compensation - simulation and training toolkit"};
    app.require_subcommand(1);
    app.fallthrough();  // let global flags appear after the subcommand name

    Options opt;
    app.add_option("--config", opt.config_path, "experiment configuration (JSON)")
        ->required()
        ->check(CLI::ExistingFile);
    app.add_option("--out", opt.out_dir, "output directory (overrides out_dir)");
    app.add_option("--seed", opt.seed, "master seed (overrides seed)");
    app.add_option("--equalizers", opt.equalizers,
                   "comma-separated equalizer list, e.g. edc,dbp,ldbp");
    app.add_option("--model", opt.model_path, "model checkpoint (overrides ldbp.checkpoint)");
    app.add_option("--threads", opt.threads, "worker threads for sweep points")
        ->check(CLI::Range(1u, 256u));

    auto* simulate = app.add_subcommand("simulate", "generate and store channel traces");
    auto* design = app.add_subcommand("design-filters", "build and store the initial model");
    auto* train = app.add_subcommand("train", "optimize the model on simulated traces");
    auto* evaluate = app.add_subcommand("evaluate", "run the launch-power sweep");
    auto* gridsearch = app.add_subcommand("gridsearch", "scan backpropagation parameters");
    auto* gradcheck = app.add_subcommand("gradcheck", "compare analytic and numeric gradients");
    auto* report = app.add_subcommand("report", "complexity and dispersion-memory report");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        const ldbp::ExperimentConfig cfg = load_config(opt);
        if (simulate->parsed()) return cmd_simulate(cfg);
        if (design->parsed()) return cmd_design_filters(cfg);
        if (train->parsed()) return cmd_train(cfg);
        if (evaluate->parsed()) return cmd_evaluate(cfg, opt.threads);
        if (gridsearch->parsed()) return cmd_gridsearch(cfg);
        if (gradcheck->parsed()) return cmd_gradcheck(cfg);
        if (report->parsed()) return cmd_report(cfg);
        return 2;
    } catch (const ldbp::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
