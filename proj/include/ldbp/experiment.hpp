#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <json.hpp>

#include "ldbp/channel.hpp"
#include "ldbp/checkpoint.hpp"
#include "ldbp/dbp.hpp"
#include "ldbp/grad.hpp"
#include "ldbp/model.hpp"
#include "ldbp/signal.hpp"
#include "ldbp/train.hpp"

namespace ldbp {

/// Raised for malformed or inconsistent experiment configuration; the CLI
/// maps it to its own exit code, distinct from numerical failures.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Deterministic seed derivation
// ---------------------------------------------------------------------------

/// Derives an independent stream seed from a master seed and up to three
/// coordinates (e.g. power index, trace index, purpose tag) with a
/// splitmix64-style finalizer.  Points of a sweep can then be generated in
/// any order, or in parallel, without changing the data.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b,
                              std::uint64_t purpose) {
    std::uint64_t z = seed;
    z ^= 0x9e3779b97f4a7c15ull * (a + 1);
    z ^= 0xbf58476d1ce4e5b9ull * (b + 1);
    z ^= 0x94d049bb133111ebull * (purpose + 1);
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

namespace seed_purpose {
inline constexpr std::uint64_t sweep_frame = 1;
inline constexpr std::uint64_t sweep_noise = 2;
inline constexpr std::uint64_t gradcheck_probe = 3;
inline constexpr std::uint64_t train_frame = 4;
inline constexpr std::uint64_t train_noise = 5;
inline constexpr std::uint64_t grid_frame = 6;
inline constexpr std::uint64_t grid_noise = 7;
}  // namespace seed_purpose

// ---------------------------------------------------------------------------
// Experiment configuration (one JSON document)
// ---------------------------------------------------------------------------

struct LinkSettings {
    FiberParams fiber;
    std::size_t n_spans = 10;
    std::size_t forward_stps = 100;
    StepMode step_mode = StepMode::logarithmic;
    double noise_figure_db = 5.0;
    bool noise_enabled = true;
    std::size_t pmd_sections_per_span = 0;
    double pmd_coeff_ps_sqrt_km = 0.0;
    std::uint64_t pmd_seed = 0;
};

struct TransmitterSettings {
    double baud_hz = 25e9;
    double rolloff = 0.01;
    std::string constellation = "16qam";
    std::size_t n_symbols = 65536;
    std::size_t sps = 4;
    std::size_t rrc_span_symbols = 256;
};

struct ReceiverSettings {
    double lowpass_hz = 30e9;
    std::size_t sps = 2;
};

struct SweepSettings {
    double power_start_dbm = -2.0;
    double power_stop_dbm = 6.0;
    double power_step_db = 1.0;
    std::size_t traces_per_power = 4;
};

struct DbpSettings {
    std::size_t stps = 3;
    StepMode step_mode = StepMode::logarithmic;
    /// Receiver-side parameter estimates; unset values fall back to the
    /// true link fiber.
    std::optional<double> gamma_per_w_km;
    std::optional<double> beta2_ps2_per_km;
};

struct LdbpSettings {
    std::size_t stps = 3;
    std::vector<std::size_t> init_taps = {25};
    std::string checkpoint;  // model file used by the ldbp equalizer
};

struct TrainSettings {
    std::size_t n_iterations = 10000;
    std::size_t batch_size = 12;
    std::size_t segment_symbols = 1024;
    double learning_rate = 7e-4;
    std::vector<double> power_set_dbm = {1.0, 1.5, 2.0, 2.5, 3.0};
    std::size_t traces_per_power = 1;
    unsigned quant_bits = 0;
    bool prune_enabled = false;
    double prune_fraction = 0.6;
    /// Final per-layer pattern: the n_short layers with the smallest
    /// dispersion distance keep short_taps, the rest long_taps.
    std::size_t prune_n_short = 0;
    std::size_t prune_short_taps = 7;
    std::size_t prune_long_taps = 9;
};

struct GridSearchSettings {
    double power_dbm = 2.5;
    std::size_t traces = 2;
    std::size_t stps = 3;
    std::vector<double> gamma_grid;  // empty: multiples of the link gamma
    std::vector<double> beta2_grid;  // empty: the link beta2 only
};

struct GradcheckSettings {
    std::size_t n_spans = 2;
    std::size_t stps = 3;
    std::size_t tap_len = 9;
    std::size_t n_samples = 256;
    std::size_t n_probes = 10;
    std::vector<double> fd_steps = {1e-3, 1e-4, 1e-5, 1e-6};
    bool delta_model = false;
};

struct ReportSettings {
    /// CD-memory estimates are emitted for these fractions of the receiver
    /// sample rate (signal-bandwidth percentages).
    std::vector<double> delta_f_fractions = {0.51, 0.77};
};

struct ExperimentConfig {
    LinkSettings link;
    TransmitterSettings transmitter;
    ReceiverSettings receiver;
    SweepSettings sweep;
    std::vector<std::string> equalizers = {"edc", "dbp", "ldbp"};
    DbpSettings dbp;
    LdbpSettings ldbp;
    TrainSettings train;
    GridSearchSettings gridsearch;
    GradcheckSettings gradcheck;
    ReportSettings report;
    std::uint64_t seed = 1;
    std::string out_dir = "out";
};

namespace detail {

inline void check_keys(const nlohmann::json& j, const char* where,
                       std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw ConfigError(std::string("config: ") + where + " must be an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (const char* k : allowed)
            if (it.key() == k) {
                known = true;
                break;
            }
        if (!known)
            throw ConfigError(std::string("config: unknown key '") + it.key() + "' in " + where);
    }
}

template <typename T>
T get_or(const nlohmann::json& j, const char* key, T fallback, const char* where) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(std::string("config: bad value for '") + key + "' in " + where);
    }
}

inline StepMode step_mode_from_string(const std::string& s, const char* where) {
    if (s == "logarithmic" || s == "log") return StepMode::logarithmic;
    if (s == "uniform") return StepMode::uniform;
    throw ConfigError(std::string("config: step mode in ") + where +
                      " must be 'logarithmic' or 'uniform', got '" + s + "'");
}

inline const char* step_mode_name(StepMode m) {
    return m == StepMode::logarithmic ? "logarithmic" : "uniform";
}

/// Accepts either a single integer or an array of integers.
inline std::vector<std::size_t> get_lengths(const nlohmann::json& j, const char* key,
                                            std::vector<std::size_t> fallback, const char* where) {
    if (!j.contains(key)) return fallback;
    const nlohmann::json& v = j.at(key);
    try {
        if (v.is_number()) return {v.get<std::size_t>()};
        return v.get<std::vector<std::size_t>>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(std::string("config: bad value for '") + key + "' in " + where);
    }
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace detail

inline void validate_config(const ExperimentConfig& cfg) {
    const auto& lk = cfg.link;
    if (lk.n_spans < 1) throw ConfigError("config: link.n_spans must be >= 1");
    if (lk.forward_stps < 1) throw ConfigError("config: link.forward_stps must be >= 1");
    if (!(lk.fiber.span_length_km > 0)) throw ConfigError("config: link.span_km must be positive");
    if (!(lk.fiber.alpha_db_per_km >= 0))
        throw ConfigError("config: link.alpha_db_per_km must be >= 0");
    if (!(lk.fiber.gamma_per_w_km >= 0))
        throw ConfigError("config: link.gamma_per_w_km must be >= 0");
    if (!(lk.fiber.manakov_factor > 0) || lk.fiber.manakov_factor > 1.0)
        throw ConfigError("config: link.manakov_factor must lie in (0, 1]");
    if (!(lk.noise_figure_db >= 0)) throw ConfigError("config: link.noise_figure_db must be >= 0");
    if (lk.pmd_sections_per_span > 0 && !(lk.pmd_coeff_ps_sqrt_km > 0))
        throw ConfigError("config: PMD sections need a positive PMD coefficient");

    const auto& tx = cfg.transmitter;
    if (!(tx.baud_hz > 0)) throw ConfigError("config: transmitter.baud_hz must be positive");
    if (tx.rolloff < 0.0 || tx.rolloff > 1.0)
        throw ConfigError("config: transmitter.rolloff must lie in [0, 1]");
    if (tx.sps < 2) throw ConfigError("config: transmitter.sps must be >= 2");
    if (tx.n_symbols < 4) throw ConfigError("config: transmitter.n_symbols must be >= 4");
    if (tx.rrc_span_symbols < 1 || tx.rrc_span_symbols >= tx.n_symbols)
        throw ConfigError("config: transmitter.rrc_span_symbols must lie in [1, n_symbols)");
    if ((tx.rrc_span_symbols * tx.sps) % 2 != 0)
        throw ConfigError("config: rrc_span_symbols * transmitter.sps must be even");
    try {
        constellation(tx.constellation);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }

    const auto& rx = cfg.receiver;
    if (rx.sps < 1 || rx.sps > tx.sps)
        throw ConfigError("config: receiver.sps must lie in [1, transmitter.sps]");
    if ((tx.rrc_span_symbols * rx.sps) % 2 != 0)
        throw ConfigError("config: rrc_span_symbols * receiver.sps must be even");
    const double sim_rate = tx.baud_hz * static_cast<double>(tx.sps);
    if (!(rx.lowpass_hz > 0) || rx.lowpass_hz > sim_rate / 2.0)
        throw ConfigError("config: receiver.lowpass_hz must lie in (0, simulation Nyquist]");

    const auto& sw = cfg.sweep;
    if (!(sw.power_step_db > 0)) throw ConfigError("config: sweep.power_step_db must be positive");
    if (!(sw.power_stop_dbm >= sw.power_start_dbm))
        throw ConfigError("config: sweep.power_stop_dbm must be >= power_start_dbm");
    if (sw.traces_per_power < 1)
        throw ConfigError("config: sweep.traces_per_power must be >= 1");

    if (cfg.equalizers.empty()) throw ConfigError("config: equalizers must be non-empty");
    for (const auto& name : cfg.equalizers) {
        if (name != "edc" && name != "dbp" && name != "ldbp")
            throw ConfigError("config: unknown equalizer '" + name + "'");
        if (std::count(cfg.equalizers.begin(), cfg.equalizers.end(), name) != 1)
            throw ConfigError("config: duplicate equalizer '" + name + "'");
    }

    if (cfg.dbp.stps < 1) throw ConfigError("config: dbp.stps must be >= 1");
    if (cfg.ldbp.stps < 1) throw ConfigError("config: ldbp.stps must be >= 1");
    if (cfg.ldbp.init_taps.empty()) throw ConfigError("config: ldbp.init_taps must be non-empty");
    for (std::size_t t : cfg.ldbp.init_taps)
        if (t % 2 == 0 || t == 0) throw ConfigError("config: ldbp.init_taps must be odd");

    const auto& tr = cfg.train;
    if (tr.batch_size < 1) throw ConfigError("config: train.batch_size must be >= 1");
    if (tr.segment_symbols < 2) throw ConfigError("config: train.segment_symbols must be >= 2");
    if (!(tr.learning_rate >= 0) || !std::isfinite(tr.learning_rate))
        throw ConfigError("config: train.learning_rate must be finite and >= 0");
    if (tr.power_set_dbm.empty()) throw ConfigError("config: train.power_set_dbm must be non-empty");
    if (tr.traces_per_power < 1) throw ConfigError("config: train.traces_per_power must be >= 1");
    if (tr.quant_bits != 0 && (tr.quant_bits < 2 || tr.quant_bits > 62))
        throw ConfigError("config: train.quant_bits must be 0 or in [2, 62]");
    if (!(tr.prune_fraction > 0) || tr.prune_fraction > 1.0)
        throw ConfigError("config: train.prune_fraction must lie in (0, 1]");
    if (tr.prune_enabled) {
        if (tr.prune_short_taps % 2 == 0 || tr.prune_long_taps % 2 == 0)
            throw ConfigError("config: prune tap targets must be odd");
        if (tr.prune_short_taps > tr.prune_long_taps)
            throw ConfigError("config: prune_short_taps must not exceed prune_long_taps");
    }

    const auto& gs = cfg.gridsearch;
    if (gs.traces < 1) throw ConfigError("config: gridsearch.traces must be >= 1");
    if (gs.stps < 1) throw ConfigError("config: gridsearch.stps must be >= 1");
    if (!std::isfinite(gs.power_dbm)) throw ConfigError("config: gridsearch.power_dbm must be finite");

    const auto& gc = cfg.gradcheck;
    if (gc.n_spans < 1) throw ConfigError("config: gradcheck.n_spans must be >= 1");
    if (gc.stps < 1) throw ConfigError("config: gradcheck.stps must be >= 1");
    if (gc.tap_len % 2 == 0 || gc.tap_len == 0)
        throw ConfigError("config: gradcheck.tap_len must be odd");
    if (gc.n_samples < 8 || gc.n_samples % 2 != 0)
        throw ConfigError("config: gradcheck.n_samples must be even and >= 8");
    if (gc.n_probes < 1) throw ConfigError("config: gradcheck.n_probes must be >= 1");
    if (gc.fd_steps.empty()) throw ConfigError("config: gradcheck.fd_steps must be non-empty");
    for (double s : gc.fd_steps)
        if (!(s > 0)) throw ConfigError("config: gradcheck.fd_steps must be positive");

    if (cfg.report.delta_f_fractions.empty())
        throw ConfigError("config: report.delta_f_fractions must be non-empty");
    for (double f : cfg.report.delta_f_fractions)
        if (!(f > 0) || f > 1.0)
            throw ConfigError("config: report.delta_f_fractions must lie in (0, 1]");
}

inline ExperimentConfig experiment_config_from_json(const nlohmann::json& root) {
    using detail::check_keys;
    using detail::get_or;
    check_keys(root, "top level",
               {"link", "transmitter", "receiver", "sweep", "equalizers", "dbp", "ldbp", "train",
                "gridsearch", "gradcheck", "report", "seed", "out_dir"});
    ExperimentConfig cfg;
    const nlohmann::json empty = nlohmann::json::object();

    {
        const nlohmann::json& j = root.contains("link") ? root.at("link") : empty;
        check_keys(j, "link",
                   {"n_spans", "span_km", "alpha_db_per_km", "beta2_ps2_per_km", "gamma_per_w_km",
                    "manakov_factor", "forward_stps", "step_mode", "noise_figure_db", "noise",
                    "pmd_sections_per_span", "pmd_coeff_ps_sqrt_km", "pmd_seed"});
        auto& lk = cfg.link;
        lk.n_spans = get_or<std::size_t>(j, "n_spans", lk.n_spans, "link");
        lk.fiber.span_length_km = get_or<double>(j, "span_km", lk.fiber.span_length_km, "link");
        lk.fiber.alpha_db_per_km =
            get_or<double>(j, "alpha_db_per_km", lk.fiber.alpha_db_per_km, "link");
        lk.fiber.beta2_ps2_per_km =
            get_or<double>(j, "beta2_ps2_per_km", lk.fiber.beta2_ps2_per_km, "link");
        lk.fiber.gamma_per_w_km =
            get_or<double>(j, "gamma_per_w_km", lk.fiber.gamma_per_w_km, "link");
        lk.fiber.manakov_factor =
            get_or<double>(j, "manakov_factor", lk.fiber.manakov_factor, "link");
        lk.forward_stps = get_or<std::size_t>(j, "forward_stps", lk.forward_stps, "link");
        lk.step_mode = detail::step_mode_from_string(
            get_or<std::string>(j, "step_mode", detail::step_mode_name(lk.step_mode), "link"),
            "link");
        lk.noise_figure_db = get_or<double>(j, "noise_figure_db", lk.noise_figure_db, "link");
        lk.noise_enabled = get_or<bool>(j, "noise", lk.noise_enabled, "link");
        lk.pmd_sections_per_span =
            get_or<std::size_t>(j, "pmd_sections_per_span", lk.pmd_sections_per_span, "link");
        lk.pmd_coeff_ps_sqrt_km =
            get_or<double>(j, "pmd_coeff_ps_sqrt_km", lk.pmd_coeff_ps_sqrt_km, "link");
        lk.pmd_seed = get_or<std::uint64_t>(j, "pmd_seed", lk.pmd_seed, "link");
    }
    {
        const nlohmann::json& j = root.contains("transmitter") ? root.at("transmitter") : empty;
        check_keys(j, "transmitter",
                   {"baud_hz", "rolloff", "constellation", "n_symbols", "sps", "rrc_span_symbols"});
        auto& tx = cfg.transmitter;
        tx.baud_hz = get_or<double>(j, "baud_hz", tx.baud_hz, "transmitter");
        tx.rolloff = get_or<double>(j, "rolloff", tx.rolloff, "transmitter");
        tx.constellation = get_or<std::string>(j, "constellation", tx.constellation, "transmitter");
        tx.n_symbols = get_or<std::size_t>(j, "n_symbols", tx.n_symbols, "transmitter");
        tx.sps = get_or<std::size_t>(j, "sps", tx.sps, "transmitter");
        tx.rrc_span_symbols =
            get_or<std::size_t>(j, "rrc_span_symbols", tx.rrc_span_symbols, "transmitter");
    }
    {
        const nlohmann::json& j = root.contains("receiver") ? root.at("receiver") : empty;
        check_keys(j, "receiver", {"lowpass_hz", "sps"});
        cfg.receiver.lowpass_hz = get_or<double>(j, "lowpass_hz", cfg.receiver.lowpass_hz, "receiver");
        cfg.receiver.sps = get_or<std::size_t>(j, "sps", cfg.receiver.sps, "receiver");
    }
    {
        const nlohmann::json& j = root.contains("sweep") ? root.at("sweep") : empty;
        check_keys(j, "sweep",
                   {"power_start_dbm", "power_stop_dbm", "power_step_db", "traces_per_power"});
        auto& sw = cfg.sweep;
        sw.power_start_dbm = get_or<double>(j, "power_start_dbm", sw.power_start_dbm, "sweep");
        sw.power_stop_dbm = get_or<double>(j, "power_stop_dbm", sw.power_stop_dbm, "sweep");
        sw.power_step_db = get_or<double>(j, "power_step_db", sw.power_step_db, "sweep");
        sw.traces_per_power =
            get_or<std::size_t>(j, "traces_per_power", sw.traces_per_power, "sweep");
    }
    cfg.equalizers =
        get_or<std::vector<std::string>>(root, "equalizers", cfg.equalizers, "top level");
    {
        const nlohmann::json& j = root.contains("dbp") ? root.at("dbp") : empty;
        check_keys(j, "dbp", {"stps", "step_mode", "gamma_per_w_km", "beta2_ps2_per_km"});
        cfg.dbp.stps = get_or<std::size_t>(j, "stps", cfg.dbp.stps, "dbp");
        cfg.dbp.step_mode = detail::step_mode_from_string(
            get_or<std::string>(j, "step_mode", detail::step_mode_name(cfg.dbp.step_mode), "dbp"),
            "dbp");
        if (j.contains("gamma_per_w_km") && !j.at("gamma_per_w_km").is_null())
            cfg.dbp.gamma_per_w_km = get_or<double>(j, "gamma_per_w_km", 0.0, "dbp");
        if (j.contains("beta2_ps2_per_km") && !j.at("beta2_ps2_per_km").is_null())
            cfg.dbp.beta2_ps2_per_km = get_or<double>(j, "beta2_ps2_per_km", 0.0, "dbp");
    }
    {
        const nlohmann::json& j = root.contains("ldbp") ? root.at("ldbp") : empty;
        check_keys(j, "ldbp", {"stps", "init_taps", "checkpoint"});
        cfg.ldbp.stps = get_or<std::size_t>(j, "stps", cfg.ldbp.stps, "ldbp");
        cfg.ldbp.init_taps = detail::get_lengths(j, "init_taps", cfg.ldbp.init_taps, "ldbp");
        cfg.ldbp.checkpoint = get_or<std::string>(j, "checkpoint", cfg.ldbp.checkpoint, "ldbp");
    }
    {
        const nlohmann::json& j = root.contains("train") ? root.at("train") : empty;
        check_keys(j, "train",
                   {"n_iterations", "batch_size", "segment_symbols", "learning_rate",
                    "power_set_dbm", "traces_per_power", "quant_bits", "prune_enabled",
                    "prune_fraction", "prune_n_short", "prune_short_taps", "prune_long_taps"});
        auto& tr = cfg.train;
        tr.n_iterations = get_or<std::size_t>(j, "n_iterations", tr.n_iterations, "train");
        tr.batch_size = get_or<std::size_t>(j, "batch_size", tr.batch_size, "train");
        tr.segment_symbols = get_or<std::size_t>(j, "segment_symbols", tr.segment_symbols, "train");
        tr.learning_rate = get_or<double>(j, "learning_rate", tr.learning_rate, "train");
        tr.power_set_dbm =
            get_or<std::vector<double>>(j, "power_set_dbm", tr.power_set_dbm, "train");
        tr.traces_per_power =
            get_or<std::size_t>(j, "traces_per_power", tr.traces_per_power, "train");
        tr.quant_bits = get_or<unsigned>(j, "quant_bits", tr.quant_bits, "train");
        tr.prune_enabled = get_or<bool>(j, "prune_enabled", tr.prune_enabled, "train");
        tr.prune_fraction = get_or<double>(j, "prune_fraction", tr.prune_fraction, "train");
        tr.prune_n_short = get_or<std::size_t>(j, "prune_n_short", tr.prune_n_short, "train");
        tr.prune_short_taps =
            get_or<std::size_t>(j, "prune_short_taps", tr.prune_short_taps, "train");
        tr.prune_long_taps = get_or<std::size_t>(j, "prune_long_taps", tr.prune_long_taps, "train");
    }
    {
        const nlohmann::json& j = root.contains("gridsearch") ? root.at("gridsearch") : empty;
        check_keys(j, "gridsearch", {"power_dbm", "traces", "stps", "gamma_grid", "beta2_grid"});
        auto& gs = cfg.gridsearch;
        gs.power_dbm = get_or<double>(j, "power_dbm", gs.power_dbm, "gridsearch");
        gs.traces = get_or<std::size_t>(j, "traces", gs.traces, "gridsearch");
        gs.stps = get_or<std::size_t>(j, "stps", gs.stps, "gridsearch");
        gs.gamma_grid = get_or<std::vector<double>>(j, "gamma_grid", gs.gamma_grid, "gridsearch");
        gs.beta2_grid = get_or<std::vector<double>>(j, "beta2_grid", gs.beta2_grid, "gridsearch");
    }
    {
        const nlohmann::json& j = root.contains("gradcheck") ? root.at("gradcheck") : empty;
        check_keys(j, "gradcheck",
                   {"n_spans", "stps", "tap_len", "n_samples", "n_probes", "fd_steps",
                    "delta_model"});
        auto& gc = cfg.gradcheck;
        gc.n_spans = get_or<std::size_t>(j, "n_spans", gc.n_spans, "gradcheck");
        gc.stps = get_or<std::size_t>(j, "stps", gc.stps, "gradcheck");
        gc.tap_len = get_or<std::size_t>(j, "tap_len", gc.tap_len, "gradcheck");
        gc.n_samples = get_or<std::size_t>(j, "n_samples", gc.n_samples, "gradcheck");
        gc.n_probes = get_or<std::size_t>(j, "n_probes", gc.n_probes, "gradcheck");
        gc.fd_steps = get_or<std::vector<double>>(j, "fd_steps", gc.fd_steps, "gradcheck");
        gc.delta_model = get_or<bool>(j, "delta_model", gc.delta_model, "gradcheck");
    }
    {
        const nlohmann::json& j = root.contains("report") ? root.at("report") : empty;
        check_keys(j, "report", {"delta_f_fractions"});
        cfg.report.delta_f_fractions = get_or<std::vector<double>>(
            j, "delta_f_fractions", cfg.report.delta_f_fractions, "report");
    }
    cfg.seed = get_or<std::uint64_t>(root, "seed", cfg.seed, "top level");
    cfg.out_dir = get_or<std::string>(root, "out_dir", cfg.out_dir, "top level");

    validate_config(cfg);
    return cfg;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path);
    nlohmann::json root;
    try {
        in >> root;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config: " + path + " is not valid JSON: " + e.what());
    }
    return experiment_config_from_json(root);
}

/// Canonical JSON form with every default resolved; its dump is the input
/// of the config hash, so two configs agree iff their canonical forms do.
inline nlohmann::json experiment_config_json(const ExperimentConfig& cfg) {
    nlohmann::json root;
    root["link"] = {{"n_spans", cfg.link.n_spans},
                    {"span_km", cfg.link.fiber.span_length_km},
                    {"alpha_db_per_km", cfg.link.fiber.alpha_db_per_km},
                    {"beta2_ps2_per_km", cfg.link.fiber.beta2_ps2_per_km},
                    {"gamma_per_w_km", cfg.link.fiber.gamma_per_w_km},
                    {"manakov_factor", cfg.link.fiber.manakov_factor},
                    {"forward_stps", cfg.link.forward_stps},
                    {"step_mode", detail::step_mode_name(cfg.link.step_mode)},
                    {"noise_figure_db", cfg.link.noise_figure_db},
                    {"noise", cfg.link.noise_enabled},
                    {"pmd_sections_per_span", cfg.link.pmd_sections_per_span},
                    {"pmd_coeff_ps_sqrt_km", cfg.link.pmd_coeff_ps_sqrt_km},
                    {"pmd_seed", cfg.link.pmd_seed}};
    root["transmitter"] = {{"baud_hz", cfg.transmitter.baud_hz},
                           {"rolloff", cfg.transmitter.rolloff},
                           {"constellation", cfg.transmitter.constellation},
                           {"n_symbols", cfg.transmitter.n_symbols},
                           {"sps", cfg.transmitter.sps},
                           {"rrc_span_symbols", cfg.transmitter.rrc_span_symbols}};
    root["receiver"] = {{"lowpass_hz", cfg.receiver.lowpass_hz}, {"sps", cfg.receiver.sps}};
    root["sweep"] = {{"power_start_dbm", cfg.sweep.power_start_dbm},
                     {"power_stop_dbm", cfg.sweep.power_stop_dbm},
                     {"power_step_db", cfg.sweep.power_step_db},
                     {"traces_per_power", cfg.sweep.traces_per_power}};
    root["equalizers"] = cfg.equalizers;
    root["dbp"] = {{"stps", cfg.dbp.stps},
                   {"step_mode", detail::step_mode_name(cfg.dbp.step_mode)},
                   {"gamma_per_w_km", cfg.dbp.gamma_per_w_km
                                          ? nlohmann::json(*cfg.dbp.gamma_per_w_km)
                                          : nlohmann::json(nullptr)},
                   {"beta2_ps2_per_km", cfg.dbp.beta2_ps2_per_km
                                            ? nlohmann::json(*cfg.dbp.beta2_ps2_per_km)
                                            : nlohmann::json(nullptr)}};
    root["ldbp"] = {{"stps", cfg.ldbp.stps},
                    {"init_taps", cfg.ldbp.init_taps},
                    {"checkpoint", cfg.ldbp.checkpoint}};
    root["train"] = {{"n_iterations", cfg.train.n_iterations},
                     {"batch_size", cfg.train.batch_size},
                     {"segment_symbols", cfg.train.segment_symbols},
                     {"learning_rate", cfg.train.learning_rate},
                     {"power_set_dbm", cfg.train.power_set_dbm},
                     {"traces_per_power", cfg.train.traces_per_power},
                     {"quant_bits", cfg.train.quant_bits},
                     {"prune_enabled", cfg.train.prune_enabled},
                     {"prune_fraction", cfg.train.prune_fraction},
                     {"prune_n_short", cfg.train.prune_n_short},
                     {"prune_short_taps", cfg.train.prune_short_taps},
                     {"prune_long_taps", cfg.train.prune_long_taps}};
    root["gridsearch"] = {{"power_dbm", cfg.gridsearch.power_dbm},
                          {"traces", cfg.gridsearch.traces},
                          {"stps", cfg.gridsearch.stps},
                          {"gamma_grid", cfg.gridsearch.gamma_grid},
                          {"beta2_grid", cfg.gridsearch.beta2_grid}};
    root["gradcheck"] = {{"n_spans", cfg.gradcheck.n_spans},
                         {"stps", cfg.gradcheck.stps},
                         {"tap_len", cfg.gradcheck.tap_len},
                         {"n_samples", cfg.gradcheck.n_samples},
                         {"n_probes", cfg.gradcheck.n_probes},
                         {"fd_steps", cfg.gradcheck.fd_steps},
                         {"delta_model", cfg.gradcheck.delta_model}};
    root["report"] = {{"delta_f_fractions", cfg.report.delta_f_fractions}};
    root["seed"] = cfg.seed;
    root["out_dir"] = cfg.out_dir;
    return root;
}

/// 16-hex-digit FNV-1a of the canonical config dump; stamped into every
/// output file so results carry their provenance.  The output directory is
/// excluded: it changes where results land, never what they are.
inline std::string config_hash(const ExperimentConfig& cfg) {
    nlohmann::json canon = experiment_config_json(cfg);
    canon.erase("out_dir");
    const std::uint64_t h = detail::fnv1a64(canon.dump());
    std::ostringstream os;
    os << std::hex << std::setfill('0') << std::setw(16) << h;
    return os.str();
}

// ---------------------------------------------------------------------------
// Derived pieces shared by the subcommands
// ---------------------------------------------------------------------------

inline LinkConfig link_config(const ExperimentConfig& cfg) {
    LinkConfig link;
    link.fiber = cfg.link.fiber;
    link.n_spans = cfg.link.n_spans;
    link.forward_stps = cfg.link.forward_stps;
    link.step_mode = cfg.link.step_mode;
    link.edfa.gain_db = cfg.link.fiber.alpha_db_per_km * cfg.link.fiber.span_length_km;
    link.edfa.noise_figure_db = cfg.link.noise_figure_db;
    link.edfa.noise_enabled = cfg.link.noise_enabled;
    link.pmd.sections_per_span = cfg.link.pmd_sections_per_span;
    link.pmd.coeff_ps_sqrt_km = cfg.link.pmd_coeff_ps_sqrt_km;
    link.pmd.seed = cfg.link.pmd_seed;
    return link;
}

/// Fiber parameters the receiver assumes: the true link fiber with any
/// configured estimate overrides applied.
inline FiberParams estimate_fiber(const ExperimentConfig& cfg) {
    FiberParams est = cfg.link.fiber;
    if (cfg.dbp.gamma_per_w_km) est.gamma_per_w_km = *cfg.dbp.gamma_per_w_km;
    if (cfg.dbp.beta2_ps2_per_km) est.beta2_ps2_per_km = *cfg.dbp.beta2_ps2_per_km;
    return est;
}

inline std::vector<double> sweep_powers(const SweepSettings& sw) {
    const double span = sw.power_stop_dbm - sw.power_start_dbm;
    const std::size_t n = static_cast<std::size_t>(std::floor(span / sw.power_step_db + 1e-9)) + 1;
    std::vector<double> powers(n);
    for (std::size_t i = 0; i < n; ++i)
        powers[i] = sw.power_start_dbm + static_cast<double>(i) * sw.power_step_db;
    return powers;
}

inline double receiver_rate_hz(const ExperimentConfig& cfg) {
    return cfg.transmitter.baud_hz * static_cast<double>(cfg.receiver.sps);
}

namespace detail {

inline void assert_finite(const DualPolSignal& sig, const std::string& stage) {
    for (std::size_t i = 0; i < sig.size(); ++i)
        if (!std::isfinite(sig.x[i].real()) || !std::isfinite(sig.x[i].imag()) ||
            !std::isfinite(sig.y[i].real()) || !std::isfinite(sig.y[i].imag()))
            throw std::runtime_error("numerical failure in " + stage + ": non-finite sample");
}

}  // namespace detail

/// Precomputed per-config state for trace generation and scoring.
struct SimContext {
    LinkConfig link;
    RealFirTaps shaping;            // transmit RRC at the simulation rate
    RealFirTaps matched;            // receive RRC at the receiver rate
    std::vector<cplx> matched_cplx; // matched taps as complex for convolution
    std::size_t resample_up = 1;
    std::size_t resample_down = 1;
};

inline SimContext make_sim_context(const ExperimentConfig& cfg) {
    SimContext ctx;
    ctx.link = link_config(cfg);
    ctx.shaping = rrc_taps(cfg.transmitter.rolloff, cfg.transmitter.rrc_span_symbols,
                           cfg.transmitter.sps);
    ctx.matched =
        rrc_taps(cfg.transmitter.rolloff, cfg.transmitter.rrc_span_symbols, cfg.receiver.sps);
    ctx.matched_cplx.assign(ctx.matched.taps.begin(), ctx.matched.taps.end());
    const std::size_t g = std::gcd(cfg.receiver.sps, cfg.transmitter.sps);
    ctx.resample_up = cfg.receiver.sps / g;
    ctx.resample_down = cfg.transmitter.sps / g;
    return ctx;
}

/// Generates one stored-channel trace: random frame, pulse shaping, launch
/// normalization, fiber propagation, receiver low-pass and rate reduction,
/// renormalization to launch power.  Fully determined by the two seeds.
inline PowerTrace simulate_power_trace(const ExperimentConfig& cfg, const SimContext& ctx,
                                       double power_dbm, std::uint64_t frame_seed,
                                       std::uint64_t noise_seed) {
    const double watt = dbm_to_watt(power_dbm);
    PowerTrace out;
    out.power_dbm = power_dbm;
    out.frame = gen_symbol_frame(frame_seed, cfg.transmitter.n_symbols,
                                 cfg.transmitter.constellation, cfg.transmitter.baud_hz);
    DualPolSignal tx = shape_pulses(out.frame, ctx.shaping, cfg.transmitter.sps);
    tx = normalize_to_power(tx, watt);
    DualPolSignal rx = propagate(tx, ctx.link, noise_seed);
    rx = lowpass(rx, cfg.receiver.lowpass_hz);
    rx = resample_rational(rx, ctx.resample_up, ctx.resample_down);
    out.rx2 = normalize_to_power(rx, watt);
    detail::assert_finite(out.rx2, "channel simulation");
    return out;
}

/// Matched filter, symbol-rate decimation with the 1/sqrt(launch power)
/// scale, circular alignment, per-polarization phase correction, effective
/// SNR against the transmitted symbols.
inline double equalized_snr(const DualPolSignal& equalized, const SymbolFrame& frame,
                            const SimContext& ctx, std::size_t rx_sps, double launch_power_watt) {
    const DualPolSignal mfed =
        fir_convolve_circular(equalized, ctx.matched_cplx, ctx.matched_cplx);
    const double inv_kappa = 1.0 / std::sqrt(launch_power_watt);
    const std::size_t n_sym = frame.size();
    std::vector<cplx> sx(n_sym), sy(n_sym);
    for (std::size_t i = 0; i < n_sym; ++i) {
        sx[i] = mfed.x[i * rx_sps] * inv_kappa;
        sy[i] = mfed.y[i * rx_sps] * inv_kappa;
    }
    const std::size_t shift = align_circular(sx, frame.x);
    if (shift != 0) {
        std::vector<cplx> ax(n_sym), ay(n_sym);
        for (std::size_t i = 0; i < n_sym; ++i) {
            ax[i] = sx[(i + shift) % n_sym];
            ay[i] = sy[(i + shift) % n_sym];
        }
        sx = std::move(ax);
        sy = std::move(ay);
    }
    const PhaseCorrection px = phase_offset_correct(sx, frame.x);
    const PhaseCorrection py = phase_offset_correct(sy, frame.y);
    return effective_snr(px.corrected, py.corrected, frame.x, frame.y);
}

/// Runs every configured equalizer on one trace; SNRs come back in the
/// config's equalizer order.
inline std::vector<double> equalize_and_score(const ExperimentConfig& cfg, const SimContext& ctx,
                                              const PowerTrace& trace, const LdbpModel* model) {
    const FiberParams est = estimate_fiber(cfg);
    const double total_km = est.span_length_km * static_cast<double>(cfg.link.n_spans);
    const double watt = dbm_to_watt(trace.power_dbm);
    std::vector<double> snr;
    snr.reserve(cfg.equalizers.size());
    for (const std::string& name : cfg.equalizers) {
        DualPolSignal eq;
        if (name == "edc") {
            eq = edc(trace.rx2, est.beta2_ps2_per_km, total_km);
        } else if (name == "dbp") {
            eq = dbp_fd(trace.rx2, est, cfg.link.n_spans, cfg.dbp.stps, cfg.dbp.step_mode, watt);
        } else {
            if (!model) throw ConfigError("ldbp equalizer selected but no model is available");
            eq = ldbp_forward(*model, trace.rx2);
        }
        detail::assert_finite(eq, "equalizer " + name);
        const double value = equalized_snr(eq, trace.frame, ctx, cfg.receiver.sps, watt);
        if (!std::isfinite(value))
            throw std::runtime_error("numerical failure in equalizer " + name +
                                     ": non-finite effective SNR");
        snr.push_back(value);
    }
    return snr;
}

// ---------------------------------------------------------------------------
// Launch-power sweep
// ---------------------------------------------------------------------------

struct SweepCell {
    double power_dbm = 0.0;
    std::size_t trace_index = 0;
    std::vector<double> snr_db;  // one entry per configured equalizer
};

struct EqualizerSummary {
    std::string name;
    std::vector<double> mean_snr_db;  // one entry per sweep power
    double peak_snr_db = 0.0;
    double optimal_power_dbm = 0.0;
    double gain_over_edc_db = 0.0;  // NaN when edc is not part of the sweep
};

struct SweepResult {
    std::string config_hash;
    std::vector<std::string> equalizers;
    std::vector<double> powers_dbm;
    std::vector<SweepCell> cells;  // ordered by (power index, trace index)
    std::vector<EqualizerSummary> summaries;
};

namespace detail {

/// Aggregates are always derived from the cell table with this one
/// function, in one fixed accumulation order, so a recomputation on load
/// can demand exact equality.
inline std::vector<EqualizerSummary> summarize_sweep(const std::vector<std::string>& equalizers,
                                                     const std::vector<double>& powers,
                                                     const std::vector<SweepCell>& cells) {
    const std::size_t n_eq = equalizers.size();
    const std::size_t n_pow = powers.size();
    if (n_pow == 0 || cells.size() % n_pow != 0)
        throw std::runtime_error("sweep: cell table does not tile the power grid");
    const std::size_t traces = cells.size() / n_pow;
    if (traces == 0) throw std::runtime_error("sweep: no traces");
    for (std::size_t p = 0; p < n_pow; ++p)
        for (std::size_t t = 0; t < traces; ++t) {
            const SweepCell& c = cells[p * traces + t];
            if (c.trace_index != t || c.power_dbm != powers[p] || c.snr_db.size() != n_eq)
                throw std::runtime_error("sweep: cell table is not in (power, trace) order");
        }

    std::vector<EqualizerSummary> out(n_eq);
    for (std::size_t e = 0; e < n_eq; ++e) {
        EqualizerSummary& s = out[e];
        s.name = equalizers[e];
        s.mean_snr_db.resize(n_pow);
        for (std::size_t p = 0; p < n_pow; ++p) {
            double acc = 0.0;
            for (std::size_t t = 0; t < traces; ++t) acc += cells[p * traces + t].snr_db[e];
            s.mean_snr_db[p] = acc / static_cast<double>(traces);
        }
        std::size_t best = 0;
        for (std::size_t p = 1; p < n_pow; ++p)
            if (s.mean_snr_db[p] > s.mean_snr_db[best]) best = p;
        s.peak_snr_db = s.mean_snr_db[best];
        s.optimal_power_dbm = powers[best];
    }
    const auto edc_it = std::find(equalizers.begin(), equalizers.end(), "edc");
    for (std::size_t e = 0; e < n_eq; ++e) {
        if (edc_it == equalizers.end())
            out[e].gain_over_edc_db = std::numeric_limits<double>::quiet_NaN();
        else
            out[e].gain_over_edc_db =
                out[e].peak_snr_db -
                out[static_cast<std::size_t>(edc_it - equalizers.begin())].peak_snr_db;
    }
    return out;
}

}  // namespace detail

/// Runs the configured launch-power sweep.  Each (power, trace) point is
/// seeded independently from the master seed, so the result is identical
/// for any thread count; with ldbp selected a model must be supplied either
/// directly or through the configured checkpoint path.
inline SweepResult run_sweep(const ExperimentConfig& cfg, const LdbpModel* model = nullptr,
                             unsigned threads = 1) {
    validate_config(cfg);
    LdbpModel loaded;
    const bool wants_ldbp =
        std::find(cfg.equalizers.begin(), cfg.equalizers.end(), "ldbp") != cfg.equalizers.end();
    if (wants_ldbp && !model) {
        if (cfg.ldbp.checkpoint.empty())
            throw ConfigError("ldbp equalizer selected but no model or checkpoint is configured");
        loaded = load_checkpoint(cfg.ldbp.checkpoint);
        model = &loaded;
    }
    if (wants_ldbp &&
        std::abs(model->sample_rate_hz - receiver_rate_hz(cfg)) > 1e-6 * receiver_rate_hz(cfg))
        throw ConfigError("ldbp model sample rate does not match the receiver rate");

    const SimContext ctx = make_sim_context(cfg);
    SweepResult result;
    result.config_hash = config_hash(cfg);
    result.equalizers = cfg.equalizers;
    result.powers_dbm = sweep_powers(cfg.sweep);
    const std::size_t traces = cfg.sweep.traces_per_power;
    const std::size_t n_points = result.powers_dbm.size() * traces;
    result.cells.resize(n_points);

    auto run_point = [&](std::size_t idx) {
        const std::size_t p = idx / traces;
        const std::size_t t = idx % traces;
        const double power = result.powers_dbm[p];
        const PowerTrace trace =
            simulate_power_trace(cfg, ctx, power, mix_seed(cfg.seed, p, t, seed_purpose::sweep_frame),
                                 mix_seed(cfg.seed, p, t, seed_purpose::sweep_noise));
        result.cells[idx] = {power, t, equalize_and_score(cfg, ctx, trace, model)};
    };

    const unsigned workers =
        std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(n_points)));
    if (workers == 1) {
        for (std::size_t idx = 0; idx < n_points; ++idx) run_point(idx);
    } else {
        std::vector<std::exception_ptr> errors(workers);
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (unsigned w = 0; w < workers; ++w)
            pool.emplace_back([&, w] {
                try {
                    for (std::size_t idx = w; idx < n_points; idx += workers) run_point(idx);
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
        for (auto& th : pool) th.join();
        for (const auto& err : errors)
            if (err) std::rethrow_exception(err);
    }

    result.summaries = detail::summarize_sweep(result.equalizers, result.powers_dbm, result.cells);
    return result;
}

// ---------------------------------------------------------------------------
// Sweep result files: per-trace CSV, aggregate CSV, plot-data JSON
// ---------------------------------------------------------------------------

namespace detail {

inline std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string());
    out.precision(17);
    return out;
}

inline std::string read_hash_line(std::istream& in, const std::string& where) {
    std::string line;
    if (!std::getline(in, line) || line.rfind("# config_hash ", 0) != 0)
        throw std::runtime_error(where + ": missing '# config_hash' stamp");
    return line.substr(14);
}

inline std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        out.push_back(line.substr(start, comma == std::string::npos ? comma : comma - start));
        if (comma == std::string::npos) return out;
        start = comma + 1;
    }
}

inline double parse_double(const std::string& s, const std::string& where) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw std::runtime_error(where + ": bad number '" + s + "'");
    }
}

inline bool same_value(double a, double b) { return a == b || (std::isnan(a) && std::isnan(b)); }

}  // namespace detail

/// Writes sweep_cells.csv, sweep_aggregates.csv and plot_data.json into
/// `dir`, each stamped with the config hash.
inline void write_sweep_result(const std::string& dir, const SweepResult& result) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    {
        auto out = detail::open_out(fs::path(dir) / "sweep_cells.csv");
        out << "# config_hash " << result.config_hash << "\n";
        out << "power_dbm,trace_index";
        for (const auto& name : result.equalizers) out << "," << name << "_snr_db";
        out << "\n";
        for (const auto& cell : result.cells) {
            out << cell.power_dbm << "," << cell.trace_index;
            for (double v : cell.snr_db) out << "," << v;
            out << "\n";
        }
    }
    {
        auto out = detail::open_out(fs::path(dir) / "sweep_aggregates.csv");
        out << "# config_hash " << result.config_hash << "\n";
        out << "equalizer,power_dbm,mean_snr_db\n";
        for (const auto& s : result.summaries)
            for (std::size_t p = 0; p < result.powers_dbm.size(); ++p)
                out << s.name << "," << result.powers_dbm[p] << "," << s.mean_snr_db[p] << "\n";
    }
    {
        nlohmann::json plot;
        plot["config_hash"] = result.config_hash;
        plot["x_label"] = "launch_power_dbm";
        plot["y_label"] = "effective_snr_db";
        plot["series"] = nlohmann::json::array();
        plot["summary"] = nlohmann::json::array();
        for (const auto& s : result.summaries) {
            plot["series"].push_back(
                {{"label", s.name}, {"x", result.powers_dbm}, {"y", s.mean_snr_db}});
            plot["summary"].push_back({{"equalizer", s.name},
                                       {"peak_snr_db", s.peak_snr_db},
                                       {"optimal_power_dbm", s.optimal_power_dbm},
                                       {"gain_over_edc_db",
                                        std::isnan(s.gain_over_edc_db)
                                            ? nlohmann::json(nullptr)
                                            : nlohmann::json(s.gain_over_edc_db)}});
        }
        auto out = detail::open_out(fs::path(dir) / "plot_data.json");
        out << plot.dump(2) << "\n";
    }
}

/// Reads a stored sweep, recomputes every aggregate from the per-trace
/// table and throws if any stored aggregate differs (files are stamped
/// redundantly on purpose).
inline SweepResult read_sweep_result(const std::string& dir) {
    namespace fs = std::filesystem;
    SweepResult result;

    {
        std::ifstream in(fs::path(dir) / "sweep_cells.csv");
        if (!in) throw std::runtime_error("cannot open " + dir + "/sweep_cells.csv");
        result.config_hash = detail::read_hash_line(in, "sweep_cells.csv");
        std::string line;
        if (!std::getline(in, line)) throw std::runtime_error("sweep_cells.csv: missing header");
        const auto cols = detail::split_csv(line);
        if (cols.size() < 3 || cols[0] != "power_dbm" || cols[1] != "trace_index")
            throw std::runtime_error("sweep_cells.csv: unexpected header");
        for (std::size_t c = 2; c < cols.size(); ++c) {
            const std::string& col = cols[c];
            if (col.size() < 8 || col.substr(col.size() - 7) != "_snr_db")
                throw std::runtime_error("sweep_cells.csv: unexpected column '" + col + "'");
            result.equalizers.push_back(col.substr(0, col.size() - 7));
        }
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto fields = detail::split_csv(line);
            if (fields.size() != cols.size())
                throw std::runtime_error("sweep_cells.csv: ragged row '" + line + "'");
            SweepCell cell;
            cell.power_dbm = detail::parse_double(fields[0], "sweep_cells.csv");
            cell.trace_index =
                static_cast<std::size_t>(detail::parse_double(fields[1], "sweep_cells.csv"));
            for (std::size_t c = 2; c < fields.size(); ++c)
                cell.snr_db.push_back(detail::parse_double(fields[c], "sweep_cells.csv"));
            if (result.powers_dbm.empty() || (cell.trace_index == 0 &&
                                              cell.power_dbm != result.powers_dbm.back()))
                result.powers_dbm.push_back(cell.power_dbm);
            result.cells.push_back(std::move(cell));
        }
    }
    result.summaries = detail::summarize_sweep(result.equalizers, result.powers_dbm, result.cells);

    {
        std::ifstream in(fs::path(dir) / "sweep_aggregates.csv");
        if (!in) throw std::runtime_error("cannot open " + dir + "/sweep_aggregates.csv");
        if (detail::read_hash_line(in, "sweep_aggregates.csv") != result.config_hash)
            throw std::runtime_error("sweep_aggregates.csv: config hash mismatch");
        std::string line;
        if (!std::getline(in, line) || line != "equalizer,power_dbm,mean_snr_db")
            throw std::runtime_error("sweep_aggregates.csv: unexpected header");
        std::size_t row = 0;
        const std::size_t n_pow = result.powers_dbm.size();
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto fields = detail::split_csv(line);
            if (fields.size() != 3)
                throw std::runtime_error("sweep_aggregates.csv: ragged row '" + line + "'");
            const std::size_t e = row / n_pow;
            const std::size_t p = row % n_pow;
            if (e >= result.summaries.size())
                throw std::runtime_error("sweep_aggregates.csv: more rows than expected");
            if (fields[0] != result.summaries[e].name ||
                !detail::same_value(detail::parse_double(fields[1], "sweep_aggregates.csv"),
                                    result.powers_dbm[p]) ||
                !detail::same_value(detail::parse_double(fields[2], "sweep_aggregates.csv"),
                                    result.summaries[e].mean_snr_db[p]))
                throw std::runtime_error(
                    "sweep_aggregates.csv: stored aggregate disagrees with the per-trace table");
            ++row;
        }
        if (row != result.summaries.size() * n_pow)
            throw std::runtime_error("sweep_aggregates.csv: fewer rows than expected");
    }

    {
        std::ifstream in(fs::path(dir) / "plot_data.json");
        if (!in) throw std::runtime_error("cannot open " + dir + "/plot_data.json");
        nlohmann::json plot;
        try {
            in >> plot;
        } catch (const nlohmann::json::exception& e) {
            throw std::runtime_error(std::string("plot_data.json: ") + e.what());
        }
        if (plot.value("config_hash", std::string()) != result.config_hash)
            throw std::runtime_error("plot_data.json: config hash mismatch");
        const auto& summary = plot.at("summary");
        const auto& series = plot.at("series");
        if (summary.size() != result.summaries.size() || series.size() != result.summaries.size())
            throw std::runtime_error("plot_data.json: wrong number of equalizers");
        for (std::size_t e = 0; e < result.summaries.size(); ++e) {
            const EqualizerSummary& s = result.summaries[e];
            const auto& js = summary[e];
            const auto& jg = js.at("gain_over_edc_db");
            const double gain = jg.is_null() ? std::numeric_limits<double>::quiet_NaN()
                                             : jg.get<double>();
            if (js.value("equalizer", std::string()) != s.name ||
                !detail::same_value(js.value("peak_snr_db", 0.0), s.peak_snr_db) ||
                !detail::same_value(js.value("optimal_power_dbm", 0.0), s.optimal_power_dbm) ||
                !detail::same_value(gain, s.gain_over_edc_db))
                throw std::runtime_error(
                    "plot_data.json: stored summary disagrees with the per-trace table");
            const auto y = series[e].at("y").get<std::vector<double>>();
            if (series[e].value("label", std::string()) != s.name || y.size() != s.mean_snr_db.size())
                throw std::runtime_error("plot_data.json: malformed series");
            for (std::size_t p = 0; p < y.size(); ++p)
                if (!detail::same_value(y[p], s.mean_snr_db[p]))
                    throw std::runtime_error(
                        "plot_data.json: stored series disagrees with the per-trace table");
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Training helpers (initial model, pattern pruning, data generation)
// ---------------------------------------------------------------------------

/// Final per-layer tap pattern: the `n_short` layers with the smallest
/// dispersion distance get `short_taps`, the rest `long_taps`; ties keep
/// the receiver-side layer shorter.
inline std::vector<std::size_t> pattern_final_lengths(const ExperimentConfig& cfg) {
    const FiberParams est = estimate_fiber(cfg);
    const std::vector<double> dist =
        layer_distances(est.span_length_km, est.alpha_db_per_km, cfg.link.n_spans, cfg.ldbp.stps,
                        cfg.link.step_mode);
    if (cfg.train.prune_n_short > dist.size())
        throw ConfigError("config: train.prune_n_short exceeds the layer count");
    std::vector<std::size_t> order(dist.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });
    std::vector<std::size_t> lengths(dist.size(), cfg.train.prune_long_taps);
    for (std::size_t i = 0; i < cfg.train.prune_n_short; ++i)
        lengths[order[i]] = cfg.train.prune_short_taps;
    return lengths;
}

inline LdbpModel build_initial_model(const ExperimentConfig& cfg) {
    return build_model(link_config(cfg), cfg.ldbp.stps, cfg.ldbp.init_taps, estimate_fiber(cfg),
                       receiver_rate_hz(cfg), cfg.link.step_mode);
}

inline std::vector<PowerTrace> build_training_data(const ExperimentConfig& cfg) {
    const SimContext ctx = make_sim_context(cfg);
    std::vector<PowerTrace> data;
    data.reserve(cfg.train.power_set_dbm.size() * cfg.train.traces_per_power);
    for (std::size_t p = 0; p < cfg.train.power_set_dbm.size(); ++p)
        for (std::size_t t = 0; t < cfg.train.traces_per_power; ++t)
            data.push_back(simulate_power_trace(
                cfg, ctx, cfg.train.power_set_dbm[p],
                mix_seed(cfg.seed, p, t, seed_purpose::train_frame),
                mix_seed(cfg.seed, p, t, seed_purpose::train_noise)));
    return data;
}

/// Translates the train section into the optimizer configuration for a
/// freshly built model, including the pruning ramp toward the final
/// pattern when enabled.
inline TrainConfig training_config(const ExperimentConfig& cfg, const LdbpModel& model) {
    TrainConfig tc;
    tc.learning_rate = cfg.train.learning_rate;
    tc.batch_size = cfg.train.batch_size;
    tc.n_iterations = cfg.train.n_iterations;
    tc.power_set_dbm = cfg.train.power_set_dbm;
    tc.segment_symbols = cfg.train.segment_symbols;
    tc.quant_bits = cfg.train.quant_bits;
    tc.seed = cfg.seed;
    if (cfg.train.prune_enabled) {
        std::vector<std::size_t> initial(model.n_layers());
        for (std::size_t l = 0; l < model.n_layers(); ++l)
            initial[l] = model.layers[l][0].active_length();
        tc.prune = build_prune_schedule(initial, pattern_final_lengths(cfg), tc.n_iterations,
                                        cfg.train.prune_fraction);
    }
    return tc;
}

// ---------------------------------------------------------------------------
// Parameter grid search over the frequency-domain backpropagator
// ---------------------------------------------------------------------------

/// Simulates pinned-power traces and scans (gamma, beta2) candidates with
/// the configured backpropagation settings.
inline GridSearchResult run_grid_search(const ExperimentConfig& cfg) {
    validate_config(cfg);
    const SimContext ctx = make_sim_context(cfg);
    const auto& gs = cfg.gridsearch;
    std::vector<PowerTrace> traces;
    traces.reserve(gs.traces);
    for (std::size_t t = 0; t < gs.traces; ++t)
        traces.push_back(simulate_power_trace(cfg, ctx, gs.power_dbm,
                                              mix_seed(cfg.seed, 0, t, seed_purpose::grid_frame),
                                              mix_seed(cfg.seed, 0, t, seed_purpose::grid_noise)));
    std::vector<double> gamma_grid = gs.gamma_grid;
    if (gamma_grid.empty()) {
        for (double m : {0.6, 0.7, 0.8, 0.9, 1.0, 1.1, 1.2, 1.3, 1.4})
            gamma_grid.push_back(m * cfg.link.fiber.gamma_per_w_km);
    }
    std::vector<double> beta2_grid = gs.beta2_grid;
    if (beta2_grid.empty()) beta2_grid = {estimate_fiber(cfg).beta2_ps2_per_km};

    const double watt = dbm_to_watt(gs.power_dbm);
    return grid_search(traces, gamma_grid, beta2_grid,
                       [&](const PowerTrace& trace, double gamma, double beta2) {
                           FiberParams est = estimate_fiber(cfg);
                           est.gamma_per_w_km = gamma;
                           est.beta2_ps2_per_km = beta2;
                           const DualPolSignal eq = dbp_fd(trace.rx2, est, cfg.link.n_spans,
                                                           gs.stps, cfg.dbp.step_mode, watt);
                           return equalized_snr(eq, trace.frame, ctx, cfg.receiver.sps, watt);
                       });
}

inline void write_grid_result(const std::string& dir, const ExperimentConfig& cfg,
                              const GridSearchResult& result) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    auto out = detail::open_out(fs::path(dir) / "gridsearch.csv");
    out << "# config_hash " << config_hash(cfg) << "\n";
    out << "gamma_per_w_km,beta2_ps2_per_km,mean_snr_db";
    for (std::size_t t = 0; t < cfg.gridsearch.traces; ++t) out << ",trace" << t << "_snr_db";
    out << "\n";
    for (const auto& point : result.table) {
        out << point.gamma << "," << point.beta2 << "," << point.mean_snr_db;
        for (double v : point.per_trace_snr_db) out << "," << v;
        out << "\n";
    }
    out << "# best gamma=" << result.best_gamma << " beta2=" << result.best_beta2
        << " mean_snr_db=" << result.best_mean_snr_db << "\n";
}

// ---------------------------------------------------------------------------
// Complexity and dispersion-memory reports
// ---------------------------------------------------------------------------

/// Impulse-response length of the cascade of FIR filters with the given
/// active lengths (circular layout aside): sum of (len - 1) plus one.
inline std::size_t composed_impulse_length(const std::vector<std::size_t>& active_lengths) {
    std::size_t total = 0;
    for (std::size_t len : active_lengths) {
        if (len == 0) throw std::invalid_argument("composed_impulse_length: zero-length filter");
        total += len - 1;
    }
    return active_lengths.empty() ? 0 : total + 1;
}

struct ComplexityReport {
    std::vector<std::size_t> per_layer_active_taps;  // per polarization
    std::size_t total_active_taps = 0;
    std::size_t overall_impulse_length = 0;
};

inline ComplexityReport complexity_report(const LdbpModel& model) {
    check_model(model);
    ComplexityReport report;
    report.per_layer_active_taps.reserve(model.n_layers());
    for (const auto& pair : model.layers)
        report.per_layer_active_taps.push_back(pair[0].active_length());
    report.total_active_taps =
        std::accumulate(report.per_layer_active_taps.begin(), report.per_layer_active_taps.end(),
                        std::size_t{0});
    report.overall_impulse_length = composed_impulse_length(report.per_layer_active_taps);
    return report;
}

/// Tap count needed to span the chromatic-dispersion group-delay spread
/// 2*pi*|beta2|*delta_f*L over sample period T: the nearest odd count to
/// that spread (a centered delay line needs an odd length), zero when the
/// bandwidth is zero.
inline std::size_t cd_memory_estimate(double beta2_ps2_per_km, double total_length_km,
                                      double delta_f_hz, double sample_period_s) {
    if (!(total_length_km > 0) || !(sample_period_s > 0) || !(delta_f_hz >= 0))
        throw std::invalid_argument("cd_memory_estimate: arguments must be positive");
    const double spread =
        2.0 * 3.141592653589793238462643383279502884 * std::abs(beta2_ps2_per_km) * 1e-24 *
        delta_f_hz * total_length_km / sample_period_s;
    if (spread == 0.0) return 0;
    const long long pairs = std::llround((spread - 1.0) / 2.0);
    return static_cast<std::size_t>(2 * std::max(pairs, 0ll) + 1);
}

// ---------------------------------------------------------------------------
// Gradient-check runner
// ---------------------------------------------------------------------------

struct GradcheckStepResult {
    double fd_step = 0.0;
    double max_rel_err = 0.0;
};

struct GradcheckResult {
    std::vector<GradcheckStepResult> curve;  // one entry per configured step
    GradCheckReport last_report;             // probe detail of the last step
};

/// Builds a deterministic toy model (random taps and rotation coefficients,
/// or an identity-filter linear model), one random segment, and compares
/// analytic gradients against central finite differences for each
/// configured step size.  Probes hit the same coordinates at every step so
/// the curve isolates the step-size effect.
inline GradcheckResult run_gradcheck(const GradcheckSettings& gc, std::uint64_t seed) {
    FiberParams fiber;
    LinkConfig link;
    link.fiber = fiber;
    link.n_spans = gc.n_spans;
    link.forward_stps = gc.stps;
    const double fs = 50e9;
    LdbpModel model = build_model(link, gc.stps, {gc.tap_len}, fiber, fs);

    Pcg64 rng(seed, 0xb0b);
    if (gc.delta_model) {
        for (auto& pair : model.layers)
            for (auto& filt : pair) {
                std::fill(filt.taps.begin(), filt.taps.end(), cplx(0.0, 0.0));
                filt.taps[filt.half()] = cplx(1.0, 0.0);
            }
        std::fill(model.nl_coeff.begin(), model.nl_coeff.end(), 0.0);
    } else {
        const ParamLayout layout = param_layout(model);
        std::vector<double> params = pack_params(model, layout);
        for (double& v : params) v += 0.05 * rng.gaussian();
        unpack_params(model, layout, params);
        for (double& c : model.nl_coeff) c = 0.05 + 0.1 * rng.uniform();
    }

    const std::size_t n = gc.n_samples;
    SegmentData seg;
    seg.in_x.resize(n);
    seg.in_y.resize(n);
    const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
    for (std::size_t i = 0; i < n; ++i) {
        seg.in_x[i] = cplx(rng.gaussian(), rng.gaussian()) * inv_sqrt2;
        seg.in_y[i] = cplx(rng.gaussian(), rng.gaussian()) * inv_sqrt2;
    }
    const std::vector<cplx> points = constellation("qpsk");
    seg.ref_x.resize(n / 2);
    seg.ref_y.resize(n / 2);
    for (std::size_t i = 0; i < n / 2; ++i) {
        seg.ref_x[i] = points[rng.bounded(points.size())];
        seg.ref_y[i] = points[rng.bounded(points.size())];
    }
    seg.kappa = 1.0;
    const RealFirTaps mf = rrc_taps(0.1, 8, 2);
    const std::size_t max_margin = (n / 2 - 1) / 2;
    seg.margin_symbols = std::min(loss_margin_symbols(model, mf), max_margin);
    const std::vector<double> mf_spec = filter_spectrum(mf, n);

    GradcheckResult result;
    const std::uint64_t probe_seed = mix_seed(seed, 0, 0, seed_purpose::gradcheck_probe);
    for (double step : gc.fd_steps) {
        result.last_report = gradient_check(model, seg, mf_spec, gc.n_probes, step, probe_seed);
        result.curve.push_back({step, result.last_report.max_rel_err});
    }
    return result;
}

inline nlohmann::json gradcheck_report_json(const ExperimentConfig& cfg,
                                            const GradcheckResult& result) {
    nlohmann::json j;
    j["config_hash"] = config_hash(cfg);
    j["settings"] = experiment_config_json(cfg)["gradcheck"];
    j["curve"] = nlohmann::json::array();
    for (const auto& point : result.curve)
        j["curve"].push_back({{"fd_step", point.fd_step}, {"max_rel_err", point.max_rel_err}});
    j["last_step_probes"] = nlohmann::json::array();
    for (const auto& probe : result.last_report.probes)
        j["last_step_probes"].push_back({{"flat_index", probe.flat_index},
                                         {"analytic", probe.analytic},
                                         {"numeric", probe.numeric},
                                         {"rel_err", probe.rel_err}});
    return j;
}

}  // namespace ldbp
