// Acceptance gate: six end-to-end criteria covering physics inversion,
// gradient correctness, complexity arithmetic, the full-scenario
// performance ordering, cross-cutting invariants, and initialization
// fidelity. One [PASS]/[FAIL] line is printed per criterion (with the
// measured numbers inline) and the process exits nonzero if any selected
// criterion fails. Criteria can be selected by number on the command
// line, e.g. `acceptance 1 3 6`; the default runs all six.
//
// Criterion 4 trains the full-scale model and takes ~25-30 minutes on a
// single desktop core; everything else finishes in seconds.

#include <ldbp/experiment.hpp>

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace {

using namespace ldbp;
using clk = std::chrono::steady_clock;

struct Outcome {
    bool pass = false;
    std::string line;                   // appended to the [PASS]/[FAIL] line
    std::vector<std::string> evidence;  // indented detail rows
};

std::string fmt(const char* format, ...) {
    char buf[512];
    va_list args;
    va_start(args, format);
    std::vsnprintf(buf, sizeof buf, format, args);
    va_end(args);
    return std::string(buf);
}

double elapsed_s(clk::time_point t0) {
    return std::chrono::duration<double>(clk::now() - t0).count();
}

// --------------------------------------------------------------------------
// Criterion 1: noiseless, PMD-free forward propagation reversed by the
// recorded operator sequence reconstructs the launch field.
Outcome criterion1() {
    const auto t0 = clk::now();

    ExperimentConfig cfg;
    cfg.link.n_spans = 5;
    cfg.link.noise_enabled = false;
    cfg.transmitter.n_symbols = std::size_t(1) << 14;
    validate_config(cfg);

    const SymbolFrame frame =
        gen_symbol_frame(mix_seed(cfg.seed, 0, 0, seed_purpose::sweep_frame),
                         cfg.transmitter.n_symbols, cfg.transmitter.constellation,
                         cfg.transmitter.baud_hz);
    const RealFirTaps shaping = rrc_taps(cfg.transmitter.rolloff,
                                         cfg.transmitter.rrc_span_symbols, cfg.transmitter.sps);
    DualPolSignal tx = shape_pulses(frame, shaping, cfg.transmitter.sps);
    tx = normalize_to_power(tx, dbm_to_watt(2.0));

    OpSequence seq;
    const DualPolSignal rx = propagate(tx, link_config(cfg), /*seed=*/0, &seq);
    const DualPolSignal recovered = apply_sequence(rx, seq, /*invert=*/true);

    const double nmse = nmse_db(recovered, tx);
    const double secs = elapsed_s(t0);

    Outcome out;
    out.pass = nmse < -60.0 && secs < 60.0;
    out.line = fmt("recorded-sequence inversion NMSE %.1f dB (< -60 dB), %.1f s (< 60 s)", nmse,
                   secs);
    out.evidence.push_back(fmt("5 spans x 100 log steps, 2 dBm, %zu symbols, %zu recorded ops",
                               cfg.transmitter.n_symbols, seq.size()));
    return out;
}

// --------------------------------------------------------------------------
// Criterion 2: analytic gradients of ten random toy models agree with
// central finite differences.
Outcome criterion2() {
    const auto t0 = clk::now();

    double worst = 0.0;
    std::uint64_t worst_seed = 0;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        GradcheckSettings gc;
        gc.n_spans = 1 + seed % 2;
        gc.stps = 1 + seed % 3;
        gc.tap_len = 5 + 2 * (seed % 3);
        gc.n_samples = 256;
        gc.n_probes = 10;
        gc.fd_steps = {1e-6};
        const GradcheckResult res = run_gradcheck(gc, seed);
        const double err = res.curve.back().max_rel_err;
        if (err > worst) {
            worst = err;
            worst_seed = seed;
        }
    }
    const double secs = elapsed_s(t0);

    Outcome out;
    out.pass = worst < 1e-6 && secs < 120.0;
    out.line = fmt("10 random models, max relative error %.3g (< 1e-6), %.1f s (< 120 s)", worst,
                   secs);
    out.evidence.push_back(
        fmt("spans 1-2, 1-3 steps/span, 5-9 taps, 256 samples, 10 probes each; worst seed %llu",
            static_cast<unsigned long long>(worst_seed)));
    return out;
}

// --------------------------------------------------------------------------
// Criterion 3: cascade complexity and dispersion-memory arithmetic match
// the hand-checked values exactly.
Outcome criterion3() {
    auto pattern = [](std::size_t n_a, std::size_t len_a, std::size_t n_b, std::size_t len_b) {
        std::vector<std::size_t> lengths(n_a, len_a);
        lengths.insert(lengths.end(), n_b, len_b);
        return lengths;
    };

    struct IntCheck {
        std::string label;
        std::size_t got = 0;
        std::size_t want = 0;
    };
    std::vector<IntCheck> checks;
    checks.push_back({"22x7 + 39x9 -> 445", composed_impulse_length(pattern(22, 7, 39, 9)), 445});
    checks.push_back({"12x23 + 9x21 -> 445", composed_impulse_length(pattern(12, 23, 9, 21)), 445});
    checks.push_back({"22x5 + 39x7 -> 323", composed_impulse_length(pattern(22, 5, 39, 7)), 323});
    checks.push_back(
        {"CD memory 25.5 GHz -> 253", cd_memory_estimate(20.87, 1510.0, 25.5e9, 20e-12), 253});
    checks.push_back(
        {"CD memory 38.5 GHz -> 381", cd_memory_estimate(20.87, 1510.0, 38.5e9, 20e-12), 381});

    Outcome out;
    out.pass = true;
    std::size_t bad = 0;
    for (const IntCheck& c : checks) {
        if (c.got != c.want) {
            out.pass = false;
            ++bad;
        }
        out.evidence.push_back(fmt("%-26s got %zu%s", c.label.c_str(), c.got,
                                   c.got == c.want ? "" : "  <-- MISMATCH"));
    }
    out.line = out.pass ? fmt("all %zu composed-length and dispersion-memory values exact",
                              checks.size())
                        : fmt("%zu of %zu integer checks mismatched", bad, checks.size());
    return out;
}

// --------------------------------------------------------------------------
// Criterion 4: full-scenario performance ordering after training.
Outcome criterion4() {
    const auto t0 = clk::now();

    ExperimentConfig cfg;  // scenario defaults: 10 spans, NF 5, powers -2..6
    cfg.equalizers = {"edc", "dbp", "ldbp"};
    cfg.dbp.stps = 3;
    cfg.ldbp.stps = 3;
    // Start from 25-tap filters so the untrained cascade is already close
    // to frequency-domain backpropagation. Train only at the high launch
    // powers (two noise realizations each): that is where the nonlinear
    // penalty dominates and where the peak-SNR comparison is decided, and
    // filters fitted there stay within a few hundredths of a dB of the
    // reference at low powers anyway. Pruning finishes in the first 45% of
    // the schedule so the remaining iterations repair the final cuts.
    cfg.ldbp.init_taps = {25};
    cfg.train.n_iterations = 30000;
    cfg.train.batch_size = 12;
    cfg.train.segment_symbols = 1024;
    cfg.train.learning_rate = 1e-3;
    cfg.train.power_set_dbm = {3.5, 4.0, 4.5, 5.0};
    cfg.train.traces_per_power = 2;
    cfg.train.prune_enabled = true;
    cfg.train.prune_fraction = 0.45;
    cfg.train.prune_n_short = 11;
    cfg.train.prune_short_taps = 7;
    cfg.train.prune_long_taps = 9;
    // Coarse 3-step-per-span backpropagation under-counts the nonlinear
    // phase integral (midpoint power sampling on wide logarithmic steps),
    // so its SNR-optimal nonlinearity estimate sits well above the true
    // 1.3 /W/km; the grid spans 1.0x-2.2x to bracket it.
    cfg.gridsearch.gamma_grid = {1.30, 1.56, 1.82, 2.08, 2.34, 2.60, 2.86};
    cfg.seed = 1;
    validate_config(cfg);

    // Grid-search the scalar nonlinearity estimate used by backpropagation;
    // the learned model is initialized from the same estimate.
    const GridSearchResult grid = run_grid_search(cfg);
    cfg.dbp.gamma_per_w_km = grid.best_gamma;

    LdbpModel model = build_initial_model(cfg);
    const std::vector<PowerTrace> data = build_training_data(cfg);
    const SimContext ctx = make_sim_context(cfg);
    const TrainConfig tc = training_config(cfg, model);
    const TrainResult trained = train(model, data, ctx.matched, tc);

    const SweepResult sweep = run_sweep(cfg, &model);

    const EqualizerSummary* edc_s = nullptr;
    const EqualizerSummary* dbp_s = nullptr;
    const EqualizerSummary* ldbp_s = nullptr;
    for (const EqualizerSummary& s : sweep.summaries) {
        if (s.name == "edc") edc_s = &s;
        if (s.name == "dbp") dbp_s = &s;
        if (s.name == "ldbp") ldbp_s = &s;
    }
    const double secs = elapsed_s(t0);

    Outcome out;
    if (!edc_s || !dbp_s || !ldbp_s) {
        out.line = "sweep summaries missing an equalizer";
        return out;
    }
    const double ldbp_vs_dbp = ldbp_s->peak_snr_db - dbp_s->peak_snr_db;
    const double dbp_vs_edc = dbp_s->peak_snr_db - edc_s->peak_snr_db;
    const double popt_shift = dbp_s->optimal_power_dbm - edc_s->optimal_power_dbm;
    const bool ok_ldbp = ldbp_vs_dbp >= -0.2;
    const bool ok_dbp = dbp_vs_edc >= 1.0;
    const bool ok_popt = popt_shift >= 2.0;
    const bool ok_time = secs < 7200.0;
    out.pass = ok_ldbp && ok_dbp && ok_popt && ok_time;
    out.line = fmt("peak SNR ldbp-dbp %+.2f dB (>= -0.2), dbp-edc %+.2f dB (>= +1.0), "
                   "optimal-power shift %+.1f dB (>= +2), %.0f s (< 7200 s)",
                   ldbp_vs_dbp, dbp_vs_edc, popt_shift, secs);
    out.evidence.push_back(
        fmt("grid-searched nonlinearity %.4f /W/km (true 1.3), grid mean %.2f dB at 2.5 dBm",
            grid.best_gamma, grid.best_mean_snr_db));
    for (const EqualizerSummary* s : {edc_s, dbp_s, ldbp_s})
        out.evidence.push_back(fmt("%-4s  peak %6.2f dB at %+4.1f dBm", s->name.c_str(),
                                   s->peak_snr_db, s->optimal_power_dbm));
    out.evidence.push_back(fmt(
        "trained 31 layers to 11x7+20x9 taps, %zu iterations, final loss %.3g, %zu active taps",
        trained.history.size(), trained.history.back().loss,
        trained.history.back().active_taps));
    return out;
}

// --------------------------------------------------------------------------
// Criterion 5: cross-cutting invariants.

// 5a: FFT-based circular convolution equals the direct O(nm) sum.
bool inv_convolution(std::vector<std::string>& rows) {
    Pcg64 rng(11, 0xacce);
    const std::size_t n = 257;
    DualPolSignal sig;
    sig.sample_rate_hz = 50e9;
    sig.x.resize(n);
    sig.y.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        sig.x[i] = cplx(rng.gaussian(), rng.gaussian());
        sig.y[i] = cplx(rng.gaussian(), rng.gaussian());
    }
    std::vector<cplx> taps(9);
    for (auto& t : taps) t = cplx(rng.gaussian(), rng.gaussian());

    const DualPolSignal fast = fir_convolve_circular(sig, taps, taps);
    const int half = static_cast<int>(taps.size() / 2);
    double worst = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        cplx accx(0, 0), accy(0, 0);
        for (int k = -half; k <= half; ++k) {
            const std::size_t j =
                static_cast<std::size_t>((static_cast<long>(i) - k + static_cast<long>(n)) %
                                         static_cast<long>(n));
            accx += taps[static_cast<std::size_t>(k + half)] * sig.x[j];
            accy += taps[static_cast<std::size_t>(k + half)] * sig.y[j];
        }
        worst = std::max({worst, std::abs(fast.x[i] - accx), std::abs(fast.y[i] - accy)});
    }
    rows.push_back(fmt("convolution vs direct sum: max |diff| %.3g (< 1e-12)", worst));
    return worst < 1e-12;
}

// 5b: the nonlinear phase rotation preserves per-sample intensity.
bool inv_intensity(std::vector<std::string>& rows) {
    Pcg64 rng(12, 0xacce);
    DualPolSignal sig;
    sig.sample_rate_hz = 50e9;
    sig.x.resize(512);
    sig.y.resize(512);
    for (std::size_t i = 0; i < sig.size(); ++i) {
        sig.x[i] = cplx(rng.gaussian(), rng.gaussian());
        sig.y[i] = cplx(rng.gaussian(), rng.gaussian());
    }
    DualPolSignal rotated = sig;
    detail::apply_nonlinear_inplace(rotated, 0.37, +1);
    double worst = 0.0;
    for (std::size_t i = 0; i < sig.size(); ++i) {
        const double before = std::norm(sig.x[i]) + std::norm(sig.y[i]);
        const double after = std::norm(rotated.x[i]) + std::norm(rotated.y[i]);
        worst = std::max(worst, std::abs(after - before) / before);
    }
    rows.push_back(fmt("nonlinear step per-sample intensity drift %.3g (< 1e-12)", worst));
    return worst < 1e-12;
}

// 5c: with attenuation off the whole span operator (dispersion, Kerr,
// birefringence sections) conserves energy.
bool inv_unitarity(std::vector<std::string>& rows) {
    LinkConfig link;
    link.fiber.alpha_db_per_km = 0.0;
    link.n_spans = 2;
    link.forward_stps = 20;
    link.edfa.gain_db = 0.0;
    link.edfa.noise_enabled = false;
    link.pmd.sections_per_span = 10;
    link.pmd.coeff_ps_sqrt_km = 0.1;
    link.pmd.seed = 5;

    Pcg64 rng(13, 0xacce);
    DualPolSignal sig;
    sig.sample_rate_hz = 100e9;
    sig.x.resize(4096);
    sig.y.resize(4096);
    for (std::size_t i = 0; i < sig.size(); ++i) {
        sig.x[i] = cplx(rng.gaussian(), rng.gaussian()) * 1e-3;
        sig.y[i] = cplx(rng.gaussian(), rng.gaussian()) * 1e-3;
    }
    const DualPolSignal out = propagate(sig, link, 99);
    auto energy = [](const DualPolSignal& s) {
        double e = 0.0;
        for (std::size_t i = 0; i < s.size(); ++i) e += std::norm(s.x[i]) + std::norm(s.y[i]);
        return e;
    };
    const double rel = std::abs(energy(out) - energy(sig)) / energy(sig);
    rows.push_back(fmt("lossless link energy drift %.3g relative (< 1e-10)", rel));
    return rel < 1e-10;
}

// 5d: pruning masks stay permanent and filters stay exactly symmetric
// through 1000 optimization steps.
bool inv_mask_symmetry(std::vector<std::string>& rows) {
    LinkConfig link;
    link.n_spans = 1;
    link.forward_stps = 20;
    link.edfa.gain_db = link.fiber.alpha_db_per_km * link.fiber.span_length_km;

    const RealFirTaps shaping = rrc_taps(0.1, 32, 4);
    const RealFirTaps mf = rrc_taps(0.1, 32, 2);
    std::vector<PowerTrace> data;
    for (double p : {1.0, 2.0, 3.0}) {
        const SymbolFrame frame = gen_symbol_frame(140 + static_cast<std::uint64_t>(p * 2), 1024,
                                                   "16qam", 25e9);
        DualPolSignal tx = shape_pulses(frame, shaping, 4);
        tx = normalize_to_power(tx, dbm_to_watt(p));
        DualPolSignal rx = propagate(tx, link, 240 + static_cast<std::uint64_t>(p * 2));
        rx = lowpass(rx, 25e9);
        DualPolSignal rx2 = resample_rational(rx, 1, 2);
        rx2 = normalize_to_power(rx2, dbm_to_watt(p));
        data.push_back({p, std::move(rx2), frame});
    }

    LdbpModel model = build_model(link, 2, {15}, link.fiber, 50e9);
    TrainConfig tc;
    tc.batch_size = 4;
    tc.n_iterations = 1000;
    tc.power_set_dbm = {1.0, 2.0, 3.0};
    tc.segment_symbols = 256;
    tc.seed = 17;
    tc.prune = build_prune_schedule(std::vector<std::size_t>(model.n_layers(), 15),
                                    std::vector<std::size_t>(model.n_layers(), 9),
                                    tc.n_iterations);
    const TrainResult res = train(model, data, mf, tc);

    bool ok = res.history.size() == 1000;
    std::size_t prev = res.history.front().active_taps;
    for (const HistoryRow& row : res.history) {
        ok = ok && row.active_taps <= prev;
        prev = row.active_taps;
    }
    ok = ok && res.history.back().active_taps == model.n_layers() * 9;
    double worst_sym = 0.0;
    for (std::size_t l = 0; l < model.n_layers() && ok; ++l)
        for (int pol = 0; pol < 2; ++pol) {
            const FirFilter& f = model.layers[l][pol];
            ok = ok && f.active_length() == 9;
            const int m = static_cast<int>(f.half());
            for (int k = 0; k <= m; ++k) {
                const std::size_t up = static_cast<std::size_t>(m + k);
                const std::size_t dn = static_cast<std::size_t>(m - k);
                worst_sym = std::max(worst_sym, std::abs(f.taps[up] - f.taps[dn]));
                if (k > 4)
                    ok = ok && f.taps[up] == cplx(0.0, 0.0) && f.mask[up] == 0 && f.mask[dn] == 0;
            }
        }
    ok = ok && worst_sym == 0.0;
    rows.push_back(fmt("1000-step pruned training: masks permanent, tap asymmetry %.3g (exact 0)",
                       worst_sym));
    return ok;
}

// 5e: repeated sweeps serialize byte-identically.
bool inv_determinism(std::vector<std::string>& rows) {
    ExperimentConfig cfg;
    cfg.link.n_spans = 1;
    cfg.link.forward_stps = 20;
    cfg.transmitter.rolloff = 0.1;
    cfg.transmitter.n_symbols = 1024;
    cfg.transmitter.rrc_span_symbols = 64;
    cfg.sweep.power_start_dbm = 0.0;
    cfg.sweep.power_stop_dbm = 2.0;
    cfg.sweep.power_step_db = 2.0;
    cfg.sweep.traces_per_power = 1;
    cfg.dbp.stps = 2;
    cfg.equalizers = {"edc", "dbp"};
    cfg.seed = 3;
    validate_config(cfg);

    namespace fs = std::filesystem;
    const fs::path base = fs::temp_directory_path() / "ldbp_acceptance_det";
    fs::remove_all(base);
    auto slurp = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        std::ostringstream ss;
        ss << in.rdbuf();
        return ss.str();
    };
    std::array<std::string, 2> blobs;
    for (int run = 0; run < 2; ++run) {
        const fs::path dir = base / ("run" + std::to_string(run));
        fs::create_directories(dir);
        const SweepResult sw = run_sweep(cfg);
        write_sweep_result(dir.string(), sw);
        blobs[run] = slurp(dir / "sweep_cells.csv") + slurp(dir / "sweep_aggregates.csv") +
                     slurp(dir / "plot_data.json");
    }
    const bool ok = !blobs[0].empty() && blobs[0] == blobs[1];
    rows.push_back(fmt("repeated sweep serialization: %zu bytes, byte-identical: %s",
                       blobs[0].size(), ok ? "yes" : "NO"));
    fs::remove_all(base);
    return ok;
}

// 5f: the effective-SNR metric is invariant to a common complex scale.
bool inv_snr_scale(std::vector<std::string>& rows) {
    Pcg64 rng(14, 0xacce);
    const std::size_t n = 2048;
    std::vector<cplx> tx_x(n), tx_y(n), rx_x(n), rx_y(n);
    for (std::size_t i = 0; i < n; ++i) {
        tx_x[i] = cplx(rng.gaussian(), rng.gaussian());
        tx_y[i] = cplx(rng.gaussian(), rng.gaussian());
        rx_x[i] = tx_x[i] + 0.05 * cplx(rng.gaussian(), rng.gaussian());
        rx_y[i] = tx_y[i] + 0.05 * cplx(rng.gaussian(), rng.gaussian());
    }
    const double base = effective_snr(rx_x, rx_y, tx_x, tx_y);
    double worst = 0.0;
    for (const cplx scale : {cplx(3.7, 0.0), cplx(0.0, 0.2), cplx(-1.4, 2.9), cplx(1e-3, 1e-3)}) {
        std::vector<cplx> sx = rx_x, sy = rx_y;
        for (std::size_t i = 0; i < n; ++i) {
            sx[i] *= scale;
            sy[i] *= scale;
        }
        worst = std::max(worst, std::abs(effective_snr(sx, sy, tx_x, tx_y) - base));
    }
    rows.push_back(fmt("effective SNR %.2f dB, max shift under complex rescaling %.3g dB (< 1e-9)",
                       base, worst));
    return worst < 1e-9;
}

// 5g: Monte-Carlo amplifier noise variance matches the closed form within 1%.
bool inv_edfa_variance(std::vector<std::string>& rows) {
    EdfaConfig amp;
    amp.gain_db = 15.0968;
    amp.noise_figure_db = 5.0;

    DualPolSignal zero;
    zero.sample_rate_hz = 100e9;
    zero.x.assign(4096, cplx(0.0, 0.0));
    zero.y.assign(4096, cplx(0.0, 0.0));

    double acc = 0.0;
    std::size_t count = 0;
    for (std::uint64_t seed = 1; seed <= 50; ++seed) {
        const DualPolSignal noisy = edfa_amplify(zero, amp, seed);
        for (std::size_t i = 0; i < noisy.size(); ++i) {
            acc += std::norm(noisy.x[i]) + std::norm(noisy.y[i]);
            count += 2;
        }
    }
    const double measured = acc / static_cast<double>(count);
    const double g = db_to_lin(amp.gain_db);
    const double expected =
        db_to_lin(amp.noise_figure_db) / 2.0 * amp.photon_energy_j * (g - 1.0) *
        zero.sample_rate_hz;
    const double rel = std::abs(measured - expected) / expected;
    rows.push_back(fmt("amplifier noise variance: measured %.4g, closed form %.4g, "
                       "deviation %.2f%% (< 1%%)",
                       measured, expected, rel * 100.0));
    return rel < 0.01;
}

Outcome criterion5() {
    struct Item {
        const char* name;
        bool (*fn)(std::vector<std::string>&);
    };
    const Item items[] = {
        {"convolution oracle", inv_convolution},   {"intensity preservation", inv_intensity},
        {"lossless unitarity", inv_unitarity},     {"mask permanence + symmetry", inv_mask_symmetry},
        {"byte-identical sweeps", inv_determinism}, {"SNR scale invariance", inv_snr_scale},
        {"amplifier noise variance", inv_edfa_variance},
    };

    Outcome out;
    out.pass = true;
    std::vector<std::string> failed;
    for (const Item& item : items) {
        const bool ok = item.fn(out.evidence);
        if (!ok) failed.push_back(item.name);
        out.pass = out.pass && ok;
    }
    if (out.pass) {
        out.line = fmt("all %zu invariant suites hold", std::size(items));
    } else {
        std::string names;
        for (const std::string& f : failed) names += (names.empty() ? "" : ", ") + f;
        out.line = fmt("failed: %s", names.c_str());
    }
    return out;
}

// --------------------------------------------------------------------------
// Criterion 6: a freshly built model reproduces frequency-domain
// backpropagation with identical parameters.
Outcome criterion6() {
    const auto t0 = clk::now();

    ExperimentConfig cfg;  // 10-span scenario
    cfg.transmitter.n_symbols = std::size_t(1) << 14;
    cfg.dbp.stps = 3;
    cfg.ldbp.stps = 3;
    cfg.ldbp.init_taps = {81};
    validate_config(cfg);

    const SimContext ctx = make_sim_context(cfg);
    const PowerTrace trace =
        simulate_power_trace(cfg, ctx, 2.0, mix_seed(cfg.seed, 0, 0, seed_purpose::sweep_frame),
                             mix_seed(cfg.seed, 0, 0, seed_purpose::sweep_noise));

    const FiberParams est = estimate_fiber(cfg);
    const LdbpModel model = build_initial_model(cfg);
    const DualPolSignal fresh = ldbp_forward(model, trace.rx2);
    const DualPolSignal reference = dbp_fd(trace.rx2, est, cfg.link.n_spans, cfg.dbp.stps,
                                           cfg.link.step_mode, dbm_to_watt(2.0));

    const double nmse = nmse_db(fresh, reference);
    const double secs = elapsed_s(t0);

    Outcome out;
    out.pass = nmse < -30.0 && secs < 60.0;
    out.line = fmt("fresh 81-tap model vs frequency-domain backpropagation: NMSE %.1f dB "
                   "(< -30 dB), %.1f s (< 60 s)",
                   nmse, secs);
    out.evidence.push_back(fmt("10 spans, 3 steps/span, 2 dBm trace, %zu samples at 2 "
                               "samples/symbol",
                               trace.rx2.size()));
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    std::setvbuf(stdout, nullptr, _IONBF, 0);

    std::set<int> wanted;
    for (int i = 1; i < argc; ++i) {
        try {
            wanted.insert(std::stoi(argv[i]));
        } catch (const std::exception&) {
            std::fprintf(stderr, "usage: %s [criterion numbers 1-6]\n", argv[0]);
            return 2;
        }
    }
    if (wanted.empty()) wanted = {1, 2, 3, 4, 5, 6};

    struct Entry {
        int id;
        const char* label;
        Outcome (*fn)();
    };
    const Entry entries[] = {
        {1, "forward/inverse physics consistency", criterion1},
        {2, "gradient correctness", criterion2},
        {3, "complexity accounting", criterion3},
        {4, "scenario performance ordering", criterion4},
        {5, "invariant suites", criterion5},
        {6, "initialization fidelity", criterion6},
    };

    int failures = 0;
    for (const Entry& entry : entries) {
        if (!wanted.count(entry.id)) continue;
        Outcome out;
        try {
            out = entry.fn();
        } catch (const std::exception& e) {
            out.pass = false;
            out.line = fmt("exception: %s", e.what());
        }
        std::printf("[%s] criterion %d: %s -- %s\n", out.pass ? "PASS" : "FAIL", entry.id,
                    entry.label, out.line.c_str());
        for (const std::string& row : out.evidence) std::printf("        %s\n", row.c_str());
        if (!out.pass) ++failures;
    }
    return failures == 0 ? 0 : 1;
}
