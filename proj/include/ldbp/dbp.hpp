#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "ldbp/channel.hpp"
#include "ldbp/fft.hpp"
#include "ldbp/signal.hpp"

namespace ldbp {

/// Electronic dispersion compensation: one frequency-domain multiplication
/// with the conjugate CD phase over the whole link; no gain change.
inline DualPolSignal edc(const DualPolSignal& sig, double beta2_ps2_per_km, double total_length_km) {
    check_signal(sig, "edc");
    DualPolSignal out = sig;
    if (total_length_km == 0.0) return out;
    const std::vector<double> w = fftgrid::omega(sig.size(), sig.sample_rate_hz);
    const std::vector<cplx> mult = cd_response(-beta2_ps2_per_km, total_length_km, 0.0, w);
    fft(out.x);
    fft(out.y);
    for (std::size_t k = 0; k < mult.size(); ++k) {
        out.x[k] *= mult[k];
        out.y[k] *= mult[k];
    }
    ifft(out.x);
    ifft(out.y);
    return out;
}

/// Conventional frequency-domain DBP: the link run backwards with negated
/// parameters, mirroring the symmetric forward splitting. The input is
/// renormalized to the known launch power and per-span inverse gain
/// restores the power profile, so every inverse nonlinear step sees the
/// power its forward counterpart saw.
inline DualPolSignal dbp_fd(const DualPolSignal& sig, const FiberParams& fiber, std::size_t n_spans,
                            std::size_t stps, StepMode step_mode, double launch_power_watt) {
    check_signal(sig, "dbp_fd");
    check_fiber(fiber, "dbp_fd");
    if (n_spans < 1 || stps < 1) throw std::invalid_argument("dbp_fd: need spans >= 1 and stps >= 1");
    if (!(launch_power_watt > 0)) throw std::invalid_argument("dbp_fd: launch power must be positive");

    const StepPlan plan = step_plan(fiber.span_length_km, fiber.alpha_db_per_km, stps, step_mode);
    const std::size_t k_steps = plan.steps_km.size();
    const std::vector<double> w = fftgrid::omega(sig.size(), sig.sample_rate_hz);

    // Merged inverse linear sections, receiver to transmitter within one
    // span: trailing half, the K-1 mid pairs, leading half. Multipliers
    // (conjugate phase, inverse attenuation) are reused across spans.
    std::vector<double> merged(k_steps + 1);
    merged[0] = plan.steps_km[k_steps - 1] / 2.0;
    for (std::size_t i = 1; i < k_steps; ++i)
        merged[i] = (plan.steps_km[k_steps - i] + plan.steps_km[k_steps - 1 - i]) / 2.0;
    merged[k_steps] = plan.steps_km[0] / 2.0;
    std::vector<std::vector<cplx>> mult(merged.size());
    for (std::size_t i = 0; i < merged.size(); ++i)
        mult[i] = cd_response(-fiber.beta2_ps2_per_km, merged[i], -fiber.alpha_db_per_km, w);

    DualPolSignal state = normalize_to_power(sig, launch_power_watt);
    const double inv_gain = std::exp(-alpha_linear(fiber.alpha_db_per_km) * fiber.span_length_km / 2.0);

    auto linear = [&](std::size_t idx) {
        fft(state.x);
        fft(state.y);
        const auto& m = mult[idx];
        for (std::size_t k = 0; k < m.size(); ++k) {
            state.x[k] *= m[k];
            state.y[k] *= m[k];
        }
        ifft(state.x);
        ifft(state.y);
    };

    for (std::size_t span = 0; span < n_spans; ++span) {
        for (auto& v : state.x) v *= inv_gain;
        for (auto& v : state.y) v *= inv_gain;
        for (std::size_t i = 0; i < k_steps; ++i) {
            linear(i);
            const std::size_t fwd_step = k_steps - 1 - i;
            const double coeff = fiber.gamma_per_w_km * fiber.manakov_factor *
                                 effective_length(plan.steps_km[fwd_step], fiber.alpha_db_per_km);
            detail::apply_nonlinear_inplace(state, coeff, -1);
        }
        linear(k_steps);
    }
    assert_finite(state, "dbp_fd");
    return state;
}

struct GridPoint {
    double gamma = 0.0;
    double beta2 = 0.0;
    double mean_snr_db = 0.0;
    std::vector<double> per_trace_snr_db;
};

struct GridSearchResult {
    double best_gamma = 0.0;
    double best_beta2 = 0.0;
    double best_mean_snr_db = 0.0;
    std::vector<GridPoint> table;
};

/// Exhaustive search over (gamma, beta2) maximizing the mean score the
/// evaluator assigns across traces. Ties go to the smallest gamma, then
/// the smallest |beta2|. The score table keeps every point for reporting.
template <class Trace, class Eval>
GridSearchResult grid_search(const std::vector<Trace>& traces, const std::vector<double>& gamma_grid,
                             const std::vector<double>& beta2_grid, Eval&& evaluate) {
    if (traces.empty() || gamma_grid.empty() || beta2_grid.empty())
        throw std::invalid_argument("grid_search: empty traces or grids");
    GridSearchResult result;
    bool first = true;
    for (double g : gamma_grid) {
        for (double b : beta2_grid) {
            GridPoint point;
            point.gamma = g;
            point.beta2 = b;
            double acc = 0.0;
            for (const Trace& t : traces) {
                const double snr = evaluate(t, g, b);
                point.per_trace_snr_db.push_back(snr);
                acc += snr;
            }
            point.mean_snr_db = acc / static_cast<double>(traces.size());
            const bool better =
                first || point.mean_snr_db > result.best_mean_snr_db ||
                (point.mean_snr_db == result.best_mean_snr_db &&
                 (g < result.best_gamma ||
                  (g == result.best_gamma && std::abs(b) < std::abs(result.best_beta2))));
            if (better) {
                result.best_gamma = g;
                result.best_beta2 = b;
                result.best_mean_snr_db = point.mean_snr_db;
                first = false;
            }
            result.table.push_back(std::move(point));
        }
    }
    return result;
}

}  // namespace ldbp
