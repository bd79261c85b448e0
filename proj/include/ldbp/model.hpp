#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "ldbp/cdfir.hpp"
#include "ldbp/channel.hpp"
#include "ldbp/signal.hpp"

namespace ldbp {

/// Learned digital backpropagation model: an alternating chain of short
/// per-polarization symmetric FIR filters and fixed Manakov phase rotations,
/// run receiver -> transmitter.  With L nonlinear stages the chain is
///   F_0, N_0, F_1, N_1, ..., N_{L-1}, F_L
/// i.e. one more filter pair than rotations; every filter absorbs the two
/// half steps that meet between consecutive rotations of the underlying
/// split-step grid.  Filter taps are the trainable parameters; the rotation
/// coefficients stay fixed at their analytic initialization.
struct LdbpModel {
    /// layers[l][pol] with pol 0 = x, 1 = y.
    std::vector<std::array<FirFilter, 2>> layers;
    /// Phase-rotation magnitude per nonlinear stage, rad/W (>= 0); stage n
    /// rotates both polarizations by nl_sign * nl_coeff[n] * (|x|^2 + |y|^2).
    std::vector<double> nl_coeff;
    double sample_rate_hz = 0.0;
    /// -1 undoes forward-propagation nonlinearity (backpropagation).
    int nl_sign = -1;

    std::size_t n_layers() const { return layers.size(); }

    /// Active (unmasked) tap count of the x filter chain; y is identical in
    /// shape by construction.
    std::size_t total_active_taps() const {
        std::size_t n = 0;
        for (const auto& pair : layers) n += pair[0].active_length();
        return n;
    }
};

inline void check_model(const LdbpModel& model) {
    if (model.layers.empty()) throw std::invalid_argument("model: no layers");
    if (model.nl_coeff.size() + 1 != model.layers.size())
        throw std::invalid_argument("model: need one more filter layer than nonlinear stage");
    if (!(model.sample_rate_hz > 0)) throw std::invalid_argument("model: sample rate must be positive");
    for (const auto& pair : model.layers) {
        check_filter(pair[0], "model");
        check_filter(pair[1], "model");
        if (pair[0].taps.size() != pair[1].taps.size())
            throw std::invalid_argument("model: x/y filter length mismatch within a layer");
    }
    for (double c : model.nl_coeff)
        if (!(c >= 0) || !std::isfinite(c))
            throw std::invalid_argument("model: nonlinear coefficients must be finite and >= 0");
}

/// Merged linear distances (km) of the reversed split-step grid, receiver
/// side first.  The forward grid runs each span with steps h_1..h_K
/// (transmitter -> receiver); traversing the whole link backwards and
/// merging adjacent half steps yields
///   h_K/2, (h_K + h_{K-1})/2, ..., (h_2 + h_1)/2, (h_1 + h_K)/2, ...,
///   h_1/2
/// with the (h_1 + h_K)/2 entries straddling span boundaries.
inline std::vector<double> layer_distances(double span_length_km, double alpha_db_per_km,
                                           std::size_t n_spans, std::size_t steps_per_span,
                                           StepMode mode = StepMode::logarithmic) {
    if (n_spans == 0) throw std::invalid_argument("layer_distances: need at least one span");
    const StepPlan plan = step_plan(span_length_km, alpha_db_per_km, steps_per_span, mode);
    const std::vector<double>& h = plan.steps_km;
    const std::size_t k = h.size();
    std::vector<double> dist;
    dist.reserve(n_spans * k + 1);
    dist.push_back(h[k - 1] / 2.0);
    for (std::size_t s = 0; s < n_spans; ++s) {
        for (std::size_t i = k - 1; i >= 1; --i) dist.push_back((h[i] + h[i - 1]) / 2.0);
        if (s + 1 < n_spans)
            dist.push_back((h[0] + h[k - 1]) / 2.0);
        else
            dist.push_back(h[0] / 2.0);
    }
    return dist;
}

/// Builds the initial model for a link: each filter layer is the constrained
/// least-squares inverse-dispersion filter for its merged distance, and each
/// rotation coefficient reproduces the forward-propagation nonlinear phase
/// of its step, scaled by the local power profile exp(-alpha z) so that the
/// model can run at constant (launch) power without per-span gain stages.
///
/// `estimate` carries the (possibly mismatched) fiber parameters the
/// receiver assumes; `init_lengths` gives the initial odd tap count per
/// layer, either one entry per layer or a single entry applied to all.
inline LdbpModel build_model(const LinkConfig& link, std::size_t steps_per_span,
                             const std::vector<std::size_t>& init_lengths,
                             const FiberParams& estimate, double sample_rate_hz,
                             StepMode mode = StepMode::logarithmic,
                             double passband_fraction = 0.8, double oob_weight = 1.0) {
    check_fiber(estimate, "build_model");
    if (link.n_spans == 0) throw std::invalid_argument("build_model: need at least one span");
    if (!(sample_rate_hz > 0)) throw std::invalid_argument("build_model: sample rate must be positive");

    const std::vector<double> dist = layer_distances(
        estimate.span_length_km, estimate.alpha_db_per_km, link.n_spans, steps_per_span, mode);
    const std::size_t n_layers = dist.size();

    std::vector<std::size_t> lengths;
    if (init_lengths.size() == 1)
        lengths.assign(n_layers, init_lengths[0]);
    else if (init_lengths.size() == n_layers)
        lengths = init_lengths;
    else
        throw std::invalid_argument("build_model: init_lengths must have one entry or one per layer");

    LdbpModel model;
    model.sample_rate_hz = sample_rate_hz;
    model.layers.reserve(n_layers);
    for (std::size_t l = 0; l < n_layers; ++l) {
        FirFilter f = ls_cd_filter(estimate.beta2_ps2_per_km, dist[l], sample_rate_hz,
                                   lengths[l], passband_fraction, oob_weight);
        model.layers.push_back({f, f});
    }

    // Rotation coefficients mirror the forward nonlinear steps of one span,
    // taken in reverse order.  Forward step i covers [z_{i-1}, z_i] and
    // applies its rotation mid-step where the power is
    // P_launch * exp(-alpha_lin (z_{i-1} + h_i/2)); the model holds constant
    // launch power, so that decay folds into the coefficient.
    const StepPlan plan =
        step_plan(estimate.span_length_km, estimate.alpha_db_per_km, steps_per_span, mode);
    const double a_lin = alpha_linear(estimate.alpha_db_per_km);
    std::vector<double> span_coeff(plan.steps_km.size());
    double z = 0.0;
    for (std::size_t i = 0; i < plan.steps_km.size(); ++i) {
        const double h = plan.steps_km[i];
        span_coeff[i] = estimate.gamma_per_w_km * estimate.manakov_factor *
                        effective_length(h, estimate.alpha_db_per_km) *
                        std::exp(-a_lin * (z + h / 2.0));
        z += h;
    }
    model.nl_coeff.reserve(link.n_spans * plan.steps_km.size());
    for (std::size_t s = 0; s < link.n_spans; ++s)
        for (std::size_t i = plan.steps_km.size(); i >= 1; --i)
            model.nl_coeff.push_back(span_coeff[i - 1]);

    check_model(model);
    return model;
}

namespace detail {

/// Circular convolution of one polarization with the active part of a
/// symmetric filter (taps trimmed to the active halfwidth).
inline void model_conv(const std::vector<cplx>& in, const FirFilter& filt,
                       std::vector<cplx>& out) {
    const std::size_t a = filt.active_halfwidth();
    const std::size_t m = filt.half();
    out.resize(in.size());
    circ_conv(in.data(), in.size(), filt.taps.data() + (m - a), static_cast<int>(a), out.data());
}

}  // namespace detail

/// Runs the model on a dual-polarization signal (no activation caching; use
/// the training-side forward for gradients).
inline DualPolSignal ldbp_forward(const LdbpModel& model, const DualPolSignal& sig) {
    check_model(model);
    check_signal(sig, "ldbp_forward");
    if (std::abs(sig.sample_rate_hz - model.sample_rate_hz) > 1e-6 * model.sample_rate_hz)
        throw std::invalid_argument("ldbp_forward: sample rate does not match the model");
    const std::size_t n = sig.size();
    DualPolSignal out = sig;
    std::vector<cplx> tx(n), ty(n);
    for (std::size_t l = 0; l < model.n_layers(); ++l) {
        detail::model_conv(out.x, model.layers[l][0], tx);
        detail::model_conv(out.y, model.layers[l][1], ty);
        if (l + 1 < model.n_layers()) {
            const double c = model.nl_sign * model.nl_coeff[l];
            for (std::size_t i = 0; i < n; ++i) {
                const double intensity = std::norm(tx[i]) + std::norm(ty[i]);
                const cplx w = std::polar(1.0, c * intensity);
                out.x[i] = tx[i] * w;
                out.y[i] = ty[i] * w;
            }
        } else {
            out.x = tx;
            out.y = ty;
        }
    }
    assert_finite(out, "ldbp_forward");
    return out;
}

/// Mean squared error per symbol: sum over both polarizations of
/// |est - ref|^2 summed over symbols, divided by 2 * length.
inline double mse_loss(const std::vector<cplx>& est_x, const std::vector<cplx>& est_y,
                       const std::vector<cplx>& ref_x, const std::vector<cplx>& ref_y) {
    if (est_x.size() != ref_x.size() || est_y.size() != ref_y.size() ||
        est_x.size() != est_y.size() || est_x.empty())
        throw std::invalid_argument("mse_loss: length mismatch or empty input");
    double acc = 0.0;
    for (std::size_t i = 0; i < est_x.size(); ++i) {
        acc += std::norm(est_x[i] - ref_x[i]);
        acc += std::norm(est_y[i] - ref_y[i]);
    }
    return acc / (2.0 * static_cast<double>(est_x.size()));
}

inline double mse_loss(const std::vector<cplx>& est_x, const std::vector<cplx>& est_y,
                       const SymbolFrame& reference) {
    return mse_loss(est_x, est_y, reference.x, reference.y);
}

/// Shrinks a filter pair to `target_length` active taps by masking (and
/// zeroing) the outermost symmetric tap pairs.  Masks only ever shrink.
inline void prune_layer(LdbpModel& model, std::size_t layer, std::size_t target_length) {
    if (layer >= model.n_layers()) throw std::invalid_argument("prune_layer: layer out of range");
    if (target_length % 2 == 0 || target_length == 0)
        throw std::invalid_argument("prune_layer: target length must be odd and positive");
    for (auto& filt : model.layers[layer]) {
        if (target_length > filt.active_length())
            throw std::invalid_argument("prune_layer: cannot grow a pruned filter");
        const std::size_t m = filt.half();
        const std::size_t keep = (target_length - 1) / 2;
        for (std::size_t k = keep + 1; k <= m; ++k) {
            filt.mask[m + k] = 0;
            filt.mask[m - k] = 0;
            filt.taps[m + k] = 0.0;
            filt.taps[m - k] = 0.0;
        }
    }
}

/// Assigns per-layer target lengths for a two-length pruning pattern:
/// the `n_short` layers with the smallest merged distances get
/// `short_length` taps and the rest get `long_length`; among equal
/// distances, layers closer to the receiver (lower index) are shortened
/// first.
inline std::vector<std::size_t> pattern_lengths(const std::vector<double>& distances,
                                                std::size_t n_short, std::size_t short_length,
                                                std::size_t long_length) {
    if (n_short > distances.size())
        throw std::invalid_argument("pattern_lengths: more short layers than layers");
    std::vector<std::size_t> order(distances.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return distances[a] < distances[b];
    });
    std::vector<std::size_t> lengths(distances.size(), long_length);
    for (std::size_t i = 0; i < n_short; ++i) lengths[order[i]] = short_length;
    return lengths;
}

/// Mid-rise fake quantization of the active taps, per layer and
/// polarization: with m = max(|Re|, |Im|) over active taps and
/// step = 2 m / 2^bits, every active tap component maps to
/// step * (floor(v / step) + 1/2) clamped to [-m + step/2, m - step/2].
/// Masked taps stay exactly zero.  Gradients pass through unchanged
/// (straight-through estimator): training computes gradients at the
/// quantized taps and applies them to the full-precision masters.
inline LdbpModel fake_quantize(const LdbpModel& model, unsigned bits) {
    if (bits < 2 || bits > 62) throw std::invalid_argument("fake_quantize: bits must be in [2, 62]");
    LdbpModel q = model;
    for (auto& pair : q.layers) {
        for (auto& filt : pair) {
            double peak = 0.0;
            for (std::size_t i = 0; i < filt.taps.size(); ++i) {
                if (!filt.mask[i]) continue;
                peak = std::max(peak, std::abs(filt.taps[i].real()));
                peak = std::max(peak, std::abs(filt.taps[i].imag()));
            }
            if (peak == 0.0) continue;
            const double step = 2.0 * peak / std::pow(2.0, static_cast<double>(bits));
            const double lo = -peak + step / 2.0;
            const double hi = peak - step / 2.0;
            auto quant = [&](double v) {
                return std::clamp(step * (std::floor(v / step) + 0.5), lo, hi);
            };
            for (std::size_t i = 0; i < filt.taps.size(); ++i) {
                if (!filt.mask[i]) continue;
                filt.taps[i] = cplx(quant(filt.taps[i].real()), quant(filt.taps[i].imag()));
            }
        }
    }
    return q;
}

}  // namespace ldbp
