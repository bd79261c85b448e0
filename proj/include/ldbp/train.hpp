#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <vector>

#include "ldbp/adam.hpp"
#include "ldbp/grad.hpp"
#include "ldbp/model.hpp"
#include "ldbp/pcg.hpp"
#include "ldbp/signal.hpp"

namespace ldbp {

// ---------------------------------------------------------------------------
// Pruning schedule
// ---------------------------------------------------------------------------

struct PruneEvent {
    std::size_t iteration = 0;
    /// Target active length per layer once this event fires (odd).
    std::vector<std::size_t> target_lengths;
};

/// Events sorted by strictly increasing iteration; per-layer targets odd and
/// non-increasing over time.
using PruneSchedule = std::vector<PruneEvent>;

inline void check_schedule(const PruneSchedule& schedule, std::size_t n_layers) {
    for (std::size_t e = 0; e < schedule.size(); ++e) {
        if (e > 0 && schedule[e].iteration <= schedule[e - 1].iteration)
            throw std::invalid_argument("prune schedule: iterations must strictly increase");
        if (schedule[e].target_lengths.size() != n_layers)
            throw std::invalid_argument("prune schedule: layer count mismatch");
        for (std::size_t l = 0; l < n_layers; ++l) {
            const std::size_t t = schedule[e].target_lengths[l];
            if (t % 2 == 0 || t == 0)
                throw std::invalid_argument("prune schedule: target lengths must be odd");
            if (e > 0 && t > schedule[e - 1].target_lengths[l])
                throw std::invalid_argument("prune schedule: target lengths must not grow");
        }
    }
}

/// Applies every event scheduled exactly at `iteration`: each layer's mask
/// shrinks to its centered target length (taps outside zeroed permanently).
/// A target above the current active length is rejected; equal targets are
/// no-ops.  Returns true when any mask changed.
inline bool apply_prune(LdbpModel& model, const PruneSchedule& schedule, std::size_t iteration) {
    bool changed = false;
    for (const auto& event : schedule) {
        if (event.iteration != iteration) continue;
        if (event.target_lengths.size() != model.n_layers())
            throw std::invalid_argument("apply_prune: layer count mismatch");
        for (std::size_t l = 0; l < model.n_layers(); ++l) {
            const std::size_t target = event.target_lengths[l];
            const std::size_t active = model.layers[l][0].active_length();
            if (target > active)
                throw std::invalid_argument("apply_prune: target length exceeds active length");
            if (target < active) {
                prune_layer(model, l, target);
                changed = true;
            }
        }
    }
    return changed;
}

/// Linear pruning ramp: every affected layer loses one symmetric tap pair
/// per event, events equally spaced over the first `fraction` of training,
/// until each layer reaches its final length.  Layers needing fewer pairs
/// stop shrinking at their target; events that would collide on the same
/// iteration merge into one.
inline PruneSchedule build_prune_schedule(const std::vector<std::size_t>& initial_lengths,
                                          const std::vector<std::size_t>& final_lengths,
                                          std::size_t n_iterations, double fraction = 0.6) {
    if (initial_lengths.size() != final_lengths.size())
        throw std::invalid_argument("prune schedule: length vectors must match");
    if (!(fraction > 0.0) || fraction > 1.0)
        throw std::invalid_argument("prune schedule: fraction must lie in (0, 1]");
    std::size_t max_pairs = 0;
    for (std::size_t l = 0; l < initial_lengths.size(); ++l) {
        if (initial_lengths[l] % 2 == 0 || final_lengths[l] % 2 == 0 || final_lengths[l] == 0)
            throw std::invalid_argument("prune schedule: lengths must be odd and positive");
        if (final_lengths[l] > initial_lengths[l])
            throw std::invalid_argument("prune schedule: final length exceeds initial length");
        max_pairs = std::max(max_pairs, (initial_lengths[l] - final_lengths[l]) / 2);
    }
    PruneSchedule schedule;
    if (max_pairs == 0 || n_iterations == 0) return schedule;
    const double window = fraction * static_cast<double>(n_iterations);
    std::map<std::size_t, std::vector<std::size_t>> by_iteration;
    for (std::size_t e = 1; e <= max_pairs; ++e) {
        std::size_t iter = static_cast<std::size_t>(
            std::llround(window * static_cast<double>(e) / static_cast<double>(max_pairs)));
        iter = std::min(iter, n_iterations - 1);
        std::vector<std::size_t> targets(initial_lengths.size());
        for (std::size_t l = 0; l < initial_lengths.size(); ++l) {
            const std::size_t want =
                initial_lengths[l] >= 2 * e ? initial_lengths[l] - 2 * e : final_lengths[l];
            targets[l] = std::max(final_lengths[l], want);
        }
        by_iteration[iter] = std::move(targets);  // later events overwrite on collision
    }
    for (auto& [iter, targets] : by_iteration) schedule.push_back({iter, std::move(targets)});
    return schedule;
}

// ---------------------------------------------------------------------------
// Training data and configuration
// ---------------------------------------------------------------------------

/// One training entry: a receiver trace at 2 samples/symbol, normalized to
/// its launch power (so the model's watt-calibrated rotation coefficients
/// see physical intensities), plus the transmitted symbols.
struct PowerTrace {
    double power_dbm = 0.0;
    DualPolSignal rx2;
    SymbolFrame frame;
};

struct TrainConfig {
    double learning_rate = 7e-4;
    std::size_t batch_size = 50;
    std::size_t n_iterations = 50000;
    std::vector<double> power_set_dbm = {1.0, 1.5, 2.0, 2.5, 3.0};
    /// Batch elements are contiguous circular segments of this many symbols.
    std::size_t segment_symbols = 1024;
    unsigned quant_bits = 0;  // 0 = full precision
    std::uint64_t seed = 1;
    PruneSchedule prune;
};

struct HistoryRow {
    std::size_t iteration = 0;
    double loss = 0.0;
    double power_dbm = 0.0;
    std::size_t active_taps = 0;
};

struct TrainResult {
    std::vector<HistoryRow> history;
    std::size_t margin_symbols = 0;
};

namespace detail {

inline void circular_slice(const std::vector<cplx>& src, std::size_t start, std::size_t count,
                           std::vector<cplx>& dst) {
    dst.resize(count);
    const std::size_t n = src.size();
    const std::size_t first = std::min(count, n - start);
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(start), first, dst.begin());
    std::copy_n(src.begin(), count - first, dst.begin() + static_cast<std::ptrdiff_t>(first));
}

/// Re-packs Adam moments after pruning removed parameters.  Both layouts
/// traverse (layer, pol, k) in the same order and pruning only removes the
/// outermost k, so the new layout is an ordered subsequence of the old one.
inline void remap_adam_state(const ParamLayout& old_layout, const ParamLayout& new_layout,
                             AdamState& state) {
    std::vector<double> m(new_layout.n_real(), 0.0);
    std::vector<double> v(new_layout.n_real(), 0.0);
    std::size_t oi = 0;
    for (std::size_t e = 0; e < new_layout.entries.size(); ++e) {
        const ParamEntry& want = new_layout.entries[e];
        while (oi < old_layout.entries.size() &&
               (old_layout.entries[oi].layer != want.layer ||
                old_layout.entries[oi].pol != want.pol || old_layout.entries[oi].k != want.k))
            ++oi;
        if (oi == old_layout.entries.size())
            throw std::logic_error("remap_adam_state: new layout is not a subsequence of the old");
        m[2 * e] = state.m[2 * oi];
        m[2 * e + 1] = state.m[2 * oi + 1];
        v[2 * e] = state.v[2 * oi];
        v[2 * e + 1] = state.v[2 * oi + 1];
        ++oi;
    }
    state.m = std::move(m);
    state.v = std::move(v);
}

}  // namespace detail

/// Number of interior symbols excluded at each segment end: the model's
/// total filter memory plus the matched filter half-length, converted from
/// samples (2 per symbol) to symbols, rounded up.
inline std::size_t loss_margin_symbols(const LdbpModel& model, const RealFirTaps& matched_filter) {
    std::size_t memory_samples = (matched_filter.taps.size() - 1) / 2;
    for (const auto& pair : model.layers) memory_samples += pair[0].active_halfwidth();
    return (memory_samples + 1) / 2;
}

/// Stochastic-gradient training of the filter taps.  Each iteration first
/// applies any pruning event, then draws a launch power uniformly from the
/// power set, a trace for that power, and `batch_size` circular segments at
/// uniform symbol offsets; the batch-mean gradient feeds one Adam step
/// (accumulated in element order for bit-reproducibility).  With
/// quant_bits > 0 the forward/backward pass runs on a fake-quantized copy
/// of the model and the updates apply to the full-precision masters
/// (straight-through estimator).  Fully deterministic given the
/// configuration and data set.
inline TrainResult train(LdbpModel& model, const std::vector<PowerTrace>& data,
                         const RealFirTaps& matched_filter, const TrainConfig& cfg) {
    check_model(model);
    if (data.empty()) throw std::invalid_argument("train: no training data");
    if (cfg.batch_size == 0) throw std::invalid_argument("train: batch size must be positive");
    if (cfg.segment_symbols == 0) throw std::invalid_argument("train: segment length must be positive");
    if (cfg.power_set_dbm.empty()) throw std::invalid_argument("train: power set must be non-empty");
    if (!(cfg.learning_rate >= 0)) throw std::invalid_argument("train: learning rate must be finite");
    const std::size_t seg_samples = 2 * cfg.segment_symbols;
    for (const auto& entry : data) {
        check_signal(entry.rx2, "train");
        if (entry.rx2.size() % 2 != 0 || entry.rx2.size() / 2 != entry.frame.x.size() ||
            entry.frame.x.size() != entry.frame.y.size())
            throw std::invalid_argument("train: trace must hold two samples per reference symbol");
        if (entry.rx2.size() < seg_samples)
            throw std::invalid_argument("train: segment longer than trace");
        if (std::abs(entry.rx2.sample_rate_hz - model.sample_rate_hz) >
            1e-6 * model.sample_rate_hz)
            throw std::invalid_argument("train: trace sample rate does not match the model");
    }

    // Entries serving each power of the set.
    std::vector<std::vector<std::size_t>> entries_for_power(cfg.power_set_dbm.size());
    for (std::size_t p = 0; p < cfg.power_set_dbm.size(); ++p) {
        for (std::size_t d = 0; d < data.size(); ++d)
            if (std::abs(data[d].power_dbm - cfg.power_set_dbm[p]) < 1e-9)
                entries_for_power[p].push_back(d);
        if (entries_for_power[p].empty())
            throw std::invalid_argument("train: no trace covers a power in the power set");
    }

    check_schedule(cfg.prune, model.n_layers());
    const std::vector<double> mf_spec = filter_spectrum(matched_filter, seg_samples);
    const std::size_t margin = loss_margin_symbols(model, matched_filter);
    if (2 * margin >= cfg.segment_symbols)
        throw std::invalid_argument("train: segment too short for the filter memory margins");

    ParamLayout layout = param_layout(model);
    std::vector<double> params = pack_params(model, layout);
    AdamState adam(params.size(), cfg.learning_rate);
    Pcg64 rng(cfg.seed, 0x7e41);

    TrainResult result;
    result.margin_symbols = margin;
    result.history.reserve(cfg.n_iterations);

    std::vector<double> grad(params.size(), 0.0);
    SegmentData seg;
    seg.margin_symbols = margin;

    for (std::size_t iter = 0; iter < cfg.n_iterations; ++iter) {
        if (apply_prune(model, cfg.prune, iter)) {
            ParamLayout new_layout = param_layout(model);
            detail::remap_adam_state(layout, new_layout, adam);
            layout = std::move(new_layout);
            params = pack_params(model, layout);
            grad.assign(params.size(), 0.0);
        }

        const std::size_t power_idx =
            static_cast<std::size_t>(rng.bounded(cfg.power_set_dbm.size()));
        const auto& candidates = entries_for_power[power_idx];
        const std::size_t entry_idx =
            candidates[static_cast<std::size_t>(rng.bounded(candidates.size()))];
        const PowerTrace& entry = data[entry_idx];
        seg.kappa = std::sqrt(dbm_to_watt(entry.power_dbm));

        LdbpModel quantized;
        const LdbpModel* fwd_model = &model;
        if (cfg.quant_bits > 0) {
            quantized = fake_quantize(model, cfg.quant_bits);
            fwd_model = &quantized;
        }

        std::fill(grad.begin(), grad.end(), 0.0);
        double batch_loss = 0.0;
        const std::size_t n_sym = entry.frame.x.size();
        for (std::size_t b = 0; b < cfg.batch_size; ++b) {
            const std::size_t start_sym = static_cast<std::size_t>(rng.bounded(n_sym));
            detail::circular_slice(entry.rx2.x, 2 * start_sym, seg_samples, seg.in_x);
            detail::circular_slice(entry.rx2.y, 2 * start_sym, seg_samples, seg.in_y);
            detail::circular_slice(entry.frame.x, start_sym, cfg.segment_symbols, seg.ref_x);
            detail::circular_slice(entry.frame.y, start_sym, cfg.segment_symbols, seg.ref_y);
            batch_loss += segment_loss_and_grad(*fwd_model, layout, seg, mf_spec, grad);
        }
        const double scale = 1.0 / static_cast<double>(cfg.batch_size);
        batch_loss *= scale;
        for (double& g : grad) g *= scale;

        adam_step(adam, grad, params);
        unpack_params(model, layout, params);

        result.history.push_back({iter, batch_loss, cfg.power_set_dbm[power_idx],
                                  model.total_active_taps()});
    }
    return result;
}

}  // namespace ldbp
