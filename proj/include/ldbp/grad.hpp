#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "ldbp/fft.hpp"
#include "ldbp/model.hpp"
#include "ldbp/pcg.hpp"
#include "ldbp/signal.hpp"

namespace ldbp {

// ---------------------------------------------------------------------------
// Trainable parameter layout
//
// Every symmetric filter contributes one complex parameter per active tap
// index k = 0..active_halfwidth (taps at +k and -k share it).  Parameters
// flatten to doubles as (Re, Im) pairs ordered by (layer, polarization, k),
// which is also the order gradients are accumulated in.
// ---------------------------------------------------------------------------

struct ParamEntry {
    std::uint32_t layer;
    std::uint32_t pol;
    std::uint32_t k;
};

struct ParamLayout {
    std::vector<ParamEntry> entries;
    std::size_t n_real() const { return 2 * entries.size(); }
};

inline ParamLayout param_layout(const LdbpModel& model) {
    ParamLayout layout;
    for (std::size_t l = 0; l < model.n_layers(); ++l)
        for (std::uint32_t p = 0; p < 2; ++p) {
            const std::size_t a = model.layers[l][p].active_halfwidth();
            for (std::uint32_t k = 0; k <= a; ++k)
                layout.entries.push_back({static_cast<std::uint32_t>(l), p, k});
        }
    return layout;
}

inline std::vector<double> pack_params(const LdbpModel& model, const ParamLayout& layout) {
    std::vector<double> flat(layout.n_real());
    for (std::size_t e = 0; e < layout.entries.size(); ++e) {
        const ParamEntry& pe = layout.entries[e];
        const FirFilter& f = model.layers[pe.layer][pe.pol];
        const cplx tap = f.taps[f.half() + pe.k];
        flat[2 * e] = tap.real();
        flat[2 * e + 1] = tap.imag();
    }
    return flat;
}

inline void unpack_params(LdbpModel& model, const ParamLayout& layout,
                          const std::vector<double>& flat) {
    if (flat.size() != layout.n_real())
        throw std::invalid_argument("unpack_params: size mismatch");
    for (std::size_t e = 0; e < layout.entries.size(); ++e) {
        const ParamEntry& pe = layout.entries[e];
        FirFilter& f = model.layers[pe.layer][pe.pol];
        const cplx tap(flat[2 * e], flat[2 * e + 1]);
        f.taps[f.half() + pe.k] = tap;
        f.taps[f.half() - pe.k] = tap;
    }
}

// ---------------------------------------------------------------------------
// Training segment: a circular slice of a 2 sample/symbol receiver trace
// plus its reference symbols.  The loss is evaluated on interior symbols
// only — `margin_symbols` at each end absorb the invalid wrap-around of the
// slice through the model and matched-filter memory.
// ---------------------------------------------------------------------------

struct SegmentData {
    std::vector<cplx> in_x, in_y;    // 2 samples/symbol
    std::vector<cplx> ref_x, ref_y;  // transmitted symbols, in_x.size() / 2 entries
    double kappa = 1.0;              // reference amplitude: loss compares against kappa * ref
    std::size_t margin_symbols = 0;  // loss support = [margin, n_symbols - margin)
};

inline void check_segment(const SegmentData& seg) {
    const std::size_t n = seg.in_x.size();
    if (n == 0 || n % 2 != 0 || seg.in_y.size() != n)
        throw std::invalid_argument("segment: sample count must be even and equal across polarizations");
    if (seg.ref_x.size() != n / 2 || seg.ref_y.size() != n / 2)
        throw std::invalid_argument("segment: need one reference symbol per two samples");
    if (2 * seg.margin_symbols >= n / 2)
        throw std::invalid_argument("segment: margins leave no interior symbols");
    if (!(seg.kappa > 0))
        throw std::invalid_argument("segment: kappa must be positive");
}

/// Real DFT of a symmetric real filter placed circularly in an n-point
/// buffer (center tap at index 0).  Multiplying a length-n spectrum by this
/// vector applies the filter as an exact circular convolution; because the
/// taps are real and symmetric the operator is self-adjoint, so the same
/// multiplication implements its gradient adjoint.
inline std::vector<double> filter_spectrum(const RealFirTaps& filt, std::size_t n) {
    const std::size_t t = filt.taps.size();
    if (t % 2 == 0 || t > n)
        throw std::invalid_argument("filter_spectrum: taps must be odd and fit the transform");
    const std::size_t half = t / 2;
    for (std::size_t k = 0; k < half; ++k)
        if (std::abs(filt.taps[k] - filt.taps[t - 1 - k]) > 1e-12)
            throw std::invalid_argument("filter_spectrum: taps must be symmetric");
    std::vector<cplx> buf(n, cplx(0.0, 0.0));
    for (std::size_t j = 0; j < t; ++j) {
        const std::size_t shift = (n + j - half) % n;
        buf[shift] += filt.taps[j];
    }
    fft(buf);
    std::vector<double> spec(n);
    for (std::size_t j = 0; j < n; ++j) spec[j] = buf[j].real();
    return spec;
}

namespace detail {

inline void spectrum_multiply(std::vector<cplx>& sig, const std::vector<double>& spec) {
    fft(sig);
    for (std::size_t j = 0; j < sig.size(); ++j) sig[j] *= spec[j];
    ifft(sig);
}

/// Circular cross-correlation fold for symmetric-tap gradients:
/// out[k] = sum_n g[n] * conj(a[n - k]) + (k > 0 ? sum_n g[n] * conj(a[n + k]) : 0)
/// for k = 0..halfwidth, indices mod n.
inline void corr_fold(const cplx* g, const cplx* a, std::size_t n, std::size_t halfwidth,
                      cplx* out) {
    if (2 * halfwidth >= n)
        throw std::invalid_argument("corr_fold: filter memory exceeds segment");
    for (std::size_t k = 0; k <= halfwidth; ++k) {
        cplx plus(0.0, 0.0);   // pairs g[n] with a[n - k]
        cplx minus(0.0, 0.0);  // pairs g[n] with a[n + k]
        for (std::size_t i = k; i < n - k; ++i) {
            plus += g[i] * std::conj(a[i - k]);
            minus += g[i] * std::conj(a[i + k]);
        }
        for (std::size_t i = 0; i < k; ++i) {
            plus += g[i] * std::conj(a[i + n - k]);
            minus += g[i] * std::conj(a[i + k]);
        }
        for (std::size_t i = n - k; i < n; ++i) {
            plus += g[i] * std::conj(a[i - k]);
            minus += g[i] * std::conj(a[i + k - n]);
        }
        out[k] = (k == 0) ? plus : plus + minus;
    }
}

/// Adjoint of circular convolution with a symmetric filter: convolution with
/// the conjugated taps (reversal is the identity on a symmetric support).
inline void conv_adjoint(const std::vector<cplx>& g, const FirFilter& filt,
                         std::vector<cplx>& out) {
    const std::size_t a = filt.active_halfwidth();
    const std::size_t m = filt.half();
    std::vector<cplx> conj_taps(2 * a + 1);
    for (std::size_t j = 0; j < conj_taps.size(); ++j)
        conj_taps[j] = std::conj(filt.taps[m - a + j]);
    out.resize(g.size());
    circ_conv(g.data(), g.size(), conj_taps.data(), static_cast<int>(a), out.data());
}

struct ForwardCache {
    // a[l] = input of filter layer l; b[l] = its output (= input of rotation
    // stage l) for l < n_layers - 1.  Final filter output lives in `out`.
    std::vector<std::array<std::vector<cplx>, 2>> a;
    std::vector<std::array<std::vector<cplx>, 2>> b;
    std::array<std::vector<cplx>, 2> out;
};

inline void forward_cached(const LdbpModel& model, const std::vector<cplx>& in_x,
                           const std::vector<cplx>& in_y, ForwardCache& cache) {
    const std::size_t n_layers = model.n_layers();
    const std::size_t n = in_x.size();
    cache.a.resize(n_layers);
    cache.b.resize(n_layers - 1);
    cache.a[0][0] = in_x;
    cache.a[0][1] = in_y;
    for (std::size_t l = 0; l < n_layers; ++l) {
        auto& dst = (l + 1 < n_layers) ? cache.b[l] : cache.out;
        model_conv(cache.a[l][0], model.layers[l][0], dst[0]);
        model_conv(cache.a[l][1], model.layers[l][1], dst[1]);
        if (l + 1 < n_layers) {
            const double c = model.nl_sign * model.nl_coeff[l];
            cache.a[l + 1][0].resize(n);
            cache.a[l + 1][1].resize(n);
            for (std::size_t i = 0; i < n; ++i) {
                const cplx bx = cache.b[l][0][i];
                const cplx by = cache.b[l][1][i];
                const cplx w = std::polar(1.0, c * (std::norm(bx) + std::norm(by)));
                cache.a[l + 1][0][i] = bx * w;
                cache.a[l + 1][1][i] = by * w;
            }
        }
    }
}

struct TailState {
    std::array<std::vector<cplx>, 2> sym;  // matched-filtered, downsampled symbols
    std::array<double, 2> theta{0.0, 0.0};
    double loss = 0.0;
};

///// Shared receiver tail of the training loss: matched filter (circular, via
/// the precomputed spectrum), downsample by two at phase zero, per-
/// polarization phase alignment on the interior symbols, then mean squared
/// error over the interior between the symbol estimates scaled by 1/kappa
/// (back to the unit reference scale) and the reference symbols.  Scaling
/// the estimate rather than the reference keeps loss values comparable
/// across launch powers, so mixed-power batches weigh powers evenly.  The
/// phase estimate theta = arg(sum conj(sym) * ref) is the exact minimizer
/// of the loss over a common rotation, so treating it as a constant during
/// backpropagation leaves the gradient exact.
inline void tail_forward(const std::array<std::vector<cplx>, 2>& out,
                         const SegmentData& seg, const std::vector<double>& mf_spec,
                         TailState& tail) {
    const std::size_t n = out[0].size();
    const std::size_t n_sym = n / 2;
    const std::size_t lo = seg.margin_symbols;
    const std::size_t hi = n_sym - seg.margin_symbols;
    const std::vector<cplx>* refs[2] = {&seg.ref_x, &seg.ref_y};
    double acc = 0.0;
    for (int p = 0; p < 2; ++p) {
        std::vector<cplx> filtered = out[p];
        spectrum_multiply(filtered, mf_spec);
        tail.sym[p].resize(n_sym);
        for (std::size_t i = 0; i < n_sym; ++i) tail.sym[p][i] = filtered[2 * i];
        cplx rot(0.0, 0.0);
        for (std::size_t i = lo; i < hi; ++i)
            rot += std::conj(tail.sym[p][i]) * (*refs[p])[i];
        tail.theta[p] = (rot == cplx(0.0, 0.0)) ? 0.0 : std::arg(rot);
        const cplx scale = std::polar(1.0 / seg.kappa, tail.theta[p]);
        for (std::size_t i = lo; i < hi; ++i)
            acc += std::norm(scale * tail.sym[p][i] - (*refs[p])[i]);
    }
    tail.loss = acc / (2.0 * static_cast<double>(hi - lo));
}

/// Adjoint of tail_forward: seeds g(out) = 2 dE/d(conj out) from the stored
/// tail state.  Chain: residual -> undo rotation and 1/kappa scale ->
/// upsample (zeros at odd indices) -> matched filter (self-adjoint).
inline void tail_backward(const SegmentData& seg, const std::vector<double>& mf_spec,
                          const TailState& tail, std::array<std::vector<cplx>, 2>& g_out) {
    const std::size_t n_sym = tail.sym[0].size();
    const std::size_t n = 2 * n_sym;
    const std::size_t lo = seg.margin_symbols;
    const std::size_t hi = n_sym - seg.margin_symbols;
    const double inv_w = 1.0 / static_cast<double>(hi - lo);
    const std::vector<cplx>* refs[2] = {&seg.ref_x, &seg.ref_y};
    for (int p = 0; p < 2; ++p) {
        const cplx scale = std::polar(1.0 / seg.kappa, tail.theta[p]);
        std::vector<cplx>& g = g_out[p];
        g.assign(n, cplx(0.0, 0.0));
        for (std::size_t i = lo; i < hi; ++i) {
            const cplx resid = scale * tail.sym[p][i] - (*refs[p])[i];
            g[2 * i] = std::conj(scale) * resid * inv_w;
        }
        spectrum_multiply(g, mf_spec);
    }
}

}  // namespace detail

/// Training loss of one segment (forward only).
inline double segment_loss(const LdbpModel& model, const SegmentData& seg,
                           const std::vector<double>& mf_spec) {
    check_segment(seg);
    detail::ForwardCache cache;
    detail::forward_cached(model, seg.in_x, seg.in_y, cache);
    detail::TailState tail;
    detail::tail_forward(cache.out, seg, mf_spec, tail);
    return tail.loss;
}

/// Training loss of one segment plus its gradient with respect to the
/// filter taps, accumulated (+=) into `grad_accum` laid out per `layout`
/// as (Re, Im) per shared symmetric tap.  Gradient convention: entries are
/// dE/dRe and dE/dIm of each complex parameter.
inline double segment_loss_and_grad(const LdbpModel& model, const ParamLayout& layout,
                                    const SegmentData& seg, const std::vector<double>& mf_spec,
                                    std::vector<double>& grad_accum) {
    check_segment(seg);
    if (grad_accum.size() != layout.n_real())
        throw std::invalid_argument("segment_loss_and_grad: gradient buffer size mismatch");

    detail::ForwardCache cache;
    detail::forward_cached(model, seg.in_x, seg.in_y, cache);
    detail::TailState tail;
    detail::tail_forward(cache.out, seg, mf_spec, tail);

    std::array<std::vector<cplx>, 2> g_b;
    detail::tail_backward(seg, mf_spec, tail, g_b);

    // Entry index of (layer, pol, k=0) in the flat layout.
    std::vector<std::array<std::size_t, 2>> base(model.n_layers());
    {
        std::size_t e = 0;
        for (std::size_t l = 0; l < model.n_layers(); ++l)
            for (std::size_t p = 0; p < 2; ++p) {
                base[l][p] = e;
                e += model.layers[l][p].active_halfwidth() + 1;
            }
        if (e != layout.entries.size())
            throw std::invalid_argument("segment_loss_and_grad: layout does not match model masks");
    }

    const std::size_t n = seg.in_x.size();
    std::array<std::vector<cplx>, 2> g_a;
    std::vector<cplx> tap_grad;
    for (std::size_t l = model.n_layers(); l-- > 0;) {
        for (std::size_t p = 0; p < 2; ++p) {
            const FirFilter& filt = model.layers[l][p];
            const std::size_t a = filt.active_halfwidth();
            tap_grad.resize(a + 1);
            detail::corr_fold(g_b[p].data(), cache.a[l][p].data(), n, a, tap_grad.data());
            double* dst = grad_accum.data() + 2 * base[l][p];
            for (std::size_t k = 0; k <= a; ++k) {
                dst[2 * k] += tap_grad[k].real();
                dst[2 * k + 1] += tap_grad[k].imag();
            }
            detail::conv_adjoint(g_b[p], filt, g_a[p]);
        }
        if (l > 0) {
            // Adjoint of the rotation stage l-1 with cached inputs b_{l-1}:
            // with w = exp(j c I), I = |x|^2 + |y|^2 and incoming grads
            // (gu, gv), the input grads are
            //   g(x) = conj(w) gu - 2 c Im(w s) x,  s = conj(gu) x + conj(gv) y
            // and symmetrically for y.
            const double c = model.nl_sign * model.nl_coeff[l - 1];
            for (std::size_t i = 0; i < n; ++i) {
                const cplx x = cache.b[l - 1][0][i];
                const cplx y = cache.b[l - 1][1][i];
                const cplx gu = g_a[0][i];
                const cplx gv = g_a[1][i];
                const cplx w = std::polar(1.0, c * (std::norm(x) + std::norm(y)));
                const cplx s = std::conj(gu) * x + std::conj(gv) * y;
                const double t = 2.0 * c * (w * s).imag();
                g_b[0][i] = std::conj(w) * gu - t * x;
                g_b[1][i] = std::conj(w) * gv - t * y;
            }
        }
    }
    return tail.loss;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient verification
// ---------------------------------------------------------------------------

struct GradCheckProbe {
    std::size_t flat_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_err = 0.0;
};

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::vector<GradCheckProbe> probes;
};

/// Compares analytic tap gradients against central finite differences of
/// the full segment loss.  `step` perturbs one real parameter component at
/// a time; relative error uses |ga - gf| / max(|ga|, |gf|, rms) where rms
/// is the root-mean-square of the full analytic gradient.  The floor keeps
/// the check strict for every coordinate that carries weight while keeping
/// finite-difference round-off (about eps * loss / step in absolute terms)
/// from masquerading as model error on coordinates whose true gradient sits
/// below the difference scheme's resolution.
inline GradCheckReport gradient_check(const LdbpModel& model, const SegmentData& seg,
                                      const std::vector<double>& mf_spec,
                                      std::size_t n_probes, double step, std::uint64_t seed) {
    if (!(step > 0)) throw std::invalid_argument("gradient_check: step must be positive");
    const ParamLayout layout = param_layout(model);
    std::vector<double> analytic(layout.n_real(), 0.0);
    segment_loss_and_grad(model, layout, seg, mf_spec, analytic);

    double sumsq = 0.0;
    for (double g : analytic) sumsq += g * g;
    const double grad_rms =
        layout.n_real() ? std::sqrt(sumsq / static_cast<double>(layout.n_real())) : 0.0;

    const std::vector<double> params = pack_params(model, layout);
    Pcg64 rng(seed, 0x9cfd);
    GradCheckReport report;
    report.probes.reserve(n_probes);
    LdbpModel work = model;
    for (std::size_t probe = 0; probe < n_probes; ++probe) {
        const std::size_t idx = static_cast<std::size_t>(rng.bounded(layout.n_real()));
        std::vector<double> perturbed = params;
        perturbed[idx] = params[idx] + step;
        unpack_params(work, layout, perturbed);
        const double loss_plus = segment_loss(work, seg, mf_spec);
        perturbed[idx] = params[idx] - step;
        unpack_params(work, layout, perturbed);
        const double loss_minus = segment_loss(work, seg, mf_spec);
        const double numeric = (loss_plus - loss_minus) / (2.0 * step);
        const double ga = analytic[idx];
        const double denom = std::max({std::abs(ga), std::abs(numeric), grad_rms, 1e-12});
        GradCheckProbe row{idx, ga, numeric, std::abs(ga - numeric) / denom};
        report.max_rel_err = std::max(report.max_rel_err, row.rel_err);
        report.probes.push_back(row);
    }
    return report;
}

}  // namespace ldbp
