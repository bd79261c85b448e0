#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "ldbp/fft.hpp"
#include "ldbp/pcg.hpp"

namespace ldbp {

inline constexpr double pi = std::numbers::pi;

/// Thrown when a processing stage produces non-finite samples; carries the
/// stage name so the CLI can report it and exit with the numerical-failure
/// code.
struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& stage)
        : std::runtime_error("non-finite samples detected in stage: " + stage),
          stage_name(stage) {}
    std::string stage_name;
};

inline double dbm_to_watt(double dbm) { return 1e-3 * std::pow(10.0, dbm / 10.0); }
inline double watt_to_dbm(double w) { return 10.0 * std::log10(w / 1e-3); }
inline double db_to_lin(double db) { return std::pow(10.0, db / 10.0); }
inline double lin_to_db(double lin) { return 10.0 * std::log10(lin); }

/// Uniformly sampled dual-polarization complex baseband field, sqrt-Watt
/// units per sample.
struct DualPolSignal {
    std::vector<cplx> x;
    std::vector<cplx> y;
    double sample_rate_hz = 0.0;

    std::size_t size() const { return x.size(); }

    /// Mean per-sample power over both polarizations, Watt.
    double power() const {
        double acc = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) acc += std::norm(x[i]) + std::norm(y[i]);
        return x.empty() ? 0.0 : acc / static_cast<double>(x.size());
    }
};

inline void check_signal(const DualPolSignal& s, const char* where) {
    if (s.x.size() != s.y.size() || s.x.empty())
        throw std::invalid_argument(std::string(where) + ": polarizations must have equal nonzero length");
    if (!(s.sample_rate_hz > 0))
        throw std::invalid_argument(std::string(where) + ": sample_rate must be positive");
}

inline void assert_finite(const DualPolSignal& s, const std::string& stage) {
    for (std::size_t i = 0; i < s.x.size(); ++i)
        if (!std::isfinite(s.x[i].real()) || !std::isfinite(s.x[i].imag()) ||
            !std::isfinite(s.y[i].real()) || !std::isfinite(s.y[i].imag()))
            throw NumericalError(stage);
}

/// Dimensionless unit-mean-energy constellation symbols for two
/// polarizations, drawn from independent generator streams.
struct SymbolFrame {
    std::vector<cplx> x;
    std::vector<cplx> y;
    double baud_rate_hz = 0.0;
    std::string constellation;
    std::uint64_t seed = 0;

    std::size_t size() const { return x.size(); }
};

struct RealFirTaps {
    enum class Norm { unit_energy, unit_gain };
    std::vector<double> taps;
    Norm normalization = Norm::unit_energy;
};

/// Gray-mapped constellation points with exactly unit average energy.
inline std::vector<cplx> constellation(const std::string& name) {
    if (name == "qpsk") {
        const double s = 1.0 / std::sqrt(2.0);
        // Gray over 2 bits: axis bit 0 -> -1, 1 -> +1.
        return {{-s, -s}, {-s, s}, {s, -s}, {s, s}};
    }
    if (name == "16qam") {
        // Per-axis Gray over 2 bits: 00 -> -3, 01 -> -1, 11 -> +1, 10 -> +3.
        static constexpr double level[4] = {-3.0, -1.0, 1.0, 3.0};
        static constexpr int gray[4] = {0, 1, 3, 2};
        const double s = 1.0 / std::sqrt(10.0);
        std::vector<cplx> pts(16);
        for (int b = 0; b < 16; ++b) {
            int gi = 0, gq = 0;
            for (int v = 0; v < 4; ++v) {
                if (gray[v] == (b >> 2)) gi = v;
                if (gray[v] == (b & 3)) gq = v;
            }
            pts[b] = cplx(level[gi] * s, level[gq] * s);
        }
        return pts;
    }
    throw std::invalid_argument("unknown constellation: " + name);
}

inline SymbolFrame gen_symbol_frame(std::uint64_t seed, std::size_t n_symbols,
                                    const std::string& constellation_name,
                                    double baud_rate_hz = 0.0) {
    if (n_symbols < 1) throw std::invalid_argument("gen_symbol_frame: n_symbols must be >= 1");
    const std::vector<cplx> points = constellation(constellation_name);
    const unsigned bits = points.size() == 4 ? 2u : 4u;

    SymbolFrame frame;
    frame.baud_rate_hz = baud_rate_hz;
    frame.constellation = constellation_name;
    frame.seed = seed;
    frame.x.resize(n_symbols);
    frame.y.resize(n_symbols);
    // Distinct streams of the same generator family keep the polarizations
    // independent while remaining reproducible from one seed.
    Pcg64 rng_x(seed, 'x');
    Pcg64 rng_y(seed, 'y');
    for (std::size_t i = 0; i < n_symbols; ++i) {
        frame.x[i] = points[rng_x.next() >> (64 - bits)];
        frame.y[i] = points[rng_y.next() >> (64 - bits)];
    }
    return frame;
}

/// Root-raised-cosine impulse response over `span` symbol periods at `sps`
/// samples per symbol, normalized to unit energy. The two removable
/// singularities of the closed form (t = 0 and |4*beta*t| = 1) are replaced
/// by their analytic limits.
inline RealFirTaps rrc_taps(double rolloff, std::size_t span, std::size_t sps) {
    if (rolloff < 0.0 || rolloff > 1.0)
        throw std::invalid_argument("rrc_taps: rolloff must be in [0, 1]");
    if (span < 1 || sps < 1 || (span * sps) % 2 != 0)
        throw std::invalid_argument("rrc_taps: span*sps must be even so a center tap exists");

    const int half = static_cast<int>(span * sps) / 2;
    const double b = rolloff;
    std::vector<double> h(2 * half + 1);
    for (int k = -half; k <= half; ++k) {
        const double t = static_cast<double>(k) / static_cast<double>(sps);
        double v;
        if (std::abs(t) < 1e-12) {
            v = 1.0 + b * (4.0 / pi - 1.0);
        } else if (b > 0.0 && std::abs(1.0 - std::pow(4.0 * b * t, 2)) < 1e-8) {
            v = (b / std::sqrt(2.0)) *
                ((1.0 + 2.0 / pi) * std::sin(pi / (4.0 * b)) +
                 (1.0 - 2.0 / pi) * std::cos(pi / (4.0 * b)));
        } else {
            v = (std::sin(pi * t * (1.0 - b)) + 4.0 * b * t * std::cos(pi * t * (1.0 + b))) /
                (pi * t * (1.0 - std::pow(4.0 * b * t, 2)));
        }
        h[static_cast<std::size_t>(k + half)] = v;
    }
    double energy = 0.0;
    for (double v : h) energy += v * v;
    const double scale = 1.0 / std::sqrt(energy);
    for (double& v : h) v *= scale;
    return {std::move(h), RealFirTaps::Norm::unit_energy};
}

namespace detail {

/// Circular convolution with a centered odd-length filter:
/// out[n] = sum_{k=-m..m} taps[m+k] * in[(n-k) mod N].
/// Hot path of both training passes, hence the hand-rolled complex
/// arithmetic and the wrap-free interior loop.
inline void circ_conv(const cplx* in, std::size_t n, const cplx* taps, int m, cplx* out) {
    const auto nn = static_cast<std::ptrdiff_t>(n);
    const int len = 2 * m + 1;
    // Reversed taps turn the interior into a straight dot product:
    // out[n] = sum_i rt[i] * in[n-m+i].
    static thread_local std::vector<cplx> rev;
    rev.resize(static_cast<std::size_t>(len));
    for (int i = 0; i < len; ++i) rev[static_cast<std::size_t>(i)] = taps[len - 1 - i];

    const double* ip = reinterpret_cast<const double*>(in);
    const double* tp = reinterpret_cast<const double*>(rev.data());
    double* op = reinterpret_cast<double*>(out);

    auto edge = [&](std::ptrdiff_t pos) {
        double ar = 0.0, ai = 0.0;
        for (int i = 0; i < len; ++i) {
            std::ptrdiff_t j = pos - m + i;  // in (-n, 2n) since len <= n
            j -= nn * ((j >= nn) - (j < 0));
            const double tr = tp[2 * i], ti = tp[2 * i + 1];
            const double vr = ip[2 * j], vi = ip[2 * j + 1];
            ar += tr * vr - ti * vi;
            ai += tr * vi + ti * vr;
        }
        op[2 * pos] = ar;
        op[2 * pos + 1] = ai;
    };

    const std::ptrdiff_t lo = std::min<std::ptrdiff_t>(m, nn);
    const std::ptrdiff_t hi = std::max<std::ptrdiff_t>(lo, nn - m);
    for (std::ptrdiff_t pos = 0; pos < lo; ++pos) edge(pos);
    for (std::ptrdiff_t pos = hi; pos < nn; ++pos) edge(pos);
    for (std::ptrdiff_t pos = lo; pos < hi; ++pos) {
        const double* base = ip + 2 * (pos - m);
        double ar = 0.0, ai = 0.0;
        for (int i = 0; i < len; ++i) {
            const double tr = tp[2 * i], ti = tp[2 * i + 1];
            const double vr = base[2 * i], vi = base[2 * i + 1];
            ar += tr * vr - ti * vi;
            ai += tr * vi + ti * vr;
        }
        op[2 * pos] = ar;
        op[2 * pos + 1] = ai;
    }
}

/// Same operation computed via the DFT; used for long filters where the
/// direct sum is wasteful (pulse shaping, matched filtering of full traces).
inline std::vector<cplx> circ_conv_fft(const std::vector<cplx>& in, const std::vector<cplx>& taps) {
    const std::size_t n = in.size();
    const int m = static_cast<int>(taps.size() / 2);
    std::vector<cplx> impulse(n, cplx(0.0, 0.0));
    for (int k = -m; k <= m; ++k) {
        const std::size_t pos = static_cast<std::size_t>((k + static_cast<int>(n)) % static_cast<int>(n));
        impulse[pos] += taps[static_cast<std::size_t>(m + k)];
    }
    fft(impulse);
    std::vector<cplx> spec = in;
    fft(spec);
    for (std::size_t i = 0; i < n; ++i) spec[i] *= impulse[i];
    ifft(spec);
    return spec;
}

}  // namespace detail

/// Circular convolution of both polarizations with centered odd-length
/// complex filters (zero group-delay referencing).
inline DualPolSignal fir_convolve_circular(const DualPolSignal& sig,
                                           const std::vector<cplx>& filt_x,
                                           const std::vector<cplx>& filt_y) {
    check_signal(sig, "fir_convolve_circular");
    if (filt_x.size() % 2 == 0 || filt_y.size() % 2 == 0)
        throw std::invalid_argument("fir_convolve_circular: tap counts must be odd");
    if (filt_x.size() > sig.size() || filt_y.size() > sig.size())
        throw std::invalid_argument("fir_convolve_circular: more taps than samples");

    DualPolSignal out;
    out.sample_rate_hz = sig.sample_rate_hz;
    out.x.resize(sig.size());
    out.y.resize(sig.size());
    detail::circ_conv(sig.x.data(), sig.size(), filt_x.data(),
                      static_cast<int>(filt_x.size() / 2), out.x.data());
    detail::circ_conv(sig.y.data(), sig.size(), filt_y.data(),
                      static_cast<int>(filt_y.size() / 2), out.y.data());
    return out;
}

/// Upsample by zero insertion, then circularly convolve with the shaping
/// filter. Output power is left to a subsequent normalize_to_power call.
inline DualPolSignal shape_pulses(const SymbolFrame& frame, const RealFirTaps& taps,
                                  std::size_t sps) {
    if (sps < 2) throw std::invalid_argument("shape_pulses: sps must be >= 2");
    if (frame.x.size() != frame.y.size() || frame.x.empty())
        throw std::invalid_argument("shape_pulses: bad frame");
    const std::size_t n = frame.size() * sps;
    if (taps.taps.size() > n)
        throw std::invalid_argument("shape_pulses: filter longer than signal");

    std::vector<cplx> ctaps(taps.taps.size());
    for (std::size_t i = 0; i < ctaps.size(); ++i) ctaps[i] = taps.taps[i];

    DualPolSignal out;
    out.sample_rate_hz = frame.baud_rate_hz * static_cast<double>(sps);
    for (int pol = 0; pol < 2; ++pol) {
        const std::vector<cplx>& sym = pol == 0 ? frame.x : frame.y;
        std::vector<cplx> up(n, cplx(0.0, 0.0));
        for (std::size_t i = 0; i < sym.size(); ++i) up[i * sps] = sym[i];
        (pol == 0 ? out.x : out.y) = detail::circ_conv_fft(up, ctaps);
    }
    return out;
}

/// Rational sample-rate change on the periodic block, implemented as exact
/// spectrum truncation / zero padding. When the new length is even and
/// smaller, the old +Nyquist bin folds onto the new -Nyquist bin so a
/// subsequent upsample restores it bit-for-bit; everything else above the
/// new band is discarded (ideal anti-alias).
inline DualPolSignal resample_rational(const DualPolSignal& sig, std::size_t up, std::size_t down) {
    check_signal(sig, "resample_rational");
    if (up < 1 || down < 1) throw std::invalid_argument("resample_rational: factors must be >= 1");
    if (std::gcd(up, down) != 1) throw std::invalid_argument("resample_rational: factors must be coprime");
    if (up == 1 && down == 1) return sig;
    const std::size_t n = sig.size();
    if ((n * up) % down != 0)
        throw std::invalid_argument("resample_rational: periodic block length not divisible");
    const std::size_t m = n * up / down;
    if (m == 0) throw std::invalid_argument("resample_rational: empty output");

    const auto sn = static_cast<std::ptrdiff_t>(n);
    const auto sm = static_cast<std::ptrdiff_t>(m);
    const std::ptrdiff_t old_lo = -(sn / 2), old_hi = (sn - 1) / 2;  // signed bin range
    const std::ptrdiff_t new_lo = -(sm / 2), new_hi = (sm - 1) / 2;
    const double scale = static_cast<double>(m) / static_cast<double>(n);
    auto wrap = [](std::ptrdiff_t q, std::ptrdiff_t len) {
        return static_cast<std::size_t>(q < 0 ? q + len : q);
    };

    DualPolSignal out;
    out.sample_rate_hz = sig.sample_rate_hz * static_cast<double>(up) / static_cast<double>(down);
    for (int pol = 0; pol < 2; ++pol) {
        std::vector<cplx> spec(pol == 0 ? sig.x : sig.y);
        fft(spec);
        std::vector<cplx> nspec(m, cplx(0.0, 0.0));
        for (std::ptrdiff_t q = std::max(new_lo, old_lo); q <= std::min(new_hi, old_hi); ++q)
            nspec[wrap(q, sm)] = scale * spec[wrap(q, sn)];
        if (sm % 2 == 0 && sm / 2 <= old_hi)
            nspec[wrap(new_lo, sm)] += scale * spec[wrap(sm / 2, sn)];
        ifft(nspec);
        (pol == 0 ? out.x : out.y) = std::move(nspec);
    }
    return out;
}

/// Ideal brick-wall low-pass on the periodic spectrum; bins with |f| beyond
/// the cutoff (tiny relative tolerance, so an exact-cutoff bin survives)
/// are zeroed.
inline DualPolSignal lowpass(const DualPolSignal& sig, double cutoff_hz) {
    check_signal(sig, "lowpass");
    if (!(cutoff_hz > 0.0) || cutoff_hz > sig.sample_rate_hz / 2.0)
        throw std::invalid_argument("lowpass: cutoff must be in (0, fs/2]");
    const std::size_t n = sig.size();
    const double limit = cutoff_hz * (1.0 + 1e-12);

    DualPolSignal out;
    out.sample_rate_hz = sig.sample_rate_hz;
    for (int pol = 0; pol < 2; ++pol) {
        std::vector<cplx> spec(pol == 0 ? sig.x : sig.y);
        fft(spec);
        for (std::size_t k = 0; k < n; ++k)
            if (std::abs(fftgrid::bin_freq_hz(k, n, sig.sample_rate_hz)) > limit)
                spec[k] = cplx(0.0, 0.0);
        ifft(spec);
        (pol == 0 ? out.x : out.y) = std::move(spec);
    }
    return out;
}

inline DualPolSignal normalize_to_power(const DualPolSignal& sig, double power_watt) {
    check_signal(sig, "normalize_to_power");
    if (!(power_watt > 0.0)) throw std::invalid_argument("normalize_to_power: power must be positive");
    const double p = sig.power();
    if (p == 0.0) throw std::invalid_argument("normalize_to_power: signal is identically zero");
    const double s = std::sqrt(power_watt / p);
    DualPolSignal out = sig;
    for (auto& v : out.x) v *= s;
    for (auto& v : out.y) v *= s;
    return out;
}

struct PhaseCorrection {
    std::vector<cplx> corrected;
    double theta = 0.0;
    bool defined = true;  // false when the inner product vanishes
};

/// Data-aided constant phase correction: theta = arg(sum conj(rx)*ref)
/// maximizes Re(sum conj(e^{j theta} rx) * ref) over all rotations.
inline PhaseCorrection phase_offset_correct(const std::vector<cplx>& rx,
                                            const std::vector<cplx>& ref) {
    if (rx.size() != ref.size() || rx.empty())
        throw std::invalid_argument("phase_offset_correct: length mismatch");
    cplx s(0.0, 0.0);
    for (std::size_t i = 0; i < rx.size(); ++i) s += std::conj(rx[i]) * ref[i];
    PhaseCorrection out;
    if (std::abs(s) == 0.0) {
        out.theta = 0.0;
        out.defined = false;
        out.corrected = rx;
        return out;
    }
    out.theta = std::arg(s);
    const cplx rot = std::polar(1.0, out.theta);
    out.corrected.resize(rx.size());
    for (std::size_t i = 0; i < rx.size(); ++i) out.corrected[i] = rot * rx[i];
    return out;
}

/// Effective SNR with per-polarization least-squares complex scaling of rx
/// against the reference symbols; capped at 100 dB.
inline double effective_snr(const std::vector<cplx>& rx_x, const std::vector<cplx>& rx_y,
                            const std::vector<cplx>& tx_x, const std::vector<cplx>& tx_y) {
    if (rx_x.size() != tx_x.size() || rx_y.size() != tx_y.size() || rx_x.empty())
        throw std::invalid_argument("effective_snr: length mismatch");
    double num = 0.0, den = 0.0;
    for (int pol = 0; pol < 2; ++pol) {
        const auto& rx = pol == 0 ? rx_x : rx_y;
        const auto& tx = pol == 0 ? tx_x : tx_y;
        cplx s(0.0, 0.0);
        double d = 0.0;
        for (std::size_t i = 0; i < rx.size(); ++i) {
            s += std::conj(rx[i]) * tx[i];
            d += std::norm(rx[i]);
        }
        const cplx c = d > 0.0 ? s / d : cplx(0.0, 0.0);
        for (std::size_t i = 0; i < rx.size(); ++i) {
            num += std::norm(tx[i]);
            den += std::norm(tx[i] - c * rx[i]);
        }
    }
    if (den == 0.0) return 100.0;
    return std::min(10.0 * std::log10(num / den), 100.0);
}

/// Shift s maximizing the circular cross-correlation magnitude, so that
/// rx[(i+s) mod N] best matches tx[i]; smallest shift wins ties.
inline std::size_t align_circular(const std::vector<cplx>& rx, const std::vector<cplx>& tx) {
    if (rx.size() != tx.size() || rx.empty())
        throw std::invalid_argument("align_circular: length mismatch");
    std::vector<cplx> a = rx, b = tx;
    fft(a);
    fft(b);
    for (std::size_t k = 0; k < a.size(); ++k) a[k] *= std::conj(b[k]);
    ifft(a);
    std::size_t best = 0;
    double best_mag = -1.0;
    for (std::size_t s = 0; s < a.size(); ++s) {
        const double mag = std::norm(a[s]);
        if (mag > best_mag) {
            best_mag = mag;
            best = s;
        }
    }
    return best;
}

/// Normalized mean-square error between two sequences, dB. Used as the
/// reconstruction metric throughout the tests and reports.
inline double nmse_db(const std::vector<cplx>& a, const std::vector<cplx>& ref) {
    if (a.size() != ref.size() || a.empty())
        throw std::invalid_argument("nmse_db: length mismatch");
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num += std::norm(a[i] - ref[i]);
        den += std::norm(ref[i]);
    }
    if (den == 0.0) throw std::invalid_argument("nmse_db: zero reference");
    if (num == 0.0) return -std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(num / den);
}

inline double nmse_db(const DualPolSignal& a, const DualPolSignal& ref) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a.x.size(); ++i) {
        num += std::norm(a.x[i] - ref.x[i]) + std::norm(a.y[i] - ref.y[i]);
        den += std::norm(ref.x[i]) + std::norm(ref.y[i]);
    }
    if (den == 0.0) throw std::invalid_argument("nmse_db: zero reference");
    if (num == 0.0) return -std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(num / den);
}

}  // namespace ldbp
