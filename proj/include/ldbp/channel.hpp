#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "ldbp/fft.hpp"
#include "ldbp/pcg.hpp"
#include "ldbp/signal.hpp"

namespace ldbp {

/// Scalar fiber constants. beta2 is negative for anomalous dispersion;
/// the Manakov factor 8/9 averages the nonlinear coupling over random
/// birefringence.
struct FiberParams {
    double alpha_db_per_km = 0.2;
    double beta2_ps2_per_km = -20.87;
    double gamma_per_w_km = 1.3;
    double span_length_km = 75.484;
    double manakov_factor = 8.0 / 9.0;
};

inline void check_fiber(const FiberParams& f, const char* where) {
    if (f.alpha_db_per_km < 0 || f.span_length_km <= 0 || f.gamma_per_w_km < 0 ||
        f.manakov_factor <= 0 || f.manakov_factor > 1)
        throw std::invalid_argument(std::string(where) + ": invalid fiber parameters");
}

/// Attenuation in field/power-exponent form: alpha_lin [1/km] such that
/// power decays as e^{-alpha_lin z}.
inline double alpha_linear(double alpha_db_per_km) {
    return alpha_db_per_km * std::log(10.0) / 10.0;
}

enum class StepMode { uniform, logarithmic };

struct StepPlan {
    std::vector<double> steps_km;
    StepMode mode = StepMode::logarithmic;
};

/// Power-decay-weighted length governing the accumulated nonlinear phase
/// over a step of length h.
inline double effective_length(double h_km, double alpha_db_per_km) {
    const double al = alpha_linear(alpha_db_per_km);
    if (al * h_km < 1e-12) return h_km;
    return (1.0 - std::exp(-al * h_km)) / al;
}

/// Split a span into K steps. Logarithmic mode places boundaries at
/// z_k = -(1/a) ln(1 - (k/K)(1 - e^{-aL})), which gives every step the
/// same effective length; steps grow toward the span end where power is
/// low. The last step absorbs the boundary so the sum is exactly L.
inline StepPlan step_plan(double span_length_km, double alpha_db_per_km, std::size_t k_steps,
                          StepMode mode) {
    if (k_steps < 1) throw std::invalid_argument("step_plan: need at least one step");
    if (!(span_length_km > 0)) throw std::invalid_argument("step_plan: span length must be positive");
    StepPlan plan;
    plan.mode = mode;
    plan.steps_km.resize(k_steps);
    const double al = alpha_linear(alpha_db_per_km);
    if (mode == StepMode::uniform || al * span_length_km < 1e-12) {
        for (auto& h : plan.steps_km) h = span_length_km / static_cast<double>(k_steps);
        plan.steps_km.back() =
            span_length_km - (span_length_km / static_cast<double>(k_steps)) * static_cast<double>(k_steps - 1);
        return plan;
    }
    const double decay = 1.0 - std::exp(-al * span_length_km);
    double prev = 0.0;
    for (std::size_t k = 1; k <= k_steps; ++k) {
        const double z = k == k_steps
                             ? span_length_km
                             : -std::log(1.0 - decay * static_cast<double>(k) / static_cast<double>(k_steps)) / al;
        plan.steps_km[k - 1] = z - prev;
        prev = z;
    }
    return plan;
}

/// Per-bin multiplier of a linear fiber section: attenuation plus the
/// chromatic-dispersion phase e^{j w^2 (beta2/2) h} under the global
/// spectral convention (see fft.hpp). Negate alpha and beta2 to invert.
inline std::vector<cplx> cd_response(double beta2_ps2_per_km, double h_km, double alpha_db_per_km,
                                     const std::vector<double>& omega) {
    const double b2 = beta2_ps2_per_km * 1e-24;  // s^2/km
    const double amp = std::exp(-alpha_linear(alpha_db_per_km) * h_km / 2.0);
    std::vector<cplx> mult(omega.size());
    for (std::size_t k = 0; k < omega.size(); ++k)
        mult[k] = std::polar(amp, 0.5 * b2 * omega[k] * omega[k] * h_km);
    return mult;
}

/// Kerr phase rotation: both polarizations of sample i rotate by
/// sign * gamma * factor * (|x_i|^2 + |y_i|^2) * l_eff. Magnitudes are
/// preserved exactly.
inline DualPolSignal nonlinear_rotation(const DualPolSignal& sig, double gamma_per_w_km,
                                        double l_eff_km, int sign, double manakov_factor) {
    check_signal(sig, "nonlinear_rotation");
    if (l_eff_km < 0) throw std::invalid_argument("nonlinear_rotation: negative effective length");
    DualPolSignal out = sig;
    const double c = static_cast<double>(sign) * gamma_per_w_km * manakov_factor * l_eff_km;
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double phase = c * (std::norm(out.x[i]) + std::norm(out.y[i]));
        const cplx rot = std::polar(1.0, phase);
        out.x[i] *= rot;
        out.y[i] *= rot;
    }
    return out;
}

struct EdfaConfig {
    double gain_db = 0.0;
    double noise_figure_db = 5.0;
    double photon_energy_j = 6.62607015e-34 * 193.4e12;  // h*nu at 193.4 THz
    bool noise_enabled = true;
};

/// Flat gain plus white circular ASE noise of total per-polarization variance
/// n_sp * h*nu * (G - 1) * f_s across the simulation bandwidth, with
/// n_sp = NF_lin / 2.
inline DualPolSignal edfa_amplify(const DualPolSignal& sig, const EdfaConfig& cfg,
                                  std::uint64_t seed) {
    check_signal(sig, "edfa_amplify");
    if (cfg.gain_db < 0) throw std::invalid_argument("edfa_amplify: gain must be >= 0 dB");
    if (cfg.noise_enabled && cfg.noise_figure_db < 3.0)
        throw std::invalid_argument("edfa_amplify: noise figure below 3 dB is unphysical");
    const double g = db_to_lin(cfg.gain_db);
    const double a = std::sqrt(g);
    DualPolSignal out = sig;
    for (auto& v : out.x) v *= a;
    for (auto& v : out.y) v *= a;
    if (!cfg.noise_enabled || g <= 1.0) return out;

    const double n_sp = db_to_lin(cfg.noise_figure_db) / 2.0;
    const double variance = n_sp * cfg.photon_energy_j * (g - 1.0) * sig.sample_rate_hz;
    const double s = std::sqrt(variance / 2.0);  // per quadrature
    Pcg64 rng(seed, 0xa5eu);
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.x[i] += cplx(s * rng.gaussian(), s * rng.gaussian());
        out.y[i] += cplx(s * rng.gaussian(), s * rng.gaussian());
    }
    return out;
}

/// One birefringent section: a random polarization rotation followed by a
/// differential group delay of tau split evenly between the principal
/// states.
struct PmdSection {
    std::array<cplx, 4> rotation{cplx(1, 0), cplx(0, 0), cplx(0, 0), cplx(1, 0)};  // row major
    double dgd_s = 0.0;
};

struct PmdSpec {
    std::size_t sections_per_span = 0;
    double coeff_ps_sqrt_km = 0.0;
    std::uint64_t seed = 0;
    bool enabled() const { return sections_per_span > 0; }
};

/// Haar-uniform SU(2) rotations (normalized Gaussian quaternions) with a
/// fixed per-section delay tau = coeff * sqrt(section_length) * sqrt(3*pi/8).
/// The sqrt(3*pi/8) factor makes the expected link DGD of the random walk
/// over sections equal coeff * sqrt(total length) (Maxwellian statistics).
inline std::vector<PmdSection> draw_pmd_sections(std::size_t n_sections, double pmd_coeff_ps_sqrt_km,
                                                 double section_length_km, std::uint64_t seed) {
    if (n_sections < 1) throw std::invalid_argument("draw_pmd_sections: need at least one section");
    if (pmd_coeff_ps_sqrt_km < 0 || section_length_km <= 0)
        throw std::invalid_argument("draw_pmd_sections: invalid parameters");
    const double tau =
        pmd_coeff_ps_sqrt_km * 1e-12 * std::sqrt(section_length_km) * std::sqrt(3.0 * pi / 8.0);
    Pcg64 rng(seed, 0xb12du);
    std::vector<PmdSection> sections(n_sections);
    for (auto& sec : sections) {
        double q[4];
        double norm2 = 0.0;
        do {
            norm2 = 0.0;
            for (double& v : q) {
                v = rng.gaussian();
                norm2 += v * v;
            }
        } while (norm2 < 1e-24);
        const double inv = 1.0 / std::sqrt(norm2);
        for (double& v : q) v *= inv;
        sec.rotation = {cplx(q[0], q[1]), cplx(q[2], q[3]), cplx(-q[2], q[3]), cplx(q[0], -q[1])};
        sec.dgd_s = pmd_coeff_ps_sqrt_km == 0.0 ? 0.0 : tau;
    }
    return sections;
}

/// Forward: rotate by R, then delay the principal states by +-tau/2.
/// Invert: undo the delays, then rotate by R^dagger.
inline DualPolSignal pmd_section_apply(const DualPolSignal& sig, const PmdSection& sec,
                                       bool invert = false) {
    check_signal(sig, "pmd_section_apply");
    const auto& r = sec.rotation;
    std::vector<cplx> sx(sig.size()), sy(sig.size());
    if (invert) {
        sx = sig.x;
        sy = sig.y;
    } else {
        for (std::size_t i = 0; i < sig.size(); ++i) {
            sx[i] = r[0] * sig.x[i] + r[1] * sig.y[i];
            sy[i] = r[2] * sig.x[i] + r[3] * sig.y[i];
        }
    }
    const double tau = invert ? -sec.dgd_s : sec.dgd_s;
    if (tau != 0.0) {
        const std::vector<double> w = fftgrid::omega(sig.size(), sig.sample_rate_hz);
        fft(sx);
        fft(sy);
        for (std::size_t k = 0; k < w.size(); ++k) {
            const cplx d = std::polar(1.0, -w[k] * tau / 2.0);
            sx[k] *= d;             // delayed principal state
            sy[k] *= std::conj(d);  // advanced principal state
        }
        ifft(sx);
        ifft(sy);
    }
    DualPolSignal out;
    out.sample_rate_hz = sig.sample_rate_hz;
    if (invert) {
        out.x.resize(sig.size());
        out.y.resize(sig.size());
        for (std::size_t i = 0; i < sig.size(); ++i) {
            out.x[i] = std::conj(r[0]) * sx[i] + std::conj(r[2]) * sy[i];
            out.y[i] = std::conj(r[1]) * sx[i] + std::conj(r[3]) * sy[i];
        }
    } else {
        out.x = std::move(sx);
        out.y = std::move(sy);
    }
    return out;
}

/// Jones matrix of a section chain at angular frequency w (product of
/// rotation times delay, last section leftmost). Used for DGD statistics.
inline std::array<cplx, 4> link_jones(const std::vector<PmdSection>& sections, double w) {
    std::array<cplx, 4> j{cplx(1, 0), cplx(0, 0), cplx(0, 0), cplx(1, 0)};
    for (const auto& sec : sections) {
        const cplx d = std::polar(1.0, -w * sec.dgd_s / 2.0);
        const std::array<cplx, 4> t{d * sec.rotation[0], d * sec.rotation[1],
                                    std::conj(d) * sec.rotation[2], std::conj(d) * sec.rotation[3]};
        j = {t[0] * j[0] + t[1] * j[2], t[0] * j[1] + t[1] * j[3],
             t[2] * j[0] + t[3] * j[2], t[2] * j[1] + t[3] * j[3]};
    }
    return j;
}

/// Link DGD from the eigenphases of J(w+dw) J(w)^dagger.
inline double link_dgd(const std::vector<PmdSection>& sections, double w, double dw) {
    const std::array<cplx, 4> j0 = link_jones(sections, w);
    const std::array<cplx, 4> j1 = link_jones(sections, w + dw);
    // M = J1 * J0^dagger
    const std::array<cplx, 4> m{
        j1[0] * std::conj(j0[0]) + j1[1] * std::conj(j0[1]),
        j1[0] * std::conj(j0[2]) + j1[1] * std::conj(j0[3]),
        j1[2] * std::conj(j0[0]) + j1[3] * std::conj(j0[1]),
        j1[2] * std::conj(j0[2]) + j1[3] * std::conj(j0[3])};
    const cplx tr = m[0] + m[3];
    const cplx det = m[0] * m[3] - m[1] * m[2];
    const cplx disc = std::sqrt(tr * tr - 4.0 * det);
    const cplx l1 = (tr + disc) / 2.0;
    const cplx l2 = (tr - disc) / 2.0;
    double dphi = std::arg(l1 / l2);
    if (dphi > pi) dphi -= 2.0 * pi;
    if (dphi < -pi) dphi += 2.0 * pi;
    return std::abs(dphi) / dw;
}

struct LinkConfig {
    FiberParams fiber;
    std::size_t n_spans = 1;
    std::size_t forward_stps = 1;
    StepMode step_mode = StepMode::logarithmic;
    EdfaConfig edfa;
    PmdSpec pmd;
};

/// One entry of the recorded deterministic operator chain of a forward
/// propagation. Each record carries everything needed to re-apply or to
/// invert it; amplifier noise is not recorded (not invertible).
struct OpRecord {
    enum class Kind { linear, nonlinear, pmd, gain };
    Kind kind = Kind::linear;
    double h_km = 0.0;             // linear
    double beta2_ps2_per_km = 0.0; // linear
    double alpha_db_per_km = 0.0;  // linear
    double coeff_rad_per_w = 0.0;  // nonlinear: gamma * manakov * l_eff
    double amp = 1.0;              // gain: field amplitude factor
    PmdSection pmd;                // pmd
};

using OpSequence = std::vector<OpRecord>;

namespace detail {

inline void apply_linear_inplace(DualPolSignal& sig, double beta2, double h_km, double alpha_db) {
    const std::vector<double> w = fftgrid::omega(sig.size(), sig.sample_rate_hz);
    const std::vector<cplx> mult = cd_response(beta2, h_km, alpha_db, w);
    fft(sig.x);
    fft(sig.y);
    for (std::size_t k = 0; k < mult.size(); ++k) {
        sig.x[k] *= mult[k];
        sig.y[k] *= mult[k];
    }
    ifft(sig.x);
    ifft(sig.y);
}

inline void apply_nonlinear_inplace(DualPolSignal& sig, double coeff_rad_per_w, int sign) {
    const double c = static_cast<double>(sign) * coeff_rad_per_w;
    for (std::size_t i = 0; i < sig.size(); ++i) {
        const double phase = c * (std::norm(sig.x[i]) + std::norm(sig.y[i]));
        const cplx rot = std::polar(1.0, phase);
        sig.x[i] *= rot;
        sig.y[i] *= rot;
    }
}

}  // namespace detail

/// Re-apply a recorded operator chain, or undo it (reverse order, each
/// operator inverted: negated exponents, reciprocal gains, adjoint
/// rotations).
inline DualPolSignal apply_sequence(const DualPolSignal& sig, const OpSequence& seq, bool invert) {
    DualPolSignal out = sig;
    auto apply_one = [&](const OpRecord& op) {
        switch (op.kind) {
            case OpRecord::Kind::linear:
                detail::apply_linear_inplace(out, invert ? -op.beta2_ps2_per_km : op.beta2_ps2_per_km,
                                             op.h_km, invert ? -op.alpha_db_per_km : op.alpha_db_per_km);
                break;
            case OpRecord::Kind::nonlinear:
                detail::apply_nonlinear_inplace(out, op.coeff_rad_per_w, invert ? -1 : 1);
                break;
            case OpRecord::Kind::pmd:
                out = pmd_section_apply(out, op.pmd, invert);
                break;
            case OpRecord::Kind::gain: {
                const double a = invert ? 1.0 / op.amp : op.amp;
                for (auto& v : out.x) v *= a;
                for (auto& v : out.y) v *= a;
                break;
            }
        }
    };
    if (!invert) {
        for (const auto& op : seq) apply_one(op);
    } else {
        for (auto it = seq.rbegin(); it != seq.rend(); ++it) apply_one(*it);
    }
    return out;
}

/// Forward propagation over the amplified link: per span a symmetric
/// split-step walk over the step plan (adjacent linear half-steps merged
/// into single multiplications), PMD sections interleaved ahead of evenly
/// spaced nonlinear steps when configured, then the EDFA. Fully
/// deterministic for a fixed seed. If `record` is given the deterministic
/// operator chain is appended to it.
inline DualPolSignal propagate(const DualPolSignal& sig, const LinkConfig& link, std::uint64_t seed,
                               OpSequence* record = nullptr) {
    check_signal(sig, "propagate");
    check_fiber(link.fiber, "propagate");
    if (link.n_spans < 1 || link.forward_stps < 1)
        throw std::invalid_argument("propagate: need at least one span and one step");
    if (link.pmd.enabled() && link.pmd.sections_per_span > link.forward_stps)
        throw std::invalid_argument("propagate: more PMD sections than steps per span");

    const FiberParams& f = link.fiber;
    const StepPlan plan = step_plan(f.span_length_km, f.alpha_db_per_km, link.forward_stps, link.step_mode);
    const std::size_t k_steps = plan.steps_km.size();

    std::vector<PmdSection> sections;
    std::size_t pmd_per_span = 0;
    std::vector<std::ptrdiff_t> section_at_step(k_steps, -1);
    if (link.pmd.enabled()) {
        pmd_per_span = link.pmd.sections_per_span;
        sections = draw_pmd_sections(pmd_per_span * link.n_spans, link.pmd.coeff_ps_sqrt_km,
                                     f.span_length_km / static_cast<double>(pmd_per_span), link.pmd.seed);
        // Section i sits ahead of nonlinear step floor(i*K/S); distinct for S <= K.
        for (std::size_t i = 0; i < pmd_per_span; ++i)
            section_at_step[i * k_steps / pmd_per_span] = static_cast<std::ptrdiff_t>(i);
    }

    DualPolSignal state = sig;
    auto emit_linear = [&](double h) {
        detail::apply_linear_inplace(state, f.beta2_ps2_per_km, h, f.alpha_db_per_km);
        if (record)
            record->push_back({OpRecord::Kind::linear, h, f.beta2_ps2_per_km, f.alpha_db_per_km, 0, 1, {}});
    };

    for (std::size_t span = 0; span < link.n_spans; ++span) {
        double pending = 0.0;
        for (std::size_t k = 0; k < k_steps; ++k) {
            emit_linear(pending + plan.steps_km[k] / 2.0);
            pending = plan.steps_km[k] / 2.0;
            if (pmd_per_span > 0 && section_at_step[k] >= 0) {
                const std::size_t idx = span * pmd_per_span + static_cast<std::size_t>(section_at_step[k]);
                state = pmd_section_apply(state, sections[idx], false);
                if (record) record->push_back({OpRecord::Kind::pmd, 0, 0, 0, 0, 1, sections[idx]});
            }
            const double coeff =
                f.gamma_per_w_km * f.manakov_factor * effective_length(plan.steps_km[k], f.alpha_db_per_km);
            detail::apply_nonlinear_inplace(state, coeff, 1);
            if (record) record->push_back({OpRecord::Kind::nonlinear, 0, 0, 0, coeff, 1, {}});
        }
        emit_linear(pending);
        // Record the same amplitude expression edfa_amplify applies so the
        // inverse matches to the ulp.
        const double a = std::sqrt(db_to_lin(link.edfa.gain_db));
        if (record) record->push_back({OpRecord::Kind::gain, 0, 0, 0, 0, a, {}});
        state = edfa_amplify(state, link.edfa, mix_seed(seed, 0xed0 + span));
    }
    assert_finite(state, "propagate");
    return state;
}

}  // namespace ldbp
