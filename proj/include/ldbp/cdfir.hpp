#pragma once

#include <cmath>
#include <complex>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "ldbp/fft.hpp"
#include "ldbp/signal.hpp"

namespace ldbp {

/// Complex odd-length FIR filter with zero group-delay referencing
/// (taps[half] multiplies lag 0). The mask marks trainable taps; masked
/// ones are pinned to exactly zero.
struct FirFilter {
    std::vector<cplx> taps;
    bool symmetric = true;
    std::vector<char> mask;  // 1 = active

    std::size_t size() const { return taps.size(); }
    std::size_t half() const { return taps.size() / 2; }

    std::size_t active_length() const {
        std::size_t n = 0;
        for (std::size_t i = 0; i < mask.size(); ++i)
            if (mask[i]) ++n;
        return n;
    }

    /// Largest |k| with an active tap; convolution can stop there.
    int active_halfwidth() const {
        const int m = static_cast<int>(half());
        for (int k = m; k > 0; --k)
            if (mask[static_cast<std::size_t>(m + k)] || mask[static_cast<std::size_t>(m - k)]) return k;
        return 0;
    }
};

inline void check_filter(const FirFilter& f, const char* where) {
    if (f.taps.empty() || f.taps.size() % 2 == 0)
        throw std::invalid_argument(std::string(where) + ": filter length must be odd");
    if (f.mask.size() != f.taps.size())
        throw std::invalid_argument(std::string(where) + ": mask/taps size mismatch");
    for (std::size_t i = 0; i < f.taps.size(); ++i)
        if (!f.mask[i] && f.taps[i] != cplx(0.0, 0.0))
            throw std::invalid_argument(std::string(where) + ": masked tap is nonzero");
}

/// H(f) = sum_k taps[half+k] e^{-j 2 pi f k / fs}, k in [-half, half].
inline std::vector<cplx> frequency_response(const FirFilter& filt, const std::vector<double>& freqs_hz,
                                            double sample_rate_hz) {
    const int m = static_cast<int>(filt.half());
    std::vector<cplx> h(freqs_hz.size());
    for (std::size_t i = 0; i < freqs_hz.size(); ++i) {
        const double wt = 2.0 * pi * freqs_hz[i] / sample_rate_hz;
        cplx acc(0.0, 0.0);
        for (int k = -m; k <= m; ++k)
            acc += filt.taps[static_cast<std::size_t>(m + k)] * std::polar(1.0, -wt * k);
        h[i] = acc;
    }
    return h;
}

namespace detail {

/// Midpoint frequency grid over [-fs/2, fs/2], symmetric about zero; the
/// symmetry keeps the least-squares solution exactly even.
inline std::vector<double> design_grid(std::size_t n_points, double sample_rate_hz) {
    std::vector<double> f(n_points);
    for (std::size_t i = 0; i < n_points; ++i)
        f[i] = (-0.5 + (static_cast<double>(i) + 0.5) / static_cast<double>(n_points)) * sample_rate_hz;
    return f;
}

/// Inverse-propagation CD target at frequency f: conjugate phase of the
/// forward response e^{+j w^2 (beta2/2) d} (see fft.hpp for the sign
/// convention).
inline cplx cd_target(double beta2_ps2_per_km, double distance_km, double f_hz) {
    const double w = 2.0 * pi * f_hz;
    return std::polar(1.0, -0.5 * beta2_ps2_per_km * 1e-24 * w * w * distance_km);
}

}  // namespace detail

/// Weighted least-squares design of a symmetric complex FIR approximating
/// the inverse CD response: unit weight over |f| <= passband_fraction *
/// fs/2 and oob_weight outside, where the target continues as the (unit
/// modulus) CD response so the out-of-band gain stays constrained near 1
/// instead of running free. Solved in the reduced cosine basis (symmetry
/// built in); a fixed 1e-12 ridge guards exact singularities and nothing
/// more.
inline FirFilter ls_cd_filter(double beta2_ps2_per_km, double distance_km, double sample_rate_hz,
                              std::size_t n_taps, double passband_fraction = 0.8,
                              double oob_weight = 1.0) {
    if (n_taps < 1 || n_taps % 2 == 0)
        throw std::invalid_argument("ls_cd_filter: n_taps must be odd and positive");
    if (!(sample_rate_hz > 0) || passband_fraction <= 0 || passband_fraction > 1 || oob_weight < 0)
        throw std::invalid_argument("ls_cd_filter: invalid design parameters");

    const std::size_t n_free = n_taps / 2 + 1;
    const std::size_t n_grid = 16 * n_taps;
    const std::vector<double> grid = detail::design_grid(n_grid, sample_rate_hz);
    const double edge = passband_fraction * sample_rate_hz / 2.0;
    const double dt = 1.0 / sample_rate_hz;

    Eigen::MatrixXd a(n_grid, n_free);
    Eigen::VectorXd tr(n_grid), ti(n_grid);
    for (std::size_t i = 0; i < n_grid; ++i) {
        const double w = 2.0 * pi * grid[i];
        const bool in_band = std::abs(grid[i]) <= edge;
        const double wgt = std::sqrt(in_band ? 1.0 : oob_weight);
        a(static_cast<Eigen::Index>(i), 0) = wgt;
        for (std::size_t k = 1; k < n_free; ++k)
            a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) =
                wgt * 2.0 * std::cos(w * static_cast<double>(k) * dt);
        const cplx t = detail::cd_target(beta2_ps2_per_km, distance_km, grid[i]);
        tr(static_cast<Eigen::Index>(i)) = wgt * t.real();
        ti(static_cast<Eigen::Index>(i)) = wgt * t.imag();
    }

    Eigen::MatrixXd normal = a.transpose() * a;
    normal.diagonal().array() += 1e-12;
    const Eigen::LDLT<Eigen::MatrixXd> solver(normal);
    if (solver.info() != Eigen::Success)
        throw std::runtime_error("ls_cd_filter: normal equations not solvable");
    const Eigen::VectorXd cr = solver.solve(a.transpose() * tr);
    const Eigen::VectorXd ci = solver.solve(a.transpose() * ti);

    FirFilter out;
    out.symmetric = true;
    out.taps.assign(n_taps, cplx(0, 0));
    out.mask.assign(n_taps, 1);
    const std::size_t m = n_taps / 2;
    for (std::size_t k = 0; k < n_free; ++k) {
        const cplx c(cr(static_cast<Eigen::Index>(k)), ci(static_cast<Eigen::Index>(k)));
        out.taps[m + k] = c;
        out.taps[m - k] = c;
    }
    return out;
}

/// RMS deviation from the ideal inverse-CD response over the in-band
/// portion of the dense design grid.
inline double passband_error(const FirFilter& filt, double beta2_ps2_per_km, double distance_km,
                             double sample_rate_hz, double passband_fraction = 0.8) {
    check_filter(filt, "passband_error");
    const std::size_t n_grid = 16 * filt.size();
    const std::vector<double> grid = detail::design_grid(n_grid, sample_rate_hz);
    const double edge = passband_fraction * sample_rate_hz / 2.0;
    std::vector<double> in_band;
    for (double f : grid)
        if (std::abs(f) <= edge) in_band.push_back(f);
    const std::vector<cplx> h = frequency_response(filt, in_band, sample_rate_hz);
    double acc = 0;
    for (std::size_t i = 0; i < in_band.size(); ++i)
        acc += std::norm(h[i] - detail::cd_target(beta2_ps2_per_km, distance_km, in_band[i]));
    return std::sqrt(acc / static_cast<double>(in_band.size()));
}

}  // namespace ldbp
