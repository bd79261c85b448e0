#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>
#include <vector>

#include "ldbp/channel.hpp"
#include "ldbp/signal.hpp"

using ldbp::cplx;

namespace {

// Shaped, power-normalized 16-QAM transmit signal.
ldbp::DualPolSignal tx_signal(std::uint64_t seed, std::size_t n_symbols, double baud_hz,
                              std::size_t sps, double power_dbm) {
    const auto frame = ldbp::gen_symbol_frame(seed, n_symbols, "16qam", baud_hz);
    const auto shaped = ldbp::shape_pulses(frame, ldbp::rrc_taps(0.01, 64, sps), sps);
    return ldbp::normalize_to_power(shaped, ldbp::dbm_to_watt(power_dbm));
}

}  // namespace

TEST_CASE("step_plan: trivial, uniform limit, equal effective length") {
    const auto one = ldbp::step_plan(75.0, 0.2, 1, ldbp::StepMode::logarithmic);
    REQUIRE(one.steps_km.size() == 1);
    CHECK(one.steps_km[0] == Catch::Approx(75.0).epsilon(1e-15));

    const auto flat = ldbp::step_plan(80.0, 0.0, 4, ldbp::StepMode::logarithmic);
    for (double h : flat.steps_km) CHECK(h == Catch::Approx(20.0).epsilon(1e-12));

    const auto plan = ldbp::step_plan(75.484, 0.2, 3, ldbp::StepMode::logarithmic);
    REQUIRE(plan.steps_km.size() == 3);
    double sum = 0;
    for (double h : plan.steps_km) sum += h;
    CHECK(sum == Catch::Approx(75.484).epsilon(1e-12));
    CHECK(plan.steps_km[0] < plan.steps_km[1]);
    CHECK(plan.steps_km[1] < plan.steps_km[2]);
    // Each step carries the same effective length when referenced to the
    // span start (weight e^{-alpha z} over [z, z+h]).
    const double al = ldbp::alpha_linear(0.2);
    const double l0 = ldbp::effective_length(plan.steps_km[0], 0.2);
    double z = 0;
    for (double h : plan.steps_km) {
        const double le = std::exp(-al * z) * ldbp::effective_length(h, 0.2);
        CHECK(le == Catch::Approx(l0).epsilon(1e-9));
        z += h;
    }
}

TEST_CASE("effective_length closed form and limits") {
    CHECK(ldbp::effective_length(10.0, 0.0) == Catch::Approx(10.0).epsilon(1e-15));
    const double al = ldbp::alpha_linear(0.2);
    CHECK(ldbp::effective_length(1e6, 0.2) == Catch::Approx(1.0 / al).epsilon(1e-12));
    CHECK(ldbp::effective_length(75.484, 0.2) == Catch::Approx(21.042).margin(2e-3));
}

TEST_CASE("cd_response: identity at h=0, unitarity, group delay") {
    const std::size_t n = 4096;
    const double fs = 100e9;
    const auto w = ldbp::fftgrid::omega(n, fs);

    for (auto m : ldbp::cd_response(-20.87, 0.0, 0.0, w)) CHECK(std::abs(m - cplx(1, 0)) < 1e-15);
    for (auto m : ldbp::cd_response(-20.87, 50.0, 0.0, w)) CHECK(std::abs(std::abs(m) - 1.0) < 1e-14);

    // Moment oracle: a Gaussian pulse on carrier +w0 (analytic convention
    // e^{-j w0 t}) shifts its energy center by beta2 * w0 * h.
    const double sigma_t = 50e-12, w0 = 2.0 * ldbp::pi * 5e9, h = 100.0;
    const double b2 = -21.0;
    ldbp::DualPolSignal sig;
    sig.sample_rate_hz = fs;
    sig.x.resize(n);
    sig.y.assign(n, cplx(0, 0));
    const double tc = static_cast<double>(n / 2) / fs;
    for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / fs;
        sig.x[i] = std::exp(-(t - tc) * (t - tc) / (2 * sigma_t * sigma_t)) *
                   std::polar(1.0, -w0 * t);
    }
    const auto mult = ldbp::cd_response(b2, h, 0.0, w);
    std::vector<cplx> spec = sig.x;
    ldbp::fft(spec);
    for (std::size_t k = 0; k < n; ++k) spec[k] *= mult[k];
    ldbp::ifft(spec);
    auto center = [&](const std::vector<cplx>& v) {
        double num = 0, den = 0;
        for (std::size_t i = 0; i < n; ++i) {
            num += static_cast<double>(i) / fs * std::norm(v[i]);
            den += std::norm(v[i]);
        }
        return num / den;
    };
    const double delay = center(spec) - center(sig.x);
    const double expect = b2 * 1e-24 * w0 * h;
    CHECK(delay == Catch::Approx(expect).epsilon(1e-9));
}

TEST_CASE("nonlinear_rotation: phase law, exact inverse, intensity") {
    ldbp::DualPolSignal s;
    s.sample_rate_hz = 1.0;
    s.x = {cplx(0.6, 0.0)};
    s.y = {cplx(0.0, 0.8)};  // |x|^2 + |y|^2 = 1 W
    const auto out = ldbp::nonlinear_rotation(s, 1.0, 1.0, 1, 8.0 / 9.0);
    const cplx rot = std::polar(1.0, 8.0 / 9.0);
    CHECK(std::abs(out.x[0] - rot * s.x[0]) < 1e-15);
    CHECK(std::abs(out.y[0] - rot * s.y[0]) < 1e-15);

    const auto zero = ldbp::nonlinear_rotation(s, 0.0, 21.0, 1, 8.0 / 9.0);
    CHECK(zero.x[0] == s.x[0]);

    auto big = tx_signal(17, 256, 25e9, 4, 6.0);
    const auto fwd = ldbp::nonlinear_rotation(big, 1.3, 21.0, 1, 8.0 / 9.0);
    const auto back = ldbp::nonlinear_rotation(fwd, 1.3, 21.0, -1, 8.0 / 9.0);
    CHECK(ldbp::nmse_db(back, big) < -280.0);
    for (std::size_t i = 0; i < big.size(); ++i) {
        CHECK(std::abs(fwd.x[i]) == Catch::Approx(std::abs(big.x[i])).epsilon(1e-14));
        CHECK(std::abs(fwd.y[i]) == Catch::Approx(std::abs(big.y[i])).epsilon(1e-14));
    }
}

TEST_CASE("edfa: degenerate gains and Monte-Carlo noise variance") {
    auto sig = tx_signal(23, 128, 25e9, 4, 0.0);

    ldbp::EdfaConfig unity{0.0, 5.0, 6.62607015e-34 * 193.4e12, true};
    const auto same = ldbp::edfa_amplify(sig, unity, 1);
    CHECK(ldbp::nmse_db(same, sig) < -280.0);

    ldbp::EdfaConfig quiet{15.0968, 5.0, 6.62607015e-34 * 193.4e12, false};
    const auto scaled = ldbp::edfa_amplify(sig, quiet, 1);
    const double g = ldbp::db_to_lin(15.0968);
    CHECK(scaled.power() == Catch::Approx(g * sig.power()).epsilon(1e-12));

    // Variance formula: n_sp * h nu * (G-1) * fs per polarization.
    const double fs = 100e9;
    ldbp::DualPolSignal silent;
    silent.sample_rate_hz = fs;
    silent.x.assign(1u << 20, cplx(0, 0));
    silent.y.assign(1u << 20, cplx(0, 0));
    ldbp::EdfaConfig cfg{15.0968, 5.0, 6.62607015e-34 * 193.4e12, true};
    const auto noisy = ldbp::edfa_amplify(silent, cfg, 99);
    const double n_sp = ldbp::db_to_lin(5.0) / 2.0;
    const double expect = n_sp * cfg.photon_energy_j * (g - 1.0) * fs;
    double vx = 0, vy = 0;
    for (std::size_t i = 0; i < noisy.size(); ++i) {
        vx += std::norm(noisy.x[i]);
        vy += std::norm(noisy.y[i]);
    }
    vx /= static_cast<double>(noisy.size());
    vy /= static_cast<double>(noisy.size());
    CHECK(vx == Catch::Approx(expect).epsilon(0.01));
    CHECK(vy == Catch::Approx(expect).epsilon(0.01));

    ldbp::EdfaConfig bad{10.0, 2.0, 6.62607015e-34 * 193.4e12, true};
    CHECK_THROWS_AS(ldbp::edfa_amplify(sig, bad, 1), std::invalid_argument);
}

TEST_CASE("pmd sections: unitarity, zero-coefficient case, delta separation") {
    const auto secs = ldbp::draw_pmd_sections(32, 0.1, 5.0, 7);
    REQUIRE(secs.size() == 32);
    for (const auto& s : secs) {
        const auto& r = s.rotation;
        // R^dagger R = I
        const cplx a = std::conj(r[0]) * r[0] + std::conj(r[2]) * r[2];
        const cplx b = std::conj(r[0]) * r[1] + std::conj(r[2]) * r[3];
        const cplx d = std::conj(r[1]) * r[1] + std::conj(r[3]) * r[3];
        CHECK(std::abs(a - cplx(1, 0)) < 1e-12);
        CHECK(std::abs(b) < 1e-12);
        CHECK(std::abs(d - cplx(1, 0)) < 1e-12);
        CHECK(s.dgd_s > 0.0);
    }
    for (const auto& s : ldbp::draw_pmd_sections(4, 0.0, 5.0, 7)) CHECK(s.dgd_s == 0.0);

    // tau split +-tau/2 across principal states: deltas launched in x and
    // y drift apart by exactly tau when tau spans 8 samples.
    const double fs = 100e9;
    const std::size_t n = 256;
    ldbp::PmdSection sec;
    sec.dgd_s = 8.0 / fs;
    ldbp::DualPolSignal s;
    s.sample_rate_hz = fs;
    s.x.assign(n, cplx(0, 0));
    s.y.assign(n, cplx(0, 0));
    s.x[100] = cplx(1, 0);
    s.y[100] = cplx(1, 0);
    const auto out = ldbp::pmd_section_apply(s, sec);
    auto peak = [&](const std::vector<cplx>& v) {
        std::size_t arg = 0;
        for (std::size_t i = 0; i < v.size(); ++i)
            if (std::abs(v[i]) > std::abs(v[arg])) arg = i;
        return arg;
    };
    CHECK(peak(out.x) == 104);
    CHECK(peak(out.y) == 96);

    const auto round = ldbp::pmd_section_apply(ldbp::pmd_section_apply(s, secs[0]), secs[0], true);
    CHECK(ldbp::nmse_db(round, s) < -240.0);

    const auto sig = tx_signal(31, 128, 25e9, 4, 0.0);
    const auto through = ldbp::pmd_section_apply(sig, secs[3]);
    CHECK(through.power() == Catch::Approx(sig.power()).epsilon(1e-12));
}

TEST_CASE("pmd link statistics follow the Maxwellian mean") {
    // 100 sections of 1 km at 0.1 ps/sqrt(km); mean link DGD over an
    // ensemble must approach coeff * sqrt(L).
    const double coeff = 0.1, section_km = 1.0;
    const std::size_t n_sections = 100, n_links = 4000;
    double acc = 0;
    for (std::size_t l = 0; l < n_links; ++l) {
        const auto secs = ldbp::draw_pmd_sections(n_sections, coeff, section_km, 1000 + l);
        acc += ldbp::link_dgd(secs, 0.0, 1e9);
    }
    const double mean = acc / static_cast<double>(n_links);
    const double expect = coeff * 1e-12 * std::sqrt(section_km * static_cast<double>(n_sections));
    CHECK(mean == Catch::Approx(expect).epsilon(0.03));
}

TEST_CASE("propagate: linear composition, energy conservation, convergence") {
    // gamma = 0, noise off: the whole link is one CD response plus exactly
    // compensated loss.
    ldbp::LinkConfig link;
    link.fiber = {0.2, -20.87, 0.0, 75.484, 8.0 / 9.0};
    link.n_spans = 3;
    link.forward_stps = 10;
    link.edfa = {0.2 * 75.484, 5.0, 6.62607015e-34 * 193.4e12, false};
    const auto sig = tx_signal(41, 1024, 25e9, 4, 2.0);
    const auto out = ldbp::propagate(sig, link, 5);

    const auto w = ldbp::fftgrid::omega(sig.size(), sig.sample_rate_hz);
    const auto mult = ldbp::cd_response(-20.87, 3 * 75.484, 0.0, w);
    ldbp::DualPolSignal ref = sig;
    ldbp::fft(ref.x);
    ldbp::fft(ref.y);
    for (std::size_t k = 0; k < mult.size(); ++k) {
        ref.x[k] *= mult[k];
        ref.y[k] *= mult[k];
    }
    ldbp::ifft(ref.x);
    ldbp::ifft(ref.y);
    CHECK(ldbp::nmse_db(out, ref) < -100.0);

    // alpha = 0, noise off: all operators unitary.
    ldbp::LinkConfig lossless;
    lossless.fiber = {0.0, -20.87, 1.3, 75.484, 8.0 / 9.0};
    lossless.n_spans = 2;
    lossless.forward_stps = 20;
    lossless.edfa = {0.0, 5.0, 6.62607015e-34 * 193.4e12, false};
    const auto kept = ldbp::propagate(sig, lossless, 5);
    CHECK(kept.power() == Catch::Approx(sig.power()).epsilon(1e-10));

    // Step refinement: 100 vs 300 StPS agree below -40 dB.
    ldbp::LinkConfig coarse;
    coarse.fiber = {0.2, -20.87, 1.3, 75.484, 8.0 / 9.0};
    coarse.n_spans = 1;
    coarse.forward_stps = 100;
    coarse.edfa = {0.2 * 75.484, 5.0, 6.62607015e-34 * 193.4e12, false};
    ldbp::LinkConfig fine = coarse;
    fine.forward_stps = 300;
    const auto tx = tx_signal(43, 4096, 25e9, 4, 0.0);
    const auto a = ldbp::propagate(tx, coarse, 5);
    const auto b = ldbp::propagate(tx, fine, 5);
    CHECK(ldbp::nmse_db(a, b) < -40.0);
}

TEST_CASE("recorded operator sequence inverts the forward propagation") {
    ldbp::LinkConfig link;
    link.fiber = {0.2, -20.87, 1.3, 75.484, 8.0 / 9.0};
    link.n_spans = 2;
    link.forward_stps = 10;
    link.edfa = {0.2 * 75.484, 5.0, 6.62607015e-34 * 193.4e12, false};
    link.pmd = {4, 0.1, 77};

    const auto sig = tx_signal(47, 2048, 25e9, 4, 6.0);  // worst allowed power
    ldbp::OpSequence seq;
    const auto out = ldbp::propagate(sig, link, 5, &seq);
    REQUIRE(!seq.empty());

    const auto replay = ldbp::apply_sequence(sig, seq, false);
    CHECK(ldbp::nmse_db(replay, out) < -200.0);

    const auto undone = ldbp::apply_sequence(out, seq, true);
    CHECK(ldbp::nmse_db(undone, sig) < -60.0);
}
