#pragma once

#include <complex>
#include <cstring>
#include <map>
#include <mutex>
#include <span>
#include <stdexcept>
#include <vector>

#include <fftw3.h>

namespace ldbp {

using cplx = std::complex<double>;

/**
 * Spectral conventions used throughout.
 *
 *   forward DFT   X[k] = sum_n x[n] e^{-j 2 pi k n / N}
 *   inverse DFT   x[n] = (1/N) sum_k X[k] e^{+j 2 pi k n / N}
 *
 * Bin k of an N-point DFT at sample rate fs carries frequency
 * f_k = k/N * fs for k < N/2 and (k-N)/N * fs otherwise.
 *
 * Optical envelopes follow the analytic-field convention E ~ e^{-j w t},
 * under which the physical angular frequency of bin k is w = -2 pi f_k.
 * Dispersion of a span of length h and GVD beta2 therefore multiplies
 * bin k by e^{+j (beta2/2) wk^2 h} with wk = 2 pi f_k; the sign is fixed
 * by requiring that backpropagation with negated parameters undoes it and
 * that group delay comes out as beta2 * w0 * h for a carrier offset +w0.
 */
namespace fftgrid {

inline double bin_freq_hz(std::size_t k, std::size_t n, double fs) {
    const double kk = static_cast<double>(k);
    const double nn = static_cast<double>(n);
    return (2 * k < n ? kk : kk - nn) / nn * fs;
}

/// Angular frequencies 2 pi f_k in DFT bin order.
inline std::vector<double> omega(std::size_t n, double fs) {
    std::vector<double> w(n);
    for (std::size_t k = 0; k < n; ++k)
        w[k] = 2.0 * 3.141592653589793238462643383279502884 * bin_freq_hz(k, n, fs);
    return w;
}

}  // namespace fftgrid

namespace detail {

/// Per-thread FFTW plan cache. Plans own aligned buffers; data is copied
/// in and out so caller storage needs no special alignment. Planning is
/// serialized globally (FFTW planner is not thread safe); FFTW_ESTIMATE
/// keeps plan creation deterministic and cheap.
class FftwCache {
public:
    static FftwCache& instance() {
        thread_local FftwCache cache;
        return cache;
    }

    void execute(cplx* data, std::size_t n, int sign) {
        if (n == 0) throw std::invalid_argument("fft: empty input");
        Entry& e = entry_(n);
        std::memcpy(e.buf, data, n * sizeof(cplx));
        fftw_execute(sign == FFTW_FORWARD ? e.fwd : e.bwd);
        std::memcpy(data, e.buf, n * sizeof(cplx));
    }

    ~FftwCache() {
        for (auto& [n, e] : entries_) {
            fftw_destroy_plan(e.fwd);
            fftw_destroy_plan(e.bwd);
            fftw_free(e.buf);
        }
    }

private:
    struct Entry {
        fftw_complex* buf = nullptr;
        fftw_plan fwd = nullptr;
        fftw_plan bwd = nullptr;
    };

    Entry& entry_(std::size_t n) {
        auto it = entries_.find(n);
        if (it != entries_.end()) return it->second;
        static std::mutex planner_mutex;
        std::lock_guard<std::mutex> lock(planner_mutex);
        Entry e;
        e.buf = static_cast<fftw_complex*>(fftw_malloc(n * sizeof(fftw_complex)));
        if (!e.buf) throw std::bad_alloc();
        e.fwd = fftw_plan_dft_1d(static_cast<int>(n), e.buf, e.buf, FFTW_FORWARD,
                                 FFTW_ESTIMATE);
        e.bwd = fftw_plan_dft_1d(static_cast<int>(n), e.buf, e.buf, FFTW_BACKWARD,
                                 FFTW_ESTIMATE);
        return entries_.emplace(n, e).first->second;
    }

    std::map<std::size_t, Entry> entries_;
};

}  // namespace detail

/// In-place forward DFT.
inline void fft(std::span<cplx> data) {
    detail::FftwCache::instance().execute(data.data(), data.size(), FFTW_FORWARD);
}

/// In-place inverse DFT including the 1/N scale.
inline void ifft(std::span<cplx> data) {
    detail::FftwCache::instance().execute(data.data(), data.size(), FFTW_BACKWARD);
    const double s = 1.0 / static_cast<double>(data.size());
    for (auto& v : data) v *= s;
}

inline std::vector<cplx> fft_copy(std::vector<cplx> v) {
    fft(v);
    return v;
}

inline std::vector<cplx> ifft_copy(std::vector<cplx> v) {
    ifft(v);
    return v;
}

}  // namespace ldbp
