#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ldbp/signal.hpp"

namespace ldbp {

static_assert(std::endian::native == std::endian::little,
              "trace payload is little-endian float64");

/// Header of a stored trace: everything needed to interpret the payload
/// and reproduce its generation.  Symbol frames reuse the layout at one
/// sample per symbol with generator "symbol-frame".
struct TraceMeta {
    int format_version = 1;
    std::size_t n_samples = 0;
    double sample_rate_hz = 0.0;
    double baud_rate_hz = 0.0;
    double launch_power_dbm = 0.0;
    std::uint64_t seed = 0;
    std::string generator;
    std::string constellation;
};

namespace detail {

inline void write_payload(const std::string& path, const std::vector<cplx>& x,
                          const std::vector<cplx>& y) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("trace_io: cannot open " + path);
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double quad[4] = {x[i].real(), x[i].imag(), y[i].real(), y[i].imag()};
        out.write(reinterpret_cast<const char*>(quad), sizeof(quad));
    }
    if (!out) throw std::runtime_error("trace_io: write failed for " + path);
}

inline void read_payload(const std::string& path, std::size_t n_samples, std::vector<cplx>& x,
                         std::vector<cplx>& y) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw std::runtime_error("trace_io: cannot open " + path);
    const auto bytes = static_cast<std::size_t>(in.tellg());
    const std::size_t expected = n_samples * 4 * sizeof(double);
    if (bytes != expected)
        throw std::runtime_error("trace_io: payload length mismatch in " + path + ": header says " +
                                 std::to_string(expected) + " bytes, file holds " +
                                 std::to_string(bytes));
    in.seekg(0);
    x.resize(n_samples);
    y.resize(n_samples);
    for (std::size_t i = 0; i < n_samples; ++i) {
        double quad[4];
        in.read(reinterpret_cast<char*>(quad), sizeof(quad));
        if (!in) throw std::runtime_error("trace_io: truncated payload in " + path);
        x[i] = cplx(quad[0], quad[1]);
        y[i] = cplx(quad[2], quad[3]);
    }
}

inline nlohmann::json meta_to_json(const TraceMeta& meta) {
    return {{"format_version", meta.format_version},
            {"n_samples", meta.n_samples},
            {"sample_rate_hz", meta.sample_rate_hz},
            {"baud_rate_hz", meta.baud_rate_hz},
            {"launch_power_dbm", meta.launch_power_dbm},
            {"seed", meta.seed},
            {"generator", meta.generator},
            {"constellation", meta.constellation}};
}

inline TraceMeta meta_from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("trace_io: cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("trace_io: bad header " + path + ": " + e.what());
    }
    for (const char* key : {"format_version", "n_samples", "sample_rate_hz", "baud_rate_hz",
                            "launch_power_dbm", "seed", "generator", "constellation"})
        if (!j.contains(key))
            throw std::runtime_error("trace_io: header " + path + " missing field " + key);
    TraceMeta meta;
    meta.format_version = j["format_version"].get<int>();
    if (meta.format_version != 1)
        throw std::runtime_error("trace_io: unsupported format version " +
                                 std::to_string(meta.format_version) + " in " + path);
    meta.n_samples = j["n_samples"].get<std::size_t>();
    meta.sample_rate_hz = j["sample_rate_hz"].get<double>();
    meta.baud_rate_hz = j["baud_rate_hz"].get<double>();
    meta.launch_power_dbm = j["launch_power_dbm"].get<double>();
    meta.seed = j["seed"].get<std::uint64_t>();
    meta.generator = j["generator"].get<std::string>();
    meta.constellation = j["constellation"].get<std::string>();
    return meta;
}

}  // namespace detail

/// Writes `sig` as `<base>.json` (header) plus `<base>.bin` (little-endian
/// float64 interleaved [x_re, x_im, y_re, y_im] per sample).  n_samples and
/// sample_rate_hz are taken from the signal itself.
inline void write_trace(const std::string& base, const DualPolSignal& sig, TraceMeta meta) {
    check_signal(sig, "write_trace");
    meta.n_samples = sig.size();
    meta.sample_rate_hz = sig.sample_rate_hz;
    std::ofstream header(base + ".json", std::ios::trunc);
    if (!header) throw std::runtime_error("trace_io: cannot open " + base + ".json");
    header << detail::meta_to_json(meta).dump(2) << '\n';
    if (!header) throw std::runtime_error("trace_io: write failed for " + base + ".json");
    detail::write_payload(base + ".bin", sig.x, sig.y);
}

/// Reads a trace written by write_trace; payload round-trips bit-exactly.
inline DualPolSignal read_trace(const std::string& base, TraceMeta* meta_out = nullptr) {
    const TraceMeta meta = detail::meta_from_json_file(base + ".json");
    DualPolSignal sig;
    sig.sample_rate_hz = meta.sample_rate_hz;
    detail::read_payload(base + ".bin", meta.n_samples, sig.x, sig.y);
    if (meta_out) *meta_out = meta;
    return sig;
}

/// Symbol frame in the trace layout at one sample per symbol.
inline void write_frame(const std::string& base, const SymbolFrame& frame,
                        double launch_power_dbm = 0.0) {
    if (frame.x.empty() || frame.x.size() != frame.y.size())
        throw std::invalid_argument("write_frame: malformed frame");
    TraceMeta meta;
    meta.n_samples = frame.x.size();
    meta.sample_rate_hz = frame.baud_rate_hz;
    meta.baud_rate_hz = frame.baud_rate_hz;
    meta.launch_power_dbm = launch_power_dbm;
    meta.seed = frame.seed;
    meta.generator = "symbol-frame";
    meta.constellation = frame.constellation;
    std::ofstream header(base + ".json", std::ios::trunc);
    if (!header) throw std::runtime_error("trace_io: cannot open " + base + ".json");
    header << detail::meta_to_json(meta).dump(2) << '\n';
    if (!header) throw std::runtime_error("trace_io: write failed for " + base + ".json");
    detail::write_payload(base + ".bin", frame.x, frame.y);
}

inline SymbolFrame read_frame(const std::string& base, TraceMeta* meta_out = nullptr) {
    const TraceMeta meta = detail::meta_from_json_file(base + ".json");
    SymbolFrame frame;
    frame.baud_rate_hz = meta.baud_rate_hz;
    frame.constellation = meta.constellation;
    frame.seed = meta.seed;
    detail::read_payload(base + ".bin", meta.n_samples, frame.x, frame.y);
    if (meta_out) *meta_out = meta;
    return frame;
}

}  // namespace ldbp
