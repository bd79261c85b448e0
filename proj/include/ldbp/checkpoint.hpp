#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ldbp/model.hpp"
#include "ldbp/train.hpp"

namespace ldbp {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is little-endian float64");

/// Sidecar metadata stored with a model checkpoint: where a prune schedule
/// stands (so a resumed run re-applies only future events) and a caller
/// supplied configuration fingerprint for provenance checks.
struct CheckpointMeta {
    std::size_t schedule_position = 0;
    std::string config_hash;
};

namespace detail {

inline constexpr const char* checkpoint_magic = "LDBPCKPT1";

}  // namespace detail

/// Writes `model` to `path` as a one-line JSON header (structure, masks,
/// nonlinear coefficients, metadata) followed by the raw tap payload:
/// for each layer, x then y polarization, all taps as little-endian
/// float64 (re, im) pairs. The header fully determines the payload size,
/// so truncation is detectable on load.
inline void save_checkpoint(const std::string& path, const LdbpModel& model,
                            const CheckpointMeta& meta = {}) {
    check_model(model);
    nlohmann::json header;
    header["format_version"] = 1;
    header["sample_rate_hz"] = model.sample_rate_hz;
    header["nl_sign"] = model.nl_sign;
    header["nl_coeff"] = model.nl_coeff;
    header["schedule_position"] = meta.schedule_position;
    header["config_hash"] = meta.config_hash;
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& layer : model.layers) {
        nlohmann::json entry;
        entry["length"] = layer[0].taps.size();
        for (int pol = 0; pol < 2; ++pol) {
            std::vector<int> mask(layer[pol].mask.size());
            for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = layer[pol].mask[i] ? 1 : 0;
            entry[pol == 0 ? "mask_x" : "mask_y"] = mask;
        }
        layers.push_back(entry);
    }
    header["layers"] = layers;

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
    out << detail::checkpoint_magic << '\n' << header.dump() << '\n';
    for (const auto& layer : model.layers)
        for (int pol = 0; pol < 2; ++pol)
            for (const cplx& t : layer[pol].taps) {
                const double re = t.real(), im = t.imag();
                out.write(reinterpret_cast<const char*>(&re), sizeof(double));
                out.write(reinterpret_cast<const char*>(&im), sizeof(double));
            }
    if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

/// Reads a checkpoint written by save_checkpoint. Throws on a missing
/// file, foreign magic, malformed header, or a payload shorter than the
/// header promises. Tap values round-trip bit-exactly.
inline LdbpModel load_checkpoint(const std::string& path, CheckpointMeta* meta = nullptr) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
    std::string magic, header_line;
    if (!std::getline(in, magic) || magic != detail::checkpoint_magic)
        throw std::runtime_error("load_checkpoint: not a checkpoint file: " + path);
    if (!std::getline(in, header_line))
        throw std::runtime_error("load_checkpoint: missing header: " + path);

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(header_line);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("load_checkpoint: bad header: ") + e.what());
    }
    for (const char* key :
         {"format_version", "sample_rate_hz", "nl_sign", "nl_coeff", "layers"})
        if (!header.contains(key))
            throw std::runtime_error(std::string("load_checkpoint: header missing field ") + key);
    if (header["format_version"].get<int>() != 1)
        throw std::runtime_error("load_checkpoint: unsupported format version");

    LdbpModel model;
    model.sample_rate_hz = header["sample_rate_hz"].get<double>();
    model.nl_sign = header["nl_sign"].get<int>();
    model.nl_coeff = header["nl_coeff"].get<std::vector<double>>();
    if (meta) {
        meta->schedule_position = header.value("schedule_position", std::size_t{0});
        meta->config_hash = header.value("config_hash", std::string{});
    }

    for (const auto& entry : header["layers"]) {
        const std::size_t len = entry.at("length").get<std::size_t>();
        std::array<FirFilter, 2> layer;
        for (int pol = 0; pol < 2; ++pol) {
            const auto mask = entry.at(pol == 0 ? "mask_x" : "mask_y").get<std::vector<int>>();
            if (mask.size() != len)
                throw std::runtime_error("load_checkpoint: mask length mismatch");
            layer[pol].taps.assign(len, cplx(0.0, 0.0));
            layer[pol].mask.resize(len);
            for (std::size_t i = 0; i < len; ++i) layer[pol].mask[i] = mask[i] ? 1 : 0;
        }
        model.layers.push_back(std::move(layer));
    }

    for (auto& layer : model.layers)
        for (int pol = 0; pol < 2; ++pol)
            for (cplx& t : layer[pol].taps) {
                double re = 0.0, im = 0.0;
                in.read(reinterpret_cast<char*>(&re), sizeof(double));
                in.read(reinterpret_cast<char*>(&im), sizeof(double));
                if (!in) throw std::runtime_error("load_checkpoint: truncated payload: " + path);
                t = cplx(re, im);
            }
    check_model(model);
    return model;
}

/// Loss-history CSV: "iteration,loss,power_dbm,active_taps" with doubles
/// printed at full precision so a reload reproduces the run bit-exactly.
inline void save_history(const std::string& path, const std::vector<HistoryRow>& rows) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("save_history: cannot open " + path);
    out << "iteration,loss,power_dbm,active_taps\n";
    out.precision(17);
    for (const HistoryRow& r : rows)
        out << r.iteration << ',' << r.loss << ',' << r.power_dbm << ',' << r.active_taps << '\n';
    if (!out) throw std::runtime_error("save_history: write failed for " + path);
}

inline std::vector<HistoryRow> load_history(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_history: cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line != "iteration,loss,power_dbm,active_taps")
        throw std::runtime_error("load_history: unexpected CSV header in " + path);
    std::vector<HistoryRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        HistoryRow r;
        char c1 = 0, c2 = 0, c3 = 0;
        if (!(ss >> r.iteration >> c1 >> r.loss >> c2 >> r.power_dbm >> c3 >> r.active_taps) ||
            c1 != ',' || c2 != ',' || c3 != ',')
            throw std::runtime_error("load_history: malformed row: " + line);
        rows.push_back(r);
    }
    return rows;
}

}  // namespace ldbp
