#ifndef GTN_CHECKPOINT_HPP
#define GTN_CHECKPOINT_HPP

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gtn/errors.hpp"
#include "gtn/model.hpp"

namespace gtn {

// Container layout: 8-byte little-endian header length, a JSON header
// (sorted keys, so serialization is byte-stable), then the parameter tensors
// as concatenated raw little-endian float64 payloads in registry order. Raw
// payloads round-trip floats bit-exactly, which an all-JSON format would not.
inline constexpr int kCheckpointVersion = 1;

inline void save_checkpoint(const Model &m, std::ostream &out) {
    nlohmann::json h;
    h["format_version"] = kCheckpointVersion;
    h["architecture"] = to_json(m.spec);
    h["positive"] = m.positive;
    nlohmann::json params = nlohmann::json::array();
    for (int i = 0; i < m.num_params(); ++i) {
        nlohmann::json p;
        p["name"] = m.param_name(i);
        p["shape"] = m.param(i).shape();
        p["bytes"] = m.param(i).size() * static_cast<long>(sizeof(double));
        params.push_back(p);
    }
    h["params"] = params;

    const std::string header = h.dump();
    std::uint64_t len = header.size();
    unsigned char lenb[8];
    for (int i = 0; i < 8; ++i)
        lenb[i] = static_cast<unsigned char>(len >> (8 * i));
    out.write(reinterpret_cast<const char *>(lenb), 8);
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (int i = 0; i < m.num_params(); ++i) {
        const DenseTensor &t = m.param(i);
        out.write(reinterpret_cast<const char *>(t.data()),
                  static_cast<std::streamsize>(t.size() * sizeof(double)));
    }
    if (!out)
        throw ResourceError("checkpoint: write failed");
}

inline void save_checkpoint(const Model &m, const std::string &path) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw ResourceError("checkpoint: cannot open " + path +
                            " for writing");
    save_checkpoint(m, out);
}

inline Model load_checkpoint(std::istream &in) {
    unsigned char lenb[8];
    if (!in.read(reinterpret_cast<char *>(lenb), 8))
        throw ParseError("checkpoint: truncated header length");
    std::uint64_t len = 0;
    for (int i = 0; i < 8; ++i)
        len |= static_cast<std::uint64_t>(lenb[i]) << (8 * i);
    if (len > (1u << 26))
        throw ParseError("checkpoint: implausible header length " +
                         std::to_string(len));
    std::string header(len, '\0');
    if (!in.read(header.data(), static_cast<std::streamsize>(len)))
        throw ParseError("checkpoint: truncated header");

    nlohmann::json h;
    try {
        h = nlohmann::json::parse(header);
    } catch (const nlohmann::json::exception &e) {
        throw ParseError(std::string("checkpoint: bad header JSON: ") +
                         e.what());
    }
    try {
        const int ver = h.at("format_version").get<int>();
        if (ver != kCheckpointVersion)
            throw ParseError("checkpoint: unsupported format_version " +
                             std::to_string(ver));
        ArchitectureSpec spec = architecture_from_json(h.at("architecture"));
        Model m = build(spec, 0);
        if (h.at("positive").get<bool>())
            m.positive = true;

        const auto &params = h.at("params");
        if (static_cast<int>(params.size()) != m.num_params())
            throw ParseError("checkpoint: header lists " +
                             std::to_string(params.size()) +
                             " parameters, architecture defines " +
                             std::to_string(m.num_params()));
        for (int i = 0; i < m.num_params(); ++i) {
            const auto &p = params.at(i);
            const std::string name = p.at("name").get<std::string>();
            if (name != m.param_name(i))
                throw ParseError("checkpoint: parameter " +
                                 std::to_string(i) + " named '" + name +
                                 "', architecture expects '" +
                                 m.param_name(i) + "'");
            const std::vector<long> shape =
                p.at("shape").get<std::vector<long>>();
            DenseTensor &t = m.param_mut(i);
            if (shape != t.shape())
                throw ParseError("checkpoint: parameter '" + name +
                                 "' has mismatched shape");
            const long bytes = p.at("bytes").get<long>();
            if (bytes != t.size() * static_cast<long>(sizeof(double)))
                throw ParseError("checkpoint: parameter '" + name +
                                 "' payload length " + std::to_string(bytes) +
                                 " does not match shape product " +
                                 std::to_string(t.size()));
            if (!in.read(reinterpret_cast<char *>(t.data()),
                         static_cast<std::streamsize>(bytes)))
                throw ParseError("checkpoint: truncated payload for '" +
                                 name + "'");
        }
        return m;
    } catch (const nlohmann::json::exception &e) {
        throw ParseError(std::string("checkpoint: bad header field: ") +
                         e.what());
    }
}

inline Model load_checkpoint(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw ParseError("checkpoint: cannot open " + path);
    return load_checkpoint(in);
}

} // namespace gtn

#endif // GTN_CHECKPOINT_HPP
