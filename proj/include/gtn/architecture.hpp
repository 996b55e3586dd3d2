#ifndef GTN_ARCHITECTURE_HPP
#define GTN_ARCHITECTURE_HPP

#include <array>
#include <string>
#include <vector>

#include <json.hpp>

#include "gtn/errors.hpp"
#include "gtn/feature_map.hpp"

namespace gtn {

enum class Kind {
    mps,        // single open chain over all sites
    eps_linear, // overlapping plaquettes feeding a linear head
    sbs_2d,     // closed strings over every row and every column
    sbs_snake,  // 4 boustrophedon closed strings covering the grid
    eps_sbs,    // plaquette layer whose outputs feed a snake SBS
    rbm_sbs,    // RBM weights realized as diagonal-matrix strings
};

inline std::string to_string(Kind k) {
    switch (k) {
    case Kind::mps: return "mps";
    case Kind::eps_linear: return "eps-linear";
    case Kind::sbs_2d: return "sbs-2d";
    case Kind::sbs_snake: return "sbs-snake";
    case Kind::eps_sbs: return "eps-sbs";
    case Kind::rbm_sbs: return "rbm-sbs";
    }
    throw InvalidArgumentError("unknown architecture kind");
}

inline Kind kind_from_string(const std::string &s) {
    if (s == "mps") return Kind::mps;
    if (s == "eps-linear") return Kind::eps_linear;
    if (s == "sbs-2d") return Kind::sbs_2d;
    if (s == "sbs-snake") return Kind::sbs_snake;
    if (s == "eps-sbs") return Kind::eps_sbs;
    if (s == "rbm-sbs") return Kind::rbm_sbs;
    throw ValidationError("kind: unknown architecture '" + s + "'");
}

// Which tensor carries the class axis: a string index and a position along
// that string. pos = -1 resolves to the middle of the string at build time.
struct LabelSite {
    int string = 0;
    int pos = -1;
};

// Input embedding configuration (architecture-level view of FeatureMap).
struct FeatureSpec {
    FeatureKind kind = FeatureKind::trig_squared;
    int bins = 16;
    bool per_site = false;
};

struct ArchitectureSpec {
    Kind kind = Kind::mps;
    int grid_h = 1;
    int grid_w = 1;
    int bond_dim = 2;
    int feature_dim = 2;
    int num_classes = 2;
    int plaq_h = 2;
    int plaq_w = 2;
    int eps_out_dim = 2;
    LabelSite label_site;
    bool share_plaquettes = true;
    int num_strings = 2; // rbm-sbs only: number of strings M
    FeatureSpec features;

    long num_sites() const { return static_cast<long>(grid_h) * grid_w; }
    bool has_eps_layer() const {
        return kind == Kind::eps_linear || kind == Kind::eps_sbs;
    }

    void validate() const {
        auto fail = [](const std::string &msg) { throw ValidationError(msg); };
        if (grid_h < 1 || grid_w < 1)
            fail("grid: dimensions must be positive, got (" +
                 std::to_string(grid_h) + "," + std::to_string(grid_w) + ")");
        if (bond_dim < 1)
            fail("bond_dim: must be >= 1, got " + std::to_string(bond_dim));
        if (kind == Kind::rbm_sbs && bond_dim != 2)
            fail("bond_dim: rbm-sbs requires bond_dim = 2, got " +
                 std::to_string(bond_dim));
        if (feature_dim < 1)
            fail("feature_dim: must be >= 1, got " +
                 std::to_string(feature_dim));
        if (kind == Kind::rbm_sbs && feature_dim != 2)
            fail("feature_dim: rbm-sbs requires feature_dim = 2, got " +
                 std::to_string(feature_dim));
        if (num_classes < 1)
            fail("num_classes: must be >= 1, got " +
                 std::to_string(num_classes));
        if (has_eps_layer()) {
            if (plaq_h < 1 || plaq_w < 1)
                fail("plaquette: dimensions must be positive, got (" +
                     std::to_string(plaq_h) + "," + std::to_string(plaq_w) +
                     ")");
            if (plaq_h > grid_h || plaq_w > grid_w)
                fail("plaquette: (" + std::to_string(plaq_h) + "," +
                     std::to_string(plaq_w) + ") exceeds grid (" +
                     std::to_string(grid_h) + "," + std::to_string(grid_w) +
                     ")");
            if (eps_out_dim < 1)
                fail("eps_out_dim: must be >= 1, got " +
                     std::to_string(eps_out_dim));
        }
        if (kind == Kind::rbm_sbs && num_strings < 1)
            fail("num_strings: must be >= 1, got " +
                 std::to_string(num_strings));
        if (label_site.string < 0)
            fail("label_site: string index must be >= 0");
        if (features.kind == FeatureKind::learnable_table && features.bins < 1)
            fail("features: bins must be >= 1, got " +
                 std::to_string(features.bins));
    }
};

// Four snake coverings of an H x W grid: row boustrophedon, column
// boustrophedon, and their reverses. Together they place every pair of
// grid-adjacent sites next to each other in at least one ordering.
inline std::array<std::vector<int>, 4> snake_orderings(int H, int W) {
    if (H < 1 || W < 1)
        throw InvalidArgumentError("snake_orderings: grid must be positive");
    std::array<std::vector<int>, 4> out;
    for (int r = 0; r < H; ++r) {
        if (r % 2 == 0)
            for (int c = 0; c < W; ++c)
                out[0].push_back(r * W + c);
        else
            for (int c = W - 1; c >= 0; --c)
                out[0].push_back(r * W + c);
    }
    for (int c = 0; c < W; ++c) {
        if (c % 2 == 0)
            for (int r = 0; r < H; ++r)
                out[1].push_back(r * W + c);
        else
            for (int r = H - 1; r >= 0; --r)
                out[1].push_back(r * W + c);
    }
    out[2] = std::vector<int>(out[0].rbegin(), out[0].rend());
    out[3] = std::vector<int>(out[1].rbegin(), out[1].rend());
    return out;
}

// Stride-1 tiling of an H x W grid by h x w plaquettes. Each plaquette lists
// its site indices in row-major order; plaquettes are emitted row-major, so
// the output forms an (H-h+1) x (W-w+1) grid.
inline std::vector<std::vector<int>> eps_layout(int H, int W, int h = 2,
                                                int w = 2) {
    if (h < 1 || w < 1 || h > H || w > W)
        throw ValidationError("plaquette: (" + std::to_string(h) + "," +
                              std::to_string(w) + ") does not fit grid (" +
                              std::to_string(H) + "," + std::to_string(W) +
                              ")");
    std::vector<std::vector<int>> out;
    out.reserve(static_cast<size_t>(H - h + 1) * (W - w + 1));
    for (int r = 0; r + h <= H; ++r)
        for (int c = 0; c + w <= W; ++c) {
            std::vector<int> sites;
            sites.reserve(static_cast<size_t>(h) * w);
            for (int i = 0; i < h; ++i)
                for (int j = 0; j < w; ++j)
                    sites.push_back((r + i) * W + (c + j));
            out.push_back(std::move(sites));
        }
    return out;
}

// JSON (de)serialization. nlohmann::json keeps keys sorted, which makes the
// serialized form byte-stable for checkpoints.

inline nlohmann::json to_json(const ArchitectureSpec &s) {
    nlohmann::json j;
    j["kind"] = to_string(s.kind);
    if (s.grid_h == 1)
        j["grid"] = s.grid_w;
    else
        j["grid"] = {s.grid_h, s.grid_w};
    j["bond_dim"] = s.bond_dim;
    j["feature_dim"] = s.feature_dim;
    j["num_classes"] = s.num_classes;
    if (s.has_eps_layer()) {
        j["plaquette"] = {s.plaq_h, s.plaq_w};
        j["eps_out_dim"] = s.eps_out_dim;
        j["share_plaquettes"] = s.share_plaquettes;
    }
    if (s.kind == Kind::rbm_sbs)
        j["num_strings"] = s.num_strings;
    if (s.kind != Kind::eps_linear)
        j["label_site"] = {{"string", s.label_site.string},
                           {"pos", s.label_site.pos}};
    j["features"] = {{"kind", to_string(s.features.kind)},
                     {"bins", s.features.bins},
                     {"per_site", s.features.per_site}};
    return j;
}

namespace detail {

inline void reject_unknown_keys(const nlohmann::json &j,
                                std::initializer_list<const char *> known,
                                const std::string &where) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char *k : known)
            if (it.key() == k) {
                ok = true;
                break;
            }
        if (!ok)
            throw ValidationError(where + ": unknown key '" + it.key() + "'");
    }
}

} // namespace detail

inline ArchitectureSpec architecture_from_json(const nlohmann::json &j) {
    if (!j.is_object())
        throw ValidationError("architecture: expected a JSON object");
    detail::reject_unknown_keys(
        j,
        {"kind", "grid", "bond_dim", "feature_dim", "num_classes", "plaquette",
         "eps_out_dim", "label_site", "share_plaquettes", "num_strings",
         "features"},
        "architecture");
    ArchitectureSpec s;
    try {
        if (!j.contains("kind"))
            throw ValidationError("kind: missing");
        s.kind = kind_from_string(j.at("kind").get<std::string>());
        if (!j.contains("grid"))
            throw ValidationError("grid: missing");
        const auto &g = j.at("grid");
        if (g.is_number_integer()) {
            s.grid_h = 1;
            s.grid_w = g.get<int>();
        } else if (g.is_array() && g.size() == 2) {
            s.grid_h = g.at(0).get<int>();
            s.grid_w = g.at(1).get<int>();
        } else {
            throw ValidationError("grid: expected integer N or [H, W]");
        }
        if (j.contains("bond_dim"))
            s.bond_dim = j.at("bond_dim").get<int>();
        if (j.contains("feature_dim"))
            s.feature_dim = j.at("feature_dim").get<int>();
        if (!j.contains("num_classes"))
            throw ValidationError("num_classes: missing");
        s.num_classes = j.at("num_classes").get<int>();
        if (j.contains("plaquette")) {
            const auto &p = j.at("plaquette");
            if (!p.is_array() || p.size() != 2)
                throw ValidationError("plaquette: expected [h, w]");
            s.plaq_h = p.at(0).get<int>();
            s.plaq_w = p.at(1).get<int>();
        }
        if (j.contains("eps_out_dim"))
            s.eps_out_dim = j.at("eps_out_dim").get<int>();
        if (j.contains("share_plaquettes"))
            s.share_plaquettes = j.at("share_plaquettes").get<bool>();
        if (j.contains("num_strings"))
            s.num_strings = j.at("num_strings").get<int>();
        if (j.contains("label_site")) {
            const auto &l = j.at("label_site");
            detail::reject_unknown_keys(l, {"string", "pos"}, "label_site");
            if (l.contains("string"))
                s.label_site.string = l.at("string").get<int>();
            if (l.contains("pos"))
                s.label_site.pos = l.at("pos").get<int>();
        }
        if (j.contains("features")) {
            const auto &f = j.at("features");
            detail::reject_unknown_keys(f, {"kind", "bins", "per_site"},
                                        "features");
            if (f.contains("kind"))
                s.features.kind =
                    feature_kind_from_string(f.at("kind").get<std::string>());
            if (f.contains("bins"))
                s.features.bins = f.at("bins").get<int>();
            if (f.contains("per_site"))
                s.features.per_site = f.at("per_site").get<bool>();
        }
    } catch (const nlohmann::json::exception &e) {
        throw ValidationError(std::string("architecture: ") + e.what());
    }
    s.validate();
    return s;
}

} // namespace gtn

#endif // GTN_ARCHITECTURE_HPP
