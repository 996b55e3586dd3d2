#ifndef GTN_ORACLE_HPP
#define GTN_ORACLE_HPP

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "gtn/errors.hpp"
#include "gtn/tensor.hpp"

// Brute-force reference implementations: exhaustive contraction, factor-graph
// marginals, and exact RBM probabilities. Everything here is a literal loop;
// no reshaping tricks. These are the oracles the fast engine is tested
// against, so they must stay independent of the engine's contraction paths.

namespace gtn::oracle {

// Largest bound-index state space an oracle will enumerate before refusing.
inline constexpr long kStateSpaceGuard = 10000000;

// ---------------------------------------------------------------------------
// Factor graphs

struct Variable {
    long cardinality = 2;
    bool hidden = false;
};

struct Factor {
    std::vector<int> variables; // ids into FactorGraph::variables
    DenseTensor table;          // row-major over the listed variables' values
};

// Discrete factor graph. Factor entries must be nonnegative; Z is always
// computed by enumeration, never assumed.
struct FactorGraph {
    std::vector<Variable> variables;
    std::vector<Factor> factors;

    void validate() const {
        for (const auto &f : factors) {
            if (f.table.rank() != static_cast<long>(f.variables.size()))
                throw ValidationError("factor rank does not match its variable "
                                      "list");
            for (size_t a = 0; a < f.variables.size(); ++a) {
                int v = f.variables[a];
                if (v < 0 || v >= static_cast<int>(variables.size()))
                    throw ValidationError("factor references unknown variable v" +
                                          std::to_string(v));
                if (f.table.extent(a) != variables[v].cardinality)
                    throw ValidationError(
                        "factor extent " + std::to_string(f.table.extent(a)) +
                        " does not match cardinality of v" + std::to_string(v));
            }
            for (long i = 0; i < f.table.size(); ++i)
                if (f.table[i] < 0)
                    throw ValidationError("factor entries must be nonnegative");
        }
    }
};

namespace detail {

inline long product_guarded(const std::vector<long> &exts, const char *what) {
    long n = 1;
    for (long e : exts) {
        n *= e;
        if (n > kStateSpaceGuard)
            throw ResourceError(std::string(what) +
                                ": state space exceeds guard of " +
                                std::to_string(kStateSpaceGuard));
    }
    return n;
}

// Odometer over mixed radices. Returns false when the sweep is complete.
inline bool advance(std::vector<long> &idx, const std::vector<long> &ext) {
    for (int a = static_cast<int>(idx.size()) - 1; a >= 0; --a) {
        if (++idx[a] < ext[a])
            return true;
        idx[a] = 0;
    }
    return false;
}

} // namespace detail

// Unnormalized probability of a visible assignment: sum over all hidden
// assignments of the product of factor entries.
inline double fg_marginal(const FactorGraph &fg,
                          const std::vector<long> &visible_values) {
    fg.validate();
    std::vector<int> hidden_ids;
    std::vector<long> hidden_ext;
    std::vector<long> value(fg.variables.size(), 0);
    size_t vi = 0;
    for (size_t v = 0; v < fg.variables.size(); ++v) {
        if (fg.variables[v].hidden) {
            hidden_ids.push_back(static_cast<int>(v));
            hidden_ext.push_back(fg.variables[v].cardinality);
        } else {
            if (vi >= visible_values.size())
                throw InvalidArgumentError("fg_marginal: too few visible values");
            value[v] = visible_values[vi++];
            if (value[v] < 0 || value[v] >= fg.variables[v].cardinality)
                throw InvalidArgumentError("fg_marginal: visible value out of "
                                           "range");
        }
    }
    if (vi != visible_values.size())
        throw InvalidArgumentError("fg_marginal: too many visible values");
    detail::product_guarded(hidden_ext, "fg_marginal");

    std::vector<long> h(hidden_ids.size(), 0);
    double total = 0.0;
    do {
        for (size_t i = 0; i < hidden_ids.size(); ++i)
            value[hidden_ids[i]] = h[i];
        double prod = 1.0;
        for (const auto &f : fg.factors) {
            std::vector<long> idx(f.variables.size());
            for (size_t a = 0; a < f.variables.size(); ++a)
                idx[a] = value[f.variables[a]];
            prod *= f.table.at(idx);
        }
        total += prod;
    } while (detail::advance(h, hidden_ext));
    return total;
}

// Partition function: sum of fg_marginal over every visible assignment.
inline double fg_partition(const FactorGraph &fg) {
    std::vector<long> vis_ext;
    for (const auto &v : fg.variables)
        if (!v.hidden)
            vis_ext.push_back(v.cardinality);
    detail::product_guarded(vis_ext, "fg_partition");
    std::vector<long> x(vis_ext.size(), 0);
    double z = 0.0;
    do {
        z += fg_marginal(fg, x);
    } while (detail::advance(x, vis_ext));
    return z;
}

// ---------------------------------------------------------------------------
// Flat tensor networks

// A tensor network flattened to a list of tensors plus wiring. Repeating a
// tensor in the list encodes weight sharing. Every axis of every tensor sits
// in exactly one edge or one open leg.
struct FlatNetwork {
    struct Slot {
        int tensor;
        int axis;
    };
    std::vector<DenseTensor> tensors;
    std::vector<std::pair<Slot, Slot>> edges;
    std::vector<std::pair<Slot, int>> open_legs; // slot, site id

    long slot_extent(const Slot &s) const {
        return tensors[s.tensor].extent(s.axis);
    }

    void validate() const {
        std::vector<std::vector<int>> seen(tensors.size());
        for (size_t t = 0; t < tensors.size(); ++t)
            seen[t].assign(tensors[t].rank(), 0);
        auto touch = [&](const Slot &s) {
            if (s.tensor < 0 || s.tensor >= static_cast<int>(tensors.size()) ||
                s.axis < 0 || s.axis >= tensors[s.tensor].rank())
                throw ValidationError("FlatNetwork: slot out of range");
            if (seen[s.tensor][s.axis]++)
                throw ValidationError("FlatNetwork: axis used twice (tensor " +
                                      std::to_string(s.tensor) + " axis " +
                                      std::to_string(s.axis) + ")");
        };
        for (const auto &e : edges) {
            touch(e.first);
            touch(e.second);
            if (slot_extent(e.first) != slot_extent(e.second))
                throw ValidationError("FlatNetwork: edge extent mismatch");
        }
        for (const auto &l : open_legs)
            touch(l.first);
        for (size_t t = 0; t < tensors.size(); ++t)
            for (int a = 0; a < tensors[t].rank(); ++a)
                if (!seen[t][a])
                    throw ValidationError("FlatNetwork: dangling axis (tensor " +
                                          std::to_string(t) + " axis " +
                                          std::to_string(a) + ")");
    }
};

// Exhaustive contraction with the open legs fixed by `assignment`
// (site id -> value). A literal sum over all bound-index assignments of the
// product of tensor entries.
inline double brute_contract(const FlatNetwork &net,
                             const std::map<int, long> &assignment) {
    net.validate();
    std::vector<long> edge_ext;
    edge_ext.reserve(net.edges.size());
    for (const auto &e : net.edges)
        edge_ext.push_back(net.slot_extent(e.first));
    detail::product_guarded(edge_ext, "brute_contract");

    // value per (tensor, axis)
    std::vector<std::vector<long>> axis_value(net.tensors.size());
    for (size_t t = 0; t < net.tensors.size(); ++t)
        axis_value[t].assign(net.tensors[t].rank(), 0);
    for (const auto &l : net.open_legs) {
        auto it = assignment.find(l.second);
        if (it == assignment.end())
            throw InvalidArgumentError("brute_contract: open leg site " +
                                       std::to_string(l.second) +
                                       " has no assigned value");
        if (it->second < 0 || it->second >= net.slot_extent(l.first))
            throw InvalidArgumentError("brute_contract: assignment out of range "
                                       "for site " +
                                       std::to_string(l.second));
        axis_value[l.first.tensor][l.first.axis] = it->second;
    }

    std::vector<long> e(net.edges.size(), 0);
    double total = 0.0;
    do {
        for (size_t i = 0; i < net.edges.size(); ++i) {
            const auto &ed = net.edges[i];
            axis_value[ed.first.tensor][ed.first.axis] = e[i];
            axis_value[ed.second.tensor][ed.second.axis] = e[i];
        }
        double prod = 1.0;
        for (size_t t = 0; t < net.tensors.size(); ++t)
            prod *= net.tensors[t].at(axis_value[t]);
        total += prod;
    } while (detail::advance(e, edge_ext));
    return total;
}

// ---------------------------------------------------------------------------
// Factor graph -> tensor network duality

// Build the dual tensor network of a factor graph: one tensor per factor,
// copy tensors for variables of degree >= 2, contracted all-ones vectors for
// degree-1 hidden variables, open legs for visible variables.
inline FlatNetwork fg_to_tn(const FactorGraph &fg) {
    fg.validate();
    FlatNetwork net;
    net.tensors.reserve(fg.factors.size());
    // slots that reference each variable, in factor order
    std::vector<std::vector<FlatNetwork::Slot>> var_slots(fg.variables.size());
    for (size_t f = 0; f < fg.factors.size(); ++f) {
        net.tensors.push_back(fg.factors[f].table);
        for (size_t a = 0; a < fg.factors[f].variables.size(); ++a)
            var_slots[fg.factors[f].variables[a]].push_back(
                {static_cast<int>(f), static_cast<int>(a)});
    }
    for (size_t v = 0; v < fg.variables.size(); ++v) {
        const auto &slots = var_slots[v];
        const long card = fg.variables[v].cardinality;
        const bool hidden = fg.variables[v].hidden;
        const int deg = static_cast<int>(slots.size());
        if (deg == 0) {
            // unused variable: hidden one contributes a factor card to every
            // marginal; visible one is a free open leg
            if (hidden) {
                net.tensors.push_back(DenseTensor::scalar(double(card)));
            } else {
                net.tensors.push_back(
                    DenseTensor({card}, std::vector<double>(card, 1.0)));
                net.open_legs.push_back(
                    {{static_cast<int>(net.tensors.size()) - 1, 0},
                     static_cast<int>(v)});
            }
            continue;
        }
        if (hidden && deg == 1) {
            // marginalizing a leaf hidden variable sums its factor axis
            net.tensors.push_back(
                DenseTensor({card}, std::vector<double>(card, 1.0)));
            net.edges.push_back(
                {slots[0], {static_cast<int>(net.tensors.size()) - 1, 0}});
            continue;
        }
        if (!hidden && deg == 1) {
            net.open_legs.push_back({slots[0], static_cast<int>(v)});
            continue;
        }
        // degree >= 2: insert a copy tensor; visible variables get one extra
        // axis exposed as the open leg
        const int order = deg + (hidden ? 0 : 1);
        net.tensors.push_back(copy_tensor(order, card));
        const int ct = static_cast<int>(net.tensors.size()) - 1;
        for (int i = 0; i < deg; ++i)
            net.edges.push_back({slots[i], {ct, i}});
        if (!hidden)
            net.open_legs.push_back({{ct, deg}, static_cast<int>(v)});
    }
    return net;
}

// ---------------------------------------------------------------------------
// Restricted Boltzmann machines (no bias terms)

// Fast form of the marginalized RBM: p~(x) = prod_i (1 + e^{sum_j w_ij x_j}).
inline double rbm_prob(const DenseTensor &w, const std::vector<long> &x) {
    if (w.rank() != 2)
        throw DimensionError("rbm_prob: weights must be a matrix");
    const long m = w.extent(0), n = w.extent(1);
    if (static_cast<long>(x.size()) != n)
        throw InvalidArgumentError("rbm_prob: input length " +
                                   std::to_string(x.size()) + " != " +
                                   std::to_string(n));
    double p = 1.0;
    for (long i = 0; i < m; ++i) {
        double field = 0.0;
        for (long j = 0; j < n; ++j)
            field += w.at({i, j}) * static_cast<double>(x[j]);
        p *= 1.0 + std::exp(field);
    }
    return p;
}

// Slow cross-check: p~(x) = sum_h e^{sum_ij w_ij h_i x_j} over all 2^M h.
inline double rbm_prob_slow(const DenseTensor &w, const std::vector<long> &x) {
    const long m = w.extent(0), n = w.extent(1);
    if (m > 40)
        throw ResourceError("rbm_prob_slow: too many hidden units");
    double total = 0.0;
    for (std::uint64_t h = 0; h < (1ull << m); ++h) {
        double energy = 0.0;
        for (long i = 0; i < m; ++i)
            if (h >> i & 1)
                for (long j = 0; j < n; ++j)
                    energy += w.at({i, j}) * static_cast<double>(x[j]);
        total += std::exp(energy);
    }
    return total;
}

// Partition function by enumerating all 2^N visible configurations.
inline double rbm_partition(const DenseTensor &w) {
    const long n = w.extent(1);
    if (n > 20)
        throw ResourceError("rbm_partition: more than 20 visible units");
    double z = 0.0;
    std::vector<long> x(n, 0);
    for (std::uint64_t v = 0; v < (1ull << n); ++v) {
        for (long j = 0; j < n; ++j)
            x[j] = v >> j & 1;
        z += rbm_prob(w, x);
    }
    return z;
}

// Factor graph of an RBM: one binary visible variable per column, one binary
// hidden per row, one factor e^{w_ij h x} per weight.
inline FactorGraph rbm_factor_graph(const DenseTensor &w) {
    const long m = w.extent(0), n = w.extent(1);
    FactorGraph fg;
    for (long j = 0; j < n; ++j)
        fg.variables.push_back({2, false});
    for (long i = 0; i < m; ++i)
        fg.variables.push_back({2, true});
    for (long i = 0; i < m; ++i)
        for (long j = 0; j < n; ++j) {
            Factor f;
            f.variables = {static_cast<int>(j), static_cast<int>(n + i)};
            f.table = DenseTensor({2, 2});
            for (long x = 0; x < 2; ++x)
                for (long h = 0; h < 2; ++h)
                    f.table.at({x, h}) =
                        std::exp(w.at({i, j}) * double(h) * double(x));
            fg.factors.push_back(std::move(f));
        }
    return fg;
}

// ---------------------------------------------------------------------------
// Factor graph text format
//
//   variables <n>
//   v<id> card=<c> <visible|hidden>
//   factor v<i> v<j> ...
//   <row-major entries, whitespace separated>

inline FactorGraph parse_factor_graph(std::istream &in) {
    FactorGraph fg;
    std::string tok;
    if (!(in >> tok) || tok != "variables")
        throw ParseError("factor graph: expected 'variables' header");
    long n = 0;
    if (!(in >> n) || n < 0)
        throw ParseError("factor graph: bad variable count");
    fg.variables.resize(n);
    for (long i = 0; i < n; ++i) {
        std::string name, card, vis;
        if (!(in >> name >> card >> vis))
            throw ParseError("factor graph: truncated variable line");
        if (name != "v" + std::to_string(i))
            throw ParseError("factor graph: expected v" + std::to_string(i) +
                             ", got " + name);
        if (card.rfind("card=", 0) != 0)
            throw ParseError("factor graph: expected card=<c>, got " + card);
        try {
            fg.variables[i].cardinality = std::stol(card.substr(5));
        } catch (const std::exception &) {
            throw ParseError("factor graph: bad cardinality in " + card);
        }
        if (vis == "hidden")
            fg.variables[i].hidden = true;
        else if (vis != "visible")
            throw ParseError("factor graph: expected visible|hidden, got " +
                             vis);
    }
    while (in >> tok) {
        if (tok != "factor")
            throw ParseError("factor graph: expected 'factor', got " + tok);
        Factor f;
        // variable ids until a token that is not v<digit>
        std::vector<long> shape;
        while (in >> tok) {
            if (tok.size() > 1 && tok[0] == 'v' &&
                std::isdigit(static_cast<unsigned char>(tok[1]))) {
                int id = std::stoi(tok.substr(1));
                if (id < 0 || id >= static_cast<int>(fg.variables.size()))
                    throw ParseError("factor graph: unknown variable " + tok);
                f.variables.push_back(id);
                shape.push_back(fg.variables[id].cardinality);
            } else {
                break;
            }
        }
        if (f.variables.empty())
            throw ParseError("factor graph: factor with no variables");
        long count = 1;
        for (long e : shape)
            count *= e;
        std::vector<double> entries;
        entries.reserve(count);
        // first non-variable token is already the first entry
        try {
            entries.push_back(std::stod(tok));
        } catch (const std::exception &) {
            throw ParseError("factor graph: expected factor entry, got " + tok);
        }
        double v;
        while (static_cast<long>(entries.size()) < count && in >> v)
            entries.push_back(v);
        if (static_cast<long>(entries.size()) != count)
            throw ParseError("factor graph: factor needs " +
                             std::to_string(count) + " entries, got " +
                             std::to_string(entries.size()));
        f.table = DenseTensor(shape, std::move(entries));
        fg.factors.push_back(std::move(f));
    }
    fg.validate();
    return fg;
}

inline FactorGraph load_factor_graph(const std::string &path) {
    std::ifstream in(path);
    if (!in)
        throw ParseError("cannot open factor graph file " + path);
    return parse_factor_graph(in);
}

inline void write_factor_graph(std::ostream &out, const FactorGraph &fg) {
    out << "variables " << fg.variables.size() << "\n";
    for (size_t i = 0; i < fg.variables.size(); ++i)
        out << "v" << i << " card=" << fg.variables[i].cardinality << " "
            << (fg.variables[i].hidden ? "hidden" : "visible") << "\n";
    out.precision(17);
    for (const auto &f : fg.factors) {
        out << "factor";
        for (int v : f.variables)
            out << " v" << v;
        out << "\n";
        for (long i = 0; i < f.table.size(); ++i)
            out << f.table[i] << (i + 1 == f.table.size() ? "\n" : " ");
    }
}

} // namespace gtn::oracle

#endif // GTN_ORACLE_HPP
