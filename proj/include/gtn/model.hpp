#ifndef GTN_MODEL_HPP
#define GTN_MODEL_HPP

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "gtn/architecture.hpp"
#include "gtn/errors.hpp"
#include "gtn/feature_map.hpp"
#include "gtn/tensor.hpp"

namespace gtn {

// One MPS along an ordered subset of sites. A site entry of -1 marks a pure
// label slot (a matrix carrying only the class axis, used by rbm-sbs where
// site matrices are derived from the weight matrix and have no room for K).
struct StringLayout {
    std::vector<int> sites;  // visiting order; -1 = inserted label slot
    bool closed = true;      // trace boundary vs 1-dim open boundary
    std::vector<int> params; // registry index per slot; -1 = derived from w
    int label_pos = -1;      // slot whose tensor carries the leading K axis
    int rbm_row = -1;        // row of the weight matrix (rbm-sbs strings)

    long length() const { return static_cast<long>(sites.size()); }
};

// Overlapping-plaquette layer: each plaquette contracts the tensor product of
// its sites' feature vectors with a [in_dim^(h*w), out_dim] tensor.
struct EpsLayer {
    std::vector<std::vector<int>> plaquettes;
    std::vector<int> params; // registry index per plaquette (shared = equal)
    int out_h = 0, out_w = 0;
    int in_dim = 0;
    int out_dim = 0;

    bool empty() const { return plaquettes.empty(); }
    long size() const { return static_cast<long>(plaquettes.size()); }
};

// A parameterized network: layout plus a flat named parameter registry. The
// learnable feature table lives inside feature_map but is registered like any
// other parameter; param()/param_mut() dispatch to it.
class Model {
  public:
    ArchitectureSpec spec;
    FeatureMap feature_map;
    bool positive = false; // parameters store logs; forward uses exp
    std::vector<StringLayout> strings;
    EpsLayer eps;
    int label_string = -1; // -1 when the head carries the classes
    int label_param = -1;
    int feature_param = -1;
    int head_w_param = -1;
    int head_b_param = -1;
    int rbm_w_param = -1;

    int num_params() const { return static_cast<int>(names_.size()); }
    const std::string &param_name(int i) const { return names_[i]; }
    const DenseTensor &param(int i) const {
        return i == feature_param ? feature_map.table : store_[i];
    }
    DenseTensor &param_mut(int i) {
        return i == feature_param ? feature_map.table : store_[i];
    }
    long num_scalars() const {
        long n = 0;
        for (int i = 0; i < num_params(); ++i)
            n += param(i).size();
        return n;
    }

    int add_param(const std::string &name, DenseTensor t) {
        names_.push_back(name);
        store_.push_back(std::move(t));
        return static_cast<int>(names_.size()) - 1;
    }
    // Placeholder slot whose storage is feature_map.table.
    int add_feature_param(const std::string &name) {
        names_.push_back(name);
        store_.emplace_back();
        feature_param = static_cast<int>(names_.size()) - 1;
        return feature_param;
    }

    // Input dimension seen by the strings: plaquette outputs for composites,
    // raw feature vectors otherwise.
    int string_in_dim() const {
        return (!eps.empty() && !strings.empty()) ? eps.out_dim
                                                  : spec.feature_dim;
    }
    long num_string_sites() const {
        return (!eps.empty() && !strings.empty()) ? eps.size()
                                                  : spec.num_sites();
    }

    void check_layout() const {
        for (size_t s = 0; s < strings.size(); ++s) {
            const StringLayout &st = strings[s];
            if (st.params.size() != st.sites.size())
                throw ValidationError("string " + std::to_string(s) +
                                      ": params/sites size mismatch");
            std::vector<int> seen;
            for (int v : st.sites) {
                if (v == -1)
                    continue;
                if (v < 0 || v >= num_string_sites())
                    throw ValidationError("string " + std::to_string(s) +
                                          ": site " + std::to_string(v) +
                                          " out of range");
                for (int u : seen)
                    if (u == v)
                        throw ValidationError("string " + std::to_string(s) +
                                              ": duplicate site " +
                                              std::to_string(v));
                seen.push_back(v);
            }
            if (st.label_pos >= 0 &&
                st.label_pos >= static_cast<int>(st.sites.size()))
                throw ValidationError("string " + std::to_string(s) +
                                      ": label_pos out of range");
        }
    }

  private:
    std::vector<std::string> names_;
    std::vector<DenseTensor> store_;
};

namespace detail {

// Each feature slice of a site tensor starts at the rectangular identity
// (scaled by `diag`) plus i.i.d. Gaussian noise. Both scales shrink with the
// host string's length so the initial trace of the n-site product stays near
// one and class scores keep a softmax-friendly magnitude at any grid size.
inline DenseTensor init_site(long d, long dl, long dr, double diag,
                             double sigma, std::mt19937_64 &rng) {
    std::normal_distribution<double> g(0.0, sigma);
    DenseTensor t({d, dl, dr});
    double *p = t.data();
    for (long f = 0; f < d; ++f)
        for (long a = 0; a < dl; ++a)
            for (long b = 0; b < dr; ++b)
                *p++ = (a == b ? diag : 0.0) + g(rng);
    return t;
}

// One draw replicated across the class axis so the initial scores are
// label-independent.
inline DenseTensor replicate_label(const DenseTensor &base, long k) {
    std::vector<long> shape;
    shape.push_back(k);
    for (int i = 0; i < base.rank(); ++i)
        shape.push_back(base.extent(i));
    DenseTensor t(shape);
    for (long c = 0; c < k; ++c)
        std::copy(base.data(), base.data() + base.size(),
                  t.data() + c * base.size());
    return t;
}

inline int resolve_label_pos(int requested, long length,
                             const std::string &what) {
    if (requested < 0)
        return static_cast<int>(length / 2);
    if (requested >= length)
        throw ValidationError("label_site: pos " + std::to_string(requested) +
                              " out of range for " + what + " of length " +
                              std::to_string(length));
    return requested;
}

inline void build_eps_layer(Model &m, std::mt19937_64 &rng) {
    const ArchitectureSpec &s = m.spec;
    EpsLayer &e = m.eps;
    e.plaquettes = eps_layout(s.grid_h, s.grid_w, s.plaq_h, s.plaq_w);
    e.out_h = s.grid_h - s.plaq_h + 1;
    e.out_w = s.grid_w - s.plaq_w + 1;
    e.in_dim = s.feature_dim;
    e.out_dim = s.eps_out_dim;
    long rho = 1;
    for (int i = 0; i < s.plaq_h * s.plaq_w; ++i)
        rho *= s.feature_dim;
    std::normal_distribution<double> g(0.0, 0.1);
    auto make = [&]() {
        DenseTensor t({rho, static_cast<long>(e.out_dim)});
        for (long i = 0; i < t.size(); ++i)
            t.data()[i] = (1.0 + g(rng)) / e.out_dim;
        return t;
    };
    if (s.share_plaquettes) {
        const int p = m.add_param("plaquette", make());
        e.params.assign(e.plaquettes.size(), p);
    } else {
        for (size_t i = 0; i < e.plaquettes.size(); ++i)
            e.params.push_back(
                m.add_param("plaquette" + std::to_string(i), make()));
    }
}

// Registers site tensors for a list of string layouts over a grid of
// `in_dim`-dimensional inputs and installs the shared label tensor.
inline void build_strings(Model &m, std::vector<StringLayout> layouts,
                          long in_dim, std::mt19937_64 &rng) {
    const ArchitectureSpec &s = m.spec;
    const long D = s.bond_dim;

    if (s.label_site.string >= static_cast<int>(layouts.size()))
        throw ValidationError(
            "label_site: string " + std::to_string(s.label_site.string) +
            " out of range (model has " + std::to_string(layouts.size()) +
            " strings)");
    m.label_string = s.label_site.string;

    for (size_t si = 0; si < layouts.size(); ++si) {
        StringLayout &st = layouts[si];
        const long n = st.length();
        const double diag =
            std::pow(static_cast<double>(st.closed ? D : 1), -1.0 / n);
        const double sigma = 1.0 / std::sqrt(static_cast<double>(D * n));
        st.params.assign(st.sites.size(), -1);
        if (static_cast<int>(si) == m.label_string)
            st.label_pos = resolve_label_pos(s.label_site.pos, n,
                                             "string " + std::to_string(si));
        for (long j = 0; j < n; ++j) {
            const long dl = st.closed ? D : (j == 0 ? 1 : D);
            const long dr = st.closed ? D : (j == n - 1 ? 1 : D);
            if (j == st.label_pos) {
                DenseTensor base = init_site(in_dim, dl, dr, diag, sigma, rng);
                st.params[j] = m.add_param(
                    "label", replicate_label(base, s.num_classes));
                m.label_param = st.params[j];
            } else {
                st.params[j] = m.add_param(
                    "string" + std::to_string(si) + "/pos" + std::to_string(j),
                    init_site(in_dim, dl, dr, diag, sigma, rng));
            }
        }
    }
    m.strings = std::move(layouts);
}

} // namespace detail

// Materializes an architecture into a freshly initialized model. All random
// draws come from one mt19937_64 stream in registry order, so equal seeds
// give equal parameters.
inline Model build(const ArchitectureSpec &spec, std::uint64_t seed) {
    spec.validate();
    Model m;
    m.spec = spec;
    std::mt19937_64 rng(seed);

    const int H = spec.grid_h, W = spec.grid_w;
    const long N = spec.num_sites();

    switch (spec.kind) {
    case Kind::mps: {
        StringLayout st;
        st.closed = false;
        for (long j = 0; j < N; ++j)
            st.sites.push_back(static_cast<int>(j));
        detail::build_strings(m, {st}, spec.feature_dim, rng);
        break;
    }
    case Kind::sbs_2d: {
        std::vector<StringLayout> ls;
        for (int r = 0; r < H; ++r) {
            StringLayout st;
            for (int c = 0; c < W; ++c)
                st.sites.push_back(r * W + c);
            ls.push_back(std::move(st));
        }
        for (int c = 0; c < W; ++c) {
            StringLayout st;
            for (int r = 0; r < H; ++r)
                st.sites.push_back(r * W + c);
            ls.push_back(std::move(st));
        }
        detail::build_strings(m, std::move(ls), spec.feature_dim, rng);
        break;
    }
    case Kind::sbs_snake: {
        std::vector<StringLayout> ls;
        for (const auto &ord : snake_orderings(H, W)) {
            StringLayout st;
            st.sites = ord;
            ls.push_back(std::move(st));
        }
        detail::build_strings(m, std::move(ls), spec.feature_dim, rng);
        break;
    }
    case Kind::eps_linear: {
        detail::build_eps_layer(m, rng);
        const long p_out = m.eps.size() * m.eps.out_dim;
        m.head_w_param = m.add_param(
            "head/w", DenseTensor({static_cast<long>(spec.num_classes), p_out}));
        m.head_b_param = m.add_param(
            "head/b", DenseTensor({static_cast<long>(spec.num_classes)}));
        break;
    }
    case Kind::eps_sbs: {
        detail::build_eps_layer(m, rng);
        std::vector<StringLayout> ls;
        for (const auto &ord : snake_orderings(m.eps.out_h, m.eps.out_w)) {
            StringLayout st;
            st.sites = ord;
            ls.push_back(std::move(st));
        }
        detail::build_strings(m, std::move(ls), m.eps.out_dim, rng);
        break;
    }
    case Kind::rbm_sbs: {
        const long M = spec.num_strings;
        std::normal_distribution<double> g(0.0, 0.1);
        DenseTensor w({M, N});
        for (long i = 0; i < w.size(); ++i)
            w.data()[i] = g(rng);
        m.rbm_w_param = m.add_param("rbm/w", std::move(w));

        if (spec.label_site.string >= M)
            throw ValidationError(
                "label_site: string " + std::to_string(spec.label_site.string) +
                " out of range (model has " + std::to_string(M) + " strings)");
        m.label_string = spec.label_site.string;
        const int ins = detail::resolve_label_pos(spec.label_site.pos, N + 1,
                                                  "rbm string");
        for (long si = 0; si < M; ++si) {
            StringLayout st;
            st.closed = true;
            st.rbm_row = static_cast<int>(si);
            for (long j = 0; j < N; ++j)
                st.sites.push_back(static_cast<int>(j));
            st.params.assign(st.sites.size(), -1);
            if (si == m.label_string) {
                st.sites.insert(st.sites.begin() + ins, -1);
                std::normal_distribution<double> gl(0.0, 0.05);
                DenseTensor base({2, 2});
                for (long a = 0; a < 2; ++a)
                    for (long b = 0; b < 2; ++b)
                        base.at({a, b}) = (a == b ? 1.0 : 0.0) + gl(rng);
                m.label_param = m.add_param(
                    "label", detail::replicate_label(base, spec.num_classes));
                st.params.insert(st.params.begin() + ins, m.label_param);
                st.label_pos = ins;
            }
            m.strings.push_back(std::move(st));
        }
        break;
    }
    }

    if (spec.features.kind == FeatureKind::learnable_table) {
        m.feature_map = FeatureMap::learnable(
            spec.feature_dim, spec.features.bins, rng, spec.features.per_site,
            spec.num_sites());
        m.add_feature_param("features/table");
    } else {
        m.feature_map = FeatureMap::fixed(spec.features.kind);
    }

    m.check_layout();
    return m;
}

inline Model compose_eps_sbs(const ArchitectureSpec &spec, std::uint64_t seed) {
    if (spec.kind != Kind::eps_sbs)
        throw InvalidArgumentError("compose_eps_sbs: spec.kind must be eps-sbs");
    return build(spec, seed);
}

// Wraps an RBM weight matrix as an SBS: one closed string per hidden unit,
// site matrices diag(1, e^{w_sj x_j}) realized as a d=2 tensor whose slice 0
// is the identity and slice 1 is diag(1, e^{w_sj}). With one-hot features at
// binary inputs the contraction reproduces prod_s (1 + e^{sum_j w_sj x_j}).
inline Model rbm_to_sbs(const DenseTensor &w) {
    if (w.rank() != 2)
        throw InvalidArgumentError("rbm_to_sbs: weights must be a matrix");
    const long M = w.extent(0), N = w.extent(1);
    ArchitectureSpec spec;
    spec.kind = Kind::rbm_sbs;
    spec.grid_h = 1;
    spec.grid_w = static_cast<int>(N);
    spec.bond_dim = 2;
    spec.feature_dim = 2;
    spec.num_classes = 1;
    spec.num_strings = static_cast<int>(M);
    spec.label_site = {0, 0};
    spec.features.kind = FeatureKind::trig_squared;

    Model m = build(spec, 0);
    m.param_mut(m.rbm_w_param) = w;
    DenseTensor &lab = m.param_mut(m.label_param);
    lab.fill(0.0);
    lab.at({0, 0, 0}) = 1.0;
    lab.at({0, 1, 1}) = 1.0;
    return m;
}

} // namespace gtn

#endif // GTN_MODEL_HPP
