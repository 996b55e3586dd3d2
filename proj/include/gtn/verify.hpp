#ifndef GTN_VERIFY_HPP
#define GTN_VERIFY_HPP

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "gtn/architecture.hpp"
#include "gtn/eval.hpp"
#include "gtn/model.hpp"
#include "gtn/oracle.hpp"
#include "gtn/train.hpp"

// Property battery cross-checking the fast evaluator against brute-force
// oracles. Everything here recomputes values along an independent route
// (enumeration, literal index sums, finite differences) and compares.

namespace gtn::verify {

enum class Scale { small_run, full_run };

struct CheckResult {
    std::string name;
    bool pass = false;
    std::string detail;
};

struct Report {
    std::vector<CheckResult> checks;

    bool all_pass() const {
        for (const auto &c : checks)
            if (!c.pass)
                return false;
        return true;
    }
    const CheckResult *find(const std::string &name) const {
        for (const auto &c : checks)
            if (c.name == name)
                return &c;
        return nullptr;
    }
};

struct Options {
    Scale scale = Scale::small_run;
    std::uint64_t seed = 1234;
};

namespace detail {

inline double rel_diff(double a, double b, double floor_ = 1e-300) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor_});
}

inline std::string fmt(double v) {
    std::ostringstream os;
    os.precision(6);
    os << v;
    return os.str();
}

} // namespace detail

// ---------------------------------------------------------------------------
// Finite-difference gradients

// Central differences on the stored parameters (the logs when the positive
// reparameterization is active), matching what Evaluator::gradient reports.
inline std::vector<DenseTensor> fd_gradient(Model &m, const Dataset &ds,
                                            const std::vector<long> &idx,
                                            double step = 1e-5) {
    Evaluator ev(m);
    std::vector<DenseTensor> g;
    g.reserve(m.num_params());
    for (int i = 0; i < m.num_params(); ++i)
        g.emplace_back(m.param(i).shape());
    for (int i = 0; i < m.num_params(); ++i) {
        DenseTensor &p = m.param_mut(i);
        for (long e = 0; e < p.size(); ++e) {
            const double keep = p[e];
            p[e] = keep + step;
            ev.refresh();
            const double lp = ev.evaluate(ds, idx).loss;
            p[e] = keep - step;
            ev.refresh();
            const double lm = ev.evaluate(ds, idx).loss;
            p[e] = keep;
            g[i][e] = (lp - lm) / (2.0 * step);
        }
    }
    return g;
}

// Largest relative mismatch between two gradient sets. Entries below `floor_`
// in both are compared against the floor, which keeps finite-difference
// roundoff (about 1e-11 at step 1e-5) from inflating the error on derivatives
// that are genuinely zero.
inline double max_rel_error(const std::vector<DenseTensor> &a,
                            const std::vector<DenseTensor> &b,
                            double floor_ = 1e-5) {
    if (a.size() != b.size())
        throw InvalidArgumentError("max_rel_error: parameter count mismatch");
    double worst = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        if (!a[i].same_shape(b[i]))
            throw InvalidArgumentError("max_rel_error: shape mismatch at " +
                                       std::to_string(i));
        for (long e = 0; e < a[i].size(); ++e)
            worst = std::max(worst, detail::rel_diff(a[i][e], b[i][e], floor_));
    }
    return worst;
}

// ---------------------------------------------------------------------------
// Random instances

inline oracle::FactorGraph random_factor_graph(std::mt19937_64 &rng) {
    std::uniform_int_distribution<int> nv_d(1, 4), nh_d(0, 3), card_d(2, 3);
    std::uniform_real_distribution<double> val_d(0.1, 2.0);
    oracle::FactorGraph fg;
    const int nv = nv_d(rng), nh = nh_d(rng);
    for (int v = 0; v < nv; ++v)
        fg.variables.push_back({card_d(rng), false});
    for (int h = 0; h < nh; ++h)
        fg.variables.push_back({card_d(rng), true});
    const int total = nv + nh;
    std::uniform_int_distribution<int> nf_d(1, 3), var_d(0, total - 1);
    const int nf = nf_d(rng);
    for (int f = 0; f < nf; ++f) {
        std::uniform_int_distribution<int> ar_d(1, std::min(3, total));
        const int arity = ar_d(rng);
        std::vector<int> vars;
        while (static_cast<int>(vars.size()) < arity) {
            int v = var_d(rng);
            bool dup = false;
            for (int u : vars)
                dup |= (u == v);
            if (!dup)
                vars.push_back(v);
        }
        std::vector<long> shape;
        for (int v : vars)
            shape.push_back(fg.variables[v].cardinality);
        DenseTensor t(shape);
        for (long i = 0; i < t.size(); ++i)
            t[i] = val_d(rng);
        fg.factors.push_back({vars, std::move(t)});
    }
    return fg;
}

// ---------------------------------------------------------------------------
// Model flattening for the brute-force contraction oracle

// Unroll a string model (and its plaquette layer, if any) into a flat tensor
// network whose open legs carry the input site ids, with the label leg fixed
// at class y. Inputs must be binary so that the squared-trigonometric feature
// map reduces to selecting a tensor slice. Strings become rings (open chains
// have boundary bond dimension 1, so closing them is a no-op). A plaquette
// output is a vector handed to every string slot that visits it; with the
// inputs fixed, duplicating that vector is encoded by repeating the plaquette
// tensor once per consumer (shared tensors may appear multiple times).
inline oracle::FlatNetwork flatten(const Model &m, int y) {
    using Slot = oracle::FlatNetwork::Slot;
    if (m.strings.empty())
        throw InvalidArgumentError(
            "flatten: model has no strings (the affine head is not a "
            "contraction); check plaquette outputs instead");
    if (y < 0 || y >= m.spec.num_classes)
        throw InvalidArgumentError("flatten: class out of range");

    auto eff = [&](int pi) {
        DenseTensor t = m.param(pi);
        if (m.positive)
            for (long e = 0; e < t.size(); ++e)
                t[e] = std::exp(t[e]);
        return t;
    };

    oracle::FlatNetwork net;
    const bool composite = !m.eps.empty();

    // string slots that read each plaquette's output vector
    std::vector<std::vector<Slot>> consumers(m.eps.size());

    const DenseTensor *rbmw =
        m.rbm_w_param >= 0 ? &m.param(m.rbm_w_param) : nullptr;
    auto rbm_w = [&](int row, int site) {
        double w = rbmw->at({static_cast<long>(row), static_cast<long>(site)});
        return m.positive ? std::exp(w) : w;
    };

    for (size_t s = 0; s < m.strings.size(); ++s) {
        const StringLayout &st = m.strings[s];
        const long n = st.length();
        std::vector<int> ring(n, -1);
        for (long j = 0; j < n; ++j) {
            const int site = st.sites[j];
            const int pi = st.params[j];
            const bool label = (static_cast<int>(j) == st.label_pos);
            DenseTensor t;
            if (pi < 0) {
                // derived from the weight matrix: slice 0 identity,
                // slice 1 diag(1, e^w)
                t = DenseTensor({2, 2, 2});
                t.at({0, 0, 0}) = 1.0;
                t.at({0, 1, 1}) = 1.0;
                t.at({1, 0, 0}) = 1.0;
                t.at({1, 1, 1}) = std::exp(rbm_w(st.rbm_row, site));
            } else if (label) {
                DenseTensor full = eff(pi);
                std::vector<long> shape(full.shape().begin() + 1,
                                        full.shape().end());
                DenseTensor sl(shape);
                const long stride = sl.size();
                const double *src = full.data() + y * stride;
                std::copy(src, src + stride, sl.data());
                t = std::move(sl);
            } else {
                t = eff(pi);
            }
            net.tensors.push_back(std::move(t));
            ring[j] = static_cast<int>(net.tensors.size()) - 1;
            const bool has_input = (site >= 0);
            if (has_input) {
                if (composite)
                    consumers[site].push_back({ring[j], 0});
                else
                    net.open_legs.push_back({{ring[j], 0}, site});
            }
        }
        for (long j = 0; j < n; ++j) {
            const long k = (j + 1) % n;
            const int aj = net.tensors[ring[j]].rank() - 1; // right axis
            const int ak = net.tensors[ring[k]].rank() - 2; // left axis
            net.edges.push_back({{ring[j], aj}, {ring[k], ak}});
        }
    }

    if (composite) {
        for (long p = 0; p < m.eps.size(); ++p) {
            DenseTensor t = eff(m.eps.params[p]);
            std::vector<long> shape(m.eps.plaquettes[p].size(), m.eps.in_dim);
            shape.push_back(m.eps.out_dim);
            DenseTensor r(shape,
                          std::vector<double>(t.data(), t.data() + t.size()));
            const int out_axis = r.rank() - 1;
            for (const Slot &c : consumers[p]) {
                net.tensors.push_back(r);
                const int pt = static_cast<int>(net.tensors.size()) - 1;
                for (size_t a = 0; a < m.eps.plaquettes[p].size(); ++a)
                    net.open_legs.push_back(
                        {{pt, static_cast<int>(a)}, m.eps.plaquettes[p][a]});
                net.edges.push_back({{pt, out_axis}, c});
            }
        }
    }
    return net;
}

// Brute-force score of a string model on a binary input via the flattened
// network.
inline double flat_score(const Model &m, int y, const std::vector<long> &x) {
    oracle::FlatNetwork net = flatten(m, y);
    std::map<int, long> assign;
    for (size_t i = 0; i < x.size(); ++i)
        assign[static_cast<int>(i)] = x[i];
    return oracle::brute_contract(net, assign);
}

// ---------------------------------------------------------------------------
// Individual checks

namespace detail {

inline CheckResult check_duality(std::mt19937_64 &rng, int reps) {
    CheckResult r{"duality", true, ""};
    double worst = 0.0;
    for (int t = 0; t < reps; ++t) {
        oracle::FactorGraph fg = random_factor_graph(rng);
        oracle::FlatNetwork net = oracle::fg_to_tn(fg);
        std::vector<int> vis;
        std::vector<long> ext;
        for (size_t v = 0; v < fg.variables.size(); ++v)
            if (!fg.variables[v].hidden) {
                vis.push_back(static_cast<int>(v));
                ext.push_back(fg.variables[v].cardinality);
            }
        std::vector<long> val(vis.size(), 0);
        do {
            const double lhs = oracle::fg_marginal(fg, val);
            std::map<int, long> assign;
            for (size_t i = 0; i < vis.size(); ++i)
                assign[vis[i]] = val[i];
            const double rhs = oracle::brute_contract(net, assign);
            worst = std::max(worst, rel_diff(lhs, rhs));
        } while (oracle::detail::advance(val, ext));
    }
    r.pass = worst <= 1e-10;
    r.detail = std::to_string(reps) + " random graphs, worst relative " +
               fmt(worst);
    return r;
}

inline CheckResult check_rbm_triangle(std::mt19937_64 &rng, int reps) {
    CheckResult r{"rbm-triangle", true, ""};
    std::uniform_int_distribution<long> m_d(1, 3), n_d(1, 4);
    std::normal_distribution<double> w_d(0.0, 1.0);
    double worst = 0.0;
    for (int t = 0; t < reps; ++t) {
        long M = m_d(rng), N = n_d(rng);
        // the dual network has about 2*M*N binary edges; M*N = 12 would put
        // the literal contraction at 2^24 states, past the 1e7 guard
        while (M * N > 11) {
            M = m_d(rng);
            N = n_d(rng);
        }
        DenseTensor w({M, N});
        for (long i = 0; i < w.size(); ++i)
            w[i] = w_d(rng);
        oracle::FlatNetwork net = oracle::fg_to_tn(oracle::rbm_factor_graph(w));
        Model sbs = rbm_to_sbs(w);
        Evaluator ev(sbs);
        std::vector<long> x(N, 0);
        std::vector<double> xd(N, 0.0);
        std::vector<long> ext(N, 2);
        do {
            const double a = oracle::rbm_prob(w, x);
            const double b = oracle::rbm_prob_slow(w, x);
            std::map<int, long> assign;
            for (long j = 0; j < N; ++j) {
                assign[static_cast<int>(j)] = x[j];
                xd[j] = static_cast<double>(x[j]);
            }
            const double c = oracle::brute_contract(net, assign);
            const double d = ev.score(xd.data(), 1, 0);
            worst = std::max({worst, rel_diff(a, b), rel_diff(a, c),
                              rel_diff(a, d), rel_diff(b, c), rel_diff(b, d),
                              rel_diff(c, d)});
        } while (oracle::detail::advance(x, ext));
    }
    r.pass = worst <= 1e-10;
    r.detail = std::to_string(reps) +
               " random machines, four routes, worst relative " + fmt(worst);
    return r;
}

inline Dataset random_scalar_data(int H, int W, int K, int n,
                                  std::mt19937_64 &rng) {
    Dataset ds;
    ds.height = H;
    ds.width = W;
    ds.vec_dim = 1;
    ds.num_classes = K;
    std::uniform_real_distribution<double> x_d(0.0, 1.0);
    std::uniform_int_distribution<int> y_d(0, K - 1);
    for (int i = 0; i < n; ++i) {
        std::vector<double> v(static_cast<size_t>(H) * W);
        for (auto &e : v)
            e = x_d(rng);
        ds.add_sample(v, y_d(rng));
    }
    // make sure every class appears so the loss sees all logits
    for (int k = 0; k < K && k < n; ++k) {
        std::vector<double> v(static_cast<size_t>(H) * W);
        for (auto &e : v)
            e = x_d(rng);
        ds.add_sample(v, k);
    }
    return ds;
}

inline CheckResult check_gradient(const std::string &name,
                                  const ArchitectureSpec &spec,
                                  std::uint64_t seed, bool positive) {
    CheckResult r{name, true, ""};
    std::mt19937_64 rng(seed);
    Model m = build(spec, seed);
    if (positive)
        positive_reparam(m);
    Dataset ds = random_scalar_data(spec.grid_h, spec.grid_w,
                                    spec.num_classes, 4, rng);
    std::vector<long> idx(ds.size());
    for (long i = 0; i < ds.size(); ++i)
        idx[i] = i;
    Evaluator ev(m);
    BatchGrad an = ev.gradient(ds, idx);
    std::vector<DenseTensor> fd = fd_gradient(m, ds, idx, 1e-5);
    const double err = max_rel_error(an.g, fd);
    r.pass = err < 1e-5;
    r.detail = std::to_string(m.num_scalars()) +
               " parameters, max relative error " + fmt(err);
    return r;
}

inline CheckResult check_kron_equivalence(std::mt19937_64 &rng) {
    CheckResult r{"kron-equivalence", true, ""};
    const int N = 5, D = 2, d = 2;
    std::uniform_real_distribution<double> u(0.2, 1.2);
    auto rand_fill = [&](DenseTensor &t) {
        for (long i = 0; i < t.size(); ++i)
            t[i] = u(rng);
    };

    auto base_spec = [&](int bond) {
        ArchitectureSpec sp;
        sp.kind = Kind::sbs_2d; // container only; the layout below is manual
        sp.grid_h = 1;
        sp.grid_w = N;
        sp.bond_dim = bond;
        sp.feature_dim = d;
        sp.num_classes = 1;
        return sp;
    };

    // two bond-2 strings over the same site order, label on string 0 slot 2
    Model two;
    two.spec = base_spec(D);
    two.feature_map = FeatureMap::fixed(FeatureKind::trig_squared);
    std::vector<DenseTensor> a(N), b(N);
    DenseTensor lab({1, d, D, D});
    rand_fill(lab);
    for (int j = 0; j < N; ++j) {
        a[j] = DenseTensor({d, D, D});
        b[j] = DenseTensor({d, D, D});
        rand_fill(a[j]);
        rand_fill(b[j]);
    }
    for (int s = 0; s < 2; ++s) {
        StringLayout st;
        st.closed = true;
        for (int j = 0; j < N; ++j) {
            st.sites.push_back(j);
            if (s == 0 && j == 2) {
                st.label_pos = j;
                st.params.push_back(two.add_param("label", lab));
            } else {
                st.params.push_back(two.add_param(
                    "string" + std::to_string(s) + "/pos" + std::to_string(j),
                    s == 0 ? a[j] : b[j]));
            }
        }
        two.strings.push_back(std::move(st));
    }
    two.label_string = 0;
    two.strings[0].label_pos = 2;
    two.label_param = two.strings[0].params[2];

    // their Kronecker product: one bond-4 string, slice-wise A[f] (x) B[f]
    Model one;
    one.spec = base_spec(D * D);
    one.feature_map = FeatureMap::fixed(FeatureKind::trig_squared);
    auto kron_slice = [&](const DenseTensor &x, long fx, const DenseTensor &yt,
                          long fy, DenseTensor &out, long fo) {
        for (long i = 0; i < D; ++i)
            for (long j = 0; j < D; ++j)
                for (long k = 0; k < D; ++k)
                    for (long l = 0; l < D; ++l)
                        out.at({fo, i * D + k, j * D + l}) =
                            x.at({fx, i, j}) * yt.at({fy, k, l});
    };
    StringLayout st;
    st.closed = true;
    for (int j = 0; j < N; ++j) {
        st.sites.push_back(j);
        if (j == 2) {
            DenseTensor kl({1, d, D * D, D * D});
            DenseTensor tmp({d, D * D, D * D});
            for (long f = 0; f < d; ++f) {
                DenseTensor la({d, D, D});
                for (long i = 0; i < D; ++i)
                    for (long jj = 0; jj < D; ++jj)
                        la.at({f, i, jj}) = lab.at({0, f, i, jj});
                kron_slice(la, f, b[j], f, tmp, f);
            }
            std::copy(tmp.data(), tmp.data() + tmp.size(), kl.data());
            st.label_pos = j;
            st.params.push_back(one.add_param("label", std::move(kl)));
        } else {
            DenseTensor c({d, D * D, D * D});
            for (long f = 0; f < d; ++f)
                kron_slice(a[j], f, b[j], f, c, f);
            st.params.push_back(
                one.add_param("pos" + std::to_string(j), std::move(c)));
        }
    }
    one.strings.push_back(std::move(st));
    one.label_string = 0;
    one.label_param = one.strings[0].params[2];

    Evaluator ev2(two), ev1(one);
    std::vector<double> x(N, 0.0);
    std::vector<long> xi(N, 0), ext(N, 2);
    double worst = 0.0;
    do {
        for (int j = 0; j < N; ++j)
            x[j] = static_cast<double>(xi[j]);
        const double s2 = ev2.score(x.data(), 1, 0);
        const double s1 = ev1.score(x.data(), 1, 0);
        worst = std::max(worst, rel_diff(s2, s1));
    } while (oracle::detail::advance(xi, ext));
    r.pass = worst <= 1e-10;
    r.detail = "32 binary inputs, worst relative " + fmt(worst);
    return r;
}

inline CheckResult check_snake_adjacency(int max_side) {
    CheckResult r{"snake-adjacency", true, ""};
    int grids = 0;
    for (int H = 1; H <= max_side; ++H)
        for (int W = 1; W <= max_side; ++W) {
            ++grids;
            auto ords = snake_orderings(H, W);
            auto adjacent = [&](int u, int v) {
                for (const auto &o : ords)
                    for (size_t i = 0; i + 1 < o.size(); ++i)
                        if ((o[i] == u && o[i + 1] == v) ||
                            (o[i] == v && o[i + 1] == u))
                            return true;
                return false;
            };
            for (int i = 0; i < H; ++i)
                for (int j = 0; j < W; ++j) {
                    const int s = i * W + j;
                    if (j + 1 < W && !adjacent(s, s + 1)) {
                        r.pass = false;
                        r.detail = "grid " + std::to_string(H) + "x" +
                                   std::to_string(W) +
                                   ": horizontal edge at site " +
                                   std::to_string(s) + " uncovered";
                        return r;
                    }
                    if (i + 1 < H && !adjacent(s, s + W)) {
                        r.pass = false;
                        r.detail = "grid " + std::to_string(H) + "x" +
                                   std::to_string(W) +
                                   ": vertical edge at site " +
                                   std::to_string(s) + " uncovered";
                        return r;
                    }
                }
        }
    r.detail = "all grid edges covered up to " + std::to_string(max_side) +
               "x" + std::to_string(max_side);
    return r;
}

inline std::vector<std::vector<long>> binary_inputs(int n, int cap,
                                                    std::mt19937_64 &rng) {
    std::vector<std::vector<long>> out;
    if ((1L << n) <= cap) {
        std::vector<long> x(n, 0), ext(n, 2);
        do {
            out.push_back(x);
        } while (oracle::detail::advance(x, ext));
        return out;
    }
    out.emplace_back(n, 0);
    out.emplace_back(n, 1);
    std::uniform_int_distribution<long> bit(0, 1);
    for (int t = 2; t < cap; ++t) {
        std::vector<long> x(n);
        for (auto &v : x)
            v = bit(rng);
        out.push_back(std::move(x));
    }
    return out;
}

inline CheckResult check_schedule_vs_brute(std::mt19937_64 &rng, int cap) {
    CheckResult r{"schedule-vs-brute", true, ""};
    double worst = 0.0;
    long compared = 0;

    auto run_kind = [&](const ArchitectureSpec &spec, int input_cap) {
        Model m = build(spec, rng());
        Evaluator ev(m);
        const int n = static_cast<int>(spec.num_sites());
        auto inputs = binary_inputs(n, input_cap, rng);
        std::vector<double> xd(n);
        for (const auto &x : inputs) {
            for (int j = 0; j < n; ++j)
                xd[j] = static_cast<double>(x[j]);
            for (int y = 0; y < spec.num_classes; ++y) {
                const double fast = ev.score(xd.data(), 1, y);
                const double slow = flat_score(m, y, x);
                worst = std::max(worst, rel_diff(fast, slow, 1e-12));
                ++compared;
            }
        }
    };

    ArchitectureSpec mps;
    mps.kind = Kind::mps;
    mps.grid_h = 1;
    mps.grid_w = 9;
    mps.bond_dim = 2;
    mps.num_classes = 2;
    run_kind(mps, 512);

    ArchitectureSpec s2d;
    s2d.kind = Kind::sbs_2d;
    s2d.grid_h = 3;
    s2d.grid_w = 3;
    s2d.bond_dim = 2;
    s2d.num_classes = 2;
    run_kind(s2d, cap);

    ArchitectureSpec snake;
    snake.kind = Kind::sbs_snake;
    snake.grid_h = 2;
    snake.grid_w = 2;
    snake.bond_dim = 2;
    snake.num_classes = 2;
    run_kind(snake, 16);

    ArchitectureSpec esbs;
    esbs.kind = Kind::eps_sbs;
    esbs.grid_h = 3;
    esbs.grid_w = 2;
    esbs.bond_dim = 2;
    esbs.eps_out_dim = 2;
    esbs.num_classes = 2;
    run_kind(esbs, cap);

    ArchitectureSpec rbm;
    rbm.kind = Kind::rbm_sbs;
    rbm.grid_h = 1;
    rbm.grid_w = 4;
    rbm.num_strings = 2;
    rbm.num_classes = 2;
    run_kind(rbm, 16);

    r.pass = worst <= 1e-10;
    r.detail = std::to_string(compared) + " (input, class) scores, worst "
               "relative " + fmt(worst);
    return r;
}

inline CheckResult check_eps_linear_vs_brute(std::mt19937_64 &rng) {
    CheckResult r{"eps-linear-vs-brute", true, ""};
    ArchitectureSpec spec;
    spec.kind = Kind::eps_linear;
    spec.grid_h = 3;
    spec.grid_w = 3;
    spec.eps_out_dim = 2;
    spec.num_classes = 2;
    Model m = build(spec, rng());
    // the head is zero-initialized; randomize it so the score check has teeth
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    for (long e = 0; e < m.param_mut(m.head_w_param).size(); ++e)
        m.param_mut(m.head_w_param)[e] = u(rng);
    for (long e = 0; e < m.param_mut(m.head_b_param).size(); ++e)
        m.param_mut(m.head_b_param)[e] = u(rng);
    Evaluator ev(m);

    const int n = static_cast<int>(spec.num_sites());
    const int E = m.eps.out_dim;
    const int out_leg = 1 << 20; // pseudo site id for the plaquette output
    auto inputs = binary_inputs(n, 6, rng);
    std::vector<double> xd(n);
    double worst = 0.0;
    for (const auto &x : inputs) {
        for (int j = 0; j < n; ++j)
            xd[j] = static_cast<double>(x[j]);
        EvalCache cache = ev.make_cache(xd.data(), 1, 0);
        std::vector<double> brute_out(m.eps.size() * E, 0.0);
        for (long p = 0; p < m.eps.size(); ++p) {
            // single-plaquette network: all site legs plus the output leg open
            oracle::FlatNetwork net;
            DenseTensor t = m.param(m.eps.params[p]);
            std::vector<long> shape(m.eps.plaquettes[p].size(), m.eps.in_dim);
            shape.push_back(E);
            net.tensors.emplace_back(
                shape, std::vector<double>(t.data(), t.data() + t.size()));
            std::map<int, long> assign;
            for (size_t a = 0; a < m.eps.plaquettes[p].size(); ++a) {
                net.open_legs.push_back(
                    {{0, static_cast<int>(a)}, m.eps.plaquettes[p][a]});
                assign[m.eps.plaquettes[p][a]] = x[m.eps.plaquettes[p][a]];
            }
            net.open_legs.push_back(
                {{0, static_cast<int>(m.eps.plaquettes[p].size())}, out_leg});
            for (int e = 0; e < E; ++e) {
                assign[out_leg] = e;
                brute_out[p * E + e] = oracle::brute_contract(net, assign);
                worst = std::max(worst,
                                 rel_diff(cache.plaquette_out[p][e],
                                          brute_out[p * E + e], 1e-12));
            }
        }
        // affine head on the brute outputs against the evaluator's scores
        const DenseTensor &W = m.param(m.head_w_param);
        const DenseTensor &b = m.param(m.head_b_param);
        for (int y = 0; y < spec.num_classes; ++y) {
            double acc = b[y];
            for (size_t i = 0; i < brute_out.size(); ++i)
                acc += W[y * static_cast<long>(brute_out.size()) + i] *
                       brute_out[i];
            worst = std::max(worst,
                             rel_diff(ev.score(xd.data(), 1, y), acc, 1e-12));
        }
    }
    r.pass = worst <= 1e-10;
    r.detail = "plaquette outputs and head scores, worst relative " +
               fmt(worst);
    return r;
}

inline CheckResult check_env_consistency(std::mt19937_64 &rng) {
    CheckResult r{"env-consistency", true, ""};
    double worst = 0.0;
    auto run_one = [&](const ArchitectureSpec &spec) {
        Model m = build(spec, rng());
        Evaluator ev(m);
        Dataset ds = random_scalar_data(spec.grid_h, spec.grid_w,
                                        spec.num_classes, 3, rng);
        for (long i = 0; i < ds.size(); ++i)
            for (int y = 0; y < spec.num_classes; ++y) {
                EvalCache c = ev.make_cache(ds.input(i), ds.vec_dim, y);
                for (const auto &sc : c.strings) {
                    const long n = static_cast<long>(sc.mats.size());
                    for (long j = 0; j < n; ++j) {
                        const double t =
                            (sc.left[j] * sc.mats[j] * sc.right[j + 1])
                                .trace();
                        worst = std::max(worst, rel_diff(t, sc.trace, 1e-12));
                    }
                }
            }
    };
    ArchitectureSpec mps;
    mps.kind = Kind::mps;
    mps.grid_h = 1;
    mps.grid_w = 7;
    mps.bond_dim = 3;
    mps.num_classes = 3;
    run_one(mps);
    ArchitectureSpec snake;
    snake.kind = Kind::sbs_snake;
    snake.grid_h = 3;
    snake.grid_w = 3;
    snake.bond_dim = 2;
    snake.num_classes = 2;
    run_one(snake);
    ArchitectureSpec rbm;
    rbm.kind = Kind::rbm_sbs;
    rbm.grid_h = 1;
    rbm.grid_w = 5;
    rbm.num_strings = 2;
    rbm.num_classes = 2;
    run_one(rbm);
    r.pass = worst <= 1e-10;
    r.detail = "left/site/right closure at every slot, worst relative " +
               fmt(worst);
    return r;
}

} // namespace detail

// ---------------------------------------------------------------------------
// The battery

inline Report run_verification(const Options &opt = {}) {
    std::mt19937_64 rng(opt.seed);
    const bool full = opt.scale == Scale::full_run;
    Report rep;

    rep.checks.push_back(detail::check_duality(rng, full ? 60 : 20));
    rep.checks.push_back(detail::check_rbm_triangle(rng, full ? 40 : 20));

    {
        ArchitectureSpec sp;
        sp.kind = Kind::mps;
        sp.grid_h = 3;
        sp.grid_w = 3;
        sp.bond_dim = 3;
        sp.num_classes = 3;
        rep.checks.push_back(
            detail::check_gradient("gradient-mps", sp, opt.seed + 1, false));
        sp.features.kind = FeatureKind::learnable_table;
        sp.features.bins = 16;
        rep.checks.push_back(detail::check_gradient("gradient-mps-table", sp,
                                                    opt.seed + 2, false));
    }
    {
        ArchitectureSpec sp;
        sp.kind = Kind::eps_linear;
        sp.grid_h = 3;
        sp.grid_w = 3;
        sp.eps_out_dim = 2;
        sp.num_classes = 2;
        rep.checks.push_back(detail::check_gradient("gradient-eps-linear", sp,
                                                    opt.seed + 3, false));
    }
    {
        ArchitectureSpec sp;
        sp.kind = Kind::sbs_2d;
        sp.grid_h = 3;
        sp.grid_w = 3;
        sp.bond_dim = 2;
        sp.num_classes = 2;
        sp.features.kind = FeatureKind::linear;
        rep.checks.push_back(
            detail::check_gradient("gradient-sbs-2d", sp, opt.seed + 4, false));
    }
    {
        ArchitectureSpec sp;
        sp.kind = Kind::sbs_snake;
        sp.grid_h = 3;
        sp.grid_w = 3;
        sp.bond_dim = 2;
        sp.num_classes = 2;
        sp.features.kind = FeatureKind::learnable_table;
        rep.checks.push_back(detail::check_gradient("gradient-sbs-snake", sp,
                                                    opt.seed + 5, false));
        sp.features.kind = FeatureKind::trig_squared;
        rep.checks.push_back(detail::check_gradient("gradient-positive", sp,
                                                    opt.seed + 6, true));
    }
    {
        ArchitectureSpec sp;
        sp.kind = Kind::eps_sbs;
        sp.grid_h = 3;
        sp.grid_w = 3;
        sp.bond_dim = 2;
        sp.eps_out_dim = 2;
        sp.num_classes = 2;
        rep.checks.push_back(
            detail::check_gradient("gradient-eps-sbs", sp, opt.seed + 7, false));
    }
    {
        ArchitectureSpec sp;
        sp.kind = Kind::rbm_sbs;
        sp.grid_h = 3;
        sp.grid_w = 3;
        sp.num_strings = 2;
        sp.num_classes = 2;
        rep.checks.push_back(
            detail::check_gradient("gradient-rbm-sbs", sp, opt.seed + 8, false));
    }

    rep.checks.push_back(detail::check_kron_equivalence(rng));
    rep.checks.push_back(detail::check_snake_adjacency(6));
    rep.checks.push_back(
        detail::check_schedule_vs_brute(rng, full ? 12 : 6));
    rep.checks.push_back(detail::check_eps_linear_vs_brute(rng));
    rep.checks.push_back(detail::check_env_consistency(rng));
    return rep;
}

} // namespace gtn::verify

#endif // GTN_VERIFY_HPP
