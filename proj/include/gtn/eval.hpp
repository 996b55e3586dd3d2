#ifndef GTN_EVAL_HPP
#define GTN_EVAL_HPP

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "gtn/dataset.hpp"
#include "gtn/errors.hpp"
#include "gtn/model.hpp"
#include "gtn/tensor.hpp"

namespace gtn {

// Per-parameter elementwise keep flags for element dropout.
using Mask = std::vector<std::vector<unsigned char>>;

struct Posterior {
    std::vector<double> probs;
    std::vector<double> log_scores; // GTN(x, y_k), the softmax logits
    int argmax() const {
        int best = 0;
        for (size_t k = 1; k < probs.size(); ++k)
            if (probs[k] > probs[best])
                best = static_cast<int>(k);
        return best;
    }
};

// Mean-reduced batch gradient aligned with the model's parameter registry.
struct BatchGrad {
    std::vector<DenseTensor> g;
    double loss = 0.0;
    double accuracy = 0.0;
};

// Environments of one sample at a fixed class, exposed for tests. For every
// string, left[j] = M_0..M_{j-1} and right[j] = M_j..M_{n-1}, so
// tr(left[j] * mats[j] * right[j+1]) reproduces the string trace at every j.
struct EvalCache {
    struct StringCache {
        std::vector<RowMatrixXd> mats, left, right;
        double trace = 0.0;
    };
    std::vector<StringCache> strings;
    std::vector<std::vector<double>> plaquette_out;
    std::vector<double> scores;
};

inline void check_dataset(const Model &m, const Dataset &ds) {
    if (ds.num_sites() != m.spec.num_sites())
        throw ValidationError(
            "dataset has " + std::to_string(ds.num_sites()) +
            " sites but architecture expects " +
            std::to_string(m.spec.num_sites()));
    if (ds.vec_dim != 1 && ds.vec_dim != m.spec.feature_dim)
        throw ValidationError(
            "dataset feature dimension " + std::to_string(ds.vec_dim) +
            " does not match architecture feature_dim " +
            std::to_string(m.spec.feature_dim));
}

// Forward/backward engine for one model. Holds preallocated per-string
// workspaces and the effective parameter tensors (exponentiated under the
// positive reparameterization, zeroed under a dropout mask), so batch loops
// run allocation-free. The bound model must outlive the evaluator; call
// refresh() after parameter updates when a mask or positivity is active.
class Evaluator {
  public:
    explicit Evaluator(const Model &m) : m_(m) {
        K_ = m.spec.num_classes;
        din_ = m.spec.feature_dim;
        nin_ = m.spec.num_sites();
        sdim_ = m.string_in_dim();
        nss_ = m.num_string_sites();

        eff_.resize(m.num_params(), nullptr);
        eff_own_.resize(m.num_params());

        feats_.assign(nin_ * din_, 0.0);
        uf_.assign(nin_ * din_, 0.0);
        if (!m.eps.empty()) {
            long rho = 1;
            for (int i = 0; i < m.spec.plaq_h * m.spec.plaq_w; ++i)
                rho *= din_;
            rho_ = rho;
            epsphi_.assign(m.eps.size() * rho, 0.0);
            epsout_.assign(m.eps.size() * m.eps.out_dim, 0.0);
            us_.assign(m.eps.size() * m.eps.out_dim, 0.0);
            kron_v_.assign(rho, 0.0);
            kron_fwd_.resize(m.spec.plaq_h * m.spec.plaq_w + 1);
            kron_bwd_.resize(m.spec.plaq_h * m.spec.plaq_w + 1);
            long sz = 1;
            for (size_t t = 0; t < kron_fwd_.size(); ++t) {
                kron_fwd_[t].assign(sz, 0.0);
                kron_bwd_[kron_fwd_.size() - 1 - t].assign(sz, 0.0);
                sz *= din_;
            }
        }

        str_.resize(m.strings.size());
        for (size_t s = 0; s < m.strings.size(); ++s) {
            const StringLayout &src = m.strings[s];
            Str &st = str_[s];
            st.closed = src.closed;
            st.label_pos = src.label_pos;
            st.rbm_row = src.rbm_row;
            const long n = src.length();
            st.slots.resize(n);
            for (long j = 0; j < n; ++j) {
                Slot &sl = st.slots[j];
                sl.site = src.sites[j];
                sl.param = src.params[j];
                sl.label = (static_cast<int>(j) == src.label_pos);
                if (sl.param >= 0) {
                    const DenseTensor &t = m.param(sl.param);
                    // label tensors carry a leading K axis; site-less label
                    // slots have no feature axis either
                    const int off = sl.label ? 1 : 0;
                    if (sl.site >= 0) {
                        sl.dl = static_cast<int>(t.extent(off + 1));
                        sl.dr = static_cast<int>(t.extent(off + 2));
                    } else {
                        sl.dl = static_cast<int>(t.extent(off + 0));
                        sl.dr = static_cast<int>(t.extent(off + 1));
                    }
                } else {
                    sl.dl = sl.dr = 2; // derived diagonal rbm matrices
                }
            }
            st.mats.resize(n);
            st.left.resize(n + 1);
            st.right.resize(n + 1);
            for (long j = 0; j < n; ++j)
                st.mats[j].setZero(st.slots[j].dl, st.slots[j].dr);
            const int b0 = st.slots.front().dl;
            const int bn = st.slots.back().dr;
            for (long j = 0; j <= n; ++j) {
                st.left[j].setZero(b0, j < n ? st.slots[j].dl : bn);
                st.right[j].setZero(j < n ? st.slots[j].dl : bn, bn);
            }
        }
        if (m.label_string >= 0) {
            const Str &ls = str_[m.label_string];
            const Slot &sl = ls.slots[ls.label_pos];
            H_.setZero(sl.dr, sl.dl);
            Mbar_.setZero(sl.dl, sl.dr);
            Tbar_.assign((sl.site >= 0 ? sdim_ : 1) *
                             static_cast<long>(sl.dl) * sl.dr,
                         0.0);
        }
        G_.setZero(1, 1);
        tk_.assign(K_, 0.0);
        ck_.assign(K_, 0.0);
        traces_.assign(str_.size(), 0.0);
        tilde_.assign(str_.size(), 0.0);
        coef_.assign(str_.size(), 0.0);
        scores_.assign(K_, 0.0);

        refresh(nullptr);
    }

    const Model &model() const { return m_; }

    // Rebuild the effective tensors: exp of the stored parameters under the
    // positive reparameterization, masked elements read as zero. With neither
    // active, points straight at the model's parameters.
    void refresh(const Mask *mask = nullptr) {
        mask_ = mask;
        for (int i = 0; i < m_.num_params(); ++i) {
            const DenseTensor &p = m_.param(i);
            if (!m_.positive && mask == nullptr) {
                eff_[i] = &p;
                continue;
            }
            DenseTensor &o = eff_own_[i];
            if (o.shape() != p.shape())
                o = DenseTensor(p.shape());
            const double *src = p.data();
            double *dst = o.data();
            const unsigned char *keep =
                mask ? (*mask)[i].data() : nullptr;
            for (long e = 0; e < p.size(); ++e) {
                double v = m_.positive ? std::exp(src[e]) : src[e];
                if (keep && !keep[e])
                    v = 0.0;
                dst[e] = v;
            }
            eff_[i] = &o;
        }
    }

    // -------- public evaluation API --------

    Posterior posterior(const double *x, long vec_dim) {
        load_features(x, vec_dim);
        forward(false);
        return make_posterior();
    }

    Posterior posterior_features(const std::vector<std::vector<double>> &f) {
        load_feature_vectors(f);
        forward(false);
        return make_posterior();
    }

    double score(const double *x, long vec_dim, int y) {
        if (y < 0 || y >= K_)
            throw ValidationError("score: class " + std::to_string(y) +
                                  " out of range");
        load_features(x, vec_dim);
        forward(false);
        return scores_[y];
    }

    double score_features(const std::vector<std::vector<double>> &f, int y) {
        if (y < 0 || y >= K_)
            throw ValidationError("score: class " + std::to_string(y) +
                                  " out of range");
        load_feature_vectors(f);
        forward(false);
        return scores_[y];
    }

    struct Summary {
        double loss = 0.0;
        double accuracy = 0.0;
    };

    Summary evaluate(const Dataset &ds, const std::vector<long> &idx) {
        check_dataset(m_, ds);
        if (idx.empty())
            throw InvalidArgumentError("evaluate: empty batch");
        Summary out;
        long correct = 0;
        for (long i : idx) {
            Posterior p = posterior(ds.input(i), ds.vec_dim);
            out.loss += -std::log(std::max(p.probs[ds.label(i)], 1e-300));
            if (p.argmax() == ds.label(i))
                ++correct;
        }
        out.loss /= static_cast<double>(idx.size());
        out.accuracy = static_cast<double>(correct) / idx.size();
        return out;
    }

    Summary evaluate(const Dataset &ds) {
        std::vector<long> idx(ds.size());
        for (long i = 0; i < ds.size(); ++i)
            idx[i] = i;
        return evaluate(ds, idx);
    }

    std::vector<int> predict(const Dataset &ds) {
        check_dataset(m_, ds);
        std::vector<int> out(ds.size());
        for (long i = 0; i < ds.size(); ++i)
            out[i] = posterior(ds.input(i), ds.vec_dim).argmax();
        return out;
    }

    // Mean-reduced cross-entropy gradient with respect to the stored
    // parameters: masked elements receive zero gradient, and under positivity
    // the exp chain rule is already applied.
    BatchGrad gradient(const Dataset &ds, const std::vector<long> &idx) {
        check_dataset(m_, ds);
        if (idx.empty())
            throw InvalidArgumentError("gradient: empty batch");
        BatchGrad out;
        out.g.reserve(m_.num_params());
        for (int i = 0; i < m_.num_params(); ++i)
            out.g.emplace_back(m_.param(i).shape());
        long correct = 0;
        for (long i : idx) {
            load_features(ds.input(i), ds.vec_dim);
            forward(true);
            Posterior p = make_posterior();
            const int y = ds.label(i);
            out.loss += -std::log(std::max(p.probs[y], 1e-300));
            if (p.argmax() == y)
                ++correct;
            for (int k = 0; k < K_; ++k)
                ck_[k] = p.probs[k] - (k == y ? 1.0 : 0.0);
            backward(out.g);
        }
        const double inv = 1.0 / static_cast<double>(idx.size());
        out.loss *= inv;
        out.accuracy = static_cast<double>(correct) / idx.size();
        for (int i = 0; i < m_.num_params(); ++i) {
            double *g = out.g[i].data();
            const long n = out.g[i].size();
            if (m_.positive) {
                // d/dtheta = d/dw * e^theta; masked entries have eff = 0
                const double *w = eff_[i]->data();
                for (long e = 0; e < n; ++e)
                    g[e] *= inv * w[e];
            } else if (mask_) {
                const unsigned char *keep = (*mask_)[i].data();
                for (long e = 0; e < n; ++e)
                    g[e] = keep[e] ? g[e] * inv : 0.0;
            } else {
                for (long e = 0; e < n; ++e)
                    g[e] *= inv;
            }
        }
        return out;
    }

    // Test-path forward at a fixed class with full environments.
    EvalCache make_cache(const double *x, long vec_dim, int y) {
        if (y < 0 || y >= K_)
            throw ValidationError("make_cache: class out of range");
        load_features(x, vec_dim);
        forward(true);
        EvalCache c;
        c.scores.assign(scores_.begin(), scores_.end());
        if (!m_.eps.empty()) {
            c.plaquette_out.resize(m_.eps.size());
            for (long p = 0; p < m_.eps.size(); ++p)
                c.plaquette_out[p] =
                    std::vector<double>(epsout_.begin() + p * m_.eps.out_dim,
                                        epsout_.begin() +
                                            (p + 1) * m_.eps.out_dim);
        }
        c.strings.resize(str_.size());
        for (size_t s = 0; s < str_.size(); ++s) {
            Str &st = str_[s];
            EvalCache::StringCache &sc = c.strings[s];
            const long n = static_cast<long>(st.slots.size());
            // materialize the label slot at class y, then recompute full
            // environments so the invariant holds at every position
            if (st.label_pos >= 0)
                build_label_matrix(st, y, st.mats[st.label_pos]);
            sc.mats = st.mats;
            sc.left.resize(n + 1);
            sc.right.resize(n + 1);
            sc.left[0] = RowMatrixXd::Identity(st.slots.front().dl,
                                               st.slots.front().dl);
            for (long j = 0; j < n; ++j)
                sc.left[j + 1] = sc.left[j] * sc.mats[j];
            sc.right[n] = RowMatrixXd::Identity(st.slots.back().dr,
                                                st.slots.back().dr);
            for (long j = n - 1; j >= 0; --j)
                sc.right[j] = sc.mats[j] * sc.right[j + 1];
            sc.trace = sc.left[n].trace();
        }
        return c;
    }

    long feature_clamps() const { return m_.feature_map.clamp_count(); }

  private:
    struct Slot {
        int site = -1;
        int param = -1;
        bool label = false;
        int dl = 0, dr = 0;
    };
    struct Str {
        std::vector<Slot> slots;
        bool closed = true;
        int label_pos = -1;
        int rbm_row = -1;
        std::vector<RowMatrixXd> mats, left, right;
        double trace = 0.0;
    };

    // ----- input embedding -----

    void load_features(const double *x, long vec_dim) {
        last_x_ = x;
        last_input_scalar_ = (vec_dim == 1);
        if (vec_dim == din_ && din_ > 1) {
            std::copy(x, x + nin_ * din_, feats_.begin());
            return;
        }
        if (vec_dim != 1)
            throw ValidationError(
                "input feature dimension " + std::to_string(vec_dim) +
                " does not match architecture feature_dim " +
                std::to_string(din_));
        const FeatureMap &fm = m_.feature_map;
        if (fm.learnable_kind()) {
            // read rows from the effective table (exp/mask applied)
            const double *tab = eff_[m_.feature_param]->data();
            for (long i = 0; i < nin_; ++i) {
                const long base =
                    fm.per_site ? i * static_cast<long>(fm.bins) : 0;
                const double *row =
                    tab + (base + fm.bin_of(x[i])) * fm.out_dim;
                std::copy(row, row + din_, feats_.begin() + i * din_);
            }
        } else {
            if (din_ != fm.out_dim)
                throw ValidationError(
                    "fixed feature maps produce dimension " +
                    std::to_string(fm.out_dim) + " but architecture expects " +
                    std::to_string(din_));
            for (long i = 0; i < nin_; ++i)
                fm.map_input(x[i], feats_.data() + i * din_,
                             static_cast<int>(i));
        }
    }

    void load_feature_vectors(const std::vector<std::vector<double>> &f) {
        last_x_ = nullptr;
        last_input_scalar_ = false;
        if (static_cast<long>(f.size()) != nin_)
            throw ValidationError("expected " + std::to_string(nin_) +
                                  " per-site feature vectors, got " +
                                  std::to_string(f.size()));
        for (long i = 0; i < nin_; ++i) {
            if (static_cast<long>(f[i].size()) != din_)
                throw ValidationError("feature vector at site " +
                                      std::to_string(i) + " has length " +
                                      std::to_string(f[i].size()) +
                                      ", expected " + std::to_string(din_));
            std::copy(f[i].begin(), f[i].end(), feats_.begin() + i * din_);
        }
    }

    // ----- plaquette layer -----

    void eps_forward() {
        const EpsLayer &e = m_.eps;
        for (long p = 0; p < e.size(); ++p) {
            double *phi = epsphi_.data() + p * rho_;
            kron_forward(e.plaquettes[p], phi);
            const double *T = eff_[e.params[p]]->data();
            double *o = epsout_.data() + p * e.out_dim;
            for (int v = 0; v < e.out_dim; ++v)
                o[v] = 0.0;
            for (long r = 0; r < rho_; ++r) {
                const double f = phi[r];
                const double *row = T + r * e.out_dim;
                for (int v = 0; v < e.out_dim; ++v)
                    o[v] += f * row[v];
            }
        }
    }

    // phi = kron of the plaquette sites' feature vectors, row-major digits
    void kron_forward(const std::vector<int> &sites, double *out) {
        long sz = 1;
        out[0] = 1.0;
        std::vector<double> &buf = kron_scratch_;
        buf.assign(rho_, 0.0);
        double *cur = out, *nxt = buf.data();
        for (size_t t = 0; t < sites.size(); ++t) {
            const double *phi = feats_.data() +
                                static_cast<long>(sites[t]) * din_;
            for (long i = 0; i < sz; ++i)
                for (int f = 0; f < din_; ++f)
                    nxt[i * din_ + f] = cur[i] * phi[f];
            sz *= din_;
            std::swap(cur, nxt);
        }
        if (cur != out)
            std::copy(cur, cur + sz, out);
    }

    // ----- string layer -----

    void build_site_matrix(const Str &st, const Slot &sl, RowMatrixXd &M) {
        const double *in = string_input(sl.site);
        if (sl.param >= 0) {
            const double *T = eff_[sl.param]->data();
            const long step = static_cast<long>(sl.dl) * sl.dr;
            Eigen::Map<const RowMatrixXd> S0(T, sl.dl, sl.dr);
            M.noalias() = in[0] * S0;
            for (int f = 1; f < sdim_; ++f) {
                Eigen::Map<const RowMatrixXd> S(T + f * step, sl.dl, sl.dr);
                M.noalias() += in[f] * S;
            }
        } else {
            const double w = rbm_weight(st.rbm_row, sl.site);
            const double ew = std::exp(w);
            M(0, 0) = in[0] + in[1];
            M(0, 1) = 0.0;
            M(1, 0) = 0.0;
            M(1, 1) = in[0] + in[1] * ew;
        }
    }

    double rbm_weight(int row, int site) const {
        const DenseTensor &w = *eff_[m_.rbm_w_param];
        return w.data()[static_cast<long>(row) * w.extent(1) + site];
    }

    const double *string_input(int site) const {
        if (!m_.eps.empty() && !m_.strings.empty())
            return epsout_.data() + static_cast<long>(site) * sdim_;
        return feats_.data() + static_cast<long>(site) * sdim_;
    }

    // class-k matrix of the label slot (feature-contracted when it sits on a
    // site)
    void build_label_matrix(const Str &st, int k, RowMatrixXd &M) {
        const Slot &sl = st.slots[st.label_pos];
        const double *T = eff_[sl.param]->data();
        const long step = static_cast<long>(sl.dl) * sl.dr;
        if (sl.site >= 0) {
            const double *in = string_input(sl.site);
            const double *base = T + static_cast<long>(k) * sdim_ * step;
            Eigen::Map<const RowMatrixXd> S0(base, sl.dl, sl.dr);
            M.noalias() = in[0] * S0;
            for (int f = 1; f < sdim_; ++f) {
                Eigen::Map<const RowMatrixXd> S(base + f * step, sl.dl,
                                                sl.dr);
                M.noalias() += in[f] * S;
            }
        } else {
            Eigen::Map<const RowMatrixXd> S(T + static_cast<long>(k) * step,
                                            sl.dl, sl.dr);
            M = S;
        }
    }

    // Builds matrices and environments. Always computes left prefixes, the
    // label string's right suffixes down to the label slot (they form the
    // shared environment H for all K class scores), and with `need_right` the
    // full right suffixes of every string (gradient mode).
    void forward(bool need_right) {
        if (!m_.eps.empty())
            eps_forward();
        const int ls = m_.label_string;
        for (size_t s = 0; s < str_.size(); ++s) {
            Str &st = str_[s];
            const long n = static_cast<long>(st.slots.size());
            for (long j = 0; j < n; ++j)
                if (!st.slots[j].label)
                    build_site_matrix(st, st.slots[j], st.mats[j]);
            const long stop_left =
                (static_cast<int>(s) == ls) ? st.label_pos : n;
            st.left[0] = RowMatrixXd::Identity(st.slots.front().dl,
                                               st.slots.front().dl);
            for (long j = 0; j < stop_left; ++j)
                st.left[j + 1].noalias() = st.left[j] * st.mats[j];
            const long stop_right =
                (static_cast<int>(s) == ls) ? st.label_pos + 1
                                            : (need_right ? 0 : n);
            st.right[n] = RowMatrixXd::Identity(st.slots.back().dr,
                                                st.slots.back().dr);
            for (long j = n - 1; j >= stop_right; --j)
                st.right[j].noalias() = st.mats[j] * st.right[j + 1];
            if (static_cast<int>(s) != ls)
                st.trace = st.left[n].trace();
        }

        if (ls >= 0) {
            Str &st = str_[ls];
            const int m = st.label_pos;
            H_.noalias() = st.right[m + 1] * st.left[m];
            const Slot &sl = st.slots[m];
            const double *T = eff_[sl.param]->data();
            const long step = static_cast<long>(sl.dl) * sl.dr;
            double other = 1.0;
            for (size_t s = 0; s < str_.size(); ++s)
                if (static_cast<int>(s) != ls)
                    other *= str_[s].trace;
            for (int k = 0; k < K_; ++k) {
                double t = 0.0;
                if (sl.site >= 0) {
                    const double *in = string_input(sl.site);
                    const double *base =
                        T + static_cast<long>(k) * sdim_ * step;
                    for (int f = 0; f < sdim_; ++f) {
                        const double *slice = base + f * step;
                        double acc = 0.0;
                        for (int a = 0; a < sl.dl; ++a)
                            for (int b = 0; b < sl.dr; ++b)
                                acc += slice[a * sl.dr + b] * H_(b, a);
                        t += in[f] * acc;
                    }
                } else {
                    const double *slice = T + static_cast<long>(k) * step;
                    for (int a = 0; a < sl.dl; ++a)
                        for (int b = 0; b < sl.dr; ++b)
                            t += slice[a * sl.dr + b] * H_(b, a);
                }
                tk_[k] = t;
                scores_[k] = t * other;
            }
            for (size_t s = 0; s < str_.size(); ++s)
                traces_[s] = (static_cast<int>(s) == ls)
                                 ? tk_[0]
                                 : str_[s].trace;
        } else {
            // linear head on the plaquette outputs
            const double *W = eff_[m_.head_w_param]->data();
            const double *b = eff_[m_.head_b_param]->data();
            const long pe = static_cast<long>(m_.eps.size()) * m_.eps.out_dim;
            for (int k = 0; k < K_; ++k) {
                double acc = b[k];
                const double *row = W + static_cast<long>(k) * pe;
                for (long i = 0; i < pe; ++i)
                    acc += row[i] * epsout_[i];
                scores_[k] = acc;
            }
        }
    }

    Posterior make_posterior() {
        for (int k = 0; k < K_; ++k)
            if (!std::isfinite(scores_[k]))
                throw_overflow();
        Posterior p;
        p.log_scores.assign(scores_.begin(), scores_.end());
        p.probs.resize(K_);
        const double mx = *std::max_element(scores_.begin(), scores_.end());
        double z = 0.0;
        for (int k = 0; k < K_; ++k)
            z += (p.probs[k] = std::exp(scores_[k] - mx));
        for (int k = 0; k < K_; ++k)
            p.probs[k] /= z;
        return p;
    }

    [[noreturn]] void throw_overflow() {
        std::vector<double> tr(traces_.begin(), traces_.end());
        size_t worst = 0;
        for (size_t s = 0; s < tr.size(); ++s) {
            if (!std::isfinite(tr[s])) {
                worst = s;
                break;
            }
            if (std::abs(tr[s]) > std::abs(tr[worst]))
                worst = s;
        }
        std::string msg = "non-finite class score";
        if (!tr.empty())
            msg += "; string " + std::to_string(worst) + " trace " +
                   std::to_string(tr[worst]) + " dominates";
        throw NumericOverflowError(msg, tr);
    }

    // ----- backward -----

    void backward(std::vector<DenseTensor> &g) {
        const int ls = m_.label_string;
        if (!m_.eps.empty())
            std::fill(us_.begin(), us_.end(), 0.0);
        std::fill(uf_.begin(), uf_.end(), 0.0);

        if (ls < 0) {
            head_backward(g);
        } else {
            strings_backward(g);
        }

        if (!m_.eps.empty())
            eps_backward(g);

        // route input-feature upstream into the learnable table
        if (m_.feature_param >= 0 && last_input_scalar_) {
            const FeatureMap &fm = m_.feature_map;
            double *gt = g[m_.feature_param].data();
            for (long i = 0; i < nin_; ++i)
                fm.accumulate_table_grad(last_x_[i], uf_.data() + i * din_,
                                         gt, static_cast<int>(i));
        }
    }

    void head_backward(std::vector<DenseTensor> &g) {
        const double *W = eff_[m_.head_w_param]->data();
        double *gw = g[m_.head_w_param].data();
        double *gb = g[m_.head_b_param].data();
        const long pe = static_cast<long>(m_.eps.size()) * m_.eps.out_dim;
        for (int k = 0; k < K_; ++k) {
            const double c = ck_[k];
            gb[k] += c;
            double *grow = gw + static_cast<long>(k) * pe;
            const double *row = W + static_cast<long>(k) * pe;
            for (long i = 0; i < pe; ++i) {
                grow[i] += c * epsout_[i];
                us_[i] += c * row[i];
            }
        }
    }

    void strings_backward(std::vector<DenseTensor> &g) {
        const int ls = m_.label_string;
        Str &lst = str_[ls];
        const int m = lst.label_pos;
        const Slot &lsl = lst.slots[m];
        const long lstep = static_cast<long>(lsl.dl) * lsl.dr;

        // class-weighted label tensor and matrix
        {
            const double *T = eff_[lsl.param]->data();
            const long per_k = (lsl.site >= 0 ? sdim_ : 1) * lstep;
            std::fill(Tbar_.begin(), Tbar_.end(), 0.0);
            for (int k = 0; k < K_; ++k) {
                const double c = ck_[k];
                const double *base = T + static_cast<long>(k) * per_k;
                for (long e = 0; e < per_k; ++e)
                    Tbar_[e] += c * base[e];
            }
            if (lsl.site >= 0) {
                const double *in = string_input(lsl.site);
                Eigen::Map<const RowMatrixXd> S0(Tbar_.data(), lsl.dl,
                                                 lsl.dr);
                Mbar_.noalias() = in[0] * S0;
                for (int f = 1; f < sdim_; ++f) {
                    Eigen::Map<const RowMatrixXd> S(Tbar_.data() + f * lstep,
                                                    lsl.dl, lsl.dr);
                    Mbar_.noalias() += in[f] * S;
                }
            } else {
                Mbar_ = Eigen::Map<const RowMatrixXd>(Tbar_.data(), lsl.dl,
                                                      lsl.dr);
            }
        }

        // complete the label string's environments with the weighted matrix
        {
            const long n = static_cast<long>(lst.slots.size());
            lst.mats[m] = Mbar_;
            for (long j = m; j < n; ++j)
                lst.left[j + 1].noalias() = lst.left[j] * lst.mats[j];
            for (long j = m; j >= 0; --j)
                lst.right[j].noalias() = lst.mats[j] * lst.right[j + 1];
        }

        // weighted traces and leave-one-out products
        double tbar = 0.0;
        for (int k = 0; k < K_; ++k)
            tbar += ck_[k] * tk_[k];
        for (size_t s = 0; s < str_.size(); ++s)
            tilde_[s] = (static_cast<int>(s) == ls) ? tbar : str_[s].trace;
        {
            const size_t S = str_.size();
            double acc = 1.0;
            for (size_t s = 0; s < S; ++s) {
                coef_[s] = acc;
                acc *= tilde_[s];
            }
            acc = 1.0;
            for (size_t s = S; s-- > 0;) {
                coef_[s] *= acc;
                acc *= tilde_[s];
            }
        }

        for (size_t s = 0; s < str_.size(); ++s) {
            Str &st = str_[s];
            const double cs = coef_[s];
            if (cs == 0.0 && static_cast<int>(s) != ls)
                continue; // no contribution flows through this string
            const long n = static_cast<long>(st.slots.size());
            for (long j = 0; j < n; ++j) {
                const Slot &sl = st.slots[j];
                // G = cs * (right[j+1] * left[j])^T, gradient wrt mats[j]
                G_.resize(sl.dl, sl.dr);
                G_.noalias() =
                    cs * (st.right[j + 1] * st.left[j]).transpose();
                if (sl.label) {
                    scatter_label(st, g);
                    continue;
                }
                if (sl.param >= 0) {
                    scatter_site(sl, g[sl.param].data());
                } else {
                    scatter_rbm(st, sl, g);
                }
            }
        }
    }

    // Gradient of the label tensor: per class, c_k * coef * H^T (through the
    // feature vector when the slot sits on a site). Uses H_ from the forward
    // pass; G_ currently holds coef * H^T since right[m+1], left[m] are the
    // unmodified environments.
    void scatter_label(Str &st, std::vector<DenseTensor> &g) {
        const Slot &sl = st.slots[st.label_pos];
        const long step = static_cast<long>(sl.dl) * sl.dr;
        double *gt = g[sl.param].data();
        const double *in = sl.site >= 0 ? string_input(sl.site) : nullptr;
        const long per_k = (sl.site >= 0 ? sdim_ : 1) * step;
        for (int k = 0; k < K_; ++k) {
            const double c = ck_[k];
            if (c == 0.0)
                continue;
            double *base = gt + static_cast<long>(k) * per_k;
            if (sl.site >= 0) {
                for (int f = 0; f < sdim_; ++f) {
                    const double cf = c * in[f];
                    double *slice = base + f * step;
                    for (int a = 0; a < sl.dl; ++a)
                        for (int b = 0; b < sl.dr; ++b)
                            slice[a * sl.dr + b] += cf * G_(a, b);
                }
            } else {
                for (int a = 0; a < sl.dl; ++a)
                    for (int b = 0; b < sl.dr; ++b)
                        base[a * sl.dr + b] += c * G_(a, b);
            }
        }
        // upstream into the slot's input vector via the weighted tensor
        if (sl.site >= 0)
            feature_upstream(sl, Tbar_.data());
    }

    void scatter_site(const Slot &sl, double *gp) {
        const double *in = string_input(sl.site);
        const long step = static_cast<long>(sl.dl) * sl.dr;
        for (int f = 0; f < sdim_; ++f) {
            const double cf = in[f];
            double *slice = gp + f * step;
            for (int a = 0; a < sl.dl; ++a)
                for (int b = 0; b < sl.dr; ++b)
                    slice[a * sl.dr + b] += cf * G_(a, b);
        }
        feature_upstream(sl, eff_[sl.param]->data());
    }

    // uf/us[site][f] += sum_ab T[f,a,b] G(a,b)
    void feature_upstream(const Slot &sl, const double *T) {
        double *u = upstream_target(sl.site);
        const long step = static_cast<long>(sl.dl) * sl.dr;
        for (int f = 0; f < sdim_; ++f) {
            const double *slice = T + f * step;
            double acc = 0.0;
            for (int a = 0; a < sl.dl; ++a)
                for (int b = 0; b < sl.dr; ++b)
                    acc += slice[a * sl.dr + b] * G_(a, b);
            u[f] += acc;
        }
    }

    double *upstream_target(int site) {
        if (!m_.eps.empty() && !m_.strings.empty())
            return us_.data() + static_cast<long>(site) * sdim_;
        return uf_.data() + static_cast<long>(site) * sdim_;
    }

    void scatter_rbm(const Str &st, const Slot &sl,
                     std::vector<DenseTensor> &g) {
        const double *in = string_input(sl.site);
        const double w = rbm_weight(st.rbm_row, sl.site);
        const double ew = std::exp(w);
        DenseTensor &gw = g[m_.rbm_w_param];
        gw.data()[static_cast<long>(st.rbm_row) * gw.extent(1) + sl.site] +=
            G_(1, 1) * in[1] * ew;
        double *u = upstream_target(sl.site);
        u[0] += G_(0, 0) + G_(1, 1);
        u[1] += G_(0, 0) + G_(1, 1) * ew;
    }

    void eps_backward(std::vector<DenseTensor> &g) {
        const EpsLayer &e = m_.eps;
        for (long p = 0; p < e.size(); ++p) {
            const double *u = us_.data() + p * e.out_dim;
            bool live = false;
            for (int v = 0; v < e.out_dim; ++v)
                if (u[v] != 0.0)
                    live = true;
            if (!live)
                continue;
            const double *phi = epsphi_.data() + p * rho_;
            const double *T = eff_[e.params[p]]->data();
            double *gT = g[e.params[p]].data();
            // plaquette tensor gradient and input-side upstream
            for (long r = 0; r < rho_; ++r) {
                const double *row = T + r * e.out_dim;
                double *grow = gT + r * e.out_dim;
                double acc = 0.0;
                for (int v = 0; v < e.out_dim; ++v) {
                    grow[v] += phi[r] * u[v];
                    acc += row[v] * u[v];
                }
                kron_v_[r] = acc;
            }
            kron_backward(e.plaquettes[p]);
        }
    }

    // Distribute kron_v_ (gradient wrt the plaquette's kron vector) onto per
    // site feature upstream using prefix/suffix kron partial products.
    void kron_backward(const std::vector<int> &sites) {
        const int m = static_cast<int>(sites.size());
        kron_fwd_[0][0] = 1.0;
        long sz = 1;
        for (int t = 0; t < m; ++t) {
            const double *phi =
                feats_.data() + static_cast<long>(sites[t]) * din_;
            for (long i = 0; i < sz; ++i)
                for (int f = 0; f < din_; ++f)
                    kron_fwd_[t + 1][i * din_ + f] = kron_fwd_[t][i] * phi[f];
            sz *= din_;
        }
        kron_bwd_[m][0] = 1.0;
        sz = 1;
        for (int t = m - 1; t >= 0; --t) {
            const double *phi =
                feats_.data() + static_cast<long>(sites[t]) * din_;
            for (long i = 0; i < sz; ++i)
                for (int f = 0; f < din_; ++f)
                    kron_bwd_[t][f * sz + i] = phi[f] * kron_bwd_[t + 1][i];
            sz *= din_;
        }
        long left_sz = 1;
        for (int t = 0; t < m; ++t) {
            long right_sz = 1;
            for (int r = t + 1; r < m; ++r)
                right_sz *= din_;
            double *u = uf_.data() + static_cast<long>(sites[t]) * din_;
            for (long i = 0; i < left_sz; ++i) {
                const double fl = kron_fwd_[t][i];
                if (fl == 0.0)
                    continue;
                for (int f = 0; f < din_; ++f) {
                    const double *v =
                        kron_v_.data() + (i * din_ + f) * right_sz;
                    double acc = 0.0;
                    for (long j = 0; j < right_sz; ++j)
                        acc += v[j] * kron_bwd_[t + 1][j];
                    u[f] += fl * acc;
                }
            }
            left_sz *= din_;
        }
    }

    // ----- members -----

    const Model &m_;
    int K_ = 0, din_ = 0, sdim_ = 0;
    long nin_ = 0, nss_ = 0, rho_ = 0;

    std::vector<const DenseTensor *> eff_;
    std::vector<DenseTensor> eff_own_;
    const Mask *mask_ = nullptr;

    std::vector<Str> str_;
    std::vector<double> feats_, uf_, us_, epsphi_, epsout_;
    std::vector<double> kron_scratch_, kron_v_;
    std::vector<std::vector<double>> kron_fwd_, kron_bwd_;
    std::vector<double> tk_, ck_, traces_, tilde_, coef_, scores_;
    std::vector<double> Tbar_;
    RowMatrixXd H_, Mbar_, G_;

    // raw scalar inputs of the last sample, for table-gradient routing
    const double *last_x_ = nullptr;
    bool last_input_scalar_ = false;
};

} // namespace gtn

#endif // GTN_EVAL_HPP
