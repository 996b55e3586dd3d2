#ifndef GTN_TRAIN_HPP
#define GTN_TRAIN_HPP

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "gtn/dataset.hpp"
#include "gtn/errors.hpp"
#include "gtn/eval.hpp"
#include "gtn/model.hpp"
#include "gtn/pretrain.hpp"

namespace gtn {

struct EpochMetric {
    int epoch = 0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double val_acc = 0.0;
};

struct TrainConfig {
    double alpha = 1e-4;        // learning rate
    double dropout_keep = 0.95; // keep probability per tensor element
    int batch_size = 20;
    int epochs = 100;
    std::uint64_t seed = 0;
    bool positivity = false; // exponential element reparameterization
    bool adam = false;       // plain SGD when false
    // The dropout phrase "drop tensor elements to 0 with probability delta"
    // read literally would zero 95% of all elements; the default treats
    // delta as the keep probability. This flag selects the literal reading.
    bool literal_drop_probability = false;
    bool pretrain_features = false;
    int pretrain_epochs = 300;
    double pretrain_alpha = 0.2;
    std::vector<double> grid_alpha;
    std::vector<double> grid_dropout;
    std::vector<int> grid_bond;
    // progress hook, ignored by serialization and comparisons
    std::function<void(const EpochMetric &)> on_epoch;

    double keep_probability() const {
        return literal_drop_probability ? 1.0 - dropout_keep : dropout_keep;
    }

    void validate() const {
        if (!(dropout_keep > 0.0) || dropout_keep > 1.0)
            throw ValidationError("dropout_keep: must be in (0, 1], got " +
                                  std::to_string(dropout_keep));
        if (batch_size < 1)
            throw ValidationError("batch_size: must be >= 1, got " +
                                  std::to_string(batch_size));
        if (epochs < 0)
            throw ValidationError("epochs: must be >= 0");
        if (!(alpha >= 0.0) || !std::isfinite(alpha))
            throw ValidationError("alpha: must be finite and >= 0");
        for (double a : grid_alpha)
            if (!(a >= 0.0) || !std::isfinite(a))
                throw ValidationError("grid.alpha: entries must be >= 0");
        for (double d : grid_dropout)
            if (!(d > 0.0) || d > 1.0)
                throw ValidationError("grid.dropout_keep: entries in (0, 1]");
        for (int b : grid_bond)
            if (b < 1)
                throw ValidationError("grid.bond_dim: entries must be >= 1");
    }
};

struct Metrics {
    std::vector<EpochMetric> epochs;
    double wall_seconds = 0.0;
    double best_val_acc = 0.0;
    int best_epoch = -1;
    double final_test_acc = -1.0; // filled once by the caller, if at all
    bool failed = false;
    std::string error;
};

// Deterministic CSV; excludes wall-clock so equal seeds give equal bytes.
inline void write_metrics_csv(const Metrics &m, std::ostream &out) {
    out.precision(17);
    out << "epoch,train_loss,train_acc,val_acc\n";
    for (const EpochMetric &e : m.epochs)
        out << e.epoch << "," << e.train_loss << "," << e.train_acc << ","
            << e.val_acc << "\n";
}

// Fresh Bernoulli keep-mask over every trainable element, drawn in registry
// order from the given stream.
inline Mask dropout_mask(const Model &m, double keep, std::mt19937_64 &rng) {
    if (!(keep > 0.0) || keep > 1.0)
        throw InvalidArgumentError("dropout_mask: keep probability in (0, 1]");
    std::bernoulli_distribution b(keep);
    Mask mask(m.num_params());
    for (int i = 0; i < m.num_params(); ++i) {
        const long n = m.param(i).size();
        mask[i].resize(n);
        for (long e = 0; e < n; ++e)
            mask[i][e] = b(rng) ? 1 : 0;
    }
    return mask;
}

// Re-expresses every parameter element as the exponential of a new parameter:
// stored values become logs, forward passes exponentiate. Elements below
// kappa (including non-positive ones) are clamped before taking the log.
// String site tensors are then shifted by a per-tensor constant so each
// effective matrix has mean row sum one; clamping turns signed noise into a
// positive mean that would otherwise compound over long strings, and a
// uniform log-shift (a pure rescale of the site matrix) removes that bias
// without changing what the reparameterized model can express.
inline Model &positive_reparam(Model &m, double kappa = 1e-3) {
    if (m.positive)
        return m;
    for (int i = 0; i < m.num_params(); ++i) {
        DenseTensor &p = m.param_mut(i);
        for (long e = 0; e < p.size(); ++e)
            p.data()[e] = std::log(std::max(p.data()[e], kappa));
    }
    for (const StringLayout &st : m.strings) {
        for (long j = 0; j < st.length(); ++j) {
            if (st.params[j] < 0)
                continue; // derived slices (rbm mapping) have no stored log
            DenseTensor &p = m.param_mut(st.params[j]);
            const long dr = p.extent(p.rank() - 1);
            const long rows = p.size() / dr;
            double mean = 0.0;
            for (long r = 0; r < rows; ++r) {
                double sum = 0.0;
                for (long b = 0; b < dr; ++b)
                    sum += std::exp(p.data()[r * dr + b]);
                mean += sum;
            }
            mean /= static_cast<double>(rows);
            const double shift = std::log(mean);
            for (long e = 0; e < p.size(); ++e)
                p.data()[e] -= shift;
        }
    }
    m.positive = true;
    return m;
}

namespace detail {

class AdamState {
  public:
    void init(const Model &m) {
        m_.clear();
        v_.clear();
        for (int i = 0; i < m.num_params(); ++i) {
            m_.emplace_back(m.param(i).size(), 0.0);
            v_.emplace_back(m.param(i).size(), 0.0);
        }
        t_ = 0;
    }
    void step(Model &model, const std::vector<DenseTensor> &g, double alpha) {
        ++t_;
        const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        const double c1 = 1.0 - std::pow(b1, t_), c2 = 1.0 - std::pow(b2, t_);
        for (int i = 0; i < model.num_params(); ++i) {
            double *p = model.param_mut(i).data();
            const double *gi = g[i].data();
            for (long e = 0; e < g[i].size(); ++e) {
                m_[i][e] = b1 * m_[i][e] + (1 - b1) * gi[e];
                v_[i][e] = b2 * v_[i][e] + (1 - b2) * gi[e] * gi[e];
                p[e] -= alpha * (m_[i][e] / c1) /
                        (std::sqrt(v_[i][e] / c2) + eps);
            }
        }
    }

  private:
    std::vector<std::vector<double>> m_, v_;
    long t_ = 0;
};

} // namespace detail

// Minibatch gradient descent: per-epoch reshuffles, a fresh element-dropout
// mask per minibatch, validation after every epoch, and the best model by
// validation accuracy returned in place. A numeric overflow aborts the run,
// restores the best model seen, and reports the failure in the metrics.
// Shuffling and dropout draw from two independent streams seeded from
// cfg.seed so toggling dropout does not change the data order.
inline Metrics sgd_fit(Model &model, const Dataset &train, const Dataset &val,
                       const TrainConfig &cfg) {
    cfg.validate();
    if (train.empty() || val.empty())
        throw InvalidArgumentError("sgd_fit: train and validation sets must "
                                   "be nonempty");
    check_dataset(model, train);
    check_dataset(model, val);
    if (cfg.pretrain_features) {
        if (!model.feature_map.learnable_kind())
            throw ValidationError("pretrain_features: architecture has no "
                                  "learnable feature table");
        model.feature_map = pretrain_features(model.feature_map, train,
                                              cfg.pretrain_epochs,
                                              cfg.pretrain_alpha, cfg.seed)
                                .map;
    }
    if (cfg.positivity && !model.positive)
        positive_reparam(model);

    const auto t0 = std::chrono::steady_clock::now();
    Metrics metrics;
    std::mt19937_64 rng_shuffle(cfg.seed);
    std::mt19937_64 rng_drop(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    const double keep = cfg.keep_probability();
    const bool use_mask = keep < 1.0;

    Evaluator ev(model);
    detail::AdamState adam;
    if (cfg.adam)
        adam.init(model);

    Model best = model;
    double best_val = -1.0;
    int best_epoch = -1;

    std::vector<long> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<long> batch;

    try {
        for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
            std::shuffle(order.begin(), order.end(), rng_shuffle);
            double loss_sum = 0.0, acc_sum = 0.0;
            long seen = 0;
            for (long off = 0; off < train.size();
                 off += cfg.batch_size) {
                const long bs =
                    std::min<long>(cfg.batch_size, train.size() - off);
                batch.assign(order.begin() + off, order.begin() + off + bs);
                Mask mask;
                const Mask *mp = nullptr;
                if (use_mask) {
                    mask = dropout_mask(model, keep, rng_drop);
                    mp = &mask;
                }
                if (mp != nullptr || model.positive)
                    ev.refresh(mp);
                BatchGrad bg = ev.gradient(train, batch);
                loss_sum += bg.loss * bs;
                acc_sum += bg.accuracy * bs;
                seen += bs;
                if (cfg.adam) {
                    adam.step(model, bg.g, cfg.alpha);
                } else {
                    for (int i = 0; i < model.num_params(); ++i) {
                        double *p = model.param_mut(i).data();
                        const double *gi = bg.g[i].data();
                        for (long e = 0; e < bg.g[i].size(); ++e)
                            p[e] -= cfg.alpha * gi[e];
                    }
                }
            }
            if (use_mask || model.positive)
                ev.refresh(nullptr);
            const Evaluator::Summary vs = ev.evaluate(val);
            EpochMetric em;
            em.epoch = epoch;
            em.train_loss = seen ? loss_sum / seen : 0.0;
            em.train_acc = seen ? acc_sum / seen : 0.0;
            em.val_acc = vs.accuracy;
            metrics.epochs.push_back(em);
            if (cfg.on_epoch)
                cfg.on_epoch(em);
            if (vs.accuracy > best_val) {
                best_val = vs.accuracy;
                best_epoch = epoch;
                best = model;
            }
        }
    } catch (const NumericOverflowError &e) {
        metrics.failed = true;
        metrics.error = e.what();
    }

    if (best_epoch >= 0) {
        model = best;
        metrics.best_val_acc = best_val;
        metrics.best_epoch = best_epoch;
    } else if (cfg.epochs == 0 || metrics.failed) {
        // zero-epoch run or failure before the first validation pass:
        // restore the initial parameters (mid-epoch updates may be corrupt)
        model = best;
        Evaluator fresh(model);
        metrics.best_val_acc = metrics.failed ? 0.0 : fresh.evaluate(val).accuracy;
        metrics.best_epoch = -1;
    }
    metrics.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    return metrics;
}

struct GridCell {
    double alpha = 0.0;
    double dropout_keep = 0.0;
    int bond_dim = 0;
    double val_acc = -1.0;
    bool failed = false;
    std::string error;
};

struct GridResult {
    Model model;           // best cell's trained model
    TrainConfig cfg;       // hyperparameters of the best cell
    Metrics metrics;       // best cell's training record
    std::vector<GridCell> table;
    int best_cell = -1;
};

// Full sweep over the configured (bond_dim, alpha, dropout) lists. Cells run
// in ascending (D, alpha, delta) order and selection uses strict improvement,
// so ties resolve to the smallest bond dimension, then the smallest rate.
inline GridResult grid_search(const ArchitectureSpec &spec,
                              const Dataset &train, const Dataset &val,
                              const TrainConfig &base) {
    base.validate();
    std::vector<int> bonds = base.grid_bond;
    std::vector<double> alphas = base.grid_alpha;
    std::vector<double> drops = base.grid_dropout;
    if (bonds.empty())
        bonds.push_back(spec.bond_dim);
    if (alphas.empty())
        alphas.push_back(base.alpha);
    if (drops.empty())
        drops.push_back(base.dropout_keep);
    std::sort(bonds.begin(), bonds.end());
    std::sort(alphas.begin(), alphas.end());
    std::sort(drops.begin(), drops.end());

    GridResult out;
    double best_val = -1.0;
    for (int D : bonds)
        for (double a : alphas)
            for (double d : drops) {
                ArchitectureSpec s = spec;
                s.bond_dim = D;
                TrainConfig cfg = base;
                cfg.alpha = a;
                cfg.dropout_keep = d;
                cfg.grid_alpha.clear();
                cfg.grid_dropout.clear();
                cfg.grid_bond.clear();

                GridCell cell;
                cell.alpha = a;
                cell.dropout_keep = d;
                cell.bond_dim = D;
                try {
                    Model m = build(s, cfg.seed);
                    Metrics mt = sgd_fit(m, train, val, cfg);
                    cell.failed = mt.failed;
                    cell.error = mt.error;
                    if (!mt.failed) {
                        cell.val_acc = mt.best_val_acc;
                        if (cell.val_acc > best_val) {
                            best_val = cell.val_acc;
                            out.model = std::move(m);
                            out.cfg = cfg;
                            out.metrics = std::move(mt);
                            out.best_cell = static_cast<int>(out.table.size());
                        }
                    }
                } catch (const Error &e) {
                    cell.failed = true;
                    cell.error = e.what();
                }
                out.table.push_back(std::move(cell));
            }
    if (out.best_cell < 0)
        throw ResourceError("grid_search: every cell failed");
    return out;
}

// ---- TrainConfig JSON ----

inline nlohmann::json to_json(const TrainConfig &c) {
    nlohmann::json j;
    j["alpha"] = c.alpha;
    j["dropout_keep"] = c.dropout_keep;
    j["batch_size"] = c.batch_size;
    j["epochs"] = c.epochs;
    j["seed"] = c.seed;
    j["positivity"] = c.positivity;
    j["adam"] = c.adam;
    j["literal_drop_probability"] = c.literal_drop_probability;
    j["pretrain_features"] = c.pretrain_features;
    if (c.pretrain_features) {
        j["pretrain_epochs"] = c.pretrain_epochs;
        j["pretrain_alpha"] = c.pretrain_alpha;
    }
    if (!c.grid_alpha.empty() || !c.grid_dropout.empty() ||
        !c.grid_bond.empty()) {
        nlohmann::json g;
        if (!c.grid_alpha.empty())
            g["alpha"] = c.grid_alpha;
        if (!c.grid_dropout.empty())
            g["dropout_keep"] = c.grid_dropout;
        if (!c.grid_bond.empty())
            g["bond_dim"] = c.grid_bond;
        j["grid"] = g;
    }
    return j;
}

inline TrainConfig train_config_from_json(const nlohmann::json &j) {
    if (!j.is_object())
        throw ValidationError("train: expected a JSON object");
    detail::reject_unknown_keys(
        j,
        {"alpha", "dropout_keep", "batch_size", "epochs", "seed", "positivity",
         "adam", "literal_drop_probability", "pretrain_features",
         "pretrain_epochs", "pretrain_alpha", "grid"},
        "train");
    TrainConfig c;
    try {
        if (j.contains("alpha"))
            c.alpha = j.at("alpha").get<double>();
        if (j.contains("dropout_keep"))
            c.dropout_keep = j.at("dropout_keep").get<double>();
        if (j.contains("batch_size"))
            c.batch_size = j.at("batch_size").get<int>();
        if (j.contains("epochs"))
            c.epochs = j.at("epochs").get<int>();
        if (j.contains("seed"))
            c.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("positivity"))
            c.positivity = j.at("positivity").get<bool>();
        if (j.contains("adam"))
            c.adam = j.at("adam").get<bool>();
        if (j.contains("literal_drop_probability"))
            c.literal_drop_probability =
                j.at("literal_drop_probability").get<bool>();
        if (j.contains("pretrain_features"))
            c.pretrain_features = j.at("pretrain_features").get<bool>();
        if (j.contains("pretrain_epochs"))
            c.pretrain_epochs = j.at("pretrain_epochs").get<int>();
        if (j.contains("pretrain_alpha"))
            c.pretrain_alpha = j.at("pretrain_alpha").get<double>();
        if (j.contains("grid")) {
            const auto &g = j.at("grid");
            detail::reject_unknown_keys(g, {"alpha", "dropout_keep",
                                            "bond_dim"},
                                        "train.grid");
            if (g.contains("alpha"))
                c.grid_alpha = g.at("alpha").get<std::vector<double>>();
            if (g.contains("dropout_keep"))
                c.grid_dropout =
                    g.at("dropout_keep").get<std::vector<double>>();
            if (g.contains("bond_dim"))
                c.grid_bond = g.at("bond_dim").get<std::vector<int>>();
        }
    } catch (const nlohmann::json::exception &e) {
        throw ValidationError(std::string("train: ") + e.what());
    }
    c.validate();
    return c;
}

} // namespace gtn

#endif // GTN_TRAIN_HPP
