#ifndef GTN_FEATURE_MAP_HPP
#define GTN_FEATURE_MAP_HPP

#include <atomic>
#include <cmath>
#include <memory>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "gtn/errors.hpp"
#include "gtn/tensor.hpp"

namespace gtn {

enum class FeatureKind { linear, trig_squared, learnable_table };

inline std::string to_string(FeatureKind k) {
    switch (k) {
    case FeatureKind::linear:
        return "linear";
    case FeatureKind::trig_squared:
        return "trig-squared";
    case FeatureKind::learnable_table:
        return "learnable-table";
    }
    return "?";
}

inline FeatureKind feature_kind_from_string(const std::string &s) {
    if (s == "linear")
        return FeatureKind::linear;
    if (s == "trig-squared")
        return FeatureKind::trig_squared;
    if (s == "learnable-table")
        return FeatureKind::learnable_table;
    throw ValidationError("unknown feature kind '" + s + "'");
}

// Maps a raw scalar in [0,1] to a feature vector that is contracted with the
// network's input legs. The learnable kind is a discretized lookup table,
// trainable with the rest of the network. Out-of-range inputs are clamped and
// counted rather than rejected.
class FeatureMap {
  public:
    FeatureKind kind = FeatureKind::trig_squared;
    int out_dim = 2;
    int bins = 16;        // learnable only
    bool per_site = false; // one table per input variable instead of shared
    int num_sites = 0;     // required when per_site
    // shared: [bins, out_dim]; per-site: [num_sites, bins, out_dim]
    DenseTensor table;

    FeatureMap() : clamp_count_(std::make_shared<std::atomic<long>>(0)) {}

    static FeatureMap fixed(FeatureKind k) {
        FeatureMap fm;
        fm.kind = k;
        fm.out_dim = 2;
        return fm;
    }

    // Learnable table initialized from the trig-squared map sampled at bin
    // centers plus small Gaussian noise; random starts make learning hard on
    // nontrivial data.
    static FeatureMap learnable(int out_dim, int bins, std::mt19937_64 &rng,
                                bool per_site = false, int num_sites = 0,
                                double noise_sigma = 0.01) {
        if (out_dim < 2)
            throw ValidationError("feature out_dim must be >= 2");
        if (bins < 1)
            throw ValidationError("feature bins must be >= 1");
        FeatureMap fm;
        fm.kind = FeatureKind::learnable_table;
        fm.out_dim = out_dim;
        fm.bins = bins;
        fm.per_site = per_site;
        fm.num_sites = per_site ? num_sites : 0;
        if (per_site && num_sites < 1)
            throw ValidationError("per-site feature map needs num_sites >= 1");
        const int copies = per_site ? num_sites : 1;
        std::vector<long> shape =
            per_site ? std::vector<long>{num_sites, bins, out_dim}
                     : std::vector<long>{bins, out_dim};
        fm.table = DenseTensor(shape);
        std::normal_distribution<double> noise(0.0, noise_sigma);
        double *t = fm.table.data();
        for (int c = 0; c < copies; ++c)
            for (int b = 0; b < bins; ++b) {
                const double center = (b + 0.5) / bins;
                for (int f = 0; f < out_dim; ++f) {
                    double base = 0.0;
                    if (f == 0)
                        base = std::cos(M_PI * center / 2) *
                               std::cos(M_PI * center / 2);
                    else if (f == 1)
                        base = std::sin(M_PI * center / 2) *
                               std::sin(M_PI * center / 2);
                    t[(static_cast<long>(c) * bins + b) * out_dim + f] =
                        base + noise(rng);
                }
            }
        return fm;
    }

    bool learnable_kind() const { return kind == FeatureKind::learnable_table; }

    long clamp_count() const { return clamp_count_->load(); }
    void reset_clamp_count() { clamp_count_->store(0); }

    int bin_of(double x) const {
        if (x < 0.0 || x > 1.0) {
            ++*clamp_count_;
            x = x < 0.0 ? 0.0 : 1.0;
        }
        int b = static_cast<int>(x * bins);
        return b >= bins ? bins - 1 : b;
    }

    // Write the feature vector for x into out[0..out_dim).
    void map_input(double x, double *out, int site = 0) const {
        switch (kind) {
        case FeatureKind::linear:
            if (x < 0.0 || x > 1.0) {
                ++*clamp_count_;
                x = x < 0.0 ? 0.0 : 1.0;
            }
            out[0] = 1.0;
            out[1] = x;
            return;
        case FeatureKind::trig_squared: {
            if (x < 0.0 || x > 1.0) {
                ++*clamp_count_;
                x = x < 0.0 ? 0.0 : 1.0;
            }
            const double c = std::cos(M_PI * x / 2), s = std::sin(M_PI * x / 2);
            out[0] = c * c;
            out[1] = s * s;
            return;
        }
        case FeatureKind::learnable_table: {
            const double *row = table_row(site, bin_of(x));
            for (int f = 0; f < out_dim; ++f)
                out[f] = row[f];
            return;
        }
        }
    }

    std::vector<double> map_input(double x, int site = 0) const {
        std::vector<double> v(out_dim);
        map_input(x, v.data(), site);
        return v;
    }

    const double *table_row(int site, int bin) const {
        const long base = per_site ? static_cast<long>(site) * bins : 0;
        return table.data() + (base + bin) * out_dim;
    }

    // Gradient of the table for one input: zero except row bin(x), which
    // receives `upstream`. Returns a tensor shaped like the table.
    DenseTensor feature_grad(double x, const std::vector<double> &upstream,
                             int site = 0) const {
        if (!learnable_kind())
            throw UnsupportedOperationError(
                "feature_grad: feature map of kind " + to_string(kind) +
                " has no trainable table");
        DenseTensor g(table.shape());
        accumulate_table_grad(x, upstream.data(), g.data(), site);
        return g;
    }

    // Hot-path form: adds upstream into the bin row of a flat gradient buffer
    // aligned with the table.
    void accumulate_table_grad(double x, const double *upstream, double *grad,
                               int site = 0) const {
        const long base = per_site ? static_cast<long>(site) * bins : 0;
        double *row = grad + (base + bin_of(x)) * out_dim;
        for (int f = 0; f < out_dim; ++f)
            row[f] += upstream[f];
    }

  private:
    // shared across copies so concurrent evaluation over model copies still
    // reports into one counter
    std::shared_ptr<std::atomic<long>> clamp_count_;
};

// One row per bin: bin center followed by the feature components, features
// L2-normalized per row for plotting comparability.
inline void export_features_csv(const FeatureMap &fm, std::ostream &out) {
    if (!fm.learnable_kind())
        throw UnsupportedOperationError("export: feature map has no table");
    out.precision(17);
    out << "bin_center";
    for (int f = 0; f < fm.out_dim; ++f)
        out << ",feature_" << f;
    out << "\n";
    const int copies = fm.per_site ? fm.num_sites : 1;
    if (copies != 1)
        throw UnsupportedOperationError("export: per-site tables not plottable "
                                        "as a single curve");
    for (int b = 0; b < fm.bins; ++b) {
        const double *row = fm.table_row(0, b);
        double norm = 0.0;
        for (int f = 0; f < fm.out_dim; ++f)
            norm += row[f] * row[f];
        norm = std::sqrt(norm);
        out << (b + 0.5) / fm.bins;
        for (int f = 0; f < fm.out_dim; ++f)
            out << "," << (norm > 0 ? row[f] / norm : 0.0);
        out << "\n";
    }
}

} // namespace gtn

#endif // GTN_FEATURE_MAP_HPP
