#ifndef GTN_PRETRAIN_HPP
#define GTN_PRETRAIN_HPP

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "gtn/dataset.hpp"
#include "gtn/errors.hpp"
#include "gtn/feature_map.hpp"

namespace gtn {

struct PretrainResult {
    FeatureMap map;            // updated table; probe weights are discarded
    double final_loss = 0.0;   // probe cross-entropy on the last epoch
    double train_accuracy = 0.0;
};

// Trains the learnable table by minimizing the cross-entropy of a softmax
// linear classifier over the concatenated per-site feature vectors. The
// probe's weights exist only inside this call.
inline PretrainResult pretrain_features(const FeatureMap &fm0,
                                        const Dataset &ds, int epochs = 300,
                                        double alpha = 0.2,
                                        std::uint64_t seed = 0,
                                        int batch_size = 32) {
    if (!fm0.learnable_kind())
        throw UnsupportedOperationError(
            "pretrain_features: feature map has no trainable table");
    if (ds.empty())
        throw InvalidArgumentError("pretrain_features: empty dataset");
    if (ds.vec_dim != 1)
        throw InvalidArgumentError(
            "pretrain_features: dataset provides precomputed vectors");

    PretrainResult out;
    out.map = fm0;
    FeatureMap &fm = out.map;
    const long N = ds.num_sites();
    const int d = fm.out_dim;
    const int K = ds.num_classes;

    std::vector<double> W(static_cast<size_t>(K) * N * d, 0.0);
    std::vector<double> b(K, 0.0);
    std::vector<double> phi(N * d), z(K), p(K), u(d);

    std::mt19937_64 rng(seed);
    std::vector<long> order(ds.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        long correct = 0;
        for (long off = 0; off < ds.size(); off += batch_size) {
            const long bs = std::min<long>(batch_size, ds.size() - off);
            const double inv = 1.0 / bs;
            for (long bi = 0; bi < bs; ++bi) {
                const long i = order[off + bi];
                const double *x = ds.input(i);
                const int y = ds.label(i);
                for (long s = 0; s < N; ++s)
                    fm.map_input(x[s], phi.data() + s * d,
                                 static_cast<int>(s));
                for (int k = 0; k < K; ++k) {
                    double acc = b[k];
                    const double *row = W.data() +
                                        static_cast<size_t>(k) * N * d;
                    for (long e = 0; e < N * d; ++e)
                        acc += row[e] * phi[e];
                    z[k] = acc;
                }
                const double mx = *std::max_element(z.begin(), z.end());
                double Z = 0.0;
                for (int k = 0; k < K; ++k)
                    Z += (p[k] = std::exp(z[k] - mx));
                int best = 0;
                for (int k = 0; k < K; ++k) {
                    p[k] /= Z;
                    if (p[k] > p[best])
                        best = k;
                }
                loss_sum += -std::log(std::max(p[y], 1e-300));
                if (best == y)
                    ++correct;
                // per-sample step scaled by 1/batch; the table sees the
                // pre-update probe weights, then W, b, and the bin row move
                for (long s = 0; s < N; ++s) {
                    std::fill(u.begin(), u.end(), 0.0);
                    for (int k = 0; k < K; ++k) {
                        const double c =
                            (p[k] - (k == y ? 1.0 : 0.0)) * inv;
                        const double *row =
                            W.data() + (static_cast<size_t>(k) * N + s) * d;
                        for (int f = 0; f < d; ++f)
                            u[f] += c * row[f];
                    }
                    const int bin = fm.bin_of(x[s]);
                    const long base =
                        (fm.per_site ? static_cast<long>(s) * fm.bins : 0) +
                        bin;
                    double *trow = fm.table.data() + base * d;
                    for (int f = 0; f < d; ++f)
                        trow[f] -= alpha * u[f];
                }
                for (int k = 0; k < K; ++k) {
                    const double c = (p[k] - (k == y ? 1.0 : 0.0)) * inv;
                    b[k] -= alpha * c;
                    double *row = W.data() + static_cast<size_t>(k) * N * d;
                    for (long e = 0; e < N * d; ++e)
                        row[e] -= alpha * c * phi[e];
                }
            }
        }
        out.final_loss = loss_sum / ds.size();
        out.train_accuracy = static_cast<double>(correct) / ds.size();
    }
    return out;
}

} // namespace gtn

#endif // GTN_PRETRAIN_HPP
