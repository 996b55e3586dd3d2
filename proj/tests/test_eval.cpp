#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gtn/eval.hpp"
#include "gtn/train.hpp"

using gtn::ArchitectureSpec;
using gtn::Dataset;
using gtn::DenseTensor;
using gtn::Evaluator;
using gtn::Kind;
using gtn::Model;
using gtn::Posterior;

namespace {

ArchitectureSpec small_spec(Kind k, int h, int w, int classes = 3) {
    ArchitectureSpec s;
    s.kind = k;
    s.grid_h = h;
    s.grid_w = w;
    s.num_classes = classes;
    return s;
}

std::vector<double> random_input(long n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> x(n);
    for (auto &v : x)
        v = u(rng);
    return x;
}

Dataset random_samples(int h, int w, int classes, int n, std::uint64_t seed) {
    Dataset ds;
    ds.height = h;
    ds.width = w;
    ds.num_classes = classes;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_int_distribution<int> y(0, classes - 1);
    for (int i = 0; i < n; ++i) {
        std::vector<double> v(static_cast<size_t>(h) * w);
        for (auto &e : v)
            e = u(rng);
        ds.add_sample(v, y(rng));
    }
    return ds;
}

// scramble the parameters so scores are no longer class-uniform
void perturb(Model &m, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 0.1);
    for (int i = 0; i < m.num_params(); ++i) {
        DenseTensor &p = m.param_mut(i);
        for (long e = 0; e < p.size(); ++e)
            p.data()[e] += g(rng);
    }
}

} // namespace

TEST(Posterior, ProbsAreSoftmaxOfLogScores) {
    Model m = gtn::build(small_spec(Kind::sbs_snake, 3, 3), 2);
    perturb(m, 3);
    Evaluator ev(m);
    const auto x = random_input(9, 4);
    Posterior p = ev.posterior(x.data(), 1);
    ASSERT_EQ(p.probs.size(), 3u);
    ASSERT_EQ(p.log_scores.size(), 3u);
    double sum = 0.0;
    for (double pr : p.probs)
        sum += pr;
    EXPECT_NEAR(sum, 1.0, 1e-12);
    const double mx = *std::max_element(p.log_scores.begin(),
                                        p.log_scores.end());
    double z = 0.0;
    for (double s : p.log_scores)
        z += std::exp(s - mx);
    for (size_t k = 0; k < p.probs.size(); ++k)
        EXPECT_NEAR(p.probs[k], std::exp(p.log_scores[k] - mx) / z, 1e-12);
}

TEST(Posterior, ScoreReturnsTheSelectedLogit) {
    Model m = gtn::build(small_spec(Kind::mps, 1, 5), 8);
    perturb(m, 9);
    Evaluator ev(m);
    const auto x = random_input(5, 10);
    Posterior p = ev.posterior(x.data(), 1);
    for (int k = 0; k < 3; ++k)
        EXPECT_DOUBLE_EQ(ev.score(x.data(), 1, k), p.log_scores[k]);
    EXPECT_THROW(ev.score(x.data(), 1, 3), gtn::ValidationError);
    EXPECT_THROW(ev.score(x.data(), 1, -1), gtn::ValidationError);
}

TEST(Posterior, PrecomputedFeatureVectorsMatchScalarPath) {
    Model m = gtn::build(small_spec(Kind::sbs_2d, 2, 3), 5);
    perturb(m, 6);
    Evaluator ev(m);
    const auto x = random_input(6, 7);
    // expand scalars through the same trig map the model applies internally
    std::vector<double> feats;
    std::vector<std::vector<double>> fvecs;
    for (double v : x) {
        auto f = m.feature_map.map_input(v);
        feats.insert(feats.end(), f.begin(), f.end());
        fvecs.push_back(f);
    }
    Posterior ps = ev.posterior(x.data(), 1);
    Posterior pv = ev.posterior(feats.data(), 2);
    for (int k = 0; k < 3; ++k) {
        EXPECT_NEAR(pv.log_scores[k], ps.log_scores[k], 1e-12);
        EXPECT_DOUBLE_EQ(ev.score_features(fvecs, k), pv.log_scores[k]);
    }
}

TEST(Evaluate, LossAndAccuracyMatchHandComputation) {
    Model m = gtn::build(small_spec(Kind::sbs_snake, 2, 2), 3);
    perturb(m, 4);
    Evaluator ev(m);
    Dataset ds = random_samples(2, 2, 3, 12, 5);
    Evaluator::Summary s = ev.evaluate(ds);
    double loss = 0.0;
    long correct = 0;
    for (long i = 0; i < ds.size(); ++i) {
        Posterior p = ev.posterior(ds.input(i), 1);
        loss += -std::log(p.probs[ds.label(i)]);
        if (p.argmax() == ds.label(i))
            ++correct;
    }
    EXPECT_NEAR(s.loss, loss / ds.size(), 1e-12);
    EXPECT_DOUBLE_EQ(s.accuracy, static_cast<double>(correct) / ds.size());

    const std::vector<int> pred = ev.predict(ds);
    ASSERT_EQ(pred.size(), static_cast<size_t>(ds.size()));
    for (long i = 0; i < ds.size(); ++i)
        EXPECT_EQ(pred[i], ev.posterior(ds.input(i), 1).argmax());
}

TEST(Evaluate, SubsetIndicesAndEmptyBatch) {
    Model m = gtn::build(small_spec(Kind::mps, 1, 4, 2), 1);
    perturb(m, 2);
    Evaluator ev(m);
    Dataset ds = random_samples(1, 4, 2, 8, 3);
    Evaluator::Summary all = ev.evaluate(ds);
    Evaluator::Summary half = ev.evaluate(ds, {0, 2, 4, 6});
    EXPECT_NE(all.loss, half.loss); // almost surely
    EXPECT_THROW(ev.evaluate(ds, {}), gtn::InvalidArgumentError);
    EXPECT_THROW(ev.gradient(ds, {}), gtn::InvalidArgumentError);
}

TEST(Evaluate, DatasetGeometryIsChecked) {
    Model m = gtn::build(small_spec(Kind::mps, 1, 4, 2), 1);
    Evaluator ev(m);
    Dataset wrong = random_samples(1, 5, 2, 3, 1);
    EXPECT_THROW(ev.evaluate(wrong), gtn::ValidationError);
    Dataset badvec;
    badvec.width = 4;
    badvec.vec_dim = 3; // model expects scalars or 2-vectors
    badvec.add_sample(std::vector<double>(12, 0.1), 0);
    badvec.add_sample(std::vector<double>(12, 0.2), 1);
    EXPECT_THROW(ev.evaluate(badvec), gtn::ValidationError);
}

TEST(Evaluate, OverflowErrorCarriesStringTraces) {
    Model m = gtn::build(small_spec(Kind::mps, 1, 3, 2), 1);
    for (int i = 0; i < m.num_params(); ++i)
        m.param_mut(i).fill(1e200);
    Evaluator ev(m);
    const auto x = random_input(3, 1);
    try {
        ev.posterior(x.data(), 1);
        FAIL() << "expected NumericOverflowError";
    } catch (const gtn::NumericOverflowError &e) {
        ASSERT_EQ(e.string_traces.size(), 1u);
        EXPECT_FALSE(std::isfinite(e.string_traces[0]));
    }
}

TEST(Evaluate, MaskedElementsActAsZeros) {
    Model m = gtn::build(small_spec(Kind::sbs_snake, 2, 3), 6);
    perturb(m, 7);
    const auto x = random_input(6, 8);

    gtn::Mask mask(m.num_params());
    for (int i = 0; i < m.num_params(); ++i)
        mask[i].assign(m.param(i).size(), 1);
    // drop half the elements of one mid-string tensor
    const int target = m.strings[1].params[2];
    for (long e = 0; e < m.param(target).size(); e += 2)
        mask[target][e] = 0;

    Evaluator masked(m);
    masked.refresh(&mask);
    Posterior pm = masked.posterior(x.data(), 1);

    Model zeroed = m;
    for (long e = 0; e < zeroed.param(target).size(); e += 2)
        zeroed.param_mut(target).data()[e] = 0.0;
    Evaluator ev(zeroed);
    Posterior pz = ev.posterior(x.data(), 1);
    for (int k = 0; k < 3; ++k)
        EXPECT_DOUBLE_EQ(pm.log_scores[k], pz.log_scores[k]);

    // masked elements receive zero gradient
    Dataset ds = random_samples(2, 3, 3, 4, 9);
    std::vector<long> idx{0, 1, 2, 3};
    gtn::BatchGrad bg = masked.gradient(ds, idx);
    for (long e = 0; e < bg.g[target].size(); e += 2)
        EXPECT_DOUBLE_EQ(bg.g[target][e], 0.0);
    // clearing the mask restores the unmasked forward pass
    masked.refresh(nullptr);
    Posterior pf = masked.posterior(x.data(), 1);
    Evaluator plain(m);
    EXPECT_DOUBLE_EQ(pf.log_scores[0],
                     plain.posterior(x.data(), 1).log_scores[0]);
}

TEST(Evaluate, PositiveModeExponentiatesStoredParameters) {
    Model m = gtn::build(small_spec(Kind::sbs_snake, 2, 2), 3);
    Model plain = m;
    gtn::positive_reparam(m);
    ASSERT_TRUE(m.positive);
    // mirror the stored logs through exp by hand into a plain model
    for (int i = 0; i < m.num_params(); ++i)
        for (long e = 0; e < m.param(i).size(); ++e)
            plain.param_mut(i).data()[e] = std::exp(m.param(i)[e]);
    Evaluator pos(m);
    Evaluator ref(plain);
    const auto x = random_input(4, 4);
    Posterior a = pos.posterior(x.data(), 1);
    Posterior b = ref.posterior(x.data(), 1);
    for (int k = 0; k < 3; ++k)
        EXPECT_NEAR(a.log_scores[k], b.log_scores[k],
                    1e-12 * std::abs(b.log_scores[k]) + 1e-12);
}

TEST(Cache, EnvironmentsReproduceTheTraceEverywhere) {
    for (Kind k : {Kind::mps, Kind::sbs_snake, Kind::eps_sbs}) {
        Model m = gtn::build(small_spec(k, 3, 3), 10);
        perturb(m, 11);
        Evaluator ev(m);
        const auto x = random_input(9, 12);
        const int y = 1;
        gtn::EvalCache c = ev.make_cache(x.data(), 1, y);
        ASSERT_EQ(c.strings.size(), m.strings.size()) << gtn::to_string(k);
        for (const auto &sc : c.strings) {
            const long n = static_cast<long>(sc.mats.size());
            for (long j = 0; j < n; ++j) {
                const double t =
                    (sc.left[j] * sc.mats[j] * sc.right[j + 1]).trace();
                EXPECT_NEAR(t, sc.trace,
                            1e-10 * std::max(1.0, std::abs(sc.trace)))
                    << gtn::to_string(k) << " slot " << j;
            }
        }
        EXPECT_NEAR(c.scores[y], ev.score(x.data(), 1, y), 1e-12);
    }
}

TEST(Cache, EpsLinearScoresComeFromPlaquetteOutputs) {
    ArchitectureSpec s = small_spec(Kind::eps_linear, 3, 3, 2);
    s.eps_out_dim = 3;
    Model m = gtn::build(s, 14);
    std::mt19937_64 rng(15);
    std::normal_distribution<double> g(0.0, 0.5);
    for (long e = 0; e < m.param_mut(m.head_w_param).size(); ++e)
        m.param_mut(m.head_w_param).data()[e] = g(rng);
    for (long e = 0; e < m.param_mut(m.head_b_param).size(); ++e)
        m.param_mut(m.head_b_param).data()[e] = g(rng);

    Evaluator ev(m);
    const auto x = random_input(9, 16);
    gtn::EvalCache c = ev.make_cache(x.data(), 1, 0);
    ASSERT_EQ(c.plaquette_out.size(), 4u);
    const DenseTensor &W = m.param(m.head_w_param);
    const DenseTensor &b = m.param(m.head_b_param);
    for (int k = 0; k < 2; ++k) {
        double score = b[k];
        for (long p = 0; p < 4; ++p)
            for (long f = 0; f < 3; ++f)
                score += W.at({k, p * 3 + f}) * c.plaquette_out[p][f];
        EXPECT_NEAR(c.scores[k], score, 1e-12);
    }
}

TEST(Cache, FeatureClampCounterIsExposed) {
    Model m = gtn::build(small_spec(Kind::mps, 1, 3, 2), 1);
    Evaluator ev(m);
    std::vector<double> x{-0.5, 0.5, 1.5};
    const long before = ev.feature_clamps();
    ev.posterior(x.data(), 1);
    EXPECT_EQ(ev.feature_clamps(), before + 2);
}
