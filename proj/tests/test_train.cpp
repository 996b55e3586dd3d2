#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "gtn/pretrain.hpp"
#include "gtn/train.hpp"

using gtn::ArchitectureSpec;
using gtn::Dataset;
using gtn::FeatureKind;
using gtn::Kind;
using gtn::Model;
using gtn::TrainConfig;

namespace {

ArchitectureSpec xor_mps() {
    ArchitectureSpec s;
    s.kind = Kind::mps;
    s.grid_h = 1;
    s.grid_w = 2;
    s.bond_dim = 2;
    s.num_classes = 2;
    return s;
}

TrainConfig quiet_config() {
    TrainConfig c;
    c.alpha = 1e-2;
    c.dropout_keep = 1.0;
    c.batch_size = 20;
    c.epochs = 40;
    c.seed = 5;
    return c;
}

std::string metrics_string(const gtn::Metrics &m) {
    std::ostringstream os;
    gtn::write_metrics_csv(m, os);
    return os.str();
}

} // namespace

TEST(Config, ValidatesEveryField) {
    TrainConfig c;
    EXPECT_NO_THROW(c.validate());
    c.dropout_keep = 0.0;
    EXPECT_THROW(c.validate(), gtn::ValidationError);
    c = TrainConfig{};
    c.dropout_keep = 1.5;
    EXPECT_THROW(c.validate(), gtn::ValidationError);
    c = TrainConfig{};
    c.batch_size = 0;
    EXPECT_THROW(c.validate(), gtn::ValidationError);
    c = TrainConfig{};
    c.epochs = -1;
    EXPECT_THROW(c.validate(), gtn::ValidationError);
    c = TrainConfig{};
    c.alpha = -1.0;
    EXPECT_THROW(c.validate(), gtn::ValidationError);
    c = TrainConfig{};
    c.grid_alpha = {1e-3, -1.0};
    EXPECT_THROW(c.validate(), gtn::ValidationError);
    c = TrainConfig{};
    c.grid_dropout = {0.5, 1.2};
    EXPECT_THROW(c.validate(), gtn::ValidationError);
    c = TrainConfig{};
    c.grid_bond = {2, 0};
    EXPECT_THROW(c.validate(), gtn::ValidationError);
}

TEST(Config, KeepProbabilityReadsTheFlag) {
    TrainConfig c;
    c.dropout_keep = 0.95;
    EXPECT_DOUBLE_EQ(c.keep_probability(), 0.95);
    c.literal_drop_probability = true;
    EXPECT_NEAR(c.keep_probability(), 0.05, 1e-15);
}

TEST(Config, JsonRoundTripAndRejection) {
    TrainConfig c;
    c.alpha = 3e-3;
    c.dropout_keep = 0.9;
    c.batch_size = 10;
    c.epochs = 7;
    c.seed = 99;
    c.positivity = true;
    c.pretrain_features = true;
    c.pretrain_epochs = 50;
    c.pretrain_alpha = 0.1;
    c.grid_alpha = {1e-3, 1e-2};
    c.grid_bond = {2, 4};
    TrainConfig back = gtn::train_config_from_json(gtn::to_json(c));
    EXPECT_DOUBLE_EQ(back.alpha, c.alpha);
    EXPECT_DOUBLE_EQ(back.dropout_keep, c.dropout_keep);
    EXPECT_EQ(back.batch_size, c.batch_size);
    EXPECT_EQ(back.epochs, c.epochs);
    EXPECT_EQ(back.seed, c.seed);
    EXPECT_EQ(back.positivity, c.positivity);
    EXPECT_EQ(back.pretrain_features, c.pretrain_features);
    EXPECT_EQ(back.pretrain_epochs, c.pretrain_epochs);
    EXPECT_DOUBLE_EQ(back.pretrain_alpha, c.pretrain_alpha);
    EXPECT_EQ(back.grid_alpha, c.grid_alpha);
    EXPECT_EQ(back.grid_bond, c.grid_bond);

    nlohmann::json bad = {{"alpha", 1e-3}, {"alfa", 2.0}};
    EXPECT_THROW(gtn::train_config_from_json(bad), gtn::ValidationError);
    nlohmann::json badgrid = {{"grid", {{"alphas", {1e-3}}}}};
    EXPECT_THROW(gtn::train_config_from_json(badgrid), gtn::ValidationError);
    nlohmann::json badtype = {{"epochs", "ten"}};
    EXPECT_THROW(gtn::train_config_from_json(badtype), gtn::ValidationError);
}

TEST(Dropout, MaskShapeAndDeterminism) {
    ArchitectureSpec s;
    s.kind = Kind::sbs_snake;
    s.grid_h = 4;
    s.grid_w = 4;
    s.bond_dim = 3;
    Model m = gtn::build(s, 1);

    std::mt19937_64 rng(7);
    gtn::Mask ones = gtn::dropout_mask(m, 1.0, rng);
    ASSERT_EQ(static_cast<int>(ones.size()), m.num_params());
    for (int i = 0; i < m.num_params(); ++i) {
        ASSERT_EQ(static_cast<long>(ones[i].size()), m.param(i).size());
        for (unsigned char k : ones[i])
            EXPECT_EQ(k, 1);
    }

    std::mt19937_64 ra(7), rb(7);
    gtn::Mask a = gtn::dropout_mask(m, 0.7, ra);
    gtn::Mask b = gtn::dropout_mask(m, 0.7, rb);
    EXPECT_EQ(a, b);

    long kept = 0, total = 0;
    for (const auto &v : a)
        for (unsigned char k : v) {
            kept += k;
            ++total;
        }
    EXPECT_GT(total, 1000);
    EXPECT_NEAR(static_cast<double>(kept) / total, 0.7, 0.05);

    std::mt19937_64 rc(7);
    EXPECT_THROW(gtn::dropout_mask(m, 0.0, rc), gtn::InvalidArgumentError);
    EXPECT_THROW(gtn::dropout_mask(m, 1.1, rc), gtn::InvalidArgumentError);
}

TEST(Positive, ReparamNormalizesEffectiveRowSums) {
    ArchitectureSpec s;
    s.kind = Kind::sbs_snake;
    s.grid_h = 3;
    s.grid_w = 3;
    Model m = gtn::build(s, 11);
    gtn::positive_reparam(m);
    ASSERT_TRUE(m.positive);
    for (const auto &st : m.strings)
        for (long j = 0; j < st.length(); ++j) {
            const gtn::DenseTensor &p = m.param(st.params[j]);
            const long dr = p.extent(p.rank() - 1);
            const long rows = p.size() / dr;
            double mean = 0.0;
            for (long r = 0; r < rows; ++r)
                for (long b = 0; b < dr; ++b)
                    mean += std::exp(p.data()[r * dr + b]);
            EXPECT_NEAR(mean / rows, 1.0, 1e-12);
        }

    // a second call must not rescale anything
    Model copy = m;
    gtn::positive_reparam(m);
    for (int i = 0; i < m.num_params(); ++i)
        for (long e = 0; e < m.param(i).size(); ++e)
            EXPECT_DOUBLE_EQ(m.param(i)[e], copy.param(i)[e]);
}

TEST(Positive, SubKappaElementsClampBeforeTheLog) {
    ArchitectureSpec s = xor_mps();
    Model m = gtn::build(s, 1);
    // force one tensor fully negative: every element hits the kappa clamp,
    // so after the row-sum shift all entries agree
    const int t = m.strings[0].params[0];
    m.param_mut(t).fill(-2.0);
    gtn::positive_reparam(m);
    const gtn::DenseTensor &p = m.param(t);
    for (long e = 1; e < p.size(); ++e)
        EXPECT_DOUBLE_EQ(p[e], p[0]);
    const long dr = p.extent(p.rank() - 1);
    EXPECT_NEAR(std::exp(p[0]) * dr, 1.0, 1e-12);
}

TEST(Fit, LearnsXorWithPlainSgd) {
    Dataset full = gtn::make_xor_features(1000, 11);
    auto [train, val] = gtn::split(full, 800, 200, 3);
    Model m = gtn::build(xor_mps(), 5);
    TrainConfig cfg = quiet_config();
    cfg.epochs = 120;
    gtn::Metrics mt = gtn::sgd_fit(m, train, val, cfg);
    ASSERT_FALSE(mt.failed);
    ASSERT_EQ(mt.epochs.size(), 120u);
    EXPECT_GT(mt.best_val_acc, 0.95);
    EXPECT_GT(mt.epochs.back().train_acc, 0.95);
    EXPECT_LT(mt.epochs.back().train_loss, mt.epochs.front().train_loss);
}

TEST(Fit, MetricsTrackEpochsAndBestCheckpoint) {
    Dataset full = gtn::make_xor_features(400, 2);
    auto [train, val] = gtn::split(full, 300, 100, 1);
    Model m = gtn::build(xor_mps(), 3);
    TrainConfig cfg = quiet_config();
    cfg.epochs = 25;
    gtn::Metrics mt = gtn::sgd_fit(m, train, val, cfg);
    ASSERT_EQ(mt.epochs.size(), 25u);
    double best = -1.0;
    int best_epoch = -1;
    for (size_t e = 0; e < mt.epochs.size(); ++e) {
        EXPECT_EQ(mt.epochs[e].epoch, static_cast<int>(e));
        if (mt.epochs[e].val_acc > best) {
            best = mt.epochs[e].val_acc;
            best_epoch = static_cast<int>(e);
        }
    }
    EXPECT_DOUBLE_EQ(mt.best_val_acc, best);
    EXPECT_EQ(mt.best_epoch, best_epoch);
    // the returned parameters are the best-epoch snapshot
    gtn::Evaluator ev(m);
    EXPECT_DOUBLE_EQ(ev.evaluate(val).accuracy, mt.best_val_acc);
    EXPECT_GE(mt.wall_seconds, 0.0);
}

TEST(Fit, SameSeedSameMetricsDifferentSeedDifferent) {
    Dataset full = gtn::make_xor_features(300, 7);
    auto [train, val] = gtn::split(full, 240, 60, 2);
    TrainConfig cfg = quiet_config();
    cfg.epochs = 10;
    cfg.dropout_keep = 0.9; // exercise the dropout stream too
    Model a = gtn::build(xor_mps(), cfg.seed);
    gtn::Metrics ma = gtn::sgd_fit(a, train, val, cfg);
    Model b = gtn::build(xor_mps(), cfg.seed);
    gtn::Metrics mb = gtn::sgd_fit(b, train, val, cfg);
    EXPECT_EQ(metrics_string(ma), metrics_string(mb));
    for (int i = 0; i < a.num_params(); ++i)
        for (long e = 0; e < a.param(i).size(); ++e)
            EXPECT_DOUBLE_EQ(a.param(i)[e], b.param(i)[e]);

    TrainConfig other = cfg;
    other.seed = cfg.seed + 1;
    Model c = gtn::build(xor_mps(), other.seed);
    gtn::Metrics mc = gtn::sgd_fit(c, train, val, other);
    EXPECT_NE(metrics_string(ma), metrics_string(mc));
}

TEST(Fit, OnEpochHookSeesEveryEpoch) {
    Dataset full = gtn::make_xor_features(200, 4);
    auto [train, val] = gtn::split(full, 150, 50, 1);
    Model m = gtn::build(xor_mps(), 1);
    TrainConfig cfg = quiet_config();
    cfg.epochs = 6;
    std::vector<int> seen;
    cfg.on_epoch = [&](const gtn::EpochMetric &em) {
        seen.push_back(em.epoch);
    };
    gtn::sgd_fit(m, train, val, cfg);
    EXPECT_EQ(seen, (std::vector<int>{0, 1, 2, 3, 4, 5}));
}

TEST(Fit, AdamAlsoDescends) {
    Dataset full = gtn::make_xor_features(400, 6);
    auto [train, val] = gtn::split(full, 300, 100, 1);
    Model m = gtn::build(xor_mps(), 2);
    TrainConfig cfg = quiet_config();
    cfg.adam = true;
    cfg.alpha = 5e-3;
    cfg.epochs = 30;
    gtn::Metrics mt = gtn::sgd_fit(m, train, val, cfg);
    ASSERT_FALSE(mt.failed);
    EXPECT_LT(mt.epochs.back().train_loss, mt.epochs.front().train_loss);
}

TEST(Fit, PositivityTrainsWithoutFailure) {
    Dataset full = gtn::make_xor_features(400, 8);
    auto [train, val] = gtn::split(full, 300, 100, 1);
    Model m = gtn::build(xor_mps(), 2);
    TrainConfig cfg = quiet_config();
    cfg.positivity = true;
    cfg.epochs = 30;
    gtn::Metrics mt = gtn::sgd_fit(m, train, val, cfg);
    ASSERT_FALSE(mt.failed);
    EXPECT_TRUE(m.positive);
    EXPECT_GT(mt.best_val_acc, 0.4);
}

TEST(Fit, RejectsEmptySplitsAndFixedFeaturePretrain) {
    Dataset full = gtn::make_xor_features(100, 1);
    auto [train, val] = gtn::split(full, 80, 20, 1);
    Dataset empty = train.geometry_like();
    Model m = gtn::build(xor_mps(), 1);
    TrainConfig cfg = quiet_config();
    EXPECT_THROW(gtn::sgd_fit(m, empty, val, cfg),
                 gtn::InvalidArgumentError);
    EXPECT_THROW(gtn::sgd_fit(m, train, empty, cfg),
                 gtn::InvalidArgumentError);
    cfg.pretrain_features = true; // but the model has fixed trig features
    EXPECT_THROW(gtn::sgd_fit(m, train, val, cfg), gtn::ValidationError);
}

TEST(Fit, DivergentRateReportsNumericFailure) {
    Dataset full = gtn::make_xor_features(200, 9);
    auto [train, val] = gtn::split(full, 160, 40, 1);
    Model m = gtn::build(xor_mps(), 1);
    TrainConfig cfg = quiet_config();
    cfg.alpha = 1e150; // overflows inside the first epoch
    cfg.epochs = 10;
    gtn::Metrics mt = gtn::sgd_fit(m, train, val, cfg);
    EXPECT_TRUE(mt.failed);
    EXPECT_FALSE(mt.error.empty());
    EXPECT_EQ(mt.best_epoch, -1);
    EXPECT_DOUBLE_EQ(mt.best_val_acc, 0.0);
    EXPECT_LT(mt.epochs.size(), 10u);
    // the model was rolled back to a finite state
    gtn::Evaluator ev(m);
    EXPECT_NO_THROW(ev.evaluate(val));
}

TEST(Pretrain, LinearProbeShapesTheTable) {
    // threshold task a per-site table can express: label = 1{x > 1/2}
    Dataset ds;
    ds.height = 1;
    ds.width = 1;
    ds.num_classes = 2;
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 400; ++i) {
        const double x = u(rng);
        ds.add_sample({x}, x > 0.5 ? 1 : 0);
    }
    std::mt19937_64 frng(4);
    gtn::FeatureMap fm = gtn::FeatureMap::learnable(2, 16, frng);
    gtn::PretrainResult pr = gtn::pretrain_features(fm, ds, 200, 0.5, 1);
    EXPECT_GT(pr.train_accuracy, 0.95);
    EXPECT_TRUE(std::isfinite(pr.final_loss));
    EXPECT_TRUE(pr.map.learnable_kind());

    gtn::FeatureMap fixed = gtn::FeatureMap::fixed(FeatureKind::trig_squared);
    EXPECT_THROW(gtn::pretrain_features(fixed, ds, 10, 0.1, 1),
                 gtn::UnsupportedOperationError);
    Dataset empty;
    empty.width = 1;
    EXPECT_THROW(gtn::pretrain_features(fm, empty, 10, 0.1, 1),
                 gtn::InvalidArgumentError);
}

TEST(Grid, AscendingOrderAndSmallestTieWins) {
    Dataset full = gtn::make_xor_features(100, 5);
    auto [train, val] = gtn::split(full, 80, 20, 1);
    ArchitectureSpec s = xor_mps();
    TrainConfig cfg = quiet_config();
    cfg.epochs = 0; // every cell scores the untrained model: a perfect tie
    cfg.grid_bond = {3, 2};
    gtn::GridResult gr = gtn::grid_search(s, train, val, cfg);
    ASSERT_EQ(gr.table.size(), 2u);
    EXPECT_EQ(gr.table[0].bond_dim, 2); // cells run in ascending order
    EXPECT_EQ(gr.table[1].bond_dim, 3);
    EXPECT_DOUBLE_EQ(gr.table[0].val_acc, gr.table[1].val_acc);
    EXPECT_EQ(gr.best_cell, 0); // ties resolve to the smallest bond
    EXPECT_EQ(gr.model.spec.bond_dim, 2);
}

TEST(Grid, FailedCellsAreRecordedAndSkipped) {
    Dataset full = gtn::make_xor_features(200, 6);
    auto [train, val] = gtn::split(full, 160, 40, 1);
    TrainConfig cfg = quiet_config();
    cfg.epochs = 5;
    cfg.grid_alpha = {1e150, 1e-2};
    gtn::GridResult gr = gtn::grid_search(xor_mps(), train, val, cfg);
    ASSERT_EQ(gr.table.size(), 2u);
    EXPECT_DOUBLE_EQ(gr.table[0].alpha, 1e-2);
    EXPECT_FALSE(gr.table[0].failed);
    EXPECT_DOUBLE_EQ(gr.table[1].alpha, 1e150);
    EXPECT_TRUE(gr.table[1].failed);
    EXPECT_FALSE(gr.table[1].error.empty());
    EXPECT_EQ(gr.best_cell, 0);
    EXPECT_DOUBLE_EQ(gr.cfg.alpha, 1e-2);
    ASSERT_FALSE(gr.metrics.failed);

    TrainConfig allbad = cfg;
    allbad.grid_alpha = {1e150};
    EXPECT_THROW(gtn::grid_search(xor_mps(), train, val, allbad),
                 gtn::ResourceError);
}

TEST(Metrics, CsvIsStableAndExcludesWallClock) {
    gtn::Metrics m;
    m.epochs.push_back({0, 0.5, 0.25, 1.0});
    m.epochs.push_back({1, 0.125, 0.75, 0.5});
    m.wall_seconds = 123.0; // must not appear
    EXPECT_EQ(metrics_string(m),
              "epoch,train_loss,train_acc,val_acc\n"
              "0,0.5,0.25,1\n"
              "1,0.125,0.75,0.5\n");
}
