// Acceptance battery: ten shipped claims about this repository, checked
// end to end against the oracles and the frozen training protocols. One
// line per criterion; the exit status ignores failures that are documented
// capability findings (see "Known deviations" in the README) but fails on
// anything unexpected.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "gtn/train.hpp"
#include "gtn/verify.hpp"

using gtn::ArchitectureSpec;
using gtn::Dataset;
using gtn::Kind;
using gtn::Model;
using gtn::TrainConfig;

namespace {

using Clock = std::chrono::steady_clock;

double secs_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string repo_path(const std::string &rel) {
    return std::string(GTN_SOURCE_DIR) + "/" + rel;
}

std::string pct(double a) {
    char b[32];
    std::snprintf(b, sizeof b, "%.2f%%", 100.0 * a);
    return b;
}

std::string secs_str(double s) {
    char b[32];
    std::snprintf(b, sizeof b, "%.1f s", s);
    return b;
}

struct Line {
    int id = 0;
    bool pass = false;
    bool documented = false; // failing exactly as analysed in the README
    std::string detail;
};

void emit(const Line &l) {
    std::printf("[CRITERION %d] %s: %s\n", l.id,
                l.pass ? "PASS"
                       : (l.documented ? "FAIL (documented deviation)"
                                       : "FAIL"),
                l.detail.c_str());
    std::fflush(stdout);
}

Line guarded(int id, const std::function<Line()> &body) {
    try {
        return body();
    } catch (const std::exception &e) {
        return {id, false, false, std::string("exception: ") + e.what()};
    }
}

struct RunOut {
    gtn::Metrics metrics;
    double train_acc = 0.0;
    double test_acc = -1.0;
    std::string csv;
};

// Mirror of the command-line trainer: fresh seeded build, fit, then clean
// evaluations of the restored best model.
RunOut run_protocol(const ArchitectureSpec &sp, const TrainConfig &cfg,
                    const Dataset &tr, const Dataset &va,
                    const Dataset *test) {
    Model m = gtn::build(sp, cfg.seed);
    RunOut out;
    out.metrics = gtn::sgd_fit(m, tr, va, cfg);
    std::ostringstream os;
    gtn::write_metrics_csv(out.metrics, os);
    out.csv = os.str();
    gtn::Evaluator ev(m);
    out.train_acc = ev.evaluate(tr).accuracy;
    if (test != nullptr)
        out.test_acc = ev.evaluate(*test).accuracy;
    return out;
}

} // namespace

int main() {
    std::vector<Line> lines;
    auto record = [&](Line l) {
        emit(l);
        lines.push_back(std::move(l));
    };

    // shared datasets, filled by criteria 6 and 7, reused by 8 and 10
    Dataset xor_tr, xor_va;
    Dataset m_tr, m_va, m_test;

    // repeat closures and first-pass metrics for the determinism criterion
    std::vector<std::pair<std::string, std::function<std::string()>>> repeats;
    std::vector<std::string> first_csv;
    auto track = [&](const std::string &label, std::string csv,
                     std::function<std::string()> again) {
        first_csv.push_back(std::move(csv));
        repeats.emplace_back(label, std::move(again));
    };

    // ---- 1: four independent routes to the machine's input scores --------
    record(guarded(1, [&] {
        const auto t0 = Clock::now();
        std::mt19937_64 rng(101);
        gtn::verify::CheckResult r =
            gtn::verify::detail::check_rbm_triangle(rng, 20);
        const double dt = secs_since(t0);
        Line l{1, r.pass && dt < 10.0, false, ""};
        l.detail = r.detail + "; " + secs_str(dt) + " (budget 10 s)";
        return l;
    }));

    // ---- 2: analytic gradients vs central differences, every kind --------
    record(guarded(2, [&] {
        const auto t0 = Clock::now();
        struct GradCase {
            std::string name;
            ArchitectureSpec sp;
            std::uint64_t seed;
            bool positive;
        };
        std::vector<GradCase> cases;
        {
            ArchitectureSpec sp;
            sp.kind = Kind::mps;
            sp.grid_h = 3;
            sp.grid_w = 3;
            sp.bond_dim = 3;
            sp.num_classes = 3;
            cases.push_back({"mps", sp, 1235, false});
            sp.features.kind = gtn::FeatureKind::learnable_table;
            sp.features.bins = 16;
            cases.push_back({"mps+table", sp, 1236, false});
        }
        {
            ArchitectureSpec sp;
            sp.kind = Kind::eps_linear;
            sp.grid_h = 3;
            sp.grid_w = 3;
            sp.eps_out_dim = 2;
            sp.num_classes = 2;
            cases.push_back({"eps-linear", sp, 1237, false});
        }
        {
            ArchitectureSpec sp;
            sp.kind = Kind::sbs_2d;
            sp.grid_h = 3;
            sp.grid_w = 3;
            sp.bond_dim = 2;
            sp.num_classes = 2;
            sp.features.kind = gtn::FeatureKind::linear;
            cases.push_back({"sbs-2d", sp, 1238, false});
        }
        {
            ArchitectureSpec sp;
            sp.kind = Kind::sbs_snake;
            sp.grid_h = 3;
            sp.grid_w = 3;
            sp.bond_dim = 2;
            sp.num_classes = 2;
            sp.features.kind = gtn::FeatureKind::learnable_table;
            cases.push_back({"sbs-snake+table", sp, 1239, false});
            sp.features.kind = gtn::FeatureKind::trig_squared;
            cases.push_back({"sbs-snake positive", sp, 1240, true});
        }
        {
            ArchitectureSpec sp;
            sp.kind = Kind::eps_sbs;
            sp.grid_h = 3;
            sp.grid_w = 3;
            sp.bond_dim = 2;
            sp.eps_out_dim = 2;
            sp.num_classes = 2;
            cases.push_back({"eps-sbs", sp, 1241, false});
        }
        {
            ArchitectureSpec sp;
            sp.kind = Kind::rbm_sbs;
            sp.grid_h = 3;
            sp.grid_w = 3;
            sp.num_strings = 2;
            sp.num_classes = 2;
            cases.push_back({"rbm-sbs", sp, 1242, false});
        }

        Line l{2, true, false, ""};
        int ok = 0;
        std::string worst;
        for (const GradCase &c : cases) {
            gtn::verify::CheckResult r = gtn::verify::detail::check_gradient(
                c.name, c.sp, c.seed, c.positive);
            if (r.pass)
                ++ok;
            else {
                l.pass = false;
                worst += (worst.empty() ? "" : "; ") + c.name + ": " +
                         r.detail;
            }
        }
        const double dt = secs_since(t0);
        if (dt >= 60.0)
            l.pass = false;
        l.detail = std::to_string(ok) + "/8 configurations within 1e-5" +
                   (worst.empty() ? "" : " (" + worst + ")") + "; " +
                   secs_str(dt) + " (budget 60 s)";
        return l;
    }));

    // ---- 3: factor-graph marginals equal the dual contraction ------------
    record(guarded(3, [&] {
        std::mt19937_64 rng(103);
        gtn::verify::CheckResult r = gtn::verify::detail::check_duality(rng, 20);
        return Line{3, r.pass, false, r.detail};
    }));

    // ---- 4: two bond-2 strings equal their bond-4 product chain ----------
    record(guarded(4, [&] {
        std::mt19937_64 rng(104);
        gtn::verify::CheckResult r =
            gtn::verify::detail::check_kron_equivalence(rng);
        return Line{4, r.pass, false, r.detail};
    }));

    // ---- 5: snake strings cover every grid adjacency ---------------------
    record(guarded(5, [&] {
        gtn::verify::CheckResult r =
            gtn::verify::detail::check_snake_adjacency(6);
        return Line{5, r.pass, false, r.detail};
    }));

    // ---- 6: feature learning on the two-pixel XOR task -------------------
    record(guarded(6, [&] {
        const auto t0 = Clock::now();
        Dataset full = gtn::make_xor_features(2000, 11);
        std::tie(xor_tr, xor_va) = gtn::split(full, 1600, 400, 3);

        ArchitectureSpec fixed;
        fixed.kind = Kind::mps;
        fixed.grid_h = 1;
        fixed.grid_w = 2;
        fixed.bond_dim = 2;
        fixed.num_classes = 2;

        TrainConfig cfg;
        cfg.alpha = 1e-2;
        cfg.dropout_keep = 1.0;
        cfg.batch_size = 20;
        cfg.epochs = 300;
        cfg.seed = 5;

        RunOut fa = run_protocol(fixed, cfg, xor_tr, xor_va, nullptr);
        track("xor fixed", fa.csv, [&, fixed, cfg] {
            return run_protocol(fixed, cfg, xor_tr, xor_va, nullptr).csv;
        });

        ArchitectureSpec learn = fixed;
        learn.features.kind = gtn::FeatureKind::learnable_table;
        learn.features.bins = 16;
        TrainConfig lcfg = cfg;
        lcfg.pretrain_features = true;
        RunOut lb = run_protocol(learn, lcfg, xor_tr, xor_va, nullptr);
        track("xor learnable", lb.csv, [&, learn, lcfg] {
            return run_protocol(learn, lcfg, xor_tr, xor_va, nullptr).csv;
        });

        const double dt = secs_since(t0);
        const bool clause_a = fa.train_acc <= 0.90;
        const bool clause_b = lb.train_acc >= 0.9999;
        Line l{6, clause_a && clause_b && dt < 300.0, false, ""};
        // a fixed-feature pass here would contradict the measured capability
        // analysis; only the recorded direction counts as the known deviation
        l.documented = !l.pass && !clause_a && clause_b &&
                       fa.train_acc > 0.95 && dt < 300.0;
        l.detail = "fixed features: " + pct(fa.train_acc) +
                   " train accuracy (claim: stays at or below 90%; it does "
                   "not, the quadrant boundary is exactly bilinear in these "
                   "features); learnable 16-bin table: " + pct(lb.train_acc) +
                   " (claim: reaches 100%); " + secs_str(dt) +
                   " (budget 300 s)";
        return l;
    }));

    // ---- 7: desk-scale digit benchmark against two baselines -------------
    record(guarded(7, [&] {
        const auto t0 = Clock::now();
        Dataset all_train = gtn::load_idx(
            repo_path("data/mnist_subset/train-images-idx3-ubyte"),
            repo_path("data/mnist_subset/train-labels-idx1-ubyte"));
        m_test = gtn::load_idx(
            repo_path("data/mnist_subset/t1k-images-idx3-ubyte"),
            repo_path("data/mnist_subset/t1k-labels-idx1-ubyte"));
        std::tie(m_tr, m_va) = gtn::split(all_train, 4500, 500, 17);

        TrainConfig cfg;
        cfg.alpha = 1e-3;
        cfg.dropout_keep = 1.0;
        cfg.batch_size = 20;
        cfg.epochs = 40;
        cfg.seed = 42;

        ArchitectureSpec snake;
        snake.kind = Kind::sbs_snake;
        snake.grid_h = 28;
        snake.grid_w = 28;
        snake.bond_dim = 4;
        snake.num_classes = 10;
        RunOut sn = run_protocol(snake, cfg, m_tr, m_va, &m_test);
        track("mnist snake", sn.csv, [&, snake, cfg] {
            return run_protocol(snake, cfg, m_tr, m_va, &m_test).csv;
        });

        ArchitectureSpec eps;
        eps.kind = Kind::eps_linear;
        eps.grid_h = 28;
        eps.grid_w = 28;
        eps.plaq_h = 2;
        eps.plaq_w = 2;
        eps.eps_out_dim = 4;
        eps.num_classes = 10;
        RunOut ep = run_protocol(eps, cfg, m_tr, m_va, &m_test);
        track("mnist eps-linear", ep.csv, [&, eps, cfg] {
            return run_protocol(eps, cfg, m_tr, m_va, &m_test).csv;
        });

        ArchitectureSpec logreg;
        logreg.kind = Kind::eps_linear;
        logreg.grid_h = 28;
        logreg.grid_w = 28;
        logreg.plaq_h = 1;
        logreg.plaq_w = 1;
        logreg.eps_out_dim = 1;
        logreg.num_classes = 10;
        logreg.features.kind = gtn::FeatureKind::linear;
        RunOut lg = run_protocol(logreg, cfg, m_tr, m_va, &m_test);
        track("mnist logreg", lg.csv, [&, logreg, cfg] {
            return run_protocol(logreg, cfg, m_tr, m_va, &m_test).csv;
        });

        const double dt = secs_since(t0);
        const bool trained = !sn.metrics.failed && !ep.metrics.failed &&
                             !lg.metrics.failed;
        const bool floor_ok = sn.test_acc >= 0.90;
        const bool beats = sn.test_acc > ep.test_acc &&
                           sn.test_acc > lg.test_acc;
        Line l{7, trained && floor_ok && beats && dt < 1800.0, false, ""};
        l.detail = "snake-SBS D=4 test " + pct(sn.test_acc) +
                   " (floor 90%); eps-linear " + pct(ep.test_acc) +
                   "; pixel logistic " + pct(lg.test_acc) +
                   "; same trainer and split; " + secs_str(dt) +
                   " (budget 1800 s)";
        return l;
    }));

    // ---- 8: positive-element variant trains stably and is recorded -------
    record(guarded(8, [&] {
        const auto t0 = Clock::now();
        TrainConfig cfg;
        cfg.alpha = 3e-3;
        cfg.dropout_keep = 1.0;
        cfg.batch_size = 20;
        cfg.epochs = 40;
        cfg.seed = 42;
        cfg.positivity = true;

        ArchitectureSpec snake;
        snake.kind = Kind::sbs_snake;
        snake.grid_h = 28;
        snake.grid_w = 28;
        snake.bond_dim = 4;
        snake.num_classes = 10;
        RunOut po = run_protocol(snake, cfg, m_tr, m_va, &m_test);
        track("mnist positive snake", po.csv, [&, snake, cfg] {
            return run_protocol(snake, cfg, m_tr, m_va, &m_test).csv;
        });

        const double dt = secs_since(t0);
        const bool stable = !po.metrics.failed &&
                            std::isfinite(po.test_acc) && po.test_acc >= 0.0;
        Line l{8, stable, false, ""};
        l.detail = "40 epochs without numeric failure; recorded test "
                   "accuracy " + pct(po.test_acc) +
                   " (no threshold asserted); " + secs_str(dt);
        return l;
    }));

    // ---- 9: full-scale garment configurations ship and validate ----------
    record(guarded(9, [&] {
        const std::vector<std::string> files = {
            "configs/fashion_eps_linear_full.json",
            "configs/fashion_eps_sbs_full.json",
            "configs/fashion_snake_sbs_full.json"};
        int ok = 0;
        std::string errs;
        for (const std::string &f : files) {
            try {
                std::ifstream in(repo_path(f));
                if (!in)
                    throw gtn::ResourceError("cannot open " + f);
                nlohmann::json j = nlohmann::json::parse(in);
                gtn::detail::reject_unknown_keys(
                    j, {"architecture", "train", "data", "output_dir"}, f);
                ArchitectureSpec sp =
                    gtn::architecture_from_json(j.at("architecture"));
                (void)gtn::train_config_from_json(j.at("train"));
                if (j.at("data").at("kind").get<std::string>() != "idx")
                    throw gtn::ValidationError(f + ": expected idx data");
                if (j.at("output_dir").get<std::string>().empty())
                    throw gtn::ValidationError(f + ": empty output_dir");
                if (sp.num_classes != 10)
                    throw gtn::ValidationError(f + ": expected 10 classes");
                ++ok;
            } catch (const std::exception &e) {
                errs += (errs.empty() ? "" : "; ") + std::string(e.what());
            }
        }
        // the accuracy targets are documentation, not runs: check they are
        // stated in the README alongside the configs
        std::ifstream readme(repo_path("README.md"));
        std::ostringstream rs;
        rs << readme.rdbuf();
        const std::string text = rs.str();
        const bool documented = text.find("86.3") != std::string::npos &&
                                text.find("88.6") != std::string::npos &&
                                text.find("89.2") != std::string::npos;
        Line l{9, ok == 3 && documented, false, ""};
        l.detail = std::to_string(ok) +
                   "/3 full-scale configurations parse and validate; "
                   "targets " +
                   std::string(documented ? "documented in README"
                                          : "NOT found in README") +
                   (errs.empty() ? "" : "; " + errs);
        return l;
    }));

    // ---- 10: byte-identical metrics on re-run --------------------------
    record(guarded(10, [&] {
        const auto t0 = Clock::now();
        int same = 0;
        std::string diffs;
        for (size_t i = 0; i < repeats.size(); ++i) {
            const std::string again = repeats[i].second();
            if (again == first_csv[i])
                ++same;
            else
                diffs += (diffs.empty() ? "" : "; ") + repeats[i].first;
        }
        const double dt = secs_since(t0);
        Line l{10, same == static_cast<int>(repeats.size()) && !repeats.empty(),
               false, ""};
        l.detail = std::to_string(same) + "/" +
                   std::to_string(repeats.size()) +
                   " training runs byte-identical on repeat" +
                   (diffs.empty() ? "" : " (differ: " + diffs + ")") + "; " +
                   secs_str(dt);
        return l;
    }));

    int passed = 0, documented = 0, unexpected = 0;
    for (const Line &l : lines) {
        if (l.pass)
            ++passed;
        else if (l.documented)
            ++documented;
        else
            ++unexpected;
    }
    std::printf("%d/10 criteria pass, %d documented deviation(s), "
                "%d unexpected failure(s)\n",
                passed, documented, unexpected);
    return unexpected == 0 ? 0 : 1;
}
