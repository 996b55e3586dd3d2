// gtn: train, evaluate, verify, and export tensor-network classifiers.
//
// One JSON config file per training run; flags carry only paths, seeds and
// verbosity. Exit codes: 0 ok, 1 config error, 2 data error, 3 numeric
// failure, 4 verification failure.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gtn/checkpoint.hpp"
#include "gtn/train.hpp"
#include "gtn/verify.hpp"

namespace {

using nlohmann::json;

constexpr int kExitConfig = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitVerify = 4;

// ---------------------------------------------------------------------------
// Run configuration

struct DataConfig {
    std::string kind; // "idx", "csv" or "xor"
    std::string train_images, train_labels;
    std::string test_images, test_labels;
    std::string train_path, test_path;
    long xor_n = 2400;
    std::uint64_t gen_seed = 7;
    long n_val = -1;           // explicit validation count, or
    double val_fraction = 0.1; // fraction of the training set
    std::uint64_t split_seed = 7;
};

DataConfig data_from_json(const json &j) {
    gtn::detail::reject_unknown_keys(
        j,
        {"kind", "train_images", "train_labels", "test_images", "test_labels",
         "train_path", "test_path", "n", "gen_seed", "n_val", "val_fraction",
         "split_seed"},
        "data");
    DataConfig d;
    if (!j.contains("kind"))
        throw gtn::ValidationError("data: missing required key 'kind'");
    d.kind = j.at("kind").get<std::string>();
    if (d.kind != "idx" && d.kind != "csv" && d.kind != "xor")
        throw gtn::ValidationError("data: kind must be idx, csv or xor, got '" +
                                   d.kind + "'");
    auto get_str = [&](const char *k, std::string &out) {
        if (j.contains(k))
            out = j.at(k).get<std::string>();
    };
    get_str("train_images", d.train_images);
    get_str("train_labels", d.train_labels);
    get_str("test_images", d.test_images);
    get_str("test_labels", d.test_labels);
    get_str("train_path", d.train_path);
    get_str("test_path", d.test_path);
    if (j.contains("n"))
        d.xor_n = j.at("n").get<long>();
    if (j.contains("gen_seed"))
        d.gen_seed = j.at("gen_seed").get<std::uint64_t>();
    if (j.contains("n_val"))
        d.n_val = j.at("n_val").get<long>();
    if (j.contains("val_fraction"))
        d.val_fraction = j.at("val_fraction").get<double>();
    if (j.contains("split_seed"))
        d.split_seed = j.at("split_seed").get<std::uint64_t>();
    if (d.kind == "idx" && (d.train_images.empty() || d.train_labels.empty()))
        throw gtn::ValidationError(
            "data: kind idx requires train_images and train_labels");
    if (d.kind == "csv" && d.train_path.empty())
        throw gtn::ValidationError("data: kind csv requires train_path");
    if (d.kind == "xor" && d.xor_n < 4)
        throw gtn::ValidationError("data: xor needs n >= 4");
    if (d.val_fraction < 0.0 || d.val_fraction >= 1.0)
        throw gtn::ValidationError("data: val_fraction must be in [0, 1)");
    return d;
}

struct RunConfig {
    gtn::ArchitectureSpec arch;
    gtn::TrainConfig train;
    DataConfig data;
    std::string output_dir = ".";
    json canonical; // parsed config, for hashing
};

RunConfig parse_run_config(const std::string &path) {
    std::ifstream in(path);
    if (!in)
        throw gtn::ValidationError("config: cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception &e) {
        throw gtn::ValidationError(std::string("config: malformed JSON: ") +
                                   e.what());
    }
    try {
        gtn::detail::reject_unknown_keys(
            j, {"architecture", "train", "data", "output_dir"}, "config");
        RunConfig rc;
        if (!j.contains("architecture"))
            throw gtn::ValidationError("config: missing 'architecture'");
        if (!j.contains("data"))
            throw gtn::ValidationError("config: missing 'data'");
        rc.arch = gtn::architecture_from_json(j.at("architecture"));
        if (j.contains("train"))
            rc.train = gtn::train_config_from_json(j.at("train"));
        rc.data = data_from_json(j.at("data"));
        if (j.contains("output_dir"))
            rc.output_dir = j.at("output_dir").get<std::string>();
        rc.canonical = j;
        return rc;
    } catch (const json::exception &e) {
        throw gtn::ValidationError(std::string("config: ") + e.what());
    }
}

// FNV-1a over the canonical (key-sorted, whitespace-free) serialization.
std::string config_hash(const json &j) {
    const std::string s = j.dump();
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(h));
    return buf;
}

struct LoadedData {
    gtn::Dataset train, val, test;
    bool has_test = false;
};

LoadedData load_data(const DataConfig &d) {
    gtn::Dataset full;
    LoadedData out;
    if (d.kind == "idx") {
        full = gtn::load_idx(d.train_images, d.train_labels);
        if (!d.test_images.empty()) {
            out.test = gtn::load_idx(d.test_images, d.test_labels);
            out.has_test = true;
        }
    } else if (d.kind == "csv") {
        full = gtn::load_sequence_csv(d.train_path);
        if (!d.test_path.empty()) {
            out.test = gtn::load_sequence_csv(d.test_path);
            out.has_test = true;
        }
    } else {
        full = gtn::make_xor_features(d.xor_n, d.gen_seed);
    }
    long n_val = d.n_val >= 0
                     ? d.n_val
                     : static_cast<long>(d.val_fraction * full.size() + 0.5);
    if (n_val < 1 || n_val >= full.size())
        throw gtn::ValidationError("data: validation split of " +
                                   std::to_string(n_val) + " from " +
                                   std::to_string(full.size()) +
                                   " samples leaves no usable split");
    auto tv = gtn::split(full, full.size() - n_val, n_val, d.split_seed);
    out.train = std::move(tv.first);
    out.val = std::move(tv.second);
    return out;
}

// ---------------------------------------------------------------------------
// train

json grid_table_json(const gtn::GridResult &gr) {
    json rows = json::array();
    for (const auto &c : gr.table) {
        json r;
        r["bond_dim"] = c.bond_dim;
        r["alpha"] = c.alpha;
        r["dropout_keep"] = c.dropout_keep;
        r["val_acc"] = c.val_acc;
        r["failed"] = c.failed;
        if (!c.error.empty())
            r["error"] = c.error;
        rows.push_back(std::move(r));
    }
    return rows;
}

int cmd_train(const std::string &config_path, bool verbose) {
    RunConfig rc;
    try {
        rc = parse_run_config(config_path);
        rc.train.validate();
        rc.arch.validate();
    } catch (const gtn::Error &e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    }

    LoadedData data;
    try {
        data = load_data(rc.data);
        gtn::Model probe = gtn::build(rc.arch, 0);
        gtn::check_dataset(probe, data.train);
        gtn::check_dataset(probe, data.val);
        if (data.has_test)
            gtn::check_dataset(probe, data.test);
    } catch (const gtn::Error &e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    }

    if (verbose)
        rc.train.on_epoch = [](const gtn::EpochMetric &em) {
            std::printf("epoch %4d  train_loss %.6f  train_acc %.4f  "
                        "val_acc %.4f\n",
                        em.epoch, em.train_loss, em.train_acc, em.val_acc);
            std::fflush(stdout);
        };

    const bool grid = !rc.train.grid_alpha.empty() ||
                      !rc.train.grid_dropout.empty() ||
                      !rc.train.grid_bond.empty();

    gtn::Model model;
    gtn::Metrics metrics;
    json grid_json;
    try {
        if (grid) {
            gtn::GridResult gr =
                gtn::grid_search(rc.arch, data.train, data.val, rc.train);
            model = std::move(gr.model);
            metrics = std::move(gr.metrics);
            grid_json = grid_table_json(gr);
        } else {
            model = gtn::build(rc.arch, rc.train.seed);
            metrics = gtn::sgd_fit(model, data.train, data.val, rc.train);
        }
    } catch (const gtn::NumericOverflowError &e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const gtn::ResourceError &e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const gtn::Error &e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    }

    double train_acc = -1.0, test_acc = -1.0;
    if (!metrics.failed) {
        gtn::Evaluator ev(model);
        train_acc = ev.evaluate(data.train).accuracy;
        if (data.has_test) {
            test_acc = ev.evaluate(data.test).accuracy;
            metrics.final_test_acc = test_acc;
        }
    }

    namespace fs = std::filesystem;
    try {
        fs::create_directories(rc.output_dir);
        {
            std::ofstream mf(fs::path(rc.output_dir) / "metrics.csv");
            if (!mf)
                throw gtn::ResourceError("cannot write metrics.csv");
            gtn::write_metrics_csv(metrics, mf);
        }
        if (!metrics.failed)
            gtn::save_checkpoint(model,
                                 (fs::path(rc.output_dir) / "model.ckpt")
                                     .string());
        json s;
        s["best_epoch"] = metrics.best_epoch;
        s["best_val_accuracy"] = metrics.best_val_acc;
        s["config_hash"] = config_hash(rc.canonical);
        s["epochs_run"] = metrics.epochs.size();
        s["failed"] = metrics.failed;
        if (!metrics.error.empty())
            s["error"] = metrics.error;
        s["final_test_accuracy"] = test_acc;
        s["final_train_accuracy"] = train_acc;
        s["seed"] = rc.train.seed;
        if (grid)
            s["grid"] = grid_json;
        std::ofstream sf(fs::path(rc.output_dir) / "summary.json");
        if (!sf)
            throw gtn::ResourceError("cannot write summary.json");
        sf << s.dump(2) << "\n";
    } catch (const std::exception &e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    }

    if (metrics.failed) {
        std::cerr << "numeric failure: " << metrics.error << "\n";
        return kExitNumeric;
    }
    std::printf("best_val_acc %.6f (epoch %d)  train_acc %.6f",
                metrics.best_val_acc, metrics.best_epoch, train_acc);
    if (data.has_test)
        std::printf("  test_acc %.6f", test_acc);
    std::printf("  wall %.1fs\n", metrics.wall_seconds);
    return 0;
}

// ---------------------------------------------------------------------------
// eval

int cmd_eval(const std::string &ckpt_path, const DataConfig &dc,
             const std::string &confusion_path) {
    gtn::Model model;
    try {
        model = gtn::load_checkpoint(ckpt_path);
    } catch (const gtn::Error &e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    }

    gtn::Dataset ds;
    try {
        if (dc.kind == "idx")
            ds = gtn::load_idx(dc.train_images, dc.train_labels);
        else if (dc.kind == "csv")
            ds = gtn::load_sequence_csv(dc.train_path);
        else
            ds = gtn::make_xor_features(dc.xor_n, dc.gen_seed);
        gtn::check_dataset(model, ds);
    } catch (const gtn::Error &e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    }

    try {
        gtn::Evaluator ev(model);
        const std::vector<int> pred = ev.predict(ds);
        const int K = model.spec.num_classes;
        std::vector<long> confusion(static_cast<size_t>(K) * K, 0);
        long correct = 0;
        for (long i = 0; i < ds.size(); ++i) {
            confusion[static_cast<size_t>(ds.label(i)) * K + pred[i]]++;
            if (pred[i] == ds.label(i))
                ++correct;
        }
        const double acc =
            ds.size() ? static_cast<double>(correct) / ds.size() : 0.0;
        std::printf("accuracy %.6f (%ld/%ld)\n", acc, correct, ds.size());
        if (!confusion_path.empty()) {
            std::ofstream cf(confusion_path);
            if (!cf) {
                std::cerr << "data error: cannot write " << confusion_path
                          << "\n";
                return kExitData;
            }
            cf << "true_label";
            for (int k = 0; k < K; ++k)
                cf << ",pred_" << k;
            cf << "\n";
            for (int t = 0; t < K; ++t) {
                cf << t;
                for (int k = 0; k < K; ++k)
                    cf << "," << confusion[static_cast<size_t>(t) * K + k];
                cf << "\n";
            }
        }
        return 0;
    } catch (const gtn::NumericOverflowError &e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kExitNumeric;
    }
}

// ---------------------------------------------------------------------------
// verify

int cmd_verify(const std::string &scale, std::uint64_t seed) {
    gtn::verify::Options opt;
    if (scale == "small")
        opt.scale = gtn::verify::Scale::small_run;
    else if (scale == "full")
        opt.scale = gtn::verify::Scale::full_run;
    else {
        std::cerr << "config error: scale must be small or full\n";
        return kExitConfig;
    }
    opt.seed = seed;
    gtn::verify::Report rep = gtn::verify::run_verification(opt);
    std::vector<std::string> failing;
    for (const auto &c : rep.checks) {
        std::printf("%-22s %s  %s\n", c.name.c_str(),
                    c.pass ? "PASS" : "FAIL", c.detail.c_str());
        if (!c.pass)
            failing.push_back(c.name);
    }
    if (!failing.empty()) {
        std::string list;
        for (const auto &f : failing)
            list += (list.empty() ? "" : ", ") + f;
        std::cerr << "failing properties: " << list << "\n";
        return kExitVerify;
    }
    return 0;
}

// ---------------------------------------------------------------------------
// export-features / gen-data

int cmd_export_features(const std::string &ckpt_path,
                        const std::string &out_path) {
    try {
        gtn::Model model = gtn::load_checkpoint(ckpt_path);
        std::ofstream out(out_path);
        if (!out)
            throw gtn::ResourceError("cannot write " + out_path);
        gtn::export_features_csv(model.feature_map, out);
        return 0;
    } catch (const gtn::UnsupportedOperationError &e) {
        std::cerr << "config error: " << e.what()
                  << " (checkpoint has fixed features; nothing to export)\n";
        return kExitConfig;
    } catch (const gtn::Error &e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    }
}

int cmd_gen_data(const std::string &kind, long n, std::uint64_t seed,
                 const std::string &out_path) {
    if (kind != "xor") {
        std::cerr << "config error: unknown synthetic kind '" << kind
                  << "' (available: xor)\n";
        return kExitConfig;
    }
    try {
        gtn::Dataset ds = gtn::make_xor_features(n, seed);
        std::ofstream out(out_path);
        if (!out) {
            std::cerr << "data error: cannot write " << out_path << "\n";
            return kExitData;
        }
        gtn::write_sequence_csv(ds, {0.0}, {1.0}, out);
        return 0;
    } catch (const gtn::Error &e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    }
}

} // namespace

int main(int argc, char **argv) {
    if (const char *t = std::getenv("GTN_THREADS"))
        Eigen::setNbThreads(std::max(1, std::atoi(t)));

    CLI::App app{"generalized tensor-network classifiers"};
    app.require_subcommand(1);

    // train
    auto *train = app.add_subcommand("train", "train from a JSON run config");
    std::string config_path;
    bool verbose = false;
    train->add_option("config", config_path, "run config JSON")->required();
    train->add_flag("-v,--verbose", verbose, "print per-epoch metrics");

    // eval
    auto *eval = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string ckpt, images, labels, csv, confusion = "confusion.csv";
    eval->add_option("--checkpoint", ckpt, "model checkpoint")->required();
    eval->add_option("--images", images, "IDX image file");
    eval->add_option("--labels", labels, "IDX label file");
    eval->add_option("--csv", csv, "sequence CSV file");
    eval->add_option("--confusion", confusion,
                     "confusion matrix output path (empty to skip)");

    // verify
    auto *verify = app.add_subcommand("verify", "run the oracle battery");
    std::string scale = "small";
    std::uint64_t vseed = 1234;
    verify->add_option("--scale", scale, "small or full");
    verify->add_option("--seed", vseed, "battery seed");

    // export-features
    auto *exportf = app.add_subcommand("export-features",
                                       "dump the learned feature table");
    std::string exckpt, exout = "features.csv";
    exportf->add_option("--checkpoint", exckpt, "model checkpoint")
        ->required();
    exportf->add_option("--output", exout, "output CSV path");

    // gen-data
    auto *gen = app.add_subcommand("gen-data", "write a synthetic dataset");
    std::string gkind = "xor", gout = "xor.csv";
    long gn = 2400;
    std::uint64_t gseed = 7;
    gen->add_option("--kind", gkind, "dataset kind (xor)");
    gen->add_option("--n", gn, "number of samples");
    gen->add_option("--seed", gseed, "generator seed");
    gen->add_option("--output", gout, "output CSV path");

    CLI11_PARSE(app, argc, argv);

    if (train->parsed())
        return cmd_train(config_path, verbose);
    if (eval->parsed()) {
        DataConfig dc;
        if (!images.empty() || !labels.empty()) {
            dc.kind = "idx";
            dc.train_images = images;
            dc.train_labels = labels;
            if (images.empty() || labels.empty()) {
                std::cerr << "config error: --images and --labels go "
                             "together\n";
                return kExitConfig;
            }
        } else if (!csv.empty()) {
            dc.kind = "csv";
            dc.train_path = csv;
        } else {
            std::cerr << "config error: eval needs --images/--labels or "
                         "--csv\n";
            return kExitConfig;
        }
        return cmd_eval(ckpt, dc, confusion);
    }
    if (verify->parsed())
        return cmd_verify(scale, vseed);
    if (exportf->parsed())
        return cmd_export_features(exckpt, exout);
    if (gen->parsed())
        return cmd_gen_data(gkind, gn, gseed, gout);
    return kExitConfig;
}
