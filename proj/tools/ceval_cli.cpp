// Command-line front end: train models, compute the metric, sweep plots,
// rank explainers, run the near-affine diagnostic, and correlate models.
// Every run writes a manifest with the fully resolved configuration.

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ceval/dataset.hpp"
#include "ceval/explain.hpp"
#include "ceval/metric.hpp"
#include "ceval/oracle.hpp"
#include "ceval/parallel.hpp"
#include "ceval/report.hpp"
#include "ceval/train.hpp"

namespace fs = std::filesystem;
using namespace ceval;

namespace {

struct CommonOpts {
    uint64_t seed = 0;
    std::string out = "run";
    std::string backend = "cw";
    int workers = default_workers();
};

void add_common(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--seed", o.seed, "Global seed");
    cmd->add_option("--out", o.out, "Output directory");
    cmd->add_option("--backend", o.backend, "Attack backend")
        ->check(CLI::IsMember({"gsa", "iga", "cw", "oracle"}));
    cmd->add_option("--workers", o.workers, "Worker pool size");
}

struct DataOpts {
    std::string data = "digits";
    std::string data_dir;
    int64_t train_count = 4000;
    int64_t test_count = 1000;
    int64_t blob_dims = 16;
    int blob_classes = 3;
    double blob_sep = 8.0;
};

void add_data(CLI::App* cmd, DataOpts& o) {
    cmd->add_option("--data", o.data, "Dataset: mnist, digits or blobs")
        ->check(CLI::IsMember({"mnist", "digits", "blobs"}));
    cmd->add_option("--data-dir", o.data_dir, "Directory with MNIST IDX files");
    cmd->add_option("--train-count", o.train_count, "Synthetic train size");
    cmd->add_option("--test-count", o.test_count, "Synthetic test size");
    cmd->add_option("--blob-dims", o.blob_dims, "Blob feature count");
    cmd->add_option("--blob-classes", o.blob_classes, "Blob class count");
    cmd->add_option("--blob-sep", o.blob_sep, "Blob class separation");
}

Dataset load_split(const DataOpts& o, uint64_t seed, bool train_split) {
    if (o.data == "mnist") {
        if (o.data_dir.empty())
            throw PreconditionError("--data mnist requires --data-dir with the IDX files");
        std::string img = train_split ? "train-images-idx3-ubyte" : "t10k-images-idx3-ubyte";
        std::string lab = train_split ? "train-labels-idx1-ubyte" : "t10k-labels-idx1-ubyte";
        Dataset d = load_idx((fs::path(o.data_dir) / img).string(),
                             (fs::path(o.data_dir) / lab).string());
        d.name = "mnist";
        d.split = train_split ? "train" : "test";
        return d;
    }
    if (o.data == "digits") {
        return make_synthetic_digits(train_split ? o.train_count : o.test_count,
                                     seed + (train_split ? 0 : 1000000007ULL),
                                     train_split ? "train" : "test");
    }
    Dataset d = make_gaussian_blobs(o.blob_dims, o.blob_classes,
                                    (train_split ? o.train_count : o.test_count) / o.blob_classes,
                                    o.blob_sep, seed + (train_split ? 0 : 1000000007ULL));
    d.split = train_split ? "train" : "test";
    return d;
}

fs::path prepare_out(const std::string& out) {
    fs::path dir(out);
    fs::create_directories(dir);
    return dir;
}

BackendConfig make_backend(const std::string& tag) {
    BackendConfig cfg;
    cfg.kind = metric_backend_from_tag(tag);
    return cfg;
}

struct ExplainerSpec {
    std::string id;       // normalized id, e.g. "ig:10"
    std::string name;     // gradient, gradxinput, ig, lime, dummy-*
    int ig_steps = 10;
    int lime_samples = 300;
    double lime_fill = 0.0;
    uint64_t lime_seed = 1;
    uint64_t random_seed = 1;
    int grid_rows = 7;
    int grid_cols = 7;
};

// Accepts "name", "name:<n>" and "name:key=val[,key=val...]". A bare number
// means steps for ig and samples for lime.
std::vector<ExplainerSpec> parse_explainer(const std::string& text, int grid_rows, int grid_cols) {
    ExplainerSpec base;
    base.grid_rows = grid_rows;
    base.grid_cols = grid_cols;
    std::string name = text;
    std::string args;
    if (auto pos = text.find(':'); pos != std::string::npos) {
        name = text.substr(0, pos);
        args = text.substr(pos + 1);
    }
    base.name = name;
    const std::vector<std::string> known{"gradient", "gradxinput", "ig",
                                         "lime",     "dummy-center", "dummy-random",
                                         "dummy-border"};
    if (std::find(known.begin(), known.end(), name) == known.end())
        throw PreconditionError("unknown explainer '" + name + "'");

    // split and expand comma-separated values of the last key
    std::vector<std::string> values{""};
    std::string key;
    std::vector<ExplainerSpec> out;
    auto apply = [&](ExplainerSpec& spec, const std::string& k, const std::string& v) {
        if (k == "steps" || (k.empty() && spec.name == "ig")) spec.ig_steps = std::stoi(v);
        else if (k == "samples" || (k.empty() && spec.name == "lime"))
            spec.lime_samples = std::stoi(v);
        else if (k == "fill") spec.lime_fill = std::stod(v);
        else if (k == "seed") {
            spec.lime_seed = std::stoull(v);
            spec.random_seed = std::stoull(v);
        } else
            throw PreconditionError("unknown explainer argument '" + k + "' for " + spec.name);
    };
    if (args.empty()) {
        out.push_back(base);
    } else {
        std::vector<std::pair<std::string, std::string>> kvs;
        std::string cur;
        for (char ch : args + ",") {
            if (ch == ',') {
                if (cur.empty()) continue;
                auto eq = cur.find('=');
                if (eq == std::string::npos) kvs.push_back({"", cur});
                else kvs.push_back({cur.substr(0, eq), cur.substr(eq + 1)});
                cur.clear();
            } else {
                cur += ch;
            }
        }
        // bare values after the first key continue that key (lime:samples=50,200,1000)
        std::vector<std::vector<std::pair<std::string, std::string>>> expanded{{}};
        std::string last_key;
        std::vector<std::string> last_values;
        for (auto& [k, v] : kvs) {
            if (k.empty() && !last_key.empty()) {
                last_values.push_back(v);
                continue;
            }
            if (!last_key.empty()) {
                auto prev = expanded;
                expanded.clear();
                for (const auto& combo : prev)
                    for (const auto& val : last_values) {
                        auto next = combo;
                        next.push_back({last_key, val});
                        expanded.push_back(next);
                    }
            }
            last_key = k;
            last_values = {v};
        }
        if (!last_key.empty() || !last_values.empty()) {
            auto prev = expanded;
            expanded.clear();
            for (const auto& combo : prev)
                for (const auto& val : last_values) {
                    auto next = combo;
                    next.push_back({last_key, val});
                    expanded.push_back(next);
                }
        }
        for (const auto& combo : expanded) {
            ExplainerSpec spec = base;
            for (const auto& [k, v] : combo) apply(spec, k, v);
            out.push_back(spec);
        }
    }
    for (auto& spec : out) {
        spec.id = spec.name;
        if (spec.name == "ig") spec.id += ":" + std::to_string(spec.ig_steps);
        if (spec.name == "lime") spec.id += ":samples=" + std::to_string(spec.lime_samples);
    }
    return out;
}

ImportanceMap run_importance(const ExplainerSpec& spec, const Classifier& model, const Tensor& x) {
    if (spec.name == "gradient") return explain_gradient(model, x);
    if (spec.name == "gradxinput") return explain_grad_times_input(model, x);
    if (spec.name == "ig")
        return explain_integrated_gradients(model, x, Tensor(x.shape), spec.ig_steps);
    if (spec.name == "lime") {
        SegmentMap seg = grid_segment(model.input_shape, spec.grid_rows, spec.grid_cols);
        return explain_lime(model, x, seg, spec.lime_samples, spec.lime_seed, spec.lime_fill);
    }
    if (spec.name == "dummy-center") return explain_dummy(model.input_shape, DummyKind::CenterSquare);
    if (spec.name == "dummy-border") return explain_dummy(model.input_shape, DummyKind::Border);
    return explain_dummy(model.input_shape, DummyKind::Random, spec.random_seed);
}

Explanation run_explanation(const ExplainerSpec& spec, const Classifier& model, const Tensor& x,
                            int64_t k) {
    ImportanceMap imp = run_importance(spec, model, x);
    if (spec.name == "lime") {
        SegmentMap seg = grid_segment(model.input_shape, spec.grid_rows, spec.grid_cols);
        return segment_budget_explanation(imp, seg, k);
    }
    return top_k(imp, k);
}

Tensor load_input_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open '" + path + "'");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(f);
    } catch (const nlohmann::json::parse_error& e) {
        throw IoError("'" + path + "': malformed JSON at byte offset " + std::to_string(e.byte));
    }
    if (!j.contains("shape") || !j.contains("data"))
        throw IoError("'" + path + "': expected fields \"shape\" and \"data\"");
    return Tensor(j.at("shape").get<Shape>(), j.at("data").get<std::vector<double>>());
}

std::string fmt(double v) { return format_double(v); }

// -------------------------------------------------------------------------
// train

struct TrainCmd {
    CommonOpts common;
    DataOpts data;
    std::string arch = "mlp";
    std::string hidden = "128";
    std::string optimizer = "adam";
    int epochs = 5;
    int batch_size = 32;
    double lr = 1e-3;
    double adversarial_eps = 0.0;
    int adversarial_iters = 7;
    bool adversarial_all = false;
};

void run_train(const TrainCmd& o) {
    fs::path out = prepare_out(o.common.out);
    Dataset train_set = load_split(o.data, o.common.seed, true);
    Dataset test_set = load_split(o.data, o.common.seed, false);

    Classifier model;
    if (o.arch == "affine") {
        model = Classifier::affine(train_set.images.front().size(), train_set.num_classes());
    } else if (o.arch == "mlp") {
        std::vector<int64_t> hidden;
        std::string cur;
        for (char ch : o.hidden + ",") {
            if (ch == ',') {
                if (!cur.empty()) hidden.push_back(std::stoll(cur));
                cur.clear();
            } else {
                cur += ch;
            }
        }
        model = Classifier::mlp(train_set.images.front().shape, hidden, train_set.num_classes());
    } else if (o.arch == "convnet") {
        model = Classifier::lenet_lite(train_set.images.front().shape, train_set.num_classes());
    } else {
        throw PreconditionError("unknown arch '" + o.arch + "'");
    }
    model.init_weights(o.common.seed);

    TrainConfig cfg;
    cfg.optimizer = o.optimizer == "sgd" ? OptKind::Sgd : OptKind::Adam;
    cfg.lr = o.lr;
    cfg.epochs = o.epochs;
    cfg.batch_size = o.batch_size;
    cfg.seed = o.common.seed;
    bool adversarial = o.adversarial_eps > 0.0;
    if (adversarial)
        cfg.adversarial = AdversarialConfig{o.adversarial_eps, !o.adversarial_all,
                                            o.adversarial_iters};

    TrainHistory hist = adversarial ? train_adversarial(model, train_set, cfg)
                                    : train(model, train_set, cfg);

    save_model(model, (out / "model.json").string());
    std::vector<std::vector<std::string>> rows;
    for (const auto& e : hist.epochs)
        rows.push_back({std::to_string(e.epoch), fmt(e.loss), fmt(e.accuracy)});
    write_csv((out / "history.csv").string(), {"epoch", "loss", "accuracy"}, rows);

    double test_acc = evaluate_accuracy(model, test_set);
    std::map<std::string, std::string> manifest{
        {"command", "train"},
        {"arch", o.arch},
        {"data", o.data.data},
        {"data_dir", o.data.data_dir},
        {"hidden", o.hidden},
        {"optimizer", o.optimizer},
        {"epochs", std::to_string(o.epochs)},
        {"batch_size", std::to_string(o.batch_size)},
        {"lr", fmt(o.lr)},
        {"seed", std::to_string(o.common.seed)},
        {"train_count", std::to_string(train_set.size())},
        {"test_count", std::to_string(test_set.size())},
        {"test_accuracy", fmt(test_acc)},
        {"model_file", (out / "model.json").string()},
    };
    if (adversarial) {
        manifest["adversarial_eps"] = fmt(o.adversarial_eps);
        manifest["adversarial_iters"] = std::to_string(o.adversarial_iters);
        double adv_acc =
            adversarial_accuracy(model, test_set, o.adversarial_eps, o.adversarial_iters);
        manifest["adversarial_accuracy"] = fmt(adv_acc);
        std::cout << "adversarial_accuracy " << fmt(adv_acc) << "\n";
    }
    write_manifest((out / "manifest.txt").string(), "train", manifest);
    std::cout << "test_accuracy " << fmt(test_acc) << "\n";
}

// -------------------------------------------------------------------------
// ceval

struct CevalCmd {
    CommonOpts common;
    DataOpts data;
    std::string model_path;
    std::string input_file;
    int64_t image = 0;
    std::string explainer = "gradient";
    int64_t k = -1;
    double k_fraction = 0.1;
    int grid_rows = 7, grid_cols = 7;
    bool save_delta = false;
    bool normalized = true;
};

void run_ceval(const CevalCmd& o) {
    if (o.model_path.empty()) throw PreconditionError("ceval: --model is required");
    fs::path out = prepare_out(o.common.out);
    Classifier model = load_model(o.model_path);
    Tensor x;
    if (!o.input_file.empty()) {
        x = load_input_file(o.input_file);
    } else {
        Dataset test_set = load_split(o.data, o.common.seed, false);
        if (o.image < 0 || o.image >= test_set.size())
            throw PreconditionError("--image outside the test split");
        x = test_set.images[static_cast<size_t>(o.image)];
    }
    int64_t n = x.size();
    int64_t k = o.k >= 0 ? o.k : static_cast<int64_t>(std::ceil(o.k_fraction * n));

    auto specs = parse_explainer(o.explainer, o.grid_rows, o.grid_cols);
    if (specs.size() != 1)
        throw PreconditionError("ceval expects a single explainer parameterization");
    ImportanceMap importance = run_importance(specs[0], model, x);
    Explanation e;
    if (specs[0].name == "lime") {
        SegmentMap seg = grid_segment(model.input_shape, specs[0].grid_rows, specs[0].grid_cols);
        e = segment_budget_explanation(importance, seg, k);
    } else {
        e = top_k(importance, k);
    }
    BackendConfig backend = make_backend(o.common.backend);
    CEvalResult r = o.normalized ? compute_normalized(model, x, e, backend)
                                 : compute_ceval(model, x, e, backend);

    write_text_file((out / "ceval.json").string(), ceval_result_to_json(r) + "\n");
    write_text_file((out / "explanation.json").string(), explanation_to_json(e) + "\n");
    write_importance_csv(importance, (out / "importance.csv").string());
    if (o.save_delta && std::isfinite(r.c_value) && backend.kind != MetricBackend::Oracle) {
        Mask mask = Mask::from_explanation(e, n);
        AttackConfig acfg = backend.attack;
        acfg.backend = backend.kind == MetricBackend::Gsa   ? AttackBackend::Gsa
                       : backend.kind == MetricBackend::Iga ? AttackBackend::Iga
                                                            : AttackBackend::Cw;
        PerturbationResult pr = run_attack(model, x, mask, acfg);
        write_text_file((out / "perturbation.json").string(),
                        perturbation_to_json(pr, true) + "\n");
    }
    write_manifest((out / "manifest.txt").string(), "ceval",
                   {{"command", "ceval"},
                    {"model", o.model_path},
                    {"input_file", o.input_file},
                    {"image", std::to_string(o.image)},
                    {"explainer", specs[0].id},
                    {"k", std::to_string(k)},
                    {"backend", o.common.backend},
                    {"seed", std::to_string(o.common.seed)},
                    {"c", fmt(r.c_value)}});
    std::cout << "c " << fmt(r.c_value) << "\n";
    if (r.normalized) std::cout << "normalized " << fmt(*r.normalized) << "\n";
}

// -------------------------------------------------------------------------
// plot

struct PlotCmd {
    CommonOpts common;
    DataOpts data;
    std::string model_path;
    std::string input_file;
    int64_t image = 0;
    std::vector<std::string> explainers{};
    std::string k_list = "0,8,16,32,64,128";
    int grid_rows = 7, grid_cols = 7;
};

std::vector<int64_t> parse_int_list(const std::string& text) {
    std::vector<int64_t> out;
    std::string cur;
    for (char ch : text + ",") {
        if (ch == ',') {
            if (!cur.empty()) out.push_back(std::stoll(cur));
            cur.clear();
        } else {
            cur += ch;
        }
    }
    return out;
}

std::string sanitize(const std::string& name) {
    std::string out;
    for (char c : name) out += (std::isalnum(static_cast<unsigned char>(c)) ? c : '_');
    return out;
}

void run_plot(const PlotCmd& o) {
    if (o.model_path.empty()) throw PreconditionError("plot: --model is required");
    fs::path out = prepare_out(o.common.out);
    Classifier model = load_model(o.model_path);
    Tensor x;
    if (!o.input_file.empty()) {
        x = load_input_file(o.input_file);
    } else {
        Dataset test_set = load_split(o.data, o.common.seed, false);
        if (o.image < 0 || o.image >= test_set.size())
            throw PreconditionError("--image outside the test split");
        x = test_set.images[static_cast<size_t>(o.image)];
    }
    std::vector<int64_t> ks = parse_int_list(o.k_list);
    BackendConfig backend = make_backend(o.common.backend);

    std::vector<ExplainerSpec> specs;
    std::vector<std::string> requested = o.explainers;
    if (requested.empty()) requested.push_back("gradient");
    for (const auto& text : requested)
        for (auto& s : parse_explainer(text, o.grid_rows, o.grid_cols)) specs.push_back(s);

    std::vector<SvgSeries> series;
    for (const auto& spec : specs) {
        ImportanceMap imp = run_importance(spec, model, x);
        CEvalPlot plot = ceval_plot(model, x, imp, ks, backend, o.common.workers);
        std::vector<std::vector<std::string>> rows;
        SvgSeries s;
        s.name = spec.id;
        for (const auto& p : plot.points) {
            rows.push_back({std::to_string(p.k), p.ok ? fmt(p.c_value) : "unavailable"});
            if (p.ok) s.points.push_back({static_cast<double>(p.k), p.c_value});
        }
        write_csv((out / ("plot_" + sanitize(spec.id) + ".csv")).string(), {"k", "c_value"}, rows);
        series.push_back(std::move(s));
    }
    write_svg_line_chart((out / "plot.svg").string(), series, "k (explanation size)", "c-Eval");
    write_manifest((out / "manifest.txt").string(), "plot",
                   {{"command", "plot"},
                    {"model", o.model_path},
                    {"image", std::to_string(o.image)},
                    {"k_list", o.k_list},
                    {"backend", o.common.backend},
                    {"seed", std::to_string(o.common.seed)},
                    {"series", std::to_string(series.size())}});
    std::cout << "series " << series.size() << "\n";
}

// -------------------------------------------------------------------------
// rank

struct RankCmd {
    CommonOpts common;
    DataOpts data;
    std::string model_path;
    int64_t sample_count = 100;
    std::string explainers = "gradient,gradxinput,ig:10,dummy-random";
    double k_fraction = 0.1;
    int grid_rows = 7, grid_cols = 7;
};

void run_rank(const RankCmd& o) {
    if (o.model_path.empty()) throw PreconditionError("rank: --model is required");
    if (o.sample_count < 1) throw PreconditionError("--sample must be >= 1");
    fs::path out = prepare_out(o.common.out);
    Classifier model = load_model(o.model_path);
    Dataset test_set = load_split(o.data, o.common.seed, false);
    Dataset subset = sample(test_set, std::min(o.sample_count, test_set.size()), o.common.seed);

    // comma-separated list of specs; per-spec arguments use the colon form
    // without comma lists (those are for plot series expansion)
    std::vector<NamedExplainer> named;
    std::string cur;
    for (char ch : o.explainers + ",") {
        if (ch == ',') {
            if (!cur.empty()) {
                for (auto& spec : parse_explainer(cur, o.grid_rows, o.grid_cols)) {
                    named.push_back(
                        {spec.id, [spec](const Classifier& m, const Tensor& xx, int64_t k) {
                             return run_explanation(spec, m, xx, k);
                         }});
                }
            }
            cur.clear();
        } else {
            cur += ch;
        }
    }

    BackendConfig backend = make_backend(o.common.backend);
    auto rows = rank_explainers(model, subset, named, o.k_fraction, backend, o.common.workers);

    std::vector<std::vector<std::string>> csv;
    std::vector<BoxRow> boxes;
    for (const auto& r : rows) {
        csv.push_back({r.explainer, fmt(r.mean_C), fmt(r.median_C), fmt(r.q1), fmt(r.q3),
                       std::to_string(r.n), std::to_string(r.skipped)});
        if (r.n > 0) {
            BoxRow b;
            b.name = r.explainer;
            b.q1 = r.q1;
            b.median = r.median_C;
            b.q3 = r.q3;
            b.lo = quantile(r.values, 0.05);
            b.hi = quantile(r.values, 0.95);
            boxes.push_back(b);
        }
    }
    write_csv((out / "ranking.csv").string(),
              {"explainer", "mean_C", "median_C", "q1", "q3", "n", "skipped"}, csv);
    write_svg_box_plot((out / "ranking_box.svg").string(), boxes, "normalized c-Eval");
    write_manifest((out / "manifest.txt").string(), "rank",
                   {{"command", "rank"},
                    {"model", o.model_path},
                    {"data", o.data.data},
                    {"sample", std::to_string(subset.size())},
                    {"explainers", o.explainers},
                    {"k_fraction", fmt(o.k_fraction)},
                    {"backend", o.common.backend},
                    {"seed", std::to_string(o.common.seed)}});
    for (const auto& r : rows)
        std::cout << r.explainer << " mean_C " << fmt(r.mean_C) << " n " << r.n << " skipped "
                  << r.skipped << "\n";
}

// -------------------------------------------------------------------------
// affine-check

struct AffineCheckCmd {
    CommonOpts common;
    DataOpts data;
    std::string model_path;
    std::string input_file;
    int64_t image = 0;
    std::string explainer = "gradient";
    std::string k_list = "1,2,4,8";
    int grid_rows = 7, grid_cols = 7;
};

void run_affine_check(const AffineCheckCmd& o) {
    if (o.model_path.empty()) throw PreconditionError("affine-check: --model is required");
    fs::path out = prepare_out(o.common.out);
    Classifier model = load_model(o.model_path);
    Tensor x;
    if (!o.input_file.empty()) {
        x = load_input_file(o.input_file);
    } else {
        Dataset test_set = load_split(o.data, o.common.seed, false);
        if (o.image < 0 || o.image >= test_set.size())
            throw PreconditionError("--image outside the test split");
        x = test_set.images[static_cast<size_t>(o.image)];
    }
    auto specs = parse_explainer(o.explainer, o.grid_rows, o.grid_cols);
    if (specs.size() != 1)
        throw PreconditionError("affine-check expects a single explainer parameterization");
    ImportanceMap imp = run_importance(specs[0], model, x);
    BackendConfig backend = make_backend(o.common.backend);
    NearAffineReport rep = near_affine_check(model, x, imp, parse_int_list(o.k_list), backend);

    std::vector<std::vector<std::string>> rows;
    SvgSeries c0s{"c0", {}}, c1s{"c1", {}}, c2s{"c2", {}}, ces{"c_est", {}};
    for (const auto& row : rep.rows) {
        if (!row.ok) {
            rows.push_back({std::to_string(row.k), "", "", "", "", row.note});
            continue;
        }
        rows.push_back({std::to_string(row.k), fmt(row.c1), fmt(row.c2), fmt(row.c0),
                        fmt(row.c_est), fmt(row.rel_dev)});
        double k = static_cast<double>(row.k);
        c0s.points.push_back({k, row.c0});
        c1s.points.push_back({k, row.c1});
        c2s.points.push_back({k, row.c2});
        ces.points.push_back({k, row.c_est});
    }
    write_csv((out / "affine_check.csv").string(), {"k", "c1", "c2", "c0", "c_est", "rel_dev"},
              rows);
    write_svg_line_chart((out / "affine_check.svg").string(), {c1s, c2s, ces, c0s},
                         "k (explanation size)", "c-Eval");
    write_manifest((out / "manifest.txt").string(), "affine-check",
                   {{"command", "affine-check"},
                    {"model", o.model_path},
                    {"image", std::to_string(o.image)},
                    {"explainer", specs[0].id},
                    {"k_list", o.k_list},
                    {"backend", o.common.backend},
                    {"seed", std::to_string(o.common.seed)},
                    {"max_rel_dev", fmt(rep.max_rel_dev)}});
    std::cout << "max_rel_dev " << fmt(rep.max_rel_dev) << "\n";
}

// -------------------------------------------------------------------------
// correlate

struct CorrelateCmd {
    CommonOpts common;
    DataOpts data;
    std::string model_a;
    std::string model_b;
    int64_t sample_count = 100;
    std::string explainer = "gradient";
    double k_fraction = 0.1;
    int grid_rows = 7, grid_cols = 7;
};

void run_correlate(const CorrelateCmd& o) {
    if (o.model_a.empty() || o.model_b.empty())
        throw PreconditionError("correlate: --model-a and --model-b are required");
    if (o.sample_count < 1) throw PreconditionError("--sample must be >= 1");
    fs::path out = prepare_out(o.common.out);
    Classifier a = load_model(o.model_a);
    Classifier b = load_model(o.model_b);
    if (a.input_shape != b.input_shape)
        throw PreconditionError("models have different input shapes");
    Dataset test_set = load_split(o.data, o.common.seed, false);
    Dataset subset = sample(test_set, std::min(o.sample_count, test_set.size()), o.common.seed);
    auto specs = parse_explainer(o.explainer, o.grid_rows, o.grid_cols);
    if (specs.size() != 1)
        throw PreconditionError("correlate expects a single explainer parameterization");
    const ExplainerSpec spec = specs[0];
    BackendConfig backend = make_backend(o.common.backend);
    int64_t n = subset.images.front().size();
    int64_t k = static_cast<int64_t>(std::ceil(o.k_fraction * n));

    struct Row {
        double ca = 0.0, cb = 0.0;
        bool ok = false;
    };
    std::vector<Row> rows(static_cast<size_t>(subset.size()));
    parallel_for(subset.size(), o.common.workers, [&](int64_t i) {
        const Tensor& x = subset.images[static_cast<size_t>(i)];
        try {
            Explanation ea = run_explanation(spec, a, x, k);
            Explanation eb = run_explanation(spec, b, x, k);
            double ca = compute_ceval(a, x, ea, backend).c_value;
            double cb = compute_ceval(b, x, eb, backend).c_value;
            rows[static_cast<size_t>(i)] = {ca, cb, true};
        } catch (const MetricUnavailable&) {
        }
    });

    std::vector<std::vector<std::string>> csv;
    std::vector<double> xs, ys;
    for (size_t i = 0; i < rows.size(); ++i) {
        if (!rows[i].ok) continue;
        csv.push_back({std::to_string(i), fmt(rows[i].ca), fmt(rows[i].cb)});
        xs.push_back(rows[i].ca);
        ys.push_back(rows[i].cb);
    }
    double r = pearson(xs, ys);
    write_csv((out / "correlate.csv").string(), {"index", "c_model_a", "c_model_b"}, csv);
    write_manifest((out / "manifest.txt").string(), "correlate",
                   {{"command", "correlate"},
                    {"model_a", o.model_a},
                    {"model_b", o.model_b},
                    {"data", o.data.data},
                    {"sample", std::to_string(subset.size())},
                    {"explainer", spec.id},
                    {"k_fraction", fmt(o.k_fraction)},
                    {"backend", o.common.backend},
                    {"seed", std::to_string(o.common.seed)},
                    {"pairs", std::to_string(xs.size())},
                    {"pearson_r", fmt(r)}});
    std::cout << "pearson_r " << fmt(r) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"c-Eval: evaluate feature-based explanations via masked minimum-distortion "
                 "perturbations"};
    app.require_subcommand(1);
    app.set_config("--config", "", "Config file (key = value lines, [command] sections)");

    TrainCmd train_opts;
    CLI::App* train_cmd = app.add_subcommand("train", "Train a classifier");
    train_cmd->configurable();
    train_cmd->fallthrough();
    add_common(train_cmd, train_opts.common);
    add_data(train_cmd, train_opts.data);
    train_cmd->add_option("--arch", train_opts.arch, "affine, mlp or convnet")
        ->check(CLI::IsMember({"affine", "mlp", "convnet"}));
    train_cmd->add_option("--hidden", train_opts.hidden, "MLP hidden sizes, comma separated");
    train_cmd->add_option("--optimizer", train_opts.optimizer, "sgd or adam")
        ->check(CLI::IsMember({"sgd", "adam"}));
    train_cmd->add_option("--epochs", train_opts.epochs);
    train_cmd->add_option("--batch-size", train_opts.batch_size);
    train_cmd->add_option("--lr", train_opts.lr);
    train_cmd->add_option("--adversarial-eps", train_opts.adversarial_eps,
                          "L2 bound for adversarial training (0 = off)");
    train_cmd->add_option("--adversarial-iters", train_opts.adversarial_iters);
    train_cmd->add_flag("--adversarial-all", train_opts.adversarial_all,
                        "Perturb every batch instead of alternating");

    CevalCmd ceval_opts;
    CLI::App* ceval_cmd = app.add_subcommand("ceval", "Compute the metric for one input");
    ceval_cmd->configurable();
    ceval_cmd->fallthrough();
    add_common(ceval_cmd, ceval_opts.common);
    add_data(ceval_cmd, ceval_opts.data);
    ceval_cmd->add_option("--model", ceval_opts.model_path, "Model JSON file");
    ceval_cmd->add_option("--image", ceval_opts.image, "Test-split image index");
    ceval_cmd->add_option("--input", ceval_opts.input_file, "JSON input tensor file");
    ceval_cmd->add_option("--explainer", ceval_opts.explainer);
    ceval_cmd->add_option("--k", ceval_opts.k, "Explanation size (overrides --k-fraction)");
    ceval_cmd->add_option("--k-fraction", ceval_opts.k_fraction);
    ceval_cmd->add_option("--grid-rows", ceval_opts.grid_rows);
    ceval_cmd->add_option("--grid-cols", ceval_opts.grid_cols);
    ceval_cmd->add_flag("--save-delta", ceval_opts.save_delta, "Also write the raw perturbation");
    ceval_cmd->add_flag("--normalized,!--no-normalized", ceval_opts.normalized,
                        "Also compute the c(empty) baseline (default on)");

    PlotCmd plot_opts;
    CLI::App* plot_cmd = app.add_subcommand("plot", "c-Eval plot over growing k");
    plot_cmd->configurable();
    plot_cmd->fallthrough();
    add_common(plot_cmd, plot_opts.common);
    add_data(plot_cmd, plot_opts.data);
    plot_cmd->add_option("--model", plot_opts.model_path);
    plot_cmd->add_option("--image", plot_opts.image);
    plot_cmd->add_option("--input", plot_opts.input_file);
    plot_cmd->add_option("--explainer", plot_opts.explainers,
                         "Explainer spec; repeat for multiple series");
    plot_cmd->add_option("--k-list", plot_opts.k_list, "Comma-separated k values");
    plot_cmd->add_option("--grid-rows", plot_opts.grid_rows);
    plot_cmd->add_option("--grid-cols", plot_opts.grid_cols);

    RankCmd rank_opts;
    CLI::App* rank_cmd = app.add_subcommand("rank", "Rank explainers over a dataset sample");
    rank_cmd->configurable();
    rank_cmd->fallthrough();
    add_common(rank_cmd, rank_opts.common);
    add_data(rank_cmd, rank_opts.data);
    rank_cmd->add_option("--model", rank_opts.model_path);
    rank_cmd->add_option("--sample", rank_opts.sample_count, "Number of test images");
    rank_cmd->add_option("--explainers", rank_opts.explainers, "Comma-separated explainer specs");
    rank_cmd->add_option("--k-fraction", rank_opts.k_fraction);
    rank_cmd->add_option("--grid-rows", rank_opts.grid_rows);
    rank_cmd->add_option("--grid-cols", rank_opts.grid_cols);

    AffineCheckCmd ac_opts;
    CLI::App* ac_cmd = app.add_subcommand("affine-check", "Near-affine harmonic diagnostic");
    ac_cmd->configurable();
    ac_cmd->fallthrough();
    add_common(ac_cmd, ac_opts.common);
    add_data(ac_cmd, ac_opts.data);
    ac_cmd->add_option("--model", ac_opts.model_path);
    ac_cmd->add_option("--image", ac_opts.image);
    ac_cmd->add_option("--input", ac_opts.input_file);
    ac_cmd->add_option("--explainer", ac_opts.explainer);
    ac_cmd->add_option("--k-list", ac_opts.k_list);
    ac_cmd->add_option("--grid-rows", ac_opts.grid_rows);
    ac_cmd->add_option("--grid-cols", ac_opts.grid_cols);

    CorrelateCmd corr_opts;
    CLI::App* corr_cmd = app.add_subcommand("correlate", "Correlate the metric across two models");
    corr_cmd->configurable();
    corr_cmd->fallthrough();
    add_common(corr_cmd, corr_opts.common);
    add_data(corr_cmd, corr_opts.data);
    corr_cmd->add_option("--model-a", corr_opts.model_a);
    corr_cmd->add_option("--model-b", corr_opts.model_b);
    corr_cmd->add_option("--sample", corr_opts.sample_count);
    corr_cmd->add_option("--explainer", corr_opts.explainer);
    corr_cmd->add_option("--k-fraction", corr_opts.k_fraction);
    corr_cmd->add_option("--grid-rows", corr_opts.grid_rows);
    corr_cmd->add_option("--grid-cols", corr_opts.grid_cols);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (train_cmd->parsed()) run_train(train_opts);
        else if (ceval_cmd->parsed()) run_ceval(ceval_opts);
        else if (plot_cmd->parsed()) run_plot(plot_opts);
        else if (rank_cmd->parsed()) run_rank(rank_opts);
        else if (ac_cmd->parsed()) run_affine_check(ac_opts);
        else if (corr_cmd->parsed()) run_correlate(corr_opts);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
