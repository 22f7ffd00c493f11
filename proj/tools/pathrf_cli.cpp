#include <charconv>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "pathrf/pathrf.hpp"

namespace fs = std::filesystem;
using namespace pathrf;

namespace {

struct DataArgs {
    std::vector<std::string> files;
    std::vector<std::string> synthetic;
    std::size_t synth_n = 500;
    std::uint64_t synth_seed = 7;
    std::string label_col;
    std::string positive_label;
};

void add_data_options(CLI::App* cmd, DataArgs& a, bool allow_synthetic) {
    cmd->add_option("data", a.files, "CSV files (header row, one label column)");
    cmd->add_option("--label-col", a.label_col, "Label column name or zero-based index (default: last column)");
    cmd->add_option("--positive-label", a.positive_label, "Raw label mapped to class 1");
    if (allow_synthetic) {
        cmd->add_option("--synthetic", a.synthetic, "Also run synthetic geometries")
            ->check(CLI::IsMember({"diagonal", "moons", "circles", "overlap"}));
        cmd->add_option("--synthetic-n", a.synth_n, "Rows per synthetic dataset");
        cmd->add_option("--synthetic-seed", a.synth_seed, "Seed for synthetic datasets");
    }
}

CsvOptions csv_options(const DataArgs& a) {
    CsvOptions o;
    if (!a.label_col.empty()) {
        std::size_t idx = 0;
        const auto* end = a.label_col.data() + a.label_col.size();
        const auto [ptr, ec] = std::from_chars(a.label_col.data(), end, idx);
        if (ec == std::errc{} && ptr == end) o.label_column = idx;
        else o.label_column = a.label_col;
    }
    if (!a.positive_label.empty()) o.positive_label = a.positive_label;
    return o;
}

std::vector<Dataset> load_all(const DataArgs& a) {
    std::vector<Dataset> out;
    for (const auto& f : a.files) out.push_back(load_csv(f, csv_options(a)));
    for (const auto& k : a.synthetic) {
        auto ds = gen_synthetic(parse_synthetic_kind(k), a.synth_n, std::nullopt, a.synth_seed);
        ds.name = k;
        out.push_back(std::move(ds));
    }
    if (out.empty()) throw std::invalid_argument("no datasets given");
    return out;
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(1) + "\n"); }

nlohmann::json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return nlohmann::json::parse(in);
}

std::vector<Method> parse_methods(const std::vector<std::string>& names) {
    std::vector<Method> out{Method::rf};
    for (const auto& n : names) {
        const auto m = parse_method(n);
        if (std::ranges::find(out, m) == out.end()) out.push_back(m);
    }
    return out;
}

const std::vector<std::string> kMethodNames{"rf", "paw", "paw-amp", "naive", "wrf", "kne", "knu", "paw-oob"};

void log_line(const std::string& s) { std::cerr << s << '\n'; }

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Path-pattern weighted random forests"};
    app.require_subcommand(1);

    // bench
    DataArgs bench_data;
    BenchConfig bench_cfg;
    std::vector<std::string> bench_methods{"paw"};
    std::string bench_out = "bench_out";
    auto* bench = app.add_subcommand("bench", "Repeated split protocol: every method against RF on a shared forest");
    add_data_options(bench, bench_data, true);
    bench->add_option("--trees", bench_cfg.n_trees, "Trees per forest")->check(CLI::PositiveNumber);
    bench->add_option("--inner-trees", bench_cfg.inner_trees, "Trees per inner CV forest (default: --trees)");
    bench->add_option("--repeats", bench_cfg.repeats, "Train/test repeats")->check(CLI::PositiveNumber);
    bench->add_option("--seed-base", bench_cfg.seed_base, "Split seed of repeat r is seed-base + r");
    bench->add_option("--method", bench_methods, "Methods compared with rf")->check(CLI::IsMember(kMethodNames));
    bench->add_option("--K-candidates", bench_cfg.K_candidates, "Amplification strengths tried by paw-amp");
    bench->add_option("--weight-variant", bench_cfg.weight_variant, "Weight table source")->check(CLI::IsMember({"cv", "oob"}));
    bench->add_option("--test-fraction", bench_cfg.test_fraction, "Held-out fraction")->check(CLI::Range(0.01, 0.99));
    bench->add_option("--min-n", bench_cfg.min_n, "Cells with fewer pairs keep weight 1");
    bench->add_option("--threads", bench_cfg.n_threads, "Worker threads for tree fitting");
    bench->add_option("--out", bench_out, "Output directory");

    // train
    DataArgs train_data;
    std::size_t train_trees = 300;
    std::uint64_t train_seed = 42;
    std::string train_method = "paw";
    std::string train_variant = "cv";
    std::vector<double> train_K = kDefaultKCandidates;
    std::string train_out = "model";
    unsigned train_threads = 1;
    auto* train = app.add_subcommand("train", "Fit a forest and its weight table on one dataset");
    add_data_options(train, train_data, false);
    train->add_option("--trees", train_trees, "Trees")->check(CLI::PositiveNumber);
    train->add_option("--seed-base", train_seed, "Seed");
    train->add_option("--method", train_method, "Aggregation stored with the model")->check(CLI::IsMember(kMethodNames));
    train->add_option("--weight-variant", train_variant, "Weight table source")->check(CLI::IsMember({"cv", "oob"}));
    train->add_option("--K-candidates", train_K, "Amplification strengths tried by paw-amp");
    train->add_option("--threads", train_threads, "Worker threads");
    train->add_option("--out", train_out, "Model directory");

    // predict
    std::string model_dir = "model";
    DataArgs predict_data;
    std::string predict_out = "predictions";
    std::string predict_method;
    auto* predict = app.add_subcommand("predict", "Score a CSV with a trained model");
    add_data_options(predict, predict_data, false);
    predict->add_option("--model", model_dir, "Model directory written by train")->required();
    predict->add_option("--method", predict_method, "Override the stored aggregation")->check(CLI::IsMember(kMethodNames));
    predict->add_option("--out", predict_out, "Output directory");

    // diagnose
    DataArgs diag_data;
    DiagnoseConfig diag_cfg;
    std::string diag_out = "diagnostics";
    auto* diagnose = app.add_subcommand("diagnose", "Pattern frequency and accuracy tables from cross-validated pairs");
    add_data_options(diagnose, diag_data, true);
    diagnose->add_option("--trees", diag_cfg.n_trees, "Trees per fold forest")->check(CLI::PositiveNumber);
    diagnose->add_option("--repeats", diag_cfg.repeats, "CV repeats")->check(CLI::PositiveNumber);
    diagnose->add_option("--seed-base", diag_cfg.seed_base, "Seed base");
    diagnose->add_option("--threads", diag_cfg.n_threads, "Worker threads");
    diagnose->add_option("--out", diag_out, "Output directory");

    // indicators
    DataArgs ind_data;
    BenchConfig ind_cfg;
    ind_cfg.methods = {Method::rf};
    std::string ind_out = "indicators";
    auto* indicators = app.add_subcommand("indicators", "Boundary mass M and boundary spread S per dataset");
    add_data_options(indicators, ind_data, true);
    indicators->add_option("--trees", ind_cfg.n_trees, "Trees")->check(CLI::PositiveNumber);
    indicators->add_option("--repeats", ind_cfg.repeats, "Repeats averaged")->check(CLI::PositiveNumber);
    indicators->add_option("--seed-base", ind_cfg.seed_base, "Seed base");
    indicators->add_option("--threads", ind_cfg.n_threads, "Worker threads");
    indicators->add_option("--out", ind_out, "Output directory");

    // synth
    std::string synth_kind = "moons";
    std::size_t synth_n = 1000;
    std::optional<double> synth_noise;
    std::uint64_t synth_seed = 42;
    std::string synth_out = "synthetic.csv";
    auto* synth = app.add_subcommand("synth", "Write a synthetic two-feature dataset as CSV");
    synth->add_option("--kind", synth_kind, "Geometry")->check(CLI::IsMember({"diagonal", "moons", "circles", "overlap"}));
    synth->add_option("--n", synth_n, "Rows");
    synth->add_option("--noise", synth_noise, "Noise (default depends on the geometry)");
    synth->add_option("--seed-base", synth_seed, "Seed");
    synth->add_option("--out", synth_out, "Output CSV path");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*bench) {
            bench_cfg.methods = parse_methods(bench_methods);
            const auto datasets = load_all(bench_data);
            const auto report = evaluate(datasets, bench_cfg, {}, log_line);
            write_report(report, bench_out);
            for (const auto& c : report.comparisons)
                std::cout << to_string(c.method) << ": mean delta acc " << c.mean_delta_accuracy << ", W/T/L " << c.wins << '/'
                          << c.ties << '/' << c.losses << '\n';
            std::cout << "wrote " << (fs::path(bench_out) / "report.json").string() << '\n';
            return report.failures.empty() ? 0 : 2;
        }

        if (*train) {
            if (train_data.files.size() != 1) throw std::invalid_argument("train takes exactly one CSV");
            const auto ds = load_all(train_data).front();
            const auto method = parse_method(train_method);
            fs::create_directories(train_out);
            const auto forest = fit_forest(ds, ForestParams{train_trees, 0, train_threads}, derive_seed(train_seed, 0xF0));
            write_json(fs::path(train_out) / "forest.json", forest_to_json(forest));

            nlohmann::json model{{"format", "pathrf.model"}, {"version", 1}, {"method", to_string(method)},
                                 {"dataset", ds.name},       {"class_names", ds.class_names},
                                 {"feature_names", ds.feature_names}, {"minority_class", ds.minority_class}};
            const auto ind = compute_indicators(forest, ds);
            model["indicators"] = {{"M", ind.M}, {"S", ind.S}, {"MS", ind.product}};

            if (method == Method::paw || method == Method::paw_amp || method == Method::paw_oob) {
                const bool oob = method == Method::paw_oob || train_variant == "oob";
                auto [table, records] = oob ? estimate_weight_table_oob(forest, ds)
                                            : estimate_weight_table_cv(ds.features, ds.labels, CvParams{train_trees, 5, kDefaultMinN, 0, train_threads},
                                                                       derive_seed(train_seed, 0xC5));
                if (method == Method::paw_amp) {
                    const auto sel = select_K(records, ind.M, ind.S, table, train_K);
                    model["K"] = sel.K;
                    model["alpha"] = sel.alpha;
                    table = amplify(table, sel.alpha);
                }
                write_json(fs::path(train_out) / "weight_table.json", weight_table_to_json(table));
            }
            if (method == Method::wrf) model["tree_weights"] = wrf_weights(forest, ds).w;
            if (method == Method::kne || method == Method::knu) save_csv((fs::path(train_out) / "train.csv").string(), ds);
            write_json(fs::path(train_out) / "model.json", model);
            std::cout << "trained " << forest.size() << " trees on " << ds.name << " (" << ds.size() << " rows); M=" << ind.M
                      << " S=" << ind.S << '\n';
            return 0;
        }

        if (*predict) {
            if (predict_data.files.size() != 1) throw std::invalid_argument("predict takes exactly one CSV");
            const fs::path dir(model_dir);
            const auto model = read_json(dir / "model.json");
            const auto forest = forest_from_json(read_json(dir / "forest.json"));
            const auto method = parse_method(predict_method.empty() ? model.at("method").get<std::string>() : predict_method);

            const auto labelled = load_csv(predict_data.files.front(), csv_options(predict_data));
            const Matrix& X = labelled.features;
            if (X.cols() != forest.n_features) throw std::invalid_argument("feature count differs from the model");

            std::optional<WeightTable> table;
            if (method == Method::paw || method == Method::paw_amp || method == Method::paw_oob) {
                if (!fs::exists(dir / "weight_table.json")) throw std::invalid_argument("model has no weight table");
                table = weight_table_from_json(read_json(dir / "weight_table.json"));
            }
            std::optional<StaticWeights> static_w;
            if (method == Method::wrf) static_w = StaticWeights{model.at("tree_weights").get<std::vector<double>>()};
            std::optional<NeighborIndex> index;
            std::optional<Competence> comp;
            if (method == Method::kne || method == Method::knu) {
                const auto train_ds = load_csv((dir / "train.csv").string());
                index.emplace(train_ds.features, train_ds.labels);
                comp.emplace(forest, *index);
            }

            const auto names = model.at("class_names").get<std::array<std::string, 2>>();
            std::ostringstream out;
            out << "row,proba_0,proba_1,predicted,predicted_label,true_label\n";
            std::size_t correct = 0;
            for (std::size_t i = 0; i < X.rows(); ++i) {
                const auto votes = forest.per_tree_votes(X.row(i));
                Proba p;
                switch (method) {
                    case Method::rf: p = uniform_proba(votes); break;
                    case Method::paw:
                    case Method::paw_amp:
                    case Method::paw_oob: p = predict_weighted(votes, *table); break;
                    case Method::naive: p = predict_naive(votes); break;
                    case Method::wrf: p = wrf_predict(votes, *static_w); break;
                    case Method::kne: p = knora_e_predict(votes, *comp, index->query(X.row(i))); break;
                    case Method::knu: p = knora_u_predict(votes, *comp, index->query(X.row(i))); break;
                }
                const int y = argmax(p);
                const auto& truth = labelled.class_names[static_cast<std::size_t>(labelled.labels[i])];
                correct += names[static_cast<std::size_t>(y)] == truth ? 1 : 0;
                out << i << ',' << detail::format_double(p[0]) << ',' << detail::format_double(p[1]) << ',' << y << ','
                    << names[static_cast<std::size_t>(y)] << ',' << truth << '\n';
            }
            fs::create_directories(predict_out);
            write_text(fs::path(predict_out) / "predictions.csv", out.str());
            std::cout << to_string(method) << " accuracy " << static_cast<double>(correct) / static_cast<double>(X.rows()) << " on "
                      << X.rows() << " rows\n";
            return 0;
        }

        if (*diagnose) {
            const auto datasets = load_all(diag_data);
            std::vector<DatasetDiagnostics> diags;
            for (const auto& ds : datasets) {
                diags.push_back(diagnose_dataset(ds, diag_cfg));
                log_line(ds.name + ": done");
            }
            write_diagnostics(diags, diag_out, diag_cfg.min_cell);
            std::cout << "wrote diagnostics to " << diag_out << '\n';
            return 0;
        }

        if (*indicators) {
            const auto datasets = load_all(ind_data);
            const auto report = evaluate(datasets, ind_cfg, {}, log_line);
            std::ostringstream csv;
            csv << "dataset,M,S,MS\n";
            for (const auto& d : report.datasets)
                csv << d.name << ',' << detail::format_double(d.M) << ',' << detail::format_double(d.S) << ','
                    << detail::format_double(d.MS) << '\n';
            fs::create_directories(ind_out);
            write_text(fs::path(ind_out) / "indicators.csv", csv.str());
            std::cout << csv.str();
            return report.failures.empty() ? 0 : 2;
        }

        if (*synth) {
            auto ds = gen_synthetic(parse_synthetic_kind(synth_kind), synth_n, synth_noise, synth_seed);
            save_csv(synth_out, ds);
            std::cout << "wrote " << ds.size() << " rows to " << synth_out << '\n';
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
