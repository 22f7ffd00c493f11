#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "pathrf/baselines.hpp"
#include "pathrf/data.hpp"
#include "pathrf/forest.hpp"
#include "pathrf/paw.hpp"
#include "pathrf/stats.hpp"

namespace pathrf {

enum class Method { rf, paw, paw_amp, naive, wrf, kne, knu, paw_oob };

inline constexpr std::array<Method, 8> kAllMethods{Method::rf,  Method::paw, Method::paw_amp, Method::naive,
                                                   Method::wrf, Method::kne, Method::knu,     Method::paw_oob};

constexpr std::string_view to_string(Method m) noexcept {
    switch (m) {
        case Method::rf: return "rf";
        case Method::paw: return "paw";
        case Method::paw_amp: return "paw-amp";
        case Method::naive: return "naive";
        case Method::wrf: return "wrf";
        case Method::kne: return "kne";
        case Method::knu: return "knu";
        case Method::paw_oob: return "paw-oob";
    }
    return "?";
}

inline Method parse_method(std::string_view s) {
    for (auto m : kAllMethods)
        if (to_string(m) == s) return m;
    throw std::invalid_argument("unknown method '" + std::string(s) + "'");
}

struct BenchConfig {
    std::size_t n_trees = 300;
    std::size_t inner_trees = 0;  // 0: same as n_trees
    std::size_t repeats = 30;
    std::uint64_t seed_base = 42;
    double test_fraction = 0.3;
    std::size_t cv_folds = 5;
    std::size_t min_n = kDefaultMinN;
    std::vector<Method> methods{Method::rf, Method::paw};
    std::vector<double> K_candidates = kDefaultKCandidates;
    std::string weight_variant = "cv";
    double recall_threshold = 0.002;
    unsigned n_threads = 1;
};

struct RunRecord {
    std::string dataset;
    Method method = Method::rf;
    std::size_t repeat = 0;
    std::uint64_t seed = 0;
    double accuracy = 0.0;
    double minority_recall = 0.0;
    double majority_recall = 0.0;
    double M = 0.0;
    double S = 0.0;
    double K_star = 0.0;
    std::size_t n_test = 0;
    std::size_t n_minority = 0;
    std::size_t n_correct = 0;
    std::size_t n_minority_correct = 0;
    std::size_t n_majority_correct = 0;
};

/// Everything one (dataset, repeat) produced, handed to an optional observer.
struct RepeatView {
    const Dataset* dataset = nullptr;
    std::size_t repeat = 0;
    std::uint64_t split_seed = 0;
    const SplitPlan* split = nullptr;
    const Dataset* train = nullptr;
    const Dataset* test = nullptr;
    const ForestModel* forest = nullptr;
    const std::vector<std::vector<VoteRecord>>* test_votes = nullptr;
    const std::map<Method, std::vector<Proba>>* predictions = nullptr;
    const WeightTable* cv_table = nullptr;
    const WeightTable* oob_table = nullptr;
    const CvRecords* records = nullptr;
    const Indicators* indicators = nullptr;
    const KSelection* k_selection = nullptr;
};

using RepeatObserver = std::function<void(const RepeatView&)>;

struct MethodSummary {
    double accuracy = 0.0;
    double accuracy_sd = 0.0;
    double minority_recall = 0.0;
    double majority_recall = 0.0;
    double delta_accuracy = 0.0;
    double delta_minority_recall = 0.0;
    double delta_majority_recall = 0.0;
    double mean_K_star = 0.0;
    std::size_t K_zero_runs = 0;
};

struct DatasetSummary {
    std::string name;
    std::size_t n = 0;
    std::size_t p = 0;
    double minority_fraction = 0.0;
    double M = 0.0;
    double S = 0.0;
    double MS = 0.0;
    std::map<Method, MethodSummary> methods;
};

struct MethodComparison {
    Method method = Method::rf;
    double mean_delta_accuracy = 0.0;
    double mean_delta_minority_recall = 0.0;
    double mean_delta_majority_recall = 0.0;
    std::size_t wins = 0, ties = 0, losses = 0;
    std::optional<WilcoxonResult> wilcoxon;
    std::size_t minority_regressions = 0;
    std::size_t majority_regressions = 0;
};

struct EvalReport {
    static constexpr int kSchemaVersion = 1;
    BenchConfig config;
    std::vector<RunRecord> runs;
    std::vector<DatasetSummary> datasets;
    std::vector<MethodComparison> comparisons;
    std::vector<QuintileRow> quintiles;  // by M*S against the paw delta
    std::optional<double> pearson_ms_delta;
    std::optional<double> spearman_ms_delta;
    std::vector<std::pair<std::string, std::string>> failures;

    const DatasetSummary* find(const std::string& name) const {
        for (const auto& d : datasets)
            if (d.name == name) return &d;
        return nullptr;
    }
    const MethodComparison* comparison(Method m) const {
        for (const auto& c : comparisons)
            if (c.method == m) return &c;
        return nullptr;
    }
};

struct SplitMetrics {
    double accuracy = 0.0;
    double minority_recall = 0.0;
    double majority_recall = 0.0;
    std::size_t n_minority = 0;
    std::size_t n_correct = 0;
    std::size_t n_minority_correct = 0;
    std::size_t n_majority_correct = 0;
};

inline SplitMetrics split_metrics(std::span<const int> truth, std::span<const int> pred, int minority) {
    if (truth.size() != pred.size() || truth.empty()) throw std::invalid_argument("split_metrics: bad inputs");
    std::size_t correct = 0, n_min = 0, c_min = 0, n_maj = 0, c_maj = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const bool ok = truth[i] == pred[i];
        correct += ok ? 1 : 0;
        if (truth[i] == minority) {
            ++n_min;
            c_min += ok ? 1 : 0;
        } else {
            ++n_maj;
            c_maj += ok ? 1 : 0;
        }
    }
    SplitMetrics m;
    m.accuracy = static_cast<double>(correct) / static_cast<double>(truth.size());
    m.minority_recall = n_min ? static_cast<double>(c_min) / static_cast<double>(n_min) : 0.0;
    m.majority_recall = n_maj ? static_cast<double>(c_maj) / static_cast<double>(n_maj) : 0.0;
    m.n_minority = n_min;
    m.n_correct = correct;
    m.n_minority_correct = c_min;
    m.n_majority_correct = c_maj;
    return m;
}

namespace detail {

inline bool wants(const BenchConfig& cfg, Method m) { return std::ranges::find(cfg.methods, m) != cfg.methods.end(); }

inline double ratio(std::size_t num, std::size_t den) {
    return den ? static_cast<double>(num) / static_cast<double>(den) : 0.0;
}

inline double ratio_diff(std::size_t a, std::size_t b, std::size_t den) {
    if (den == 0) return 0.0;
    const double d = a >= b ? static_cast<double>(a - b) : -static_cast<double>(b - a);
    return d / static_cast<double>(den);
}

inline double mean_of(const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline double sd_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace detail

/// One (dataset, repeat) of the protocol: stratified split, a single forest
/// shared by every method, then per-method predictions on the test rows.
inline std::vector<RunRecord> run_repeat(const Dataset& ds, std::size_t repeat, const BenchConfig& cfg,
                                         const RepeatObserver& observe = {}) {
    const std::uint64_t split_seed = cfg.seed_base + repeat;
    const SplitPlan split = stratified_split(ds, cfg.test_fraction, split_seed);
    const Dataset train = ds.subset(split.train_indices);
    const Dataset test = ds.subset(split.test_indices);
    const ForestParams fparams{cfg.n_trees, 0, cfg.n_threads};
    const ForestModel forest = fit_forest(train, fparams, derive_seed(split_seed, 0xF0));

    std::vector<std::vector<VoteRecord>> votes(test.size());
    for (std::size_t i = 0; i < test.size(); ++i) votes[i] = forest.per_tree_votes(test.features.row(i));

    const Indicators ind = compute_indicators(forest, train);

    const bool oob_variant = cfg.weight_variant == "oob";
    const bool need_paw = detail::wants(cfg, Method::paw) || detail::wants(cfg, Method::paw_amp);
    std::optional<std::pair<WeightTable, CvRecords>> cv, oob;
    if (need_paw && !oob_variant) {
        const CvParams cp{cfg.inner_trees ? cfg.inner_trees : cfg.n_trees, cfg.cv_folds, cfg.min_n, 0, cfg.n_threads};
        cv = estimate_weight_table_cv(train.features, train.labels, cp, derive_seed(split_seed, 0xC5));
    }
    if ((need_paw && oob_variant) || detail::wants(cfg, Method::paw_oob))
        oob = estimate_weight_table_oob(forest, train, cfg.min_n);
    const auto* paw_source = oob_variant ? &oob : &cv;

    std::optional<KSelection> ksel;
    std::optional<WeightTable> amplified;
    if (detail::wants(cfg, Method::paw_amp)) {
        const auto& [table, records] = **paw_source;
        ksel = select_K(records, ind.M, ind.S, table, cfg.K_candidates);
        amplified = amplify(table, ksel->alpha);
    }

    std::optional<StaticWeights> wrf;
    if (detail::wants(cfg, Method::wrf)) wrf = wrf_weights(forest, train);
    std::optional<NeighborIndex> index;
    std::optional<Competence> comp;
    if (detail::wants(cfg, Method::kne) || detail::wants(cfg, Method::knu)) {
        index.emplace(train.features, train.labels);
        comp.emplace(forest, *index);
    }

    std::map<Method, std::vector<Proba>> preds;
    for (auto m : cfg.methods) {
        if (preds.contains(m)) continue;
        auto& out = preds[m];
        out.reserve(test.size());
        for (std::size_t i = 0; i < test.size(); ++i) {
            const auto& v = votes[i];
            switch (m) {
                case Method::rf: out.push_back(uniform_proba(v)); break;
                case Method::paw: out.push_back(predict_weighted(v, (*paw_source)->first)); break;
                case Method::paw_amp: out.push_back(predict_weighted(v, *amplified)); break;
                case Method::paw_oob: out.push_back(predict_weighted(v, oob->first)); break;
                case Method::naive: out.push_back(predict_naive(v)); break;
                case Method::wrf: out.push_back(wrf_predict(v, *wrf)); break;
                case Method::kne: {
                    const auto nb = index->query(test.features.row(i));
                    out.push_back(knora_e_predict(v, *comp, nb));
                    break;
                }
                case Method::knu: {
                    const auto nb = index->query(test.features.row(i));
                    out.push_back(knora_u_predict(v, *comp, nb));
                    break;
                }
            }
        }
    }

    if (observe) {
        RepeatView view;
        view.dataset = &ds;
        view.repeat = repeat;
        view.split_seed = split_seed;
        view.split = &split;
        view.train = &train;
        view.test = &test;
        view.forest = &forest;
        view.test_votes = &votes;
        view.predictions = &preds;
        view.cv_table = cv ? &cv->first : nullptr;
        view.oob_table = oob ? &oob->first : nullptr;
        view.records = *paw_source ? &(*paw_source)->second : nullptr;
        view.indicators = &ind;
        view.k_selection = ksel ? &*ksel : nullptr;
        observe(view);
    }

    std::vector<RunRecord> runs;
    std::vector<int> pred(test.size());
    for (auto m : cfg.methods) {
        const auto& p = preds.at(m);
        for (std::size_t i = 0; i < test.size(); ++i) pred[i] = argmax(p[i]);
        const auto met = split_metrics(test.labels, pred, ds.minority_class);
        RunRecord r;
        r.dataset = ds.name;
        r.method = m;
        r.repeat = repeat;
        r.seed = split_seed;
        r.accuracy = met.accuracy;
        r.minority_recall = met.minority_recall;
        r.majority_recall = met.majority_recall;
        r.M = ind.M;
        r.S = ind.S;
        r.K_star = (m == Method::paw_amp && ksel) ? ksel->K : 0.0;
        r.n_test = test.size();
        r.n_minority = met.n_minority;
        r.n_correct = met.n_correct;
        r.n_minority_correct = met.n_minority_correct;
        r.n_majority_correct = met.n_majority_correct;
        runs.push_back(r);
    }
    return runs;
}

inline DatasetSummary summarize_dataset(const Dataset& ds, const std::vector<RunRecord>& runs, const BenchConfig& cfg) {
    DatasetSummary s;
    s.name = ds.name;
    s.n = ds.size();
    s.p = ds.n_features();
    s.minority_fraction = static_cast<double>(ds.class_counts()[static_cast<std::size_t>(ds.minority_class)]) /
                          static_cast<double>(ds.size());
    std::vector<double> Ms, Ss;
    for (const auto& r : runs)
        if (r.method == cfg.methods.front()) {
            Ms.push_back(r.M);
            Ss.push_back(r.S);
        }
    s.M = detail::mean_of(Ms);
    s.S = detail::mean_of(Ss);
    s.MS = s.M * s.S;

    // Test split sizes are the same in every repeat, so pooled counts give
    // the mean of per-repeat rates; deltas come out exactly 0 on ties.
    struct Pooled {
        std::size_t n = 0, n_min = 0, n_maj = 0, c = 0, c_min = 0, c_maj = 0;
    };
    std::map<Method, Pooled> pooled;
    for (auto m : cfg.methods) {
        if (s.methods.contains(m)) continue;
        std::vector<double> acc, ks;
        std::size_t kzero = 0;
        Pooled& pc = pooled[m];
        for (const auto& r : runs) {
            if (r.method != m) continue;
            acc.push_back(r.accuracy);
            ks.push_back(r.K_star);
            kzero += r.K_star == 0.0 ? 1 : 0;
            pc.n += r.n_test;
            pc.n_min += r.n_minority;
            pc.n_maj += r.n_test - r.n_minority;
            pc.c += r.n_correct;
            pc.c_min += r.n_minority_correct;
            pc.c_maj += r.n_majority_correct;
        }
        MethodSummary ms;
        ms.accuracy = detail::ratio(pc.c, pc.n);
        ms.accuracy_sd = detail::sd_of(acc);
        ms.minority_recall = detail::ratio(pc.c_min, pc.n_min);
        ms.majority_recall = detail::ratio(pc.c_maj, pc.n_maj);
        ms.mean_K_star = detail::mean_of(ks);
        ms.K_zero_runs = kzero;
        s.methods[m] = ms;
    }
    if (s.methods.contains(Method::rf)) {
        const auto& base = pooled.at(Method::rf);
        for (auto& [m, ms] : s.methods) {
            const auto& pc = pooled.at(m);
            ms.delta_accuracy = detail::ratio_diff(pc.c, base.c, pc.n);
            ms.delta_minority_recall = detail::ratio_diff(pc.c_min, base.c_min, pc.n_min);
            ms.delta_majority_recall = detail::ratio_diff(pc.c_maj, base.c_maj, pc.n_maj);
        }
    }
    return s;
}

inline void finish_report(EvalReport& report) {
    const auto& cfg = report.config;
    if (report.datasets.empty() || !detail::wants(cfg, Method::rf)) return;
    for (auto m : cfg.methods) {
        if (m == Method::rf || report.comparison(m)) continue;
        MethodComparison c;
        c.method = m;
        std::vector<double> deltas;
        double dmin = 0.0, dmaj = 0.0;
        for (const auto& d : report.datasets) {
            const auto& ms = d.methods.at(m);
            deltas.push_back(ms.delta_accuracy);
            dmin += ms.delta_minority_recall;
            dmaj += ms.delta_majority_recall;
            if (ms.delta_accuracy > 0) ++c.wins;
            else if (ms.delta_accuracy < 0) ++c.losses;
            else ++c.ties;
            if (ms.delta_minority_recall < -cfg.recall_threshold) ++c.minority_regressions;
            if (ms.delta_majority_recall < -cfg.recall_threshold) ++c.majority_regressions;
        }
        const double n = static_cast<double>(report.datasets.size());
        c.mean_delta_accuracy = detail::mean_of(deltas);
        c.mean_delta_minority_recall = dmin / n;
        c.mean_delta_majority_recall = dmaj / n;
        if (std::ranges::any_of(deltas, [](double d) { return d != 0.0; })) c.wilcoxon = wilcoxon_signed_rank(deltas);
        report.comparisons.push_back(c);
    }

    if (detail::wants(cfg, Method::paw)) {
        std::vector<double> ms, deltas;
        for (const auto& d : report.datasets) {
            ms.push_back(d.MS);
            deltas.push_back(d.methods.at(Method::paw).delta_accuracy);
        }
        if (ms.size() >= 5) report.quintiles = quintile_table(ms, deltas);
        if (ms.size() >= 3) {
            try {
                report.pearson_ms_delta = pearson(ms, deltas);
                report.spearman_ms_delta = spearman(ms, deltas);
            } catch (const std::invalid_argument&) {
            }
        }
    }
}

/// Full protocol over several datasets. A dataset that throws is recorded
/// in `failures` and left out of the summaries.
inline EvalReport evaluate(const std::vector<Dataset>& datasets, const BenchConfig& cfg,
                           const RepeatObserver& observe = {},
                           const std::function<void(const std::string&)>& log = {}) {
    if (cfg.methods.empty()) throw std::invalid_argument("evaluate: no methods selected");
    if (cfg.weight_variant != "cv" && cfg.weight_variant != "oob")
        throw std::invalid_argument("evaluate: weight variant must be cv or oob");
    EvalReport report;
    report.config = cfg;
    for (const auto& ds : datasets) {
        try {
            std::vector<RunRecord> runs;
            for (std::size_t r = 0; r < cfg.repeats; ++r) {
                auto rr = run_repeat(ds, r, cfg, observe);
                runs.insert(runs.end(), rr.begin(), rr.end());
            }
            report.datasets.push_back(summarize_dataset(ds, runs, cfg));
            report.runs.insert(report.runs.end(), runs.begin(), runs.end());
            if (log) log(ds.name + ": done");
        } catch (const std::exception& e) {
            report.failures.emplace_back(ds.name, e.what());
            if (log) log(ds.name + ": failed: " + e.what());
        }
    }
    finish_report(report);
    return report;
}

// --- Report output -----------------------------------------------------------

namespace detail {

inline std::string fmt(double v) { return format_double(v); }

inline nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

}  // namespace detail

inline nlohmann::json config_to_json(const BenchConfig& c) {
    nlohmann::json methods = nlohmann::json::array();
    for (auto m : c.methods) methods.push_back(std::string(to_string(m)));
    return {{"trees", c.n_trees},
            {"inner_trees", c.inner_trees ? c.inner_trees : c.n_trees},
            {"repeats", c.repeats},
            {"seed_base", c.seed_base},
            {"test_fraction", c.test_fraction},
            {"cv_folds", c.cv_folds},
            {"min_n", c.min_n},
            {"methods", methods},
            {"K_candidates", c.K_candidates},
            {"weight_variant", c.weight_variant},
            {"recall_threshold", c.recall_threshold}};
}

inline nlohmann::json report_to_json(const EvalReport& r) {
    nlohmann::json j;
    j["schema"] = "pathrf.report";
    j["schema_version"] = EvalReport::kSchemaVersion;
    j["config"] = config_to_json(r.config);

    nlohmann::json ds = nlohmann::json::array();
    for (const auto& d : r.datasets) {
        nlohmann::json methods = nlohmann::json::object();
        for (const auto& [m, s] : d.methods) {
            methods[std::string(to_string(m))] = {{"accuracy", s.accuracy},
                                                  {"accuracy_sd", s.accuracy_sd},
                                                  {"minority_recall", s.minority_recall},
                                                  {"majority_recall", s.majority_recall},
                                                  {"delta_accuracy", s.delta_accuracy},
                                                  {"delta_minority_recall", s.delta_minority_recall},
                                                  {"delta_majority_recall", s.delta_majority_recall},
                                                  {"mean_K_star", s.mean_K_star},
                                                  {"K_zero_runs", s.K_zero_runs}};
        }
        ds.push_back({{"name", d.name},
                      {"n", d.n},
                      {"p", d.p},
                      {"minority_fraction", d.minority_fraction},
                      {"indicators", {{"M", d.M}, {"S", d.S}, {"MS", d.MS}}},
                      {"methods", methods}});
    }
    j["datasets"] = ds;

    nlohmann::json comps = nlohmann::json::array();
    for (const auto& c : r.comparisons) {
        nlohmann::json w = nullptr;
        if (c.wilcoxon) w = {{"statistic", c.wilcoxon->statistic}, {"p", c.wilcoxon->p}, {"n", c.wilcoxon->n}, {"exact", c.wilcoxon->exact}};
        comps.push_back({{"method", std::string(to_string(c.method))},
                         {"mean_delta_accuracy", c.mean_delta_accuracy},
                         {"mean_delta_minority_recall", c.mean_delta_minority_recall},
                         {"mean_delta_majority_recall", c.mean_delta_majority_recall},
                         {"wins", c.wins},
                         {"ties", c.ties},
                         {"losses", c.losses},
                         {"wilcoxon", w},
                         {"minority_recall_regressions", c.minority_regressions},
                         {"majority_recall_regressions", c.majority_regressions}});
    }
    j["comparisons_vs_rf"] = comps;

    nlohmann::json q = nlohmann::json::array();
    for (std::size_t i = 0; i < r.quintiles.size(); ++i) {
        const auto& row = r.quintiles[i];
        nlohmann::json members = nlohmann::json::array();
        for (auto m : row.members) members.push_back(r.datasets[m].name);
        q.push_back({{"quintile", i + 1},
                     {"size", row.size},
                     {"MS_min", row.ms_min},
                     {"MS_max", row.ms_max},
                     {"mean_delta_accuracy", row.mean_delta},
                     {"wins", row.wins},
                     {"ties", row.ties},
                     {"losses", row.losses},
                     {"datasets", members}});
    }
    j["quintiles"] = q;
    j["correlation_MS_delta"] = {{"pearson", detail::optional_json(r.pearson_ms_delta)},
                                 {"spearman", detail::optional_json(r.spearman_ms_delta)}};

    nlohmann::json fails = nlohmann::json::array();
    for (const auto& [name, why] : r.failures) fails.push_back({{"dataset", name}, {"error", why}});
    j["failures"] = fails;

    nlohmann::json runs = nlohmann::json::array();
    for (const auto& x : r.runs)
        runs.push_back({{"dataset", x.dataset},
                        {"method", std::string(to_string(x.method))},
                        {"repeat", x.repeat},
                        {"seed", x.seed},
                        {"accuracy", x.accuracy},
                        {"minority_recall", x.minority_recall},
                        {"majority_recall", x.majority_recall},
                        {"M", x.M},
                        {"S", x.S},
                        {"K_star", x.K_star},
                        {"n_test", x.n_test},
                        {"n_minority", x.n_minority},
                        {"n_correct", x.n_correct},
                        {"n_minority_correct", x.n_minority_correct},
                        {"n_majority_correct", x.n_majority_correct}});
    j["runs"] = runs;
    return j;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

/// report.json plus one CSV per table.
inline void write_report(const EvalReport& r, const std::filesystem::path& dir) {
    using detail::fmt;
    std::filesystem::create_directories(dir);
    write_text(dir / "report.json", report_to_json(r).dump(2) + "\n");

    std::ostringstream runs;
    runs << "dataset,method,repeat,seed,accuracy,minority_recall,majority_recall,M,S,K_star,n_test,n_minority,n_correct,n_minority_correct,n_majority_correct\n";
    for (const auto& x : r.runs)
        runs << x.dataset << ',' << to_string(x.method) << ',' << x.repeat << ',' << x.seed << ',' << fmt(x.accuracy) << ','
             << fmt(x.minority_recall) << ',' << fmt(x.majority_recall) << ',' << fmt(x.M) << ',' << fmt(x.S) << ','
             << fmt(x.K_star) << ',' << x.n_test << ',' << x.n_minority << ',' << x.n_correct << ','
             << x.n_minority_correct << ',' << x.n_majority_correct << '\n';
    write_text(dir / "runs.csv", runs.str());

    std::ostringstream per;
    per << "dataset,method,accuracy,accuracy_sd,minority_recall,majority_recall,delta_accuracy,delta_minority_recall,"
           "delta_majority_recall,mean_K_star\n";
    for (const auto& d : r.datasets)
        for (const auto& [m, s] : d.methods)
            per << d.name << ',' << to_string(m) << ',' << fmt(s.accuracy) << ',' << fmt(s.accuracy_sd) << ','
                << fmt(s.minority_recall) << ',' << fmt(s.majority_recall) << ',' << fmt(s.delta_accuracy) << ','
                << fmt(s.delta_minority_recall) << ',' << fmt(s.delta_majority_recall) << ',' << fmt(s.mean_K_star) << '\n';
    write_text(dir / "per_dataset.csv", per.str());

    std::ostringstream agg;
    agg << "method,mean_delta_accuracy,wins,ties,losses,wilcoxon_statistic,wilcoxon_p,mean_delta_minority_recall,"
           "mean_delta_majority_recall,minority_recall_regressions,majority_recall_regressions\n";
    for (const auto& c : r.comparisons) {
        agg << to_string(c.method) << ',' << fmt(c.mean_delta_accuracy) << ',' << c.wins << ',' << c.ties << ','
            << c.losses << ',';
        if (c.wilcoxon) agg << fmt(c.wilcoxon->statistic) << ',' << fmt(c.wilcoxon->p);
        else agg << ',';
        agg << ',' << fmt(c.mean_delta_minority_recall) << ',' << fmt(c.mean_delta_majority_recall) << ','
            << c.minority_regressions << ',' << c.majority_regressions << '\n';
    }
    write_text(dir / "aggregate.csv", agg.str());

    std::ostringstream ind;
    ind << "dataset,M,S,MS,delta_accuracy\n";
    for (const auto& d : r.datasets) {
        const auto it = d.methods.find(Method::paw);
        ind << d.name << ',' << fmt(d.M) << ',' << fmt(d.S) << ',' << fmt(d.MS) << ','
            << (it != d.methods.end() ? fmt(it->second.delta_accuracy) : std::string()) << '\n';
    }
    write_text(dir / "indicators.csv", ind.str());

    std::ostringstream q;
    q << "quintile,size,MS_min,MS_max,mean_delta_accuracy,wins,ties,losses\n";
    for (std::size_t i = 0; i < r.quintiles.size(); ++i) {
        const auto& row = r.quintiles[i];
        q << 'Q' << i + 1 << ',' << row.size << ',' << fmt(row.ms_min) << ',' << fmt(row.ms_max) << ','
          << fmt(row.mean_delta) << ',' << row.wins << ',' << row.ties << ',' << row.losses << '\n';
    }
    write_text(dir / "quintiles.csv", q.str());
}

// --- Diagnostics ---------------------------------------------------------------

/// Display regions of width 0.2 over the forest probability.
inline std::size_t coarse_region(double fp) { return bucket(fp) / 2; }

inline constexpr std::array<const char*, 5> kCoarseRegionNames{"[.0,.2)", "[.2,.4)", "[.4,.6)", "[.6,.8)", "[.8,1.]"};

struct Tally {
    std::uint64_t correct = 0;
    std::uint64_t total = 0;
    void add(bool ok) noexcept {
        ++total;
        correct += ok ? 1 : 0;
    }
    double accuracy() const noexcept { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
};

/// role 0 = tree predicts the dataset's majority class, 1 = minority.
using CellTallies = std::array<std::array<std::array<Tally, kNumPatterns>, 2>, 5>;  // [region][role][pattern]

struct PerPointBest {
    double x1 = 0.0, x2 = 0.0;
    int label = 0;
    FlipPattern best = FlipPattern::noflip;
};

struct DatasetDiagnostics {
    std::string name;
    int minority_class = 1;
    CellTallies cells{};
    std::vector<PerPointBest> per_point;  // two-feature datasets, first repeat
};

struct DiagnoseConfig {
    std::size_t n_trees = 300;
    std::size_t repeats = 5;
    std::size_t folds = 5;
    std::uint64_t seed_base = 42;
    std::size_t min_cell = 30;
    unsigned n_threads = 1;
};

/// Tree/point pairs from k-fold CV over the whole dataset, tallied by
/// (coarse region, tree role, pattern).
inline DatasetDiagnostics diagnose_dataset(const Dataset& ds, const DiagnoseConfig& cfg) {
    DatasetDiagnostics out;
    out.name = ds.name;
    out.minority_class = ds.minority_class;
    const bool two_d = ds.n_features() == 2;
    for (std::size_t r = 0; r < cfg.repeats; ++r) {
        std::vector<std::array<Tally, kNumPatterns>> point(two_d && r == 0 ? ds.size() : 0);
        const PairObserver obs = [&](std::size_t row, int label, const Proba& prob, const VoteRecord& v) {
            const auto region = coarse_region(prob[static_cast<std::size_t>(v.ci)]);
            const std::size_t role = v.ci == ds.minority_class ? 1 : 0;
            const bool ok = v.ci == label;
            out.cells[region][role][index_of(v.pattern)].add(ok);
            if (!point.empty()) point[row][index_of(v.pattern)].add(ok);
        };
        const CvParams cp{cfg.n_trees, cfg.folds, kDefaultMinN, 0, cfg.n_threads};
        estimate_weight_table_cv(ds.features, ds.labels, cp, derive_seed(cfg.seed_base + r, 0xD1), obs);
        for (std::size_t i = 0; i < point.size(); ++i) {
            FlipPattern best = FlipPattern::noflip;
            double best_acc = -1.0;
            for (auto p : kAllPatterns) {
                const auto& t = point[i][index_of(p)];
                if (t.total == 0) continue;
                if (t.accuracy() > best_acc) {
                    best_acc = t.accuracy();
                    best = p;
                }
            }
            out.per_point.push_back({ds.features(i, 0), ds.features(i, 1), ds.labels[i], best});
        }
    }
    return out;
}

/// Writes the diagnostic tables for a set of datasets.
inline void write_diagnostics(const std::vector<DatasetDiagnostics>& diags, const std::filesystem::path& dir,
                              std::size_t min_cell = 30) {
    using detail::fmt;
    std::filesystem::create_directories(dir);

    // Pattern frequency: per-dataset share of pairs, averaged over datasets.
    std::array<double, kNumPatterns> freq{};
    std::array<Tally, kNumPatterns> pooled{};
    CellTallies pooled_cells{};
    for (const auto& d : diags) {
        std::array<std::uint64_t, kNumPatterns> count{};
        std::uint64_t total = 0;
        for (std::size_t reg = 0; reg < 5; ++reg)
            for (std::size_t role = 0; role < 2; ++role)
                for (std::size_t p = 0; p < kNumPatterns; ++p) {
                    const auto& t = d.cells[reg][role][p];
                    count[p] += t.total;
                    total += t.total;
                    pooled[p].correct += t.correct;
                    pooled[p].total += t.total;
                    pooled_cells[reg][role][p].correct += t.correct;
                    pooled_cells[reg][role][p].total += t.total;
                }
        for (std::size_t p = 0; p < kNumPatterns; ++p)
            freq[p] += total ? static_cast<double>(count[p]) / static_cast<double>(total) / static_cast<double>(diags.size()) : 0.0;
    }

    std::ostringstream t2;
    t2 << "pattern,mean_frequency\n";
    for (auto p : kAllPatterns) t2 << to_string(p) << ',' << fmt(freq[index_of(p)]) << '\n';
    write_text(dir / "pattern_frequency.csv", t2.str());

    Tally overall;
    for (const auto& t : pooled) {
        overall.correct += t.correct;
        overall.total += t.total;
    }
    std::ostringstream t3;
    t3 << "pattern,accuracy,vs_mean,pairs\n";
    for (auto p : kAllPatterns) {
        const auto& t = pooled[index_of(p)];
        t3 << to_string(p) << ',' << (t.total ? fmt(t.accuracy()) : "") << ','
           << (t.total ? fmt(t.accuracy() - overall.accuracy()) : "") << ',' << t.total << '\n';
    }
    t3 << "overall," << fmt(overall.accuracy()) << ",," << overall.total << '\n';
    write_text(dir / "pattern_accuracy.csv", t3.str());

    std::ostringstream t4;
    t4 << "region";
    for (auto p : kAllPatterns) t4 << ',' << to_string(p);
    t4 << '\n';
    for (std::size_t reg = 0; reg < 5; ++reg) {
        t4 << kCoarseRegionNames[reg];
        for (std::size_t p = 0; p < kNumPatterns; ++p) {
            Tally t = pooled_cells[reg][0][p];
            t.correct += pooled_cells[reg][1][p].correct;
            t.total += pooled_cells[reg][1][p].total;
            t4 << ',' << (t.total ? fmt(t.accuracy()) : "");
        }
        t4 << '\n';
    }
    write_text(dir / "region_pattern_accuracy.csv", t4.str());

    std::ostringstream t5;
    t5 << "pattern,majority_accuracy,majority_pairs,minority_accuracy,minority_pairs,gap\n";
    for (std::size_t p = 0; p < kNumPatterns; ++p) {
        Tally role[2];
        for (std::size_t reg = 0; reg < 5; ++reg)
            for (std::size_t r = 0; r < 2; ++r) {
                role[r].correct += pooled_cells[reg][r][p].correct;
                role[r].total += pooled_cells[reg][r][p].total;
            }
        t5 << to_string(kAllPatterns[p]) << ',' << (role[0].total ? fmt(role[0].accuracy()) : "") << ',' << role[0].total
           << ',' << (role[1].total ? fmt(role[1].accuracy()) : "") << ',' << role[1].total << ',';
        if (role[0].total && role[1].total) t5 << fmt(role[0].accuracy() - role[1].accuracy());
        t5 << '\n';
    }
    write_text(dir / "pattern_by_class.csv", t5.str());

    std::uint64_t all_pairs = 0;
    for (const auto& reg : pooled_cells)
        for (const auto& role : reg)
            for (const auto& t : role) all_pairs += t.total;

    std::ostringstream t6;
    t6 << "region,tree_class,share,spread,best,worst,marginal_accuracy,pairs\n";
    for (std::size_t reg = 0; reg < 5; ++reg)
        for (std::size_t r = 0; r < 2; ++r) {
            Tally marg;
            double lo = 2.0, hi = -1.0;
            std::optional<FlipPattern> best, worst;
            for (std::size_t p = 0; p < kNumPatterns; ++p) {
                const auto& t = pooled_cells[reg][r][p];
                marg.correct += t.correct;
                marg.total += t.total;
                if (t.total < min_cell) continue;
                if (t.accuracy() > hi) {
                    hi = t.accuracy();
                    best = kAllPatterns[p];
                }
                if (t.accuracy() < lo) {
                    lo = t.accuracy();
                    worst = kAllPatterns[p];
                }
            }
            t6 << kCoarseRegionNames[reg] << ',' << (r ? "min" : "maj") << ','
               << fmt(all_pairs ? static_cast<double>(marg.total) / static_cast<double>(all_pairs) : 0.0) << ','
               << (best ? fmt(hi - lo) : "") << ',' << (best ? to_string(*best) : "") << ','
               << (worst ? to_string(*worst) : "") << ',' << (marg.total ? fmt(marg.accuracy()) : "") << ',' << marg.total
               << '\n';
        }
    write_text(dir / "cell_spread.csv", t6.str());

    std::ostringstream t7;
    t7 << "dataset";
    for (std::size_t reg = 0; reg < 5; ++reg) t7 << ',' << kCoarseRegionNames[reg] << " maj," << kCoarseRegionNames[reg] << " min";
    t7 << '\n';
    for (const auto& d : diags) {
        t7 << d.name;
        for (std::size_t reg = 0; reg < 5; ++reg)
            for (std::size_t r = 0; r < 2; ++r) {
                std::optional<FlipPattern> best;
                double hi = -1.0;
                for (std::size_t p = 0; p < kNumPatterns; ++p) {
                    const auto& t = d.cells[reg][r][p];
                    if (t.total < min_cell) continue;
                    if (t.accuracy() > hi) {
                        hi = t.accuracy();
                        best = kAllPatterns[p];
                    }
                }
                t7 << ',' << (best ? to_string(*best) : "");
            }
        t7 << '\n';
    }
    write_text(dir / "region_best.csv", t7.str());

    std::ostringstream cells;
    cells << "dataset,region,tree_class,pattern,accuracy,pairs\n";
    for (const auto& d : diags)
        for (std::size_t reg = 0; reg < 5; ++reg)
            for (std::size_t r = 0; r < 2; ++r)
                for (std::size_t p = 0; p < kNumPatterns; ++p) {
                    const auto& t = d.cells[reg][r][p];
                    cells << d.name << ',' << kCoarseRegionNames[reg] << ',' << (r ? "min" : "maj") << ','
                          << to_string(kAllPatterns[p]) << ',' << (t.total ? fmt(t.accuracy()) : "") << ',' << t.total
                          << '\n';
                }
    write_text(dir / "cell_accuracy.csv", cells.str());

    for (const auto& d : diags) {
        if (d.per_point.empty()) continue;
        std::ostringstream pp;
        pp << "x1,x2,label,best_pattern\n";
        for (const auto& p : d.per_point)
            pp << fmt(p.x1) << ',' << fmt(p.x2) << ',' << p.label << ',' << to_string(p.best) << '\n';
        write_text(dir / ("perpoint_" + d.name + ".csv"), pp.str());
    }
}

}  // namespace pathrf
