#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "pathrf/data.hpp"
#include "pathrf/forest.hpp"
#include "pathrf/pattern.hpp"

namespace pathrf {

inline constexpr std::size_t kNumBuckets = 10;
inline constexpr std::size_t kNumCells = kNumBuckets * kNumPatterns * 2;
inline constexpr std::size_t kDefaultMinN = 30;

/// Region bucket of a forest probability: floor(10 fp), with 1.0 in bucket 9.
inline std::size_t bucket(double fp) {
    if (!(fp >= 0.0 && fp <= 1.0)) throw std::out_of_range("bucket: probability outside [0, 1]");
    const auto b = static_cast<std::size_t>(std::floor(fp * 10.0));
    return std::min<std::size_t>(b, kNumBuckets - 1);
}

constexpr std::size_t cell_index(std::size_t pb, FlipPattern pat, int ci) noexcept {
    return (pb * kNumPatterns + index_of(pat)) * 2 + static_cast<std::size_t>(ci);
}

struct WeightTable {
    std::array<std::uint64_t, kNumCells> C{};
    std::array<std::uint64_t, kNumCells> N{};
    std::array<double, kNumCells> W{};
    std::size_t min_n = kDefaultMinN;
    std::string variant = "cv";
    std::uint64_t seed = 0;
    std::size_t folds = 0;

    WeightTable() { W.fill(1.0); }

    static WeightTable ones() { return WeightTable{}; }

    double weight(std::size_t pb, FlipPattern pat, int ci) const noexcept { return W[cell_index(pb, pat, ci)]; }
    bool is_fallback(std::size_t cell) const noexcept { return N[cell] < min_n; }

    void add(std::size_t cell, bool correct) noexcept {
        ++N[cell];
        C[cell] += correct ? 1 : 0;
    }

    /// Cell accuracy over the (pb, ci) slice accuracy, before the sparse-cell
    /// fallback. Empty cells and slices with zero accuracy get 1.
    std::array<double, kNumCells> raw_weights() const {
        std::array<double, kNumCells> raw{};
        raw.fill(1.0);
        for (std::size_t pb = 0; pb < kNumBuckets; ++pb) {
            for (int ci = 0; ci < 2; ++ci) {
                std::uint64_t sc = 0, sn = 0;
                for (auto pat : kAllPatterns) {
                    sc += C[cell_index(pb, pat, ci)];
                    sn += N[cell_index(pb, pat, ci)];
                }
                if (sn == 0 || sc == 0) continue;
                const double marginal = static_cast<double>(sc) / static_cast<double>(sn);
                for (auto pat : kAllPatterns) {
                    const auto cell = cell_index(pb, pat, ci);
                    if (N[cell] == 0) continue;
                    raw[cell] = (static_cast<double>(C[cell]) / static_cast<double>(N[cell])) / marginal;
                }
            }
        }
        return raw;
    }

    void finalize() {
        const auto raw = raw_weights();
        for (std::size_t cell = 0; cell < kNumCells; ++cell) W[cell] = is_fallback(cell) ? 1.0 : raw[cell];
    }
};

/// Per-sample vote masses grouped by weight-table cell, enough to re-run the
/// weighted vote under any table without touching the trees again.
struct CellMass {
    std::uint16_t cell = 0;
    std::uint32_t count = 0;
    double mass0 = 0.0;
    double mass1 = 0.0;
};

struct CvSample {
    std::size_t row = 0;  // index into the training rows
    int label = 0;
    std::vector<CellMass> cells;
};

struct CvRecords {
    std::vector<CvSample> samples;
    std::size_t n_pairs = 0;
};

namespace detail {

class SampleAccumulator {
public:
    void add(std::size_t cell, const Proba& p) {
        if (count_[cell] == 0) touched_.push_back(static_cast<std::uint16_t>(cell));
        ++count_[cell];
        mass_[cell][0] += p[0];
        mass_[cell][1] += p[1];
    }

    CvSample take(std::size_t row, int label) {
        CvSample s{row, label, {}};
        std::ranges::sort(touched_);
        for (auto cell : touched_) {
            s.cells.push_back({cell, count_[cell], mass_[cell][0], mass_[cell][1]});
            count_[cell] = 0;
            mass_[cell] = {0.0, 0.0};
        }
        touched_.clear();
        return s;
    }

private:
    std::array<std::uint32_t, kNumCells> count_{};
    std::array<Proba, kNumCells> mass_{};
    std::vector<std::uint16_t> touched_;
};

}  // namespace detail

/// Weighted-vote class for a stored sample; ties go to class 0.
inline int predict_record(const CvSample& s, const WeightTable& table) noexcept {
    double s0 = 0.0, s1 = 0.0;
    for (const auto& c : s.cells) {
        s0 += table.W[c.cell] * c.mass0;
        s1 += table.W[c.cell] * c.mass1;
    }
    return s1 > s0 ? 1 : 0;
}

inline double records_accuracy(const CvRecords& records, const WeightTable& table) {
    if (records.samples.empty()) throw std::invalid_argument("records_accuracy: no records");
    std::size_t correct = 0;
    for (const auto& s : records.samples) correct += predict_record(s, table) == s.label ? 1 : 0;
    return static_cast<double>(correct) / static_cast<double>(records.samples.size());
}

struct CvParams {
    std::size_t n_trees = 300;
    std::size_t folds = 5;
    std::size_t min_n = kDefaultMinN;
    std::size_t max_features = 0;
    unsigned n_threads = 1;
};

/// Hook for callers that want every (tree, validation sample) pair seen while
/// the table is estimated: (row, label, forest probability, vote).
using PairObserver = std::function<void(std::size_t, int, const Proba&, const VoteRecord&)>;

/// Weight table from stratified k-fold CV on the training rows only. Each
/// fold fits an inner forest; every (inner tree, validation sample) pair
/// lands in the cell (bucket of the inner forest's probability for the
/// tree's class, leaf pattern, tree class).
inline std::pair<WeightTable, CvRecords> estimate_weight_table_cv(const Matrix& X, std::span<const int> y,
                                                                  const CvParams& params, std::uint64_t seed,
                                                                  const PairObserver& observe = {}) {
    const auto folds = stratified_kfold(y, params.folds, seed);
    WeightTable table;
    table.min_n = params.min_n;
    table.variant = "cv";
    table.seed = seed;
    table.folds = params.folds;
    CvRecords records;
    detail::SampleAccumulator acc;
    std::vector<VoteRecord> votes;

    for (std::size_t f = 0; f < folds.size(); ++f) {
        const auto& fold = folds[f];
        const Matrix X_tr = X.select_rows(fold.train_indices);
        std::vector<int> y_tr;
        y_tr.reserve(fold.train_indices.size());
        for (auto i : fold.train_indices) y_tr.push_back(y[i]);
        const ForestParams fp{params.n_trees, params.max_features, params.n_threads};
        const ForestModel inner = fit_forest(X_tr, y_tr, fp, derive_seed(seed, 1000 + f));

        for (auto i : fold.val_indices) {
            inner.votes_into(X.row(i), votes);
            const Proba prob = uniform_proba(votes);
            for (const auto& v : votes) {
                const auto cell = cell_index(bucket(prob[static_cast<std::size_t>(v.ci)]), v.pattern, v.ci);
                table.add(cell, v.ci == y[i]);
                acc.add(cell, v.leaf_prob);
                if (observe) observe(i, y[i], prob, v);
            }
            records.n_pairs += votes.size();
            records.samples.push_back(acc.take(i, y[i]));
        }
    }
    table.finalize();
    return {table, std::move(records)};
}

inline std::pair<WeightTable, CvRecords> estimate_weight_table_cv(const Dataset& train, const CvParams& params,
                                                                  std::uint64_t seed) {
    return estimate_weight_table_cv(train.features, train.labels, params, seed);
}

/// Weight table from out-of-bag pairs of an already fitted forest. The
/// bucket uses the sample's OOB probability; samples that every tree saw
/// are skipped.
inline std::pair<WeightTable, CvRecords> estimate_weight_table_oob(const ForestModel& forest, const Matrix& X,
                                                                   std::span<const int> y,
                                                                   std::size_t min_n = kDefaultMinN) {
    if (X.rows() != forest.n_train || y.size() != forest.n_train)
        throw std::invalid_argument("estimate_weight_table_oob: rows differ from the forest's training set");
    WeightTable table;
    table.min_n = min_n;
    table.variant = "oob";
    table.seed = forest.seed;
    CvRecords records;
    detail::SampleAccumulator acc;
    std::vector<VoteRecord> votes;

    for (std::size_t i = 0; i < forest.n_train; ++i) {
        votes.clear();
        const auto x = X.row(i);
        for (std::size_t t = 0; t < forest.size(); ++t) {
            if (forest.in_bag(t, i)) continue;
            const auto& tree = forest.trees[t];
            const auto leaf = tree.leaf_of(x);
            const auto& n = tree.node(leaf);
            votes.push_back({t, leaf, n.majority(), n.pattern, n.prob(), n.flip_rate});
        }
        if (votes.empty()) continue;
        const Proba prob = uniform_proba(votes);
        for (const auto& v : votes) {
            const auto cell = cell_index(bucket(prob[static_cast<std::size_t>(v.ci)]), v.pattern, v.ci);
            table.add(cell, v.ci == y[i]);
            acc.add(cell, v.leaf_prob);
        }
        records.n_pairs += votes.size();
        records.samples.push_back(acc.take(i, y[i]));
    }
    table.finalize();
    return {table, std::move(records)};
}

inline std::pair<WeightTable, CvRecords> estimate_weight_table_oob(const ForestModel& forest, const Dataset& train,
                                                                   std::size_t min_n = kDefaultMinN) {
    return estimate_weight_table_oob(forest, train.features, train.labels, min_n);
}

/// Per-tree table weights for a set of votes of the deployed forest.
inline std::vector<double> table_weights(std::span<const VoteRecord> votes, const WeightTable& table) {
    const Proba prob = uniform_proba(votes);
    std::vector<double> w(votes.size());
    for (std::size_t t = 0; t < votes.size(); ++t) {
        const auto& v = votes[t];
        w[t] = table.W[cell_index(bucket(prob[static_cast<std::size_t>(v.ci)]), v.pattern, v.ci)];
    }
    return w;
}

inline Proba predict_weighted(std::span<const VoteRecord> votes, const WeightTable& table) {
    const auto w = table_weights(votes, table);
    auto p = weighted_proba(votes, w);
    if (!p) throw std::runtime_error("predict_weighted: total weight is zero (corrupt weight table)");
    return *p;
}

inline Proba predict_weighted(const ForestModel& forest, const WeightTable& table, std::span<const double> x) {
    return predict_weighted(forest.per_tree_votes(x), table);
}

/// Ablation: each tree weighted by 1 - flip_rate of its leaf path.
inline Proba predict_naive(std::span<const VoteRecord> votes) {
    std::vector<double> w(votes.size());
    for (std::size_t t = 0; t < votes.size(); ++t) w[t] = 1.0 - votes[t].flip_rate;
    if (auto p = weighted_proba(votes, w)) return *p;
    return uniform_proba(votes);
}

inline Proba predict_naive(const ForestModel& forest, std::span<const double> x) {
    return predict_naive(forest.per_tree_votes(x));
}

// --- Applicability indicators ----------------------------------------------

struct Indicators {
    double M = 0.0;
    double S = 0.0;
    double product = 0.0;
    std::size_t n_defined = 0;
    std::size_t n_boundary = 0;
};

inline constexpr double kBoundaryLow = 0.4;
inline constexpr double kBoundaryHigh = 0.6;
inline constexpr std::size_t kSpreadMinPairs = 10;

inline bool in_boundary(const Proba& p) noexcept {
    const double top = std::max(p[0], p[1]);
    return top >= kBoundaryLow && top < kBoundaryHigh;
}

inline std::vector<std::size_t> boundary_rows(const std::vector<std::optional<Proba>>& oob) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < oob.size(); ++i)
        if (oob[i] && in_boundary(*oob[i])) rows.push_back(i);
    return rows;
}

inline double boundary_mass(const std::vector<std::optional<Proba>>& oob) {
    std::size_t defined = 0, inside = 0;
    for (const auto& p : oob) {
        if (!p) continue;
        ++defined;
        inside += in_boundary(*p) ? 1 : 0;
    }
    if (defined == 0) throw std::runtime_error("boundary_mass: no sample has an out-of-bag prediction");
    return static_cast<double>(inside) / static_cast<double>(defined);
}

inline double boundary_mass(const ForestModel& forest, const Matrix& X) {
    return boundary_mass(forest.oob_decision_function(X));
}

/// Max-minus-min pattern accuracy over (OOB tree, boundary sample) pairs,
/// per tree class, averaged over the two classes.
inline double boundary_spread(const ForestModel& forest, const Matrix& X, std::span<const int> y,
                              std::span<const std::size_t> boundary, std::size_t min_pairs = kSpreadMinPairs) {
    if (boundary.empty()) return 0.0;
    std::array<std::array<std::array<std::size_t, 2>, kNumPatterns>, 2> stats{};  // [ci][pat] -> (correct, total)
    for (auto i : boundary) {
        const auto x = X.row(i);
        for (std::size_t t = 0; t < forest.size(); ++t) {
            if (forest.in_bag(t, i)) continue;
            const auto& n = forest.trees[t].node(forest.trees[t].leaf_of(x));
            const int ci = n.majority();
            auto& cell = stats[static_cast<std::size_t>(ci)][index_of(n.pattern)];
            cell[0] += ci == y[i] ? 1 : 0;
            ++cell[1];
        }
    }
    double total = 0.0;
    for (const auto& by_pattern : stats) {
        double lo = 2.0, hi = -1.0;
        std::size_t eligible = 0;
        for (const auto& cell : by_pattern) {
            if (cell[1] < min_pairs) continue;
            const double acc = static_cast<double>(cell[0]) / static_cast<double>(cell[1]);
            lo = std::min(lo, acc);
            hi = std::max(hi, acc);
            ++eligible;
        }
        if (eligible >= 2) total += hi - lo;
    }
    return total / 2.0;
}

inline Indicators compute_indicators(const ForestModel& forest, const Matrix& X, std::span<const int> y) {
    const auto oob = forest.oob_decision_function(X);
    Indicators ind;
    ind.M = boundary_mass(oob);
    const auto rows = boundary_rows(oob);
    ind.S = boundary_spread(forest, X, y, rows);
    ind.product = ind.M * ind.S;
    for (const auto& p : oob) ind.n_defined += p ? 1 : 0;
    ind.n_boundary = rows.size();
    return ind;
}

inline Indicators compute_indicators(const ForestModel& forest, const Dataset& train) {
    return compute_indicators(forest, train.features, train.labels);
}

// --- Amplification ----------------------------------------------------------

inline constexpr double kAmplifyFloor = 0.01;

/// w -> max(1 + alpha (w - 1), 0.01) on every data-backed cell; fallback
/// cells stay at 1 and alpha == 1 returns the table unchanged.
inline WeightTable amplify(const WeightTable& table, double alpha) {
    if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw std::invalid_argument("amplify: alpha must be finite and >= 0");
    WeightTable out = table;
    if (alpha == 1.0) return out;
    for (std::size_t cell = 0; cell < kNumCells; ++cell) {
        if (table.is_fallback(cell)) continue;
        out.W[cell] = std::max(1.0 + alpha * (table.W[cell] - 1.0), kAmplifyFloor);
    }
    return out;
}

inline double amplification_alpha(double K, double M, double S) noexcept { return 1.0 + K * M * S; }

inline const std::vector<double> kDefaultKCandidates{0.0, 10.0, 20.0, 30.0};

struct KSelection {
    double K = 0.0;
    double alpha = 1.0;
    std::vector<std::pair<double, double>> cv_accuracy;  // (K, accuracy), ascending K
};

/// Picks the K whose amplified table scores best on the stored validation
/// votes; ties go to the smaller K.
inline KSelection select_K(const CvRecords& records, double M, double S, const WeightTable& table,
                           std::vector<double> candidates = kDefaultKCandidates) {
    if (records.samples.empty()) throw std::invalid_argument("select_K: no records");
    if (candidates.empty()) throw std::invalid_argument("select_K: no candidates");
    std::ranges::sort(candidates);
    KSelection sel;
    double best = -1.0;
    for (double K : candidates) {
        const double alpha = amplification_alpha(K, M, S);
        const double acc = records_accuracy(records, amplify(table, alpha));
        sel.cv_accuracy.emplace_back(K, acc);
        if (acc > best) {
            best = acc;
            sel.K = K;
            sel.alpha = alpha;
        }
    }
    return sel;
}

// --- JSON -----------------------------------------------------------------

inline nlohmann::json weight_table_to_json(const WeightTable& t) {
    return {{"format", "pathrf.weight_table"},
            {"version", 1},
            {"dims", {kNumBuckets, kNumPatterns, 2}},
            {"layout", "region_bucket,pattern,tree_class"},
            {"patterns", {"noflip", "early_sw", "late_sw", "oscillat", "recover", "other"}},
            {"min_n", t.min_n},
            {"variant", t.variant},
            {"seed", t.seed},
            {"folds", t.folds},
            {"C", t.C},
            {"N", t.N},
            {"W", t.W}};
}

inline WeightTable weight_table_from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "pathrf.weight_table") throw std::invalid_argument("not a serialized weight table");
    WeightTable t;
    t.min_n = j.at("min_n").get<std::size_t>();
    t.variant = j.at("variant").get<std::string>();
    t.seed = j.at("seed").get<std::uint64_t>();
    t.folds = j.at("folds").get<std::size_t>();
    const auto C = j.at("C").get<std::vector<std::uint64_t>>();
    const auto N = j.at("N").get<std::vector<std::uint64_t>>();
    const auto W = j.at("W").get<std::vector<double>>();
    if (C.size() != kNumCells || N.size() != kNumCells || W.size() != kNumCells)
        throw std::invalid_argument("weight table arrays must have 120 cells");
    for (std::size_t i = 0; i < kNumCells; ++i) {
        if (C[i] > N[i]) throw std::invalid_argument("weight table cell has more corrects than pairs");
        if (!(W[i] >= 0.0) || !std::isfinite(W[i])) throw std::invalid_argument("weight table has an invalid weight");
        t.C[i] = C[i];
        t.N[i] = N[i];
        t.W[i] = W[i];
    }
    return t;
}

}  // namespace pathrf
