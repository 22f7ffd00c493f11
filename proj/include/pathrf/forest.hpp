#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <thread>
#include <vector>

#include "json.hpp"
#include "pathrf/cart.hpp"
#include "pathrf/data.hpp"
#include "pathrf/rng.hpp"

namespace pathrf {

using Proba = std::array<double, 2>;

/// Class with the larger probability; ties go to class 0.
constexpr int argmax(const Proba& p) noexcept { return p[1] > p[0] ? 1 : 0; }

struct VoteRecord {
    std::size_t tree_index = 0;
    std::int32_t leaf_index = 0;
    int ci = 0;
    FlipPattern pattern = FlipPattern::noflip;
    Proba leaf_prob{0.0, 0.0};
    double flip_rate = 0.0;
};

struct ForestParams {
    std::size_t n_trees = 300;
    std::size_t max_features = 0;  // 0: default_max_features(p)
    unsigned n_threads = 1;
};

class ForestModel {
public:
    std::vector<TreeModel> trees;
    std::vector<std::uint32_t> in_bag_counts;  // trees x n_train
    std::size_t n_train = 0;
    std::size_t n_features = 0;
    std::size_t max_features = 0;
    std::uint64_t seed = 0;

    std::size_t size() const noexcept { return trees.size(); }
    std::uint32_t in_bag_count(std::size_t t, std::size_t i) const noexcept { return in_bag_counts[t * n_train + i]; }
    bool in_bag(std::size_t t, std::size_t i) const noexcept { return in_bag_count(t, i) > 0; }

    void check_input(std::span<const double> x) const {
        if (x.size() != n_features) throw std::invalid_argument("feature count mismatch");
        require_finite(x);
    }

    /// One record per tree for x, without input validation.
    void votes_into(std::span<const double> x, std::vector<VoteRecord>& out) const {
        out.resize(trees.size());
        for (std::size_t t = 0; t < trees.size(); ++t) {
            const auto leaf = trees[t].leaf_of(x);
            const auto& n = trees[t].node(leaf);
            out[t] = {t, leaf, n.majority(), n.pattern, n.prob(), n.flip_rate};
        }
    }

    std::vector<VoteRecord> per_tree_votes(std::span<const double> x) const {
        check_input(x);
        std::vector<VoteRecord> out;
        votes_into(x, out);
        return out;
    }

    Proba predict_proba(std::span<const double> x) const {
        check_input(x);
        Proba sum{0.0, 0.0};
        for (const auto& tree : trees) {
            const auto p = tree.node(tree.leaf_of(x)).prob();
            sum[0] += p[0];
            sum[1] += p[1];
        }
        const double T = static_cast<double>(trees.size());
        return {sum[0] / T, sum[1] / T};
    }

    int predict(std::span<const double> x) const { return argmax(predict_proba(x)); }

    /// Mean leaf distribution over the trees that did not see row i in their
    /// bootstrap; empty when every tree saw it.
    std::vector<std::optional<Proba>> oob_decision_function(const Matrix& X_train) const {
        if (X_train.rows() != n_train) throw std::invalid_argument("oob_decision_function: row count mismatch");
        std::vector<std::optional<Proba>> out(n_train);
        for (std::size_t i = 0; i < n_train; ++i) {
            Proba sum{0.0, 0.0};
            std::size_t n = 0;
            const auto x = X_train.row(i);
            for (std::size_t t = 0; t < trees.size(); ++t) {
                if (in_bag(t, i)) continue;
                const auto p = trees[t].node(trees[t].leaf_of(x)).prob();
                sum[0] += p[0];
                sum[1] += p[1];
                ++n;
            }
            if (n > 0) out[i] = Proba{sum[0] / static_cast<double>(n), sum[1] / static_cast<double>(n)};
        }
        return out;
    }
};

/// Uniform aggregation of already collected votes; same arithmetic as
/// ForestModel::predict_proba.
inline Proba uniform_proba(std::span<const VoteRecord> votes) {
    Proba sum{0.0, 0.0};
    for (const auto& v : votes) {
        sum[0] += v.leaf_prob[0];
        sum[1] += v.leaf_prob[1];
    }
    const double T = static_cast<double>(votes.size());
    return {sum[0] / T, sum[1] / T};
}

/// Weighted mean of leaf distributions; nullopt when the weights sum to 0.
inline std::optional<Proba> weighted_proba(std::span<const VoteRecord> votes, std::span<const double> weights) {
    if (weights.size() != votes.size()) throw std::invalid_argument("weighted_proba: weight count mismatch");
    Proba sum{0.0, 0.0};
    double wsum = 0.0;
    for (std::size_t t = 0; t < votes.size(); ++t) {
        const double w = weights[t];
        sum[0] += w * votes[t].leaf_prob[0];
        sum[1] += w * votes[t].leaf_prob[1];
        wsum += w;
    }
    if (!(wsum > 0.0)) return std::nullopt;
    return Proba{sum[0] / wsum, sum[1] / wsum};
}

inline ForestModel fit_forest(const Matrix& X, std::span<const int> y, const ForestParams& params, std::uint64_t seed) {
    if (X.rows() == 0) throw std::invalid_argument("fit_forest: empty training set");
    if (params.n_trees < 1) throw std::invalid_argument("fit_forest: need at least one tree");
    if (y.size() != X.rows()) throw std::invalid_argument("fit_forest: label count mismatch");

    ForestModel forest;
    forest.n_train = X.rows();
    forest.n_features = X.cols();
    forest.max_features = params.max_features == 0 ? default_max_features(X.cols()) : params.max_features;
    forest.seed = seed;
    forest.trees.resize(params.n_trees);
    forest.in_bag_counts.assign(params.n_trees * X.rows(), 0);

    const FeatureOrder presorted(X);
    const TreeParams tree_params{forest.max_features};
    const std::size_t n = X.rows();

    auto grow = [&](std::size_t t) {
        Rng rng(derive_seed(seed, t));
        std::span<std::uint32_t> counts(forest.in_bag_counts.data() + t * n, n);
        for (std::size_t draw = 0; draw < n; ++draw) ++counts[uniform_index(rng, n)];
        forest.trees[t] = fit_tree(X, y, tree_params, rng(), counts, &presorted);
    };

    const unsigned workers = std::max(1u, std::min<unsigned>(params.n_threads, static_cast<unsigned>(params.n_trees)));
    if (workers == 1) {
        for (std::size_t t = 0; t < params.n_trees; ++t) grow(t);
    } else {
        std::vector<std::jthread> pool;
        for (unsigned w = 0; w < workers; ++w)
            pool.emplace_back([&, w] {
                for (std::size_t t = w; t < params.n_trees; t += workers) grow(t);
            });
    }
    return forest;
}

inline ForestModel fit_forest(const Dataset& train, const ForestParams& params, std::uint64_t seed) {
    return fit_forest(train.features, train.labels, params, seed);
}

// --- JSON -----------------------------------------------------------------

inline nlohmann::json forest_to_json(const ForestModel& forest) {
    nlohmann::json trees = nlohmann::json::array();
    for (const auto& t : forest.trees) trees.push_back(tree_to_json(t));
    // Each in-bag row is stored as (value, run length) pairs.
    nlohmann::json in_bag = nlohmann::json::array();
    for (std::size_t t = 0; t < forest.size(); ++t) {
        nlohmann::json runs = nlohmann::json::array();
        std::size_t i = 0;
        while (i < forest.n_train) {
            const auto v = forest.in_bag_count(t, i);
            std::size_t len = 1;
            while (i + len < forest.n_train && forest.in_bag_count(t, i + len) == v) ++len;
            runs.push_back(v);
            runs.push_back(len);
            i += len;
        }
        in_bag.push_back(std::move(runs));
    }
    return {{"format", "pathrf.forest"},
            {"version", 1},
            {"seed", forest.seed},
            {"n_train", forest.n_train},
            {"n_features", forest.n_features},
            {"max_features", forest.max_features},
            {"trees", std::move(trees)},
            {"in_bag_rle", std::move(in_bag)}};
}

inline ForestModel forest_from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "pathrf.forest") throw std::invalid_argument("not a serialized forest");
    ForestModel forest;
    forest.seed = j.at("seed").get<std::uint64_t>();
    forest.n_train = j.at("n_train").get<std::size_t>();
    forest.n_features = j.at("n_features").get<std::size_t>();
    forest.max_features = j.at("max_features").get<std::size_t>();
    for (const auto& tj : j.at("trees")) {
        forest.trees.push_back(tree_from_json(tj));
        if (forest.trees.back().n_features != forest.n_features) throw std::invalid_argument("tree feature count mismatch");
    }
    const auto& in_bag = j.at("in_bag_rle");
    if (in_bag.size() != forest.trees.size()) throw std::invalid_argument("in-bag rows do not match tree count");
    forest.in_bag_counts.reserve(forest.trees.size() * forest.n_train);
    for (const auto& runs : in_bag) {
        std::size_t filled = 0;
        for (std::size_t k = 0; k + 1 < runs.size(); k += 2) {
            const auto v = runs[k].get<std::uint32_t>();
            const auto len = runs[k + 1].get<std::size_t>();
            filled += len;
            if (filled > forest.n_train) throw std::invalid_argument("in-bag run overflows row count");
            forest.in_bag_counts.insert(forest.in_bag_counts.end(), len, v);
        }
        if (filled != forest.n_train) throw std::invalid_argument("in-bag runs do not cover every row");
    }
    return forest;
}

}  // namespace pathrf
