#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "pathrf/data.hpp"
#include "pathrf/forest.hpp"

namespace pathrf {

struct StaticWeights {
    std::vector<double> w;
};

/// Inverse out-of-bag error per tree, error floored at 1/(n_oob + 1) and
/// normalized to mean 1 over the trees that have out-of-bag rows. Trees
/// without any get weight 1.
inline StaticWeights wrf_weights(const ForestModel& forest, const Matrix& X, std::span<const int> y) {
    if (X.rows() != forest.n_train || y.size() != forest.n_train)
        throw std::invalid_argument("wrf_weights: rows differ from the forest's training set");
    StaticWeights out;
    out.w.assign(forest.size(), 1.0);
    std::vector<bool> has_oob(forest.size(), false);
    double sum = 0.0;
    std::size_t counted = 0;
    for (std::size_t t = 0; t < forest.size(); ++t) {
        std::size_t n_oob = 0, wrong = 0;
        for (std::size_t i = 0; i < forest.n_train; ++i) {
            if (forest.in_bag(t, i)) continue;
            ++n_oob;
            const auto& tree = forest.trees[t];
            wrong += tree.node(tree.leaf_of(X.row(i))).majority() != y[i] ? 1 : 0;
        }
        if (n_oob == 0) continue;
        const double err = std::max(static_cast<double>(wrong) / static_cast<double>(n_oob),
                                    1.0 / static_cast<double>(n_oob + 1));
        out.w[t] = 1.0 / err;
        has_oob[t] = true;
        sum += out.w[t];
        ++counted;
    }
    if (counted > 0) {
        const double mean = sum / static_cast<double>(counted);
        for (std::size_t t = 0; t < forest.size(); ++t)
            if (has_oob[t]) out.w[t] /= mean;
    }
    return out;
}

inline StaticWeights wrf_weights(const ForestModel& forest, const Dataset& train) {
    return wrf_weights(forest, train.features, train.labels);
}

inline Proba wrf_predict(std::span<const VoteRecord> votes, const StaticWeights& weights) {
    auto p = weighted_proba(votes, weights.w);
    if (!p) throw std::runtime_error("wrf_predict: static weights sum to zero");
    return *p;
}

inline Proba wrf_predict(const ForestModel& forest, const StaticWeights& weights, std::span<const double> x) {
    return wrf_predict(forest.per_tree_votes(x), weights);
}

/// Exact k-nearest-neighbour search over the training rows (Euclidean on raw
/// features, ties by lower row index).
class NeighborIndex {
public:
    NeighborIndex(Matrix X, std::vector<int> y, std::size_t k = 7) : X_(std::move(X)), y_(std::move(y)), k_(k) {
        if (X_.rows() == 0) throw std::invalid_argument("NeighborIndex: empty training set");
        if (k_ < 1) throw std::invalid_argument("NeighborIndex: k must be >= 1");
        if (y_.size() != X_.rows()) throw std::invalid_argument("NeighborIndex: label count mismatch");
    }

    std::size_t k() const noexcept { return k_; }
    const Matrix& features() const noexcept { return X_; }
    std::span<const int> labels() const noexcept { return y_; }

    /// min(k, n) nearest rows, closest first.
    std::vector<std::size_t> query(std::span<const double> x) const {
        if (x.size() != X_.cols()) throw std::invalid_argument("NeighborIndex: feature count mismatch");
        std::vector<std::pair<double, std::size_t>> d(X_.rows());
        for (std::size_t i = 0; i < X_.rows(); ++i) {
            double s = 0.0;
            const auto r = X_.row(i);
            for (std::size_t j = 0; j < r.size(); ++j) {
                const double diff = r[j] - x[j];
                s += diff * diff;
            }
            d[i] = {s, i};
        }
        const std::size_t m = std::min(k_, d.size());
        std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(m), d.end());
        std::vector<std::size_t> out(m);
        for (std::size_t i = 0; i < m; ++i) out[i] = d[i].second;
        return out;
    }

private:
    Matrix X_;
    std::vector<int> y_;
    std::size_t k_;
};

/// correct[t * n + i]: whether tree t's own leaf majority matches the label
/// of training row i.
class Competence {
public:
    Competence(const ForestModel& forest, const NeighborIndex& index)
        : n_(index.features().rows()), trees_(forest.size()), correct_(trees_ * n_, 0) {
        const auto& X = index.features();
        const auto y = index.labels();
        for (std::size_t t = 0; t < trees_; ++t) {
            const auto& tree = forest.trees[t];
            for (std::size_t i = 0; i < n_; ++i)
                correct_[t * n_ + i] = tree.node(tree.leaf_of(X.row(i))).majority() == y[i] ? 1 : 0;
        }
    }

    bool correct(std::size_t t, std::size_t i) const noexcept { return correct_[t * n_ + i] != 0; }
    std::size_t trees() const noexcept { return trees_; }

private:
    std::size_t n_;
    std::size_t trees_;
    std::vector<std::uint8_t> correct_;
};

/// KNORA-Eliminate: average the trees that are right on every one of the
/// nearest neighbours, shrinking the neighbourhood until some tree qualifies;
/// with no neighbours left, every tree votes.
inline Proba knora_e_predict(std::span<const VoteRecord> votes, const Competence& comp, std::span<const std::size_t> neighbors) {
    for (std::size_t kk = neighbors.size(); kk >= 1; --kk) {
        std::vector<double> w(votes.size(), 0.0);
        bool any = false;
        for (std::size_t t = 0; t < votes.size(); ++t) {
            bool ok = true;
            for (std::size_t j = 0; j < kk && ok; ++j) ok = comp.correct(t, neighbors[j]);
            if (ok) {
                w[t] = 1.0;
                any = true;
            }
        }
        if (any) return *weighted_proba(votes, w);
    }
    return uniform_proba(votes);
}

/// KNORA-Union: each tree weighted by how many neighbours it gets right.
inline Proba knora_u_predict(std::span<const VoteRecord> votes, const Competence& comp, std::span<const std::size_t> neighbors) {
    std::vector<double> w(votes.size(), 0.0);
    for (std::size_t t = 0; t < votes.size(); ++t)
        for (auto j : neighbors) w[t] += comp.correct(t, j) ? 1.0 : 0.0;
    if (auto p = weighted_proba(votes, w)) return *p;
    return uniform_proba(votes);
}

inline Proba knora_e_predict(const ForestModel& forest, const NeighborIndex& index, std::span<const double> x) {
    const Competence comp(forest, index);
    return knora_e_predict(forest.per_tree_votes(x), comp, index.query(x));
}

inline Proba knora_u_predict(const ForestModel& forest, const NeighborIndex& index, std::span<const double> x) {
    const Competence comp(forest, index);
    return knora_u_predict(forest.per_tree_votes(x), comp, index.query(x));
}

}  // namespace pathrf
