#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "json.hpp"
#include "pathrf/data.hpp"
#include "pathrf/pattern.hpp"
#include "pathrf/rng.hpp"

namespace pathrf {

using ClassCounts = std::array<std::uint32_t, 2>;

/// Majority label of a count pair; ties go to class 0.
constexpr int majority_of(const ClassCounts& c) noexcept { return c[1] > c[0] ? 1 : 0; }

struct TreeNode {
    std::int32_t feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    std::int32_t left = -1;
    std::int32_t right = -1;
    std::int32_t parent = -1;
    std::uint32_t depth = 0;
    ClassCounts counts{0, 0};

    // Filled by precompute_leaf_patterns.
    FlipPattern pattern = FlipPattern::noflip;
    double flip_rate = 0.0;

    bool is_leaf() const noexcept { return feature < 0; }
    int majority() const noexcept { return majority_of(counts); }
    std::array<double, 2> prob() const noexcept {
        const double total = static_cast<double>(counts[0]) + static_cast<double>(counts[1]);
        return {static_cast<double>(counts[0]) / total, static_cast<double>(counts[1]) / total};
    }
};

inline void require_finite(std::span<const double> x) {
    for (double v : x)
        if (!std::isfinite(v)) throw std::invalid_argument("non-finite feature value");
}

class TreeModel {
public:
    std::vector<TreeNode> nodes;
    std::uint64_t seed = 0;
    std::size_t n_features = 0;

    std::size_t size() const noexcept { return nodes.size(); }
    const TreeNode& node(std::int32_t id) const { return nodes[static_cast<std::size_t>(id)]; }

    /// Leaf reached by x without input validation.
    std::int32_t leaf_of(std::span<const double> x) const noexcept {
        std::int32_t id = 0;
        while (true) {
            const TreeNode& n = nodes[static_cast<std::size_t>(id)];
            if (n.feature < 0) return id;
            id = x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right;
        }
    }

    std::int32_t apply(std::span<const double> x) const {
        if (x.size() != n_features) throw std::invalid_argument("apply: feature count mismatch");
        require_finite(x);
        return leaf_of(x);
    }

    std::vector<std::int32_t> leaves() const {
        std::vector<std::int32_t> out;
        for (std::size_t i = 0; i < nodes.size(); ++i)
            if (nodes[i].is_leaf()) out.push_back(static_cast<std::int32_t>(i));
        return out;
    }

    std::size_t max_depth() const noexcept {
        std::size_t d = 0;
        for (const auto& n : nodes) d = std::max<std::size_t>(d, n.depth);
        return d;
    }

    /// Node majorities from the root down to `leaf`.
    std::vector<int> path_label_sequence(std::int32_t leaf) const {
        if (leaf < 0 || static_cast<std::size_t>(leaf) >= nodes.size() || !node(leaf).is_leaf())
            throw std::out_of_range("path_label_sequence: not a leaf index");
        std::vector<int> labels;
        for (std::int32_t id = leaf; id >= 0; id = node(id).parent) labels.push_back(node(id).majority());
        std::ranges::reverse(labels);
        return labels;
    }

    /// One depth-first pass that caches pattern and flip rate on every node.
    void precompute_leaf_patterns() {
        if (nodes.empty()) return;
        std::vector<std::pair<std::int32_t, PathState>> stack;
        stack.emplace_back(0, PathState::root(nodes[0].majority()));
        while (!stack.empty()) {
            auto [id, state] = stack.back();
            stack.pop_back();
            TreeNode& n = nodes[static_cast<std::size_t>(id)];
            n.pattern = state.pattern();
            n.flip_rate = state.rate();
            if (n.is_leaf()) continue;
            stack.emplace_back(n.right, state.child(node(n.right).majority()));
            stack.emplace_back(n.left, state.child(node(n.left).majority()));
        }
    }

    friend bool operator==(const TreeModel& a, const TreeModel& b) {
        if (a.seed != b.seed || a.n_features != b.n_features || a.nodes.size() != b.nodes.size()) return false;
        for (std::size_t i = 0; i < a.nodes.size(); ++i) {
            const auto &x = a.nodes[i], &y = b.nodes[i];
            if (x.feature != y.feature || x.threshold != y.threshold || x.left != y.left || x.right != y.right ||
                x.counts != y.counts || x.pattern != y.pattern)
                return false;
        }
        return true;
    }
};

/// Row indices of a matrix sorted by each feature (ties by row index).
/// Computed once and shared by every tree grown on the same rows.
struct FeatureOrder {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::uint32_t> order;  // cols blocks of length rows

    explicit FeatureOrder(const Matrix& X) : rows(X.rows()), cols(X.cols()), order(X.rows() * X.cols()) {
        for (std::size_t f = 0; f < cols; ++f) {
            auto block = std::span(order).subspan(f * rows, rows);
            std::iota(block.begin(), block.end(), std::uint32_t{0});
            std::ranges::stable_sort(block, [&](std::uint32_t a, std::uint32_t b) { return X(a, f) < X(b, f); });
        }
    }

    std::span<const std::uint32_t> feature(std::size_t f) const noexcept { return std::span(order).subspan(f * rows, rows); }
};

/// round(sqrt(p)) with halves rounded up, clamped to [1, p].
inline std::size_t default_max_features(std::size_t p) {
    const auto m = static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(p)) + 0.5));
    return std::clamp<std::size_t>(m, 1, std::max<std::size_t>(p, 1));
}

struct TreeParams {
    std::size_t max_features = 0;  // 0: default_max_features(p)
};

namespace detail {

class TreeBuilder {
public:
    TreeBuilder(const Matrix& X, std::span<const int> y, std::span<const std::uint32_t> weights, std::size_t max_features,
                std::uint64_t seed, const FeatureOrder& presorted)
        : X_(X), y_(y), w_(weights), mtry_(max_features), rng_(seed), p_(X.cols()) {
        for (std::size_t f = 0; f < p_; ++f) {
            for (auto r : presorted.feature(f))
                if (weight(r) > 0) order_.push_back(r);
        }
        m_ = p_ == 0 ? 0 : order_.size() / p_;
        go_left_.assign(X.rows(), 0);
        scratch_.resize(m_);
        features_.resize(p_);
    }

    TreeModel build() {
        TreeModel tree;
        tree.n_features = p_;
        struct Pending {
            std::size_t start, end;
            std::int32_t parent;
            bool is_left;
            std::uint32_t depth;
        };
        std::vector<Pending> stack{{0, m_, -1, false, 0}};
        while (!stack.empty()) {
            const Pending job = stack.back();
            stack.pop_back();
            const auto id = static_cast<std::int32_t>(tree.nodes.size());
            TreeNode node;
            node.parent = job.parent;
            node.depth = job.depth;
            node.counts = count(job.start, job.end);
            if (job.parent >= 0) {
                auto& parent = tree.nodes[static_cast<std::size_t>(job.parent)];
                (job.is_left ? parent.left : parent.right) = id;
            }
            tree.nodes.push_back(node);

            const bool pure = node.counts[0] == 0 || node.counts[1] == 0;
            if (pure || job.end - job.start < 2) continue;
            const Split split = best_split(job.start, job.end);
            if (split.feature < 0) continue;

            const std::size_t mid = partition(job.start, job.end, split);
            auto& stored = tree.nodes.back();
            stored.feature = split.feature;
            stored.threshold = split.threshold;
            stack.push_back({mid, job.end, id, false, job.depth + 1});
            stack.push_back({job.start, mid, id, true, job.depth + 1});
        }
        tree.precompute_leaf_patterns();
        return tree;
    }

private:
    struct Split {
        std::int32_t feature = -1;
        double threshold = 0.0;
        double proxy = -1.0;
    };

    std::uint32_t weight(std::size_t r) const noexcept { return w_.empty() ? 1u : w_[r]; }

    std::span<std::uint32_t> segment(std::size_t f, std::size_t start, std::size_t end) noexcept {
        return std::span(order_).subspan(f * m_ + start, end - start);
    }

    ClassCounts count(std::size_t start, std::size_t end) {
        ClassCounts c{0, 0};
        if (p_ == 0) return c;
        for (auto r : segment(0, start, end)) c[static_cast<std::size_t>(y_[r])] += weight(r);
        return c;
    }

    static bool better(const Split& cand, const Split& best) noexcept {
        if (cand.proxy != best.proxy) return cand.proxy > best.proxy;
        if (cand.feature != best.feature) return cand.feature < best.feature;
        return cand.threshold < best.threshold;
    }

    // Features are drawn without replacement; constant ones are skipped and
    // do not count toward max_features.
    Split best_split(std::size_t start, std::size_t end) {
        std::iota(features_.begin(), features_.end(), std::size_t{0});
        Split best;
        std::size_t evaluated = 0;
        for (std::size_t i = 0; i < p_ && evaluated < mtry_; ++i) {
            const std::size_t j = i + static_cast<std::size_t>(uniform_index(rng_, p_ - i));
            std::swap(features_[i], features_[j]);
            const std::size_t f = features_[i];
            auto seg = segment(f, start, end);
            if (X_(seg.front(), f) == X_(seg.back(), f)) continue;
            ++evaluated;
            Split cand = scan_feature(f, seg);
            if (cand.feature >= 0 && (best.feature < 0 || better(cand, best))) best = cand;
        }
        return best;
    }

    Split scan_feature(std::size_t f, std::span<const std::uint32_t> seg) const {
        std::array<double, 2> total{0.0, 0.0};
        for (auto r : seg) total[static_cast<std::size_t>(y_[r])] += weight(r);
        const double n_total = total[0] + total[1];
        std::array<double, 2> left{0.0, 0.0};
        Split best;
        best.feature = static_cast<std::int32_t>(f);
        best.proxy = -1.0;
        bool found = false;
        for (std::size_t i = 0; i + 1 < seg.size(); ++i) {
            const auto r = seg[i];
            left[static_cast<std::size_t>(y_[r])] += weight(r);
            const double a = X_(r, f), b = X_(seg[i + 1], f);
            if (!(a < b)) continue;
            const double wl = left[0] + left[1];
            const double wr = n_total - wl;
            const double r0 = total[0] - left[0], r1 = total[1] - left[1];
            const double proxy = (left[0] * left[0] + left[1] * left[1]) / wl + (r0 * r0 + r1 * r1) / wr;
            if (!found || proxy > best.proxy) {
                double t = a / 2.0 + b / 2.0;
                if (t == b || !std::isfinite(t)) t = a;
                best.proxy = proxy;
                best.threshold = t;
                found = true;
            }
        }
        if (!found) best.feature = -1;
        return best;
    }

    std::size_t partition(std::size_t start, std::size_t end, const Split& split) {
        const auto f = static_cast<std::size_t>(split.feature);
        std::size_t n_left = 0;
        for (auto r : segment(f, start, end)) {
            const bool l = X_(r, f) <= split.threshold;
            go_left_[r] = l ? 1 : 0;
            n_left += l ? 1 : 0;
        }
        for (std::size_t g = 0; g < p_; ++g) {
            auto seg = segment(g, start, end);
            std::size_t li = 0, ri = n_left;
            for (auto r : seg) scratch_[go_left_[r] ? li++ : ri++] = r;
            std::copy_n(scratch_.begin(), seg.size(), seg.begin());
        }
        return start + n_left;
    }

    const Matrix& X_;
    std::span<const int> y_;
    std::span<const std::uint32_t> w_;
    std::size_t mtry_;
    Rng rng_;
    std::size_t p_;
    std::size_t m_ = 0;
    std::vector<std::uint32_t> order_;
    std::vector<std::uint8_t> go_left_;
    std::vector<std::uint32_t> scratch_;
    std::vector<std::size_t> features_;
};

}  // namespace detail

/// Grows an unpruned Gini tree. `weights` holds integer multiplicities per
/// row (bootstrap counts); rows with weight 0 are ignored. An empty span
/// means every row counts once.
inline TreeModel fit_tree(const Matrix& X, std::span<const int> y, const TreeParams& params, std::uint64_t seed,
                          std::span<const std::uint32_t> weights = {}, const FeatureOrder* presorted = nullptr) {
    if (X.rows() == 0 || X.cols() == 0) throw std::invalid_argument("fit_tree: empty input");
    if (y.size() != X.rows()) throw std::invalid_argument("fit_tree: label count mismatch");
    if (!weights.empty() && weights.size() != X.rows()) throw std::invalid_argument("fit_tree: weight count mismatch");
    for (int v : y)
        if (v != 0 && v != 1) throw std::invalid_argument("fit_tree: labels must be 0/1");
    const std::size_t mtry = params.max_features == 0 ? default_max_features(X.cols()) : params.max_features;
    if (mtry < 1 || mtry > X.cols()) throw std::invalid_argument("fit_tree: max_features out of range");
    if (!weights.empty() && std::ranges::all_of(weights, [](auto w) { return w == 0; }))
        throw std::invalid_argument("fit_tree: all weights are zero");

    std::optional<FeatureOrder> local;
    if (presorted == nullptr) presorted = &local.emplace(X);
    detail::TreeBuilder builder(X, y, weights, mtry, seed, *presorted);
    TreeModel tree = builder.build();
    tree.seed = seed;
    return tree;
}

inline TreeModel fit_tree(const Dataset& ds, const TreeParams& params, std::uint64_t seed) {
    return fit_tree(ds.features, ds.labels, params, seed);
}

// --- JSON -----------------------------------------------------------------

inline nlohmann::json tree_to_json(const TreeModel& tree) {
    nlohmann::json feature = nlohmann::json::array(), threshold = nlohmann::json::array(), left = nlohmann::json::array(),
                   right = nlohmann::json::array(), counts = nlohmann::json::array();
    for (const auto& n : tree.nodes) {
        feature.push_back(n.feature);
        threshold.push_back(n.threshold);
        left.push_back(n.left);
        right.push_back(n.right);
        counts.push_back({n.counts[0], n.counts[1]});
    }
    return {{"format", "pathrf.tree"},
            {"version", 1},
            {"seed", tree.seed},
            {"n_features", tree.n_features},
            {"nodes", {{"feature", feature}, {"threshold", threshold}, {"left", left}, {"right", right}, {"counts", counts}}}};
}

inline TreeModel tree_from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "pathrf.tree") throw std::invalid_argument("not a serialized tree");
    TreeModel tree;
    tree.seed = j.at("seed").get<std::uint64_t>();
    tree.n_features = j.at("n_features").get<std::size_t>();
    const auto& nj = j.at("nodes");
    const auto feature = nj.at("feature").get<std::vector<std::int32_t>>();
    const auto threshold = nj.at("threshold").get<std::vector<double>>();
    const auto left = nj.at("left").get<std::vector<std::int32_t>>();
    const auto right = nj.at("right").get<std::vector<std::int32_t>>();
    const auto counts = nj.at("counts").get<std::vector<std::array<std::uint32_t, 2>>>();
    const std::size_t n = feature.size();
    if (n == 0 || threshold.size() != n || left.size() != n || right.size() != n || counts.size() != n)
        throw std::invalid_argument("tree node arrays have inconsistent lengths");
    tree.nodes.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto& node = tree.nodes[i];
        node.feature = feature[i];
        node.threshold = threshold[i];
        node.left = left[i];
        node.right = right[i];
        node.counts = counts[i];
        if (node.counts[0] + node.counts[1] == 0) throw std::invalid_argument("tree node with empty counts");
        if (node.feature >= 0) {
            if (static_cast<std::size_t>(node.feature) >= tree.n_features) throw std::invalid_argument("tree feature index out of range");
            for (auto c : {node.left, node.right})
                if (c <= static_cast<std::int32_t>(i) || static_cast<std::size_t>(c) >= n)
                    throw std::invalid_argument("tree child index out of range");
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        const auto& node = tree.nodes[i];
        if (node.is_leaf()) continue;
        for (auto c : {node.left, node.right}) {
            auto& child = tree.nodes[static_cast<std::size_t>(c)];
            if (child.parent >= 0) throw std::invalid_argument("tree node has two parents");
            child.parent = static_cast<std::int32_t>(i);
            child.depth = node.depth + 1;
        }
    }
    tree.precompute_leaf_patterns();
    return tree;
}

}  // namespace pathrf
