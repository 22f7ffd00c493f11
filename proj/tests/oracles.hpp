#pragma once

// Independent reference implementations used only by the tests. They favour
// directness over speed and share no code paths with the library.

#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "pathrf/pathrf.hpp"

namespace oracle {

// Exact fraction num/den with den > 0.
struct Frac {
    long long num;
    long long den;
};

inline bool lt(Frac a, Frac b) { return a.num * b.den < b.num * a.den; }
inline bool gt(Frac a, Frac b) { return lt(b, a); }
inline bool ge(Frac a, Frac b) { return !lt(a, b); }

// Pattern straight from the six table rows: every row's condition is tested
// on its own and exactly one must hold.
inline pathrf::FlipPattern pattern(const std::vector<int>& labels) {
    const long long d = static_cast<long long>(labels.size()) - 1;
    std::vector<Frac> pos;
    for (long long i = 1; i <= d; ++i)
        if (labels[static_cast<std::size_t>(i)] != labels[static_cast<std::size_t>(i - 1)]) pos.push_back({i, d});
    const long long k = static_cast<long long>(pos.size());
    const long long n_rev = k > 0 ? k - 1 : 0;
    const Frac third{1, 3}, two_thirds{2, 3};

    const bool noflip = k == 0;
    const bool early = k >= 1 && n_rev == 0 && lt(pos.front(), third) && lt(pos.back(), two_thirds);
    const bool late = k >= 1 && n_rev == 0 && gt(pos.front(), two_thirds);
    const bool osc = n_rev >= 2 || (n_rev == 1 && ge(pos.back(), two_thirds));
    const bool rec = n_rev == 1 && lt(pos.back(), two_thirds);
    const bool other = k >= 1 && n_rev == 0 && !early && !late;

    const int hits = noflip + early + late + osc + rec + other;
    if (hits != 1) throw std::logic_error("pattern rows are not mutually exclusive");
    if (noflip) return pathrf::FlipPattern::noflip;
    if (early) return pathrf::FlipPattern::early_sw;
    if (late) return pathrf::FlipPattern::late_sw;
    if (osc) return pathrf::FlipPattern::oscillat;
    if (rec) return pathrf::FlipPattern::recover;
    return pathrf::FlipPattern::other;
}

// Average ranks by counting: rank = #smaller + (#equal + 1) / 2.
inline std::vector<double> ranks(const std::vector<double>& v) {
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        double less = 0, equal = 0;
        for (double w : v) {
            less += w < v[i] ? 1 : 0;
            equal += w == v[i] ? 1 : 0;
        }
        r[i] = less + (equal + 1.0) / 2.0;
    }
    return r;
}

struct Wilcoxon {
    double statistic;
    double p;
};

// Two-sided signed-rank p by enumerating all 2^n sign flips of the nonzero
// differences; p = 2 min(P(W <= w), P(W >= w)) capped at 1.
inline Wilcoxon wilcoxon_enumerate(const std::vector<double>& deltas) {
    std::vector<double> nz, mag;
    for (double d : deltas)
        if (d != 0.0) {
            nz.push_back(d);
            mag.push_back(std::abs(d));
        }
    const auto r = ranks(mag);
    const std::size_t n = nz.size();
    double w = 0;
    for (std::size_t i = 0; i < n; ++i)
        if (nz[i] > 0) w += r[i];
    const double eps = 1e-9;
    std::uint64_t le = 0, ge = 0;
    const std::uint64_t total = std::uint64_t{1} << n;
    for (std::uint64_t mask = 0; mask < total; ++mask) {
        double s = 0;
        for (std::size_t i = 0; i < n; ++i)
            if (mask >> i & 1) s += r[i];
        le += s <= w + eps ? 1 : 0;
        ge += s >= w - eps ? 1 : 0;
    }
    const double p = 2.0 * static_cast<double>(std::min(le, ge)) / static_cast<double>(total);
    return {w, std::min(1.0, p)};
}

// Textbook single-pass Pearson formula.
inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    const double n = static_cast<double>(x.size());
    double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sx += x[i];
        sy += y[i];
        sxx += x[i] * x[i];
        syy += y[i] * y[i];
        sxy += x[i] * y[i];
    }
    return (n * sxy - sx * sy) / std::sqrt((n * sxx - sx * sx) * (n * syy - sy * sy));
}

// Leaf reached by x found without walking the tree: the unique leaf whose
// axis-aligned box (built from all ancestor splits) contains x.
inline std::int32_t leaf_by_boxes(const pathrf::TreeModel& tree, std::span<const double> x) {
    const std::size_t p = tree.n_features;
    std::optional<std::int32_t> found;
    for (std::size_t id = 0; id < tree.nodes.size(); ++id) {
        if (!tree.nodes[id].is_leaf()) continue;
        std::vector<double> lo(p, -std::numeric_limits<double>::infinity());
        std::vector<double> hi(p, std::numeric_limits<double>::infinity());
        auto child = static_cast<std::int32_t>(id);
        for (auto parent = tree.nodes[id].parent; parent >= 0; parent = tree.nodes[static_cast<std::size_t>(parent)].parent) {
            const auto& pn = tree.nodes[static_cast<std::size_t>(parent)];
            const auto f = static_cast<std::size_t>(pn.feature);
            if (pn.left == child) hi[f] = std::min(hi[f], pn.threshold);
            else lo[f] = std::max(lo[f], pn.threshold);
            child = parent;
        }
        bool inside = true;
        for (std::size_t f = 0; f < p && inside; ++f) inside = x[f] > lo[f] && x[f] <= hi[f];
        if (inside) {
            if (found) throw std::logic_error("leaf boxes overlap");
            found = static_cast<std::int32_t>(id);
        }
    }
    if (!found) throw std::logic_error("no leaf box contains the point");
    return *found;
}

// Weighted vote recomputed from the trees: walk each tree by hand, average
// the leaf distributions, bucket the forest probability of the tree's own
// class and look the weight up by (bucket, pattern, class).
inline pathrf::Proba weighted_vote(const pathrf::ForestModel& forest, const pathrf::WeightTable& table, std::span<const double> x) {
    const std::size_t T = forest.trees.size();
    std::vector<std::array<double, 2>> leaf_p(T);
    std::vector<int> cls(T);
    std::vector<pathrf::FlipPattern> pat(T);
    double fp0 = 0, fp1 = 0;
    for (std::size_t t = 0; t < T; ++t) {
        const auto& tree = forest.trees[t];
        std::int32_t id = 0;
        std::vector<int> seq;
        while (true) {
            const auto& n = tree.nodes[static_cast<std::size_t>(id)];
            seq.push_back(n.counts[1] > n.counts[0] ? 1 : 0);
            if (n.left < 0) break;
            id = x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right;
        }
        const auto& leaf = tree.nodes[static_cast<std::size_t>(id)];
        const double tot = static_cast<double>(leaf.counts[0]) + static_cast<double>(leaf.counts[1]);
        leaf_p[t] = {leaf.counts[0] / tot, leaf.counts[1] / tot};
        cls[t] = seq.back();
        pat[t] = pattern(seq);
        fp0 += leaf_p[t][0];
        fp1 += leaf_p[t][1];
    }
    fp0 /= static_cast<double>(T);
    fp1 /= static_cast<double>(T);
    double s0 = 0, s1 = 0, ws = 0;
    for (std::size_t t = 0; t < T; ++t) {
        const double own = cls[t] == 1 ? fp1 : fp0;
        const auto pb = std::min<std::size_t>(9, static_cast<std::size_t>(std::floor(own * 10.0)));
        const double w = table.W[(pb * 6 + static_cast<std::size_t>(pat[t])) * 2 + static_cast<std::size_t>(cls[t])];
        s0 += w * leaf_p[t][0];
        s1 += w * leaf_p[t][1];
        ws += w;
    }
    return {s0 / ws, s1 / ws};
}

}  // namespace oracle
