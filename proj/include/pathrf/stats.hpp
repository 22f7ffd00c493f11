#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pathrf {

/// 1-based ranks with ties sharing their average rank.
inline std::vector<double> average_ranks(std::span<const double> v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::ranges::stable_sort(idx, [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(v.size());
    std::size_t i = 0;
    while (i < idx.size()) {
        std::size_t j = i + 1;
        while (j < idx.size() && v[idx[j]] == v[idx[i]]) ++j;
        const double r = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (std::size_t m = i; m < j; ++m) ranks[idx[m]] = r;
        i = j;
    }
    return ranks;
}

enum class WilcoxonMethod { automatic, exact, normal };

struct WilcoxonResult {
    double statistic = 0.0;  // sum of ranks of positive differences
    double p = 1.0;
    std::size_t n = 0;       // nonzero differences used
    bool exact = false;
};

inline constexpr std::size_t kWilcoxonExactMax = 20;

/// Two-sided Wilcoxon signed-rank test. Zero differences are dropped and tied
/// magnitudes get average ranks. Exact null distribution up to 20 nonzero
/// differences, continuity-corrected normal approximation above.
inline WilcoxonResult wilcoxon_signed_rank(std::span<const double> deltas,
                                           WilcoxonMethod method = WilcoxonMethod::automatic) {
    std::vector<double> nz;
    for (double d : deltas) {
        if (!std::isfinite(d)) throw std::invalid_argument("wilcoxon: non-finite difference");
        if (d != 0.0) nz.push_back(d);
    }
    if (nz.empty()) throw std::invalid_argument("wilcoxon: no nonzero differences");
    const std::size_t n = nz.size();
    std::vector<double> mags(n);
    for (std::size_t i = 0; i < n; ++i) mags[i] = std::abs(nz[i]);
    const auto ranks = average_ranks(mags);

    WilcoxonResult res;
    res.n = n;
    for (std::size_t i = 0; i < n; ++i)
        if (nz[i] > 0) res.statistic += ranks[i];

    const bool use_exact = method == WilcoxonMethod::exact || (method == WilcoxonMethod::automatic && n <= kWilcoxonExactMax);
    if (use_exact) {
        // Doubled ranks are integers even with ties; count sign assignments
        // per doubled positive-rank sum.
        std::vector<std::size_t> r2(n);
        std::size_t total = 0;
        for (std::size_t i = 0; i < n; ++i) {
            r2[i] = static_cast<std::size_t>(std::llround(2.0 * ranks[i]));
            total += r2[i];
        }
        std::vector<double> ways(total + 1, 0.0);
        ways[0] = 1.0;
        for (auto r : r2)
            for (std::size_t s = total; s >= r; --s) {
                ways[s] += ways[s - r];
                if (s == r) break;
            }
        const auto observed = static_cast<std::size_t>(std::llround(2.0 * res.statistic));
        double lower = 0.0, upper = 0.0, all = 0.0;
        for (std::size_t s = 0; s <= total; ++s) {
            all += ways[s];
            if (s <= observed) lower += ways[s];
            if (s >= observed) upper += ways[s];
        }
        res.p = std::min(1.0, 2.0 * std::min(lower, upper) / all);
        res.exact = true;
        return res;
    }

    const double nn = static_cast<double>(n);
    const double mean = nn * (nn + 1.0) / 4.0;
    double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0;
    std::vector<double> sorted = mags;
    std::ranges::sort(sorted);
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i + 1;
        while (j < n && sorted[j] == sorted[i]) ++j;
        const double t = static_cast<double>(j - i);
        var -= (t * t * t - t) / 48.0;
        i = j;
    }
    if (var <= 0.0) {
        res.p = 1.0;
        return res;
    }
    double d = res.statistic - mean;
    if (d > 0) d -= 0.5;
    else if (d < 0) d += 0.5;
    const double z = d / std::sqrt(var);
    res.p = std::min(1.0, std::erfc(std::abs(z) / std::sqrt(2.0)));
    return res;
}

namespace detail {

inline void check_pair(std::span<const double> x, std::span<const double> y, const char* what) {
    if (x.size() != y.size()) throw std::invalid_argument(std::string(what) + ": length mismatch");
    if (x.size() < 3) throw std::invalid_argument(std::string(what) + ": need at least 3 points");
    for (std::size_t i = 0; i < x.size(); ++i)
        if (!std::isfinite(x[i]) || !std::isfinite(y[i])) throw std::invalid_argument(std::string(what) + ": non-finite value");
}

}  // namespace detail

inline double pearson(std::span<const double> x, std::span<const double> y) {
    detail::check_pair(x, y, "pearson");
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx, dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) throw std::invalid_argument("pearson: constant input");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

inline double spearman(std::span<const double> x, std::span<const double> y) {
    detail::check_pair(x, y, "spearman");
    const auto rx = average_ranks(x);
    const auto ry = average_ranks(y);
    return pearson(rx, ry);
}

struct QuintileRow {
    std::size_t size = 0;
    double ms_min = 0.0;
    double ms_max = 0.0;
    double mean_delta = 0.0;
    std::size_t wins = 0;
    std::size_t ties = 0;
    std::size_t losses = 0;
    std::vector<std::size_t> members;  // indices into the inputs
};

/// Group sizes for the quintile split: n/5 each, with the whole remainder
/// added to the lowest group.
inline std::vector<std::size_t> quintile_sizes(std::size_t n) {
    if (n < 5) throw std::invalid_argument("quintile_table: need at least 5 entries");
    std::vector<std::size_t> sizes(5, n / 5);
    sizes[0] += n % 5;
    return sizes;
}

inline std::vector<QuintileRow> quintile_table(std::span<const double> ms, std::span<const double> deltas) {
    if (ms.size() != deltas.size()) throw std::invalid_argument("quintile_table: length mismatch");
    const auto sizes = quintile_sizes(ms.size());
    std::vector<std::size_t> order(ms.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::ranges::stable_sort(order, [&](std::size_t a, std::size_t b) { return ms[a] < ms[b]; });

    std::vector<QuintileRow> rows;
    std::size_t pos = 0;
    for (auto size : sizes) {
        QuintileRow row;
        row.size = size;
        double sum = 0.0;
        for (std::size_t k = 0; k < size; ++k, ++pos) {
            const auto i = order[pos];
            row.members.push_back(i);
            sum += deltas[i];
            if (deltas[i] > 0) ++row.wins;
            else if (deltas[i] < 0) ++row.losses;
            else ++row.ties;
        }
        row.ms_min = ms[row.members.front()];
        row.ms_max = ms[row.members.back()];
        row.mean_delta = sum / static_cast<double>(size);
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace pathrf
