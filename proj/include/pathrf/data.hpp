#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <variant>
#include <vector>

#include "pathrf/rng.hpp"

namespace pathrf {

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Dense row-major matrix of doubles.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), values_(rows * cols, 0.0) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
        : rows_(rows), cols_(cols), values_(std::move(values)) {
        if (values_.size() != rows_ * cols_) throw std::invalid_argument("Matrix: value count does not match shape");
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    bool empty() const noexcept { return rows_ == 0; }

    double operator()(std::size_t r, std::size_t c) const noexcept { return values_[r * cols_ + c]; }
    double& operator()(std::size_t r, std::size_t c) noexcept { return values_[r * cols_ + c]; }

    std::span<const double> row(std::size_t r) const noexcept { return {values_.data() + r * cols_, cols_}; }
    std::span<double> row(std::size_t r) noexcept { return {values_.data() + r * cols_, cols_}; }

    const std::vector<double>& values() const noexcept { return values_; }

    Matrix select_rows(std::span<const std::size_t> indices) const {
        Matrix out(indices.size(), cols_);
        for (std::size_t i = 0; i < indices.size(); ++i) std::ranges::copy(row(indices[i]), out.row(i).begin());
        return out;
    }

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> values_;
};

/// Binary classification dataset. Labels are 0/1; class_names keeps the raw
/// label text each code came from.
struct Dataset {
    std::string name;
    Matrix features;
    std::vector<int> labels;
    int minority_class = 1;
    std::vector<std::string> feature_names;
    std::array<std::string, 2> class_names{"0", "1"};

    std::size_t size() const noexcept { return labels.size(); }
    std::size_t n_features() const noexcept { return features.cols(); }

    std::array<std::size_t, 2> class_counts() const noexcept {
        std::array<std::size_t, 2> counts{0, 0};
        for (int y : labels) ++counts[static_cast<std::size_t>(y)];
        return counts;
    }

    Dataset subset(std::span<const std::size_t> indices) const {
        Dataset out;
        out.name = name;
        out.features = features.select_rows(indices);
        out.labels.reserve(indices.size());
        for (auto i : indices) out.labels.push_back(labels[i]);
        out.minority_class = minority_class;
        out.feature_names = feature_names;
        out.class_names = class_names;
        return out;
    }
};

/// Minority is the strictly rarer label; a tie goes to class 1.
inline int minority_of(std::span<const int> labels) noexcept {
    std::array<std::size_t, 2> counts{0, 0};
    for (int y : labels) ++counts[static_cast<std::size_t>(y)];
    return counts[0] < counts[1] ? 0 : 1;
}

/// Checks the Dataset invariants and fills minority_class.
inline void finalize_dataset(Dataset& ds) {
    if (ds.features.rows() != ds.labels.size()) throw DataError("feature rows and label count differ");
    std::array<std::size_t, 2> counts{0, 0};
    for (int y : ds.labels) {
        if (y != 0 && y != 1) throw DataError("labels must be 0 or 1");
        ++counts[static_cast<std::size_t>(y)];
    }
    if (counts[0] == 0 || counts[1] == 0) throw DataError("both classes must be present");
    for (double v : ds.features.values())
        if (!std::isfinite(v)) throw DataError("non-finite feature value");
    if (ds.feature_names.empty()) {
        for (std::size_t j = 0; j < ds.n_features(); ++j) ds.feature_names.push_back("x" + std::to_string(j + 1));
    }
    ds.minority_class = minority_of(ds.labels);
}

// --- CSV ------------------------------------------------------------------

struct CsvOptions {
    /// Column name or zero-based index; defaults to the last column.
    std::optional<std::variant<std::string, std::size_t>> label_column;
    /// Raw label mapped to class 1. Without it, the lexicographically smaller
    /// raw label becomes 0.
    std::optional<std::string> positive_label;
    std::string name;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline std::vector<std::string> split_csv_line(std::string_view line) {
    std::vector<std::string> cells;
    std::string cell;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cell += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cell += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            cells.emplace_back(trim(cell));
            cell.clear();
        } else {
            cell += c;
        }
    }
    cells.emplace_back(trim(cell));
    return cells;
}

inline std::optional<double> parse_double(std::string_view s) {
    s = trim(s);
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
    return v;
}

inline std::string format_double(double v) {
    std::array<char, 64> buf{};
    const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), ptr);
}

inline std::string stem_of(const std::string& path) {
    auto slash = path.find_last_of("/\\");
    std::string base = slash == std::string::npos ? path : path.substr(slash + 1);
    auto dot = base.find_last_of('.');
    return dot == std::string::npos ? base : base.substr(0, dot);
}

}  // namespace detail

/// Parses CSV text (header row required) into a binary Dataset.
inline Dataset parse_csv(std::istream& in, const CsvOptions& options = {}) {
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty CSV input");
    const auto header = detail::split_csv_line(line);
    if (header.size() < 2) throw DataError("CSV needs at least one feature column and a label column");

    std::size_t label_col = header.size() - 1;
    if (options.label_column) {
        if (const auto* name = std::get_if<std::string>(&*options.label_column)) {
            auto it = std::ranges::find(header, *name);
            if (it == header.end()) throw DataError("missing label column '" + *name + "'");
            label_col = static_cast<std::size_t>(it - header.begin());
        } else {
            label_col = std::get<std::size_t>(*options.label_column);
            if (label_col >= header.size()) throw DataError("label column index out of range");
        }
    }

    std::vector<double> values;
    std::vector<std::string> raw_labels;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        const auto cells = detail::split_csv_line(line);
        if (cells.size() != header.size())
            throw DataError("line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                            " cells, got " + std::to_string(cells.size()));
        for (std::size_t j = 0; j < cells.size(); ++j) {
            if (j == label_col) {
                raw_labels.push_back(cells[j]);
                continue;
            }
            auto v = detail::parse_double(cells[j]);
            if (!v || !std::isfinite(*v))
                throw DataError("line " + std::to_string(line_no) + ", column '" + header[j] +
                                "': non-numeric or missing value '" + cells[j] + "'");
            values.push_back(*v);
        }
    }

    std::map<std::string, std::size_t> distinct;
    for (const auto& l : raw_labels) ++distinct[l];
    if (distinct.size() < 2) throw DataError("fewer than 2 distinct labels");
    if (distinct.size() > 2) throw DataError("more than 2 distinct labels: binary only");

    std::array<std::string, 2> names{distinct.begin()->first, std::next(distinct.begin())->first};
    if (options.positive_label) {
        if (!distinct.contains(*options.positive_label))
            throw DataError("positive label '" + *options.positive_label + "' not present");
        if (names[0] == *options.positive_label) std::swap(names[0], names[1]);
    }

    Dataset ds;
    ds.name = options.name;
    ds.features = Matrix(raw_labels.size(), header.size() - 1, std::move(values));
    ds.labels.reserve(raw_labels.size());
    for (const auto& l : raw_labels) ds.labels.push_back(l == names[1] ? 1 : 0);
    for (std::size_t j = 0; j < header.size(); ++j)
        if (j != label_col) ds.feature_names.push_back(header[j]);
    ds.class_names = names;
    finalize_dataset(ds);
    return ds;
}

inline Dataset load_csv(const std::string& path, CsvOptions options = {}) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path + "'");
    if (options.name.empty()) options.name = detail::stem_of(path);
    return parse_csv(in, options);
}

/// Canonical CSV: feature columns in order, then a "label" column of 0/1.
/// Values use the shortest round-trip representation.
inline void write_csv(std::ostream& out, const Dataset& ds) {
    for (const auto& n : ds.feature_names) out << n << ',';
    out << "label\n";
    for (std::size_t i = 0; i < ds.size(); ++i) {
        for (double v : ds.features.row(i)) out << detail::format_double(v) << ',';
        out << ds.labels[i] << '\n';
    }
}

inline void save_csv(const std::string& path, const Dataset& ds) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path + "'");
    write_csv(out, ds);
}

// --- Splitting ------------------------------------------------------------

struct SplitPlan {
    std::vector<std::size_t> train_indices;
    std::vector<std::size_t> test_indices;
    std::uint64_t seed = 0;

    friend bool operator==(const SplitPlan&, const SplitPlan&) = default;
};

struct Fold {
    std::vector<std::size_t> train_indices;
    std::vector<std::size_t> val_indices;
};

namespace detail {

inline std::array<std::vector<std::size_t>, 2> shuffled_by_class(std::span<const int> labels, Rng& rng) {
    std::array<std::vector<std::size_t>, 2> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[static_cast<std::size_t>(labels[i])].push_back(i);
    for (auto& members : by_class) shuffle(std::span(members), rng);
    return by_class;
}

}  // namespace detail

/// Stratified train/test split. Each class contributes floor(n_c * f) test
/// rows; the remaining rows needed to reach ceil(n * f) go to the larger
/// classes first.
inline SplitPlan stratified_split(std::span<const int> labels, double test_fraction, std::uint64_t seed) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw DataError("test fraction must lie in (0, 1)");
    Rng rng(seed);
    auto by_class = detail::shuffled_by_class(labels, rng);
    for (const auto& members : by_class)
        if (members.size() < 2) throw DataError("stratified split needs at least 2 samples per class");

    const double n = static_cast<double>(labels.size());
    const auto total_test = static_cast<std::size_t>(std::ceil(n * test_fraction - 1e-9));
    std::array<std::size_t, 2> take{};
    std::size_t assigned = 0;
    for (std::size_t c = 0; c < 2; ++c) {
        take[c] = static_cast<std::size_t>(std::floor(static_cast<double>(by_class[c].size()) * test_fraction + 1e-9));
        assigned += take[c];
    }
    std::array<std::size_t, 2> order{0, 1};
    if (by_class[1].size() > by_class[0].size()) std::swap(order[0], order[1]);
    for (std::size_t c : order) {
        if (assigned >= total_test) break;
        if (take[c] + 1 < by_class[c].size()) {
            ++take[c];
            ++assigned;
        }
    }

    SplitPlan plan;
    plan.seed = seed;
    for (std::size_t c = 0; c < 2; ++c) {
        const auto& members = by_class[c];
        plan.test_indices.insert(plan.test_indices.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(take[c]));
        plan.train_indices.insert(plan.train_indices.end(), members.begin() + static_cast<std::ptrdiff_t>(take[c]), members.end());
    }
    std::ranges::sort(plan.train_indices);
    std::ranges::sort(plan.test_indices);
    return plan;
}

inline SplitPlan stratified_split(const Dataset& ds, double test_fraction, std::uint64_t seed) {
    return stratified_split(std::span<const int>(ds.labels), test_fraction, seed);
}

/// Stratified k-fold. Rows of each class are shuffled and dealt round-robin,
/// with the dealing position carried over from one class to the next so
/// total fold sizes also differ by at most one.
inline std::vector<Fold> stratified_kfold(std::span<const int> labels, std::size_t k, std::uint64_t seed) {
    if (k < 2) throw DataError("k-fold needs k >= 2");
    Rng rng(seed);
    auto by_class = detail::shuffled_by_class(labels, rng);
    for (const auto& members : by_class)
        if (members.size() < k) throw DataError("k-fold: a class has fewer samples than folds");

    std::vector<std::vector<std::size_t>> val(k);
    std::size_t cursor = 0;
    for (const auto& members : by_class) {
        for (auto i : members) {
            val[cursor].push_back(i);
            cursor = (cursor + 1) % k;
        }
    }
    std::vector<Fold> folds(k);
    std::vector<std::size_t> fold_of(labels.size());
    for (std::size_t f = 0; f < k; ++f)
        for (auto i : val[f]) fold_of[i] = f;
    for (std::size_t f = 0; f < k; ++f) {
        std::ranges::sort(val[f]);
        folds[f].val_indices = std::move(val[f]);
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (fold_of[i] != f) folds[f].train_indices.push_back(i);
    }
    return folds;
}

inline std::vector<Fold> stratified_kfold(const Dataset& ds, std::size_t k, std::uint64_t seed) {
    return stratified_kfold(std::span<const int>(ds.labels), k, seed);
}

// --- Synthetic 2D geometries ----------------------------------------------

enum class SyntheticKind { diagonal, moons, circles, overlap };

inline std::string_view to_string(SyntheticKind kind) {
    switch (kind) {
        case SyntheticKind::diagonal: return "diagonal";
        case SyntheticKind::moons: return "moons";
        case SyntheticKind::circles: return "circles";
        case SyntheticKind::overlap: return "overlap";
    }
    return "?";
}

inline SyntheticKind parse_synthetic_kind(std::string_view s) {
    for (auto k : {SyntheticKind::diagonal, SyntheticKind::moons, SyntheticKind::circles, SyntheticKind::overlap})
        if (to_string(k) == s) return k;
    throw DataError("unknown synthetic kind '" + std::string(s) + "'");
}

/// Default noise: feature jitter for diagonal/moons/circles, the per-class
/// standard deviation for overlap.
inline double default_noise(SyntheticKind kind) {
    switch (kind) {
        case SyntheticKind::diagonal: return 0.1;
        case SyntheticKind::moons: return 0.25;
        case SyntheticKind::circles: return 0.1;
        case SyntheticKind::overlap: return 1.0;
    }
    return 0.0;
}

inline Dataset gen_synthetic(SyntheticKind kind, std::size_t n, std::optional<double> noise_opt, std::uint64_t seed) {
    if (n < 20) throw DataError("synthetic datasets need n >= 20");
    const double noise = noise_opt.value_or(default_noise(kind));
    if (!(noise >= 0.0) || !std::isfinite(noise)) throw DataError("noise must be finite and >= 0");

    Rng rng(seed);
    const std::array<std::size_t, 2> quota{n / 2, n - n / 2};
    std::vector<std::array<double, 2>> points;
    std::vector<int> labels;
    points.reserve(n);
    labels.reserve(n);

    auto emit = [&](double x1, double x2, int y) {
        points.push_back({x1, x2});
        labels.push_back(y);
    };

    switch (kind) {
        case SyntheticKind::diagonal: {
            std::array<std::size_t, 2> have{0, 0};
            while (have[0] < quota[0] || have[1] < quota[1]) {
                const double x1 = uniform01(rng), x2 = uniform01(rng);
                const double side = x1 + x2 - 1.0;
                if (side == 0.0) continue;
                const int y = side > 0.0 ? 1 : 0;
                if (have[static_cast<std::size_t>(y)] >= quota[static_cast<std::size_t>(y)]) continue;
                ++have[static_cast<std::size_t>(y)];
                emit(x1 + noise * standard_normal(rng), x2 + noise * standard_normal(rng), y);
            }
            break;
        }
        case SyntheticKind::moons: {
            for (int y = 0; y < 2; ++y) {
                for (std::size_t i = 0; i < quota[static_cast<std::size_t>(y)]; ++i) {
                    const double t = std::numbers::pi * uniform01(rng);
                    const double x1 = y == 0 ? std::cos(t) : 1.0 - std::cos(t);
                    const double x2 = y == 0 ? std::sin(t) : 0.5 - std::sin(t);
                    emit(x1 + noise * standard_normal(rng), x2 + noise * standard_normal(rng), y);
                }
            }
            break;
        }
        case SyntheticKind::circles: {
            for (int y = 0; y < 2; ++y) {
                const double radius = y == 1 ? 0.5 : 1.0;
                for (std::size_t i = 0; i < quota[static_cast<std::size_t>(y)]; ++i) {
                    const double t = 2.0 * std::numbers::pi * uniform01(rng);
                    emit(radius * std::cos(t) + noise * standard_normal(rng),
                         radius * std::sin(t) + noise * standard_normal(rng), y);
                }
            }
            break;
        }
        case SyntheticKind::overlap: {
            // Means sit 2 sigma apart along the first axis.
            for (int y = 0; y < 2; ++y) {
                const double mean = y == 0 ? -noise : noise;
                for (std::size_t i = 0; i < quota[static_cast<std::size_t>(y)]; ++i)
                    emit(mean + noise * standard_normal(rng), noise * standard_normal(rng), y);
            }
            break;
        }
    }

    std::vector<std::size_t> order(points.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle(std::span(order), rng);

    Dataset ds;
    ds.name = std::string(to_string(kind));
    ds.features = Matrix(n, 2);
    ds.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        ds.features(i, 0) = points[order[i]][0];
        ds.features(i, 1) = points[order[i]][1];
        ds.labels[i] = labels[order[i]];
    }
    ds.feature_names = {"x1", "x2"};
    finalize_dataset(ds);
    return ds;
}

}  // namespace pathrf
