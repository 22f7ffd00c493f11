#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace pathrf {

enum class FlipPattern : std::uint8_t { noflip = 0, early_sw, late_sw, oscillat, recover, other };

inline constexpr std::size_t kNumPatterns = 6;

inline constexpr std::array<FlipPattern, kNumPatterns> kAllPatterns{
    FlipPattern::noflip, FlipPattern::early_sw, FlipPattern::late_sw,
    FlipPattern::oscillat, FlipPattern::recover, FlipPattern::other};

constexpr std::string_view to_string(FlipPattern p) noexcept {
    switch (p) {
        case FlipPattern::noflip: return "noflip";
        case FlipPattern::early_sw: return "early_sw";
        case FlipPattern::late_sw: return "late_sw";
        case FlipPattern::oscillat: return "oscillat";
        case FlipPattern::recover: return "recover";
        case FlipPattern::other: return "other";
    }
    return "?";
}

inline FlipPattern parse_pattern(std::string_view s) {
    for (auto p : kAllPatterns)
        if (to_string(p) == s) return p;
    throw std::invalid_argument("unknown flip pattern '" + std::string(s) + "'");
}

constexpr std::size_t index_of(FlipPattern p) noexcept { return static_cast<std::size_t>(p); }

/// Flips along a root-to-leaf label sequence. A flip at node i (1..depth)
/// means labels[i] != labels[i-1]; its normalized position is i / depth.
struct FlipStats {
    std::size_t k = 0;
    std::size_t n_rev = 0;
    std::size_t depth = 0;
    std::vector<std::size_t> flip_nodes;

    std::vector<double> positions() const {
        std::vector<double> out;
        out.reserve(flip_nodes.size());
        for (auto i : flip_nodes) out.push_back(static_cast<double>(i) / static_cast<double>(depth));
        return out;
    }
};

template <typename Label>
FlipStats flip_stats(std::span<const Label> labels) {
    if (labels.empty()) throw std::invalid_argument("flip_stats: empty label sequence");
    FlipStats s;
    s.depth = labels.size() - 1;
    for (std::size_t i = 1; i < labels.size(); ++i)
        if (labels[i] != labels[i - 1]) s.flip_nodes.push_back(i);
    s.k = s.flip_nodes.size();
    s.n_rev = s.k > 0 ? s.k - 1 : 0;
    return s;
}

inline FlipStats flip_stats(const std::vector<int>& labels) { return flip_stats(std::span<const int>(labels)); }

/// Pattern from the few quantities it depends on. Positions are compared as
/// integers (3*i against d and 2d) so the 1/3 and 2/3 boundaries are exact.
constexpr FlipPattern classify_counts(std::size_t k, std::size_t first_flip, std::size_t last_flip, std::size_t depth) noexcept {
    if (k == 0) return FlipPattern::noflip;
    const std::size_t n_rev = k - 1;
    if (n_rev >= 2) return FlipPattern::oscillat;
    if (n_rev == 1) return 3 * last_flip >= 2 * depth ? FlipPattern::oscillat : FlipPattern::recover;
    if (3 * first_flip < depth && 3 * last_flip < 2 * depth) return FlipPattern::early_sw;
    if (3 * first_flip > 2 * depth) return FlipPattern::late_sw;
    return FlipPattern::other;
}

inline FlipPattern classify(const FlipStats& s) noexcept {
    if (s.k == 0) return FlipPattern::noflip;
    return classify_counts(s.k, s.flip_nodes.front(), s.flip_nodes.back(), s.depth);
}

inline double flip_rate(const FlipStats& s) noexcept {
    return s.depth == 0 ? 0.0 : static_cast<double>(s.k) / static_cast<double>(s.depth);
}

/// Running summary of a label path, extended one node at a time during a
/// depth-first walk.
struct PathState {
    int last_label = -1;
    std::size_t depth = 0;
    std::size_t k = 0;
    std::size_t first_flip = 0;
    std::size_t last_flip = 0;

    static PathState root(int label) noexcept {
        PathState s;
        s.last_label = label;
        return s;
    }

    PathState child(int label) const noexcept {
        PathState s = *this;
        ++s.depth;
        if (label != last_label) {
            if (s.k == 0) s.first_flip = s.depth;
            s.last_flip = s.depth;
            ++s.k;
        }
        s.last_label = label;
        return s;
    }

    FlipPattern pattern() const noexcept { return classify_counts(k, first_flip, last_flip, depth); }
    double rate() const noexcept { return depth == 0 ? 0.0 : static_cast<double>(k) / static_cast<double>(depth); }
};

}  // namespace pathrf
