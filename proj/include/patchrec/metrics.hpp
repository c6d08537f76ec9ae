#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "patchrec/error.hpp"

namespace patchrec {

struct ScoredItem {
    std::int64_t item_id = 0;
    double score = 0.0;
};

/// Ranked candidates: scores non-increasing, item ids distinct.
using RankedList = std::vector<ScoredItem>;

/// 1-based rank of `item` in the list, or nullopt if absent.
inline std::optional<std::size_t> rank_of(const RankedList& list, std::int64_t item) {
    for (std::size_t i = 0; i < list.size(); ++i) {
        if (list[i].item_id == item) return i + 1;
    }
    return std::nullopt;
}

/// Fraction of cases whose ground truth appears in the top K.
inline double hit_ratio(std::span<const RankedList> lists, std::span<const std::int64_t> truths,
                        int k) {
    if (k <= 0) throw ConfigError("hit_ratio: K must be positive");
    if (lists.size() != truths.size()) {
        throw DimensionError("hit_ratio: " + std::to_string(lists.size()) + " lists vs " +
                             std::to_string(truths.size()) + " truths");
    }
    if (lists.empty()) return 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < lists.size(); ++i) {
        const auto r = rank_of(lists[i], truths[i]);
        if (r && *r <= static_cast<std::size_t>(k)) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(lists.size());
}

/// Mean of 1/log2(rank + 1) over cases where the single relevant item ranks
/// within K; the ideal DCG for one relevant item is 1.
inline double ndcg(std::span<const RankedList> lists, std::span<const std::int64_t> truths,
                   int k) {
    if (k <= 0) throw ConfigError("ndcg: K must be positive");
    if (lists.size() != truths.size()) {
        throw DimensionError("ndcg: " + std::to_string(lists.size()) + " lists vs " +
                             std::to_string(truths.size()) + " truths");
    }
    if (lists.empty()) return 0.0;
    double total = 0.0;
    for (std::size_t i = 0; i < lists.size(); ++i) {
        const auto r = rank_of(lists[i], truths[i]);
        if (r && *r <= static_cast<std::size_t>(k)) {
            total += 1.0 / std::log2(static_cast<double>(*r) + 1.0);
        }
    }
    return total / static_cast<double>(lists.size());
}

} // namespace patchrec
