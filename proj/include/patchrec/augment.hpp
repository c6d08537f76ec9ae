#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "patchrec/error.hpp"
#include "patchrec/layout.hpp"
#include "patchrec/rng.hpp"

namespace patchrec {

/// Linear compression schedule p = tau / T.
struct CompressionSchedule {
    std::size_t total_steps = 1;  // T
    std::size_t current_step = 0; // tau

    double p() const {
        if (total_steps < 1) throw ConfigError("compression schedule: T must be >= 1");
        if (current_step > total_steps) {
            throw ConfigError("compression schedule: tau " + std::to_string(current_step) +
                              " exceeds T " + std::to_string(total_steps));
        }
        return static_cast<double>(current_step) / static_cast<double>(total_steps);
    }
};

/// Per-item Bernoulli(p) selection, seeded from (global seed, example id,
/// tau). Pre-training patches the selected items; the dropout ablation drops
/// the same ones.
inline std::vector<std::uint8_t> selection_mask(std::size_t n_items, double p,
                                                std::uint64_t global_seed,
                                                std::uint64_t example_id, std::size_t tau) {
    Rng rng(mix_seed(global_seed, example_id, static_cast<std::uint64_t>(tau)));
    std::vector<std::uint8_t> mask(n_items, 0);
    for (std::size_t i = 0; i < n_items; ++i) {
        mask[i] = rng.uniform() < p ? 1 : 0;
    }
    return mask;
}

struct AugmentedBatch {
    std::vector<PromptLayout> layouts; // original and transformed copies, interleaved
    std::size_t skipped = 0;           // dropout copies whose history emptied out
};

/// Pair every text layout with a copy whose items are independently patched
/// with probability p = tau / T.
inline AugmentedBatch augment_pretraining(std::span<const PromptLayout> batch,
                                          const CompressionSchedule& schedule,
                                          std::span<const std::uint64_t> example_ids,
                                          std::uint64_t global_seed, const TokenizedCatalog& tc) {
    if (example_ids.size() != batch.size()) {
        throw DimensionError("augment_pretraining: need one example id per layout");
    }
    const double p = schedule.p();
    AugmentedBatch out;
    out.layouts.reserve(batch.size() * 2);
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto history = batch[i].flatten_source_items();
        const auto mask =
            selection_mask(history.size(), p, global_seed, example_ids[i], schedule.current_step);
        out.layouts.push_back(batch[i]);
        out.layouts.push_back(layout_mixed(history, mask, batch[i].target_item_id, tc));
    }
    return out;
}

/// Ablation twin of augment_pretraining: the selected items are removed
/// outright instead of patched. A copy whose history empties out is skipped
/// and counted.
inline AugmentedBatch augment_dropout(std::span<const PromptLayout> batch,
                                      const CompressionSchedule& schedule,
                                      std::span<const std::uint64_t> example_ids,
                                      std::uint64_t global_seed, const TokenizedCatalog& tc) {
    if (example_ids.size() != batch.size()) {
        throw DimensionError("augment_dropout: need one example id per layout");
    }
    const double p = schedule.p();
    AugmentedBatch out;
    out.layouts.reserve(batch.size() * 2);
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto history = batch[i].flatten_source_items();
        const auto mask =
            selection_mask(history.size(), p, global_seed, example_ids[i], schedule.current_step);
        out.layouts.push_back(batch[i]);
        std::vector<std::int64_t> kept;
        for (std::size_t j = 0; j < history.size(); ++j) {
            if (!mask[j]) kept.push_back(history[j]);
        }
        if (kept.empty()) {
            ++out.skipped;
            continue;
        }
        out.layouts.push_back(layout_text(kept, batch[i].target_item_id, tc));
    }
    return out;
}

} // namespace patchrec
