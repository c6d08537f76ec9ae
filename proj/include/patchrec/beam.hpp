#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <vector>

#include "patchrec/layout.hpp"
#include "patchrec/metrics.hpp"
#include "patchrec/model.hpp"
#include "patchrec/trie.hpp"

namespace patchrec {

struct BeamSearchConfig {
    std::size_t width = 20;
    bool length_normalize = true; // rank finished beams by mean per-token log-prob
};

namespace detail {

struct LiveBeam {
    IncrementalDecoder decoder;
    std::uint32_t node = 0; // current trie node
    std::vector<TokenId> tokens;
    double logprob_sum = 0.0;
};

struct FinishedBeam {
    std::vector<TokenId> tokens; // title tokens (EOS not stored)
    std::uint32_t node = 0;      // terminal node
    double logprob_sum = 0.0;    // includes the EOS term
    std::size_t length = 0;      // generated tokens including EOS

    double final_score(bool normalize) const {
        return normalize ? logprob_sum / static_cast<double>(length) : logprob_sum;
    }
};

inline double log_sum_exp(const std::vector<double>& v) {
    double mx = v[0];
    for (double x : v) mx = std::max(mx, x);
    double total = 0.0;
    for (double x : v) total += std::exp(x - mx);
    return mx + std::log(total);
}

} // namespace detail

/// Beam search over the title trie: at every step the candidate tokens are
/// exactly the children of the beam's trie node (plus EOS at terminals), so
/// each finished hypothesis is a complete catalog title. Finished beams are
/// ranked by their final score; items sharing a generated title all receive
/// that beam's score; ties break by item id ascending.
inline RankedList beam_search(const ModelState& state, const PromptLayout& prompt,
                              const TokenizedCatalog& tc, const TitleTrie& trie,
                              const BeamSearchConfig& config) {
    if (config.width < 1) throw ConfigError("beam_search: width must be >= 1");
    std::size_t width = config.width;
    if (width > trie.path_count()) {
        std::cerr << "beam_search: width " << width << " exceeds " << trie.path_count()
                  << " distinct titles; clamping\n";
        width = trie.path_count();
    }

    std::vector<detail::LiveBeam> live;
    {
        detail::LiveBeam root{IncrementalDecoder(state), trie.root(), {}, 0.0};
        root.decoder.prefill(prompt, tc);
        live.push_back(std::move(root));
    }
    std::vector<detail::FinishedBeam> finished;

    const auto finished_worse = [&](const detail::FinishedBeam& a, const detail::FinishedBeam& b) {
        const double sa = a.final_score(config.length_normalize);
        const double sb = b.final_score(config.length_normalize);
        if (sa != sb) return sa > sb;
        return a.tokens < b.tokens; // deterministic order among equals
    };

    while (!live.empty()) {
        struct Candidate {
            std::size_t beam = 0;
            TokenId token = 0;
            double sum = 0.0;
        };
        std::vector<Candidate> expansions;
        for (std::size_t b = 0; b < live.size(); ++b) {
            const detail::LiveBeam& beam = live[b];
            const double lse = detail::log_sum_exp(beam.decoder.logits());
            const TitleTrie::Node& node = trie.node(beam.node);
            if (node.terminal) {
                const double lp = beam.decoder.logits()[Vocabulary::kEos] - lse;
                finished.push_back({beam.tokens, beam.node, beam.logprob_sum + lp,
                                    beam.tokens.size() + 1});
            }
            for (const auto& [token, child] : node.children) {
                const double lp = beam.decoder.logits()[static_cast<std::size_t>(token)] - lse;
                expansions.push_back({b, token, beam.logprob_sum + lp});
            }
        }

        std::sort(finished.begin(), finished.end(), finished_worse);
        if (finished.size() > width) finished.resize(width);

        std::sort(expansions.begin(), expansions.end(), [](const Candidate& a, const Candidate& b) {
            if (a.sum != b.sum) return a.sum > b.sum;
            if (a.beam != b.beam) return a.beam < b.beam;
            return a.token < b.token;
        });
        if (expansions.size() > width) expansions.resize(width);

        std::vector<detail::LiveBeam> next;
        next.reserve(expansions.size());
        for (const Candidate& c : expansions) {
            detail::LiveBeam nb{live[c.beam].decoder, *trie.child(live[c.beam].node, c.token),
                                live[c.beam].tokens, c.sum};
            nb.decoder.step(c.token);
            nb.tokens.push_back(c.token);
            next.push_back(std::move(nb));
        }
        live = std::move(next);
    }

    std::sort(finished.begin(), finished.end(), finished_worse);

    RankedList out;
    std::vector<std::pair<double, std::int64_t>> scored; // (-score used via comparator)
    for (const detail::FinishedBeam& f : finished) {
        const double score = f.final_score(config.length_normalize);
        for (std::int64_t item : trie.node(f.node).item_ids) {
            scored.emplace_back(score, item);
        }
    }
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second; // ties by item id ascending
    });
    for (const auto& [score, item] : scored) {
        if (out.size() >= width) break;
        out.push_back({item, score});
    }
    return out;
}

} // namespace patchrec
