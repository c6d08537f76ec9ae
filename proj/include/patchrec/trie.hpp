#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "patchrec/catalog.hpp"
#include "patchrec/error.hpp"
#include "patchrec/vocab.hpp"

namespace patchrec {

/// Token-level prefix tree over every tokenized catalog title.
///
/// Terminal nodes mark complete titles and carry the ids of all items whose
/// titles tokenize to that path (distinct items may share one title). EOS is
/// not stored as an edge; allowed_next() reports it whenever the current node
/// is terminal.
class TitleTrie {
public:
    struct Node {
        std::map<TokenId, std::uint32_t> children; // ordered: deterministic walks
        bool terminal = false;
        std::vector<std::int64_t> item_ids; // ascending, only at terminals
    };

    static TitleTrie build(const Catalog& catalog, const Vocabulary& vocab) {
        TitleTrie trie;
        trie.nodes_.emplace_back();
        for (const Item& item : catalog.items()) {
            const auto tokens = vocab.tokenize_title(item.title);
            std::uint32_t node = 0;
            for (TokenId t : tokens) {
                auto it = trie.nodes_[node].children.find(t);
                if (it == trie.nodes_[node].children.end()) {
                    const auto next = static_cast<std::uint32_t>(trie.nodes_.size());
                    trie.nodes_[node].children.emplace(t, next);
                    trie.nodes_.emplace_back();
                    node = next;
                } else {
                    node = it->second;
                }
            }
            if (!trie.nodes_[node].terminal) {
                trie.nodes_[node].terminal = true;
                ++trie.path_count_;
            }
            trie.nodes_[node].item_ids.push_back(item.item_id);
        }
        for (Node& n : trie.nodes_) std::sort(n.item_ids.begin(), n.item_ids.end());
        return trie;
    }

    std::uint32_t root() const { return 0; }

    const Node& node(std::uint32_t idx) const { return nodes_[idx]; }

    /// Child node for one token, if the edge exists.
    std::optional<std::uint32_t> child(std::uint32_t node_idx, TokenId token) const {
        const auto& ch = nodes_[node_idx].children;
        auto it = ch.find(token);
        if (it == ch.end()) return std::nullopt;
        return it->second;
    }

    /// Walk a full prefix from the root. Invalid prefixes signal a decoder
    /// bug and throw.
    std::uint32_t walk(std::span<const TokenId> prefix) const {
        std::uint32_t node_idx = 0;
        for (std::size_t i = 0; i < prefix.size(); ++i) {
            auto next = child(node_idx, prefix[i]);
            if (!next) {
                throw DataError("trie: prefix invalid at position " + std::to_string(i) +
                                " (token " + std::to_string(prefix[i]) + ")");
            }
            node_idx = *next;
        }
        return node_idx;
    }

    /// Token ids that may legally extend `prefix`; includes EOS when the
    /// prefix is a complete title. Never returns any other special.
    std::vector<TokenId> allowed_next(std::span<const TokenId> prefix) const {
        const std::uint32_t n = walk(prefix);
        std::vector<TokenId> out;
        if (nodes_[n].terminal) out.push_back(Vocabulary::kEos);
        for (const auto& [tok, idx] : nodes_[n].children) out.push_back(tok);
        return out;
    }

    /// Item ids whose title equals exactly this token sequence; empty span if
    /// the sequence is not a complete title.
    std::span<const std::int64_t> items_for(std::span<const TokenId> title_tokens) const {
        std::uint32_t node_idx = 0;
        for (TokenId t : title_tokens) {
            auto next = child(node_idx, t);
            if (!next) return {};
            node_idx = *next;
        }
        if (!nodes_[node_idx].terminal) return {};
        return nodes_[node_idx].item_ids;
    }

    /// Number of distinct tokenized titles (terminal-reachable paths).
    std::size_t path_count() const { return path_count_; }

    std::size_t node_count() const { return nodes_.size(); }

    /// Every root-to-terminal path, as token sequences. Test/diagnostic use.
    std::vector<std::vector<TokenId>> enumerate_paths() const {
        std::vector<std::vector<TokenId>> out;
        std::vector<TokenId> path;
        enumerate(0, path, out);
        return out;
    }

private:
    void enumerate(std::uint32_t node_idx, std::vector<TokenId>& path,
                   std::vector<std::vector<TokenId>>& out) const {
        const Node& n = nodes_[node_idx];
        if (n.terminal) out.push_back(path);
        for (const auto& [tok, idx] : n.children) {
            path.push_back(tok);
            enumerate(idx, path, out);
            path.pop_back();
        }
    }

    std::vector<Node> nodes_;
    std::size_t path_count_ = 0;
};

} // namespace patchrec
