#pragma once

#include <cstdint>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "patchrec/catalog.hpp"
#include "patchrec/error.hpp"
#include "patchrec/vocab.hpp"

namespace patchrec {

/// Pre-tokenized catalog: item id -> title token ids.
class TokenizedCatalog {
public:
    TokenizedCatalog() = default;

    TokenizedCatalog(const Catalog& catalog, const Vocabulary& vocab) {
        for (const Item& item : catalog.items()) {
            tokens_.emplace(item.item_id, vocab.tokenize_title(item.title));
        }
    }

    const std::vector<TokenId>& title_tokens(std::int64_t item_id) const {
        auto it = tokens_.find(item_id);
        if (it == tokens_.end()) {
            throw DataError("tokenized catalog: unknown item_id " + std::to_string(item_id));
        }
        return it->second;
    }

    std::size_t size() const { return tokens_.size(); }

private:
    std::unordered_map<std::int64_t, std::vector<TokenId>> tokens_;
};

enum class SegmentKind { RawTokens, ItemPatch, SessionPatch, Special };

inline bool is_patch(SegmentKind k) {
    return k == SegmentKind::ItemPatch || k == SegmentKind::SessionPatch;
}

/// One prompt building block. RawTokens segments hold the title tokens of a
/// single history item; patches hold their source item ids and occupy exactly
/// one position.
struct Segment {
    SegmentKind kind = SegmentKind::Special;
    std::vector<TokenId> token_ids;           // RawTokens / Special
    std::vector<std::int64_t> source_item_ids; // RawTokens (1) / ItemPatch (1) / SessionPatch (1..L)

    std::size_t positions() const {
        return is_patch(kind) ? 1 : token_ids.size();
    }
};

/// A fully assembled prompt: BOS, history entries (SEP-separated per the
/// scaffold rule), ANS; plus the supervision target (title tokens + EOS).
struct PromptLayout {
    std::vector<Segment> segments;
    std::vector<TokenId> target_token_ids;
    std::int64_t target_item_id = 0;

    std::size_t prompt_positions() const {
        std::size_t total = 0;
        for (const Segment& s : segments) total += s.positions();
        return total;
    }

    /// Positions the model actually consumes: the prompt plus the target
    /// tokens that are fed back as inputs (the final EOS is label-only).
    std::size_t model_input_length() const {
        return prompt_positions() + target_token_ids.size() - 1;
    }

    /// History item representations only: title tokens for raw entries, one
    /// position per patch. Excludes BOS/SEP/ANS and the target. This is the
    /// quantity compression ratios are defined over.
    std::size_t history_representation_positions() const {
        std::size_t total = 0;
        for (const Segment& s : segments) {
            if (s.kind != SegmentKind::Special) total += s.positions();
        }
        return total;
    }

    std::vector<std::int64_t> flatten_source_items() const {
        std::vector<std::int64_t> out;
        for (const Segment& s : segments) {
            out.insert(out.end(), s.source_item_ids.begin(), s.source_item_ids.end());
        }
        return out;
    }

    bool operator==(const PromptLayout& other) const {
        if (segments.size() != other.segments.size()) return false;
        for (std::size_t i = 0; i < segments.size(); ++i) {
            const Segment& a = segments[i];
            const Segment& b = other.segments[i];
            if (a.kind != b.kind || a.token_ids != b.token_ids ||
                a.source_item_ids != b.source_item_ids) {
                return false;
            }
        }
        return target_token_ids == other.target_token_ids &&
               target_item_id == other.target_item_id;
    }

    /// One line per segment, plus a TARGET line. Stable format used by
    /// golden-file tests.
    std::string render(const Vocabulary& vocab) const {
        std::ostringstream os;
        for (const Segment& s : segments) {
            switch (s.kind) {
            case SegmentKind::Special:
                os << "SPECIAL(" << vocab.token_text(s.token_ids.at(0)) << ")\n";
                break;
            case SegmentKind::RawTokens: {
                os << "RAW(";
                for (std::size_t i = 0; i < s.token_ids.size(); ++i) {
                    os << (i ? " " : "") << '"' << vocab.token_text(s.token_ids[i]) << '"';
                }
                os << ")\n";
                break;
            }
            case SegmentKind::ItemPatch:
                os << "ITEMPATCH(item=" << s.source_item_ids.at(0) << ")\n";
                break;
            case SegmentKind::SessionPatch: {
                os << "SESSIONPATCH(items=";
                for (std::size_t i = 0; i < s.source_item_ids.size(); ++i) {
                    os << (i ? "," : "") << s.source_item_ids[i];
                }
                os << ")\n";
                break;
            }
            }
        }
        os << "TARGET(";
        for (std::size_t i = 0; i < target_token_ids.size(); ++i) {
            const TokenId t = target_token_ids[i];
            os << (i ? " " : "");
            if (Vocabulary::is_special(t)) {
                os << vocab.token_text(t);
            } else {
                os << '"' << vocab.token_text(t) << '"';
            }
        }
        os << ")\n";
        return os.str();
    }
};

enum class LayoutMode { Text, PureItem, PureSession, PFT_I, PFT_S };

inline std::string layout_mode_name(LayoutMode m) {
    switch (m) {
    case LayoutMode::Text: return "text";
    case LayoutMode::PureItem: return "pure_item";
    case LayoutMode::PureSession: return "pure_session";
    case LayoutMode::PFT_I: return "pft_i";
    case LayoutMode::PFT_S: return "pft_s";
    }
    return "?";
}

inline LayoutMode layout_mode_from_name(const std::string& name) {
    if (name == "text") return LayoutMode::Text;
    if (name == "pure_item") return LayoutMode::PureItem;
    if (name == "pure_session") return LayoutMode::PureSession;
    if (name == "pft_i") return LayoutMode::PFT_I;
    if (name == "pft_s") return LayoutMode::PFT_S;
    throw ConfigError("unknown layout mode '" + name + "'");
}

struct LayoutConfig {
    std::size_t truncation_k = 40;   // K: most recent items kept at all
    std::size_t recent_text_m = 5;   // M: PFT-I textual tail
    std::size_t session_size_l = 5;  // L: PFT-S group size
    LayoutMode mode = LayoutMode::Text;

    void validate() const {
        if (truncation_k < 1) throw ConfigError("layout config: K must be >= 1");
        if (recent_text_m > truncation_k) {
            throw ConfigError("layout config: M must satisfy 0 <= M <= K");
        }
        if (session_size_l < 1) throw ConfigError("layout config: L must be >= 1");
    }
};

namespace detail {

struct HistoryEntry {
    SegmentKind kind;
    std::vector<std::int64_t> items;
};

/// Shared scaffold: BOS, entries with a SEP at every boundary except between
/// two patches, ANS; then target title tokens + EOS.
inline PromptLayout assemble_layout(std::span<const HistoryEntry> entries, std::int64_t target,
                                    const TokenizedCatalog& tc) {
    if (entries.empty()) throw DataError("layout: empty history");
    PromptLayout out;
    out.segments.push_back({SegmentKind::Special, {Vocabulary::kBos}, {}});
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const HistoryEntry& e = entries[i];
        if (i > 0 && !(is_patch(entries[i - 1].kind) && is_patch(e.kind))) {
            out.segments.push_back({SegmentKind::Special, {Vocabulary::kSep}, {}});
        }
        Segment s;
        s.kind = e.kind;
        s.source_item_ids = e.items;
        if (e.kind == SegmentKind::RawTokens) {
            s.token_ids = tc.title_tokens(e.items.at(0));
        }
        out.segments.push_back(std::move(s));
    }
    out.segments.push_back({SegmentKind::Special, {Vocabulary::kAns}, {}});
    out.target_item_id = target;
    out.target_token_ids = tc.title_tokens(target);
    out.target_token_ids.push_back(Vocabulary::kEos);
    return out;
}

} // namespace detail

/// TALLRec-style prompt: every history item spelled out as title tokens.
inline PromptLayout layout_text(std::span<const std::int64_t> history, std::int64_t target,
                                const TokenizedCatalog& tc) {
    std::vector<detail::HistoryEntry> entries;
    for (std::int64_t item : history) {
        entries.push_back({SegmentKind::RawTokens, {item}});
    }
    return detail::assemble_layout(entries, target, tc);
}

/// Arbitrary per-item patch pattern; the pre-training augmentation uses this.
inline PromptLayout layout_mixed(std::span<const std::int64_t> history,
                                 std::span<const std::uint8_t> patch_mask, std::int64_t target,
                                 const TokenizedCatalog& tc) {
    if (patch_mask.size() != history.size()) {
        throw DimensionError("layout_mixed: mask size " + std::to_string(patch_mask.size()) +
                             " != history size " + std::to_string(history.size()));
    }
    std::vector<detail::HistoryEntry> entries;
    for (std::size_t i = 0; i < history.size(); ++i) {
        entries.push_back({patch_mask[i] ? SegmentKind::ItemPatch : SegmentKind::RawTokens,
                           {history[i]}});
    }
    return detail::assemble_layout(entries, target, tc);
}

/// PFT-I: the oldest (n - M) items become item patches, the newest M stay
/// textual. M >= n degrades to the plain text layout.
inline PromptLayout layout_pft_i(std::span<const std::int64_t> history, std::int64_t target,
                                 const TokenizedCatalog& tc, std::size_t recent_text_m) {
    const std::size_t n = history.size();
    const std::size_t textual = std::min(recent_text_m, n);
    std::vector<detail::HistoryEntry> entries;
    for (std::size_t i = 0; i < n - textual; ++i) {
        entries.push_back({SegmentKind::ItemPatch, {history[i]}});
    }
    for (std::size_t i = n - textual; i < n; ++i) {
        entries.push_back({SegmentKind::RawTokens, {history[i]}});
    }
    return detail::assemble_layout(entries, target, tc);
}

inline PromptLayout layout_pure_item(std::span<const std::int64_t> history, std::int64_t target,
                                     const TokenizedCatalog& tc) {
    return layout_pft_i(history, target, tc, 0);
}

namespace detail {

/// Groups of exactly L anchored at the most recent end; the oldest group may
/// be partial. Returned oldest-first as [start, end) index pairs.
inline std::vector<std::pair<std::size_t, std::size_t>> session_groups(std::size_t n,
                                                                       std::size_t l) {
    std::vector<std::pair<std::size_t, std::size_t>> groups;
    std::size_t end = n;
    while (end > 0) {
        const std::size_t start = end >= l ? end - l : 0;
        groups.emplace_back(start, end);
        end = start;
    }
    std::reverse(groups.begin(), groups.end());
    return groups;
}

} // namespace detail

/// PFT-S: latest group textual, second-latest group item patches, every
/// earlier group one session patch.
inline PromptLayout layout_pft_s(std::span<const std::int64_t> history, std::int64_t target,
                                 const TokenizedCatalog& tc, std::size_t session_size_l) {
    if (session_size_l < 1) throw ConfigError("layout_pft_s: L must be >= 1");
    const auto groups = detail::session_groups(history.size(), session_size_l);
    std::vector<detail::HistoryEntry> entries;
    for (std::size_t g = 0; g < groups.size(); ++g) {
        const auto [start, end] = groups[g];
        const bool latest = (g + 1 == groups.size());
        const bool second_latest = (g + 2 == groups.size());
        if (latest) {
            for (std::size_t i = start; i < end; ++i) {
                entries.push_back({SegmentKind::RawTokens, {history[i]}});
            }
        } else if (second_latest) {
            for (std::size_t i = start; i < end; ++i) {
                entries.push_back({SegmentKind::ItemPatch, {history[i]}});
            }
        } else {
            detail::HistoryEntry e{SegmentKind::SessionPatch, {}};
            e.items.assign(history.begin() + static_cast<std::ptrdiff_t>(start),
                           history.begin() + static_cast<std::ptrdiff_t>(end));
            entries.push_back(std::move(e));
        }
    }
    return detail::assemble_layout(entries, target, tc);
}

/// Pure-Session ablation: every group becomes a session patch.
inline PromptLayout layout_pure_session(std::span<const std::int64_t> history, std::int64_t target,
                                        const TokenizedCatalog& tc, std::size_t session_size_l) {
    if (session_size_l < 1) throw ConfigError("layout_pure_session: L must be >= 1");
    const auto groups = detail::session_groups(history.size(), session_size_l);
    std::vector<detail::HistoryEntry> entries;
    for (const auto& [start, end] : groups) {
        detail::HistoryEntry e{SegmentKind::SessionPatch, {}};
        e.items.assign(history.begin() + static_cast<std::ptrdiff_t>(start),
                       history.begin() + static_cast<std::ptrdiff_t>(end));
        entries.push_back(std::move(e));
    }
    return detail::assemble_layout(entries, target, tc);
}

inline PromptLayout build_layout(const LayoutConfig& cfg, std::span<const std::int64_t> history,
                                 std::int64_t target, const TokenizedCatalog& tc) {
    switch (cfg.mode) {
    case LayoutMode::Text: return layout_text(history, target, tc);
    case LayoutMode::PureItem: return layout_pure_item(history, target, tc);
    case LayoutMode::PureSession:
        return layout_pure_session(history, target, tc, cfg.session_size_l);
    case LayoutMode::PFT_I: return layout_pft_i(history, target, tc, cfg.recent_text_m);
    case LayoutMode::PFT_S: return layout_pft_s(history, target, tc, cfg.session_size_l);
    }
    throw ConfigError("build_layout: unknown mode");
}

/// History tokens before compression over history positions after, per the
/// item-representation accounting (SEP/BOS/ANS excluded on both sides).
inline double compression_ratio(const PromptLayout& text_version,
                                const PromptLayout& compressed_version) {
    if (text_version.flatten_source_items() != compressed_version.flatten_source_items()) {
        throw DataError("compression_ratio: layouts were built from different histories");
    }
    const double before = static_cast<double>(text_version.history_representation_positions());
    const double after =
        static_cast<double>(compressed_version.history_representation_positions());
    return before / after;
}

} // namespace patchrec
