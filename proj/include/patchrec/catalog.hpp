#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "patchrec/error.hpp"

namespace patchrec {

struct Item {
    std::int64_t item_id = 0;
    std::string title;
};

struct Interaction {
    std::int64_t user_id = 0;
    std::int64_t item_id = 0;
    int rating = 0;
    std::int64_t timestamp = 0;
};

/// Immutable item catalog with id lookup. Items keep file order.
class Catalog {
public:
    Catalog() = default;

    explicit Catalog(std::vector<Item> items) : items_(std::move(items)) {
        for (std::size_t i = 0; i < items_.size(); ++i) {
            const Item& it = items_[i];
            if (it.title.empty()) {
                throw DataError("catalog: item " + std::to_string(it.item_id) + " has empty title");
            }
            if (!index_.emplace(it.item_id, i).second) {
                throw DataError("catalog: duplicate item_id " + std::to_string(it.item_id));
            }
        }
    }

    static Catalog load_tsv(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw DataError("catalog: cannot open " + path);
        std::vector<Item> items;
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty()) continue;
            const auto tab = line.find('\t');
            if (tab == std::string::npos) {
                throw DataError("catalog: " + path + ":" + std::to_string(lineno) +
                                ": expected item_id<TAB>title");
            }
            Item it;
            const std::string_view idpart(line.data(), tab);
            auto [p, ec] = std::from_chars(idpart.data(), idpart.data() + idpart.size(), it.item_id);
            if (ec != std::errc() || p != idpart.data() + idpart.size()) {
                throw DataError("catalog: " + path + ":" + std::to_string(lineno) +
                                ": bad item_id '" + std::string(idpart) + "'");
            }
            it.title = line.substr(tab + 1);
            items.push_back(std::move(it));
        }
        return Catalog(std::move(items));
    }

    void save_tsv(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw DataError("catalog: cannot write " + path);
        for (const Item& it : items_) out << it.item_id << '\t' << it.title << '\n';
    }

    bool contains(std::int64_t item_id) const { return index_.count(item_id) != 0; }

    const Item& item(std::int64_t item_id) const {
        auto it = index_.find(item_id);
        if (it == index_.end()) {
            throw DataError("catalog: unknown item_id " + std::to_string(item_id));
        }
        return items_[it->second];
    }

    const std::vector<Item>& items() const { return items_; }
    std::size_t size() const { return items_.size(); }

private:
    std::vector<Item> items_;
    std::unordered_map<std::int64_t, std::size_t> index_;
};

inline std::vector<Interaction> load_interactions_tsv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("interactions: cannot open " + path);
    std::vector<Interaction> out;
    std::string line;
    std::size_t lineno = 0;
    auto parse_int = [&](std::string_view field, auto& value) {
        auto [p, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
        if (ec != std::errc() || p != field.data() + field.size()) {
            throw DataError("interactions: " + path + ":" + std::to_string(lineno) +
                            ": bad integer '" + std::string(field) + "'");
        }
    };
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::array<std::string_view, 4> fields;
        std::size_t start = 0;
        for (std::size_t f = 0; f < 4; ++f) {
            const auto tab = line.find('\t', start);
            const bool last = (f == 3);
            if (!last && tab == std::string::npos) {
                throw DataError("interactions: " + path + ":" + std::to_string(lineno) +
                                ": expected user<TAB>item<TAB>rating<TAB>timestamp");
            }
            fields[f] = std::string_view(line).substr(start, last ? std::string::npos : tab - start);
            start = tab + 1;
        }
        Interaction ia;
        parse_int(fields[0], ia.user_id);
        parse_int(fields[1], ia.item_id);
        parse_int(fields[2], ia.rating);
        parse_int(fields[3], ia.timestamp);
        out.push_back(ia);
    }
    return out;
}

inline void save_interactions_tsv(const std::string& path, std::span<const Interaction> rows) {
    std::ofstream out(path);
    if (!out) throw DataError("interactions: cannot write " + path);
    for (const Interaction& ia : rows) {
        out << ia.user_id << '\t' << ia.item_id << '\t' << ia.rating << '\t' << ia.timestamp
            << '\n';
    }
}

struct FilterConfig {
    int min_rating = 3;                     // keep rating >= min_rating
    std::size_t min_user_interactions = 1;  // keep users with >= this many
    std::size_t min_item_users = 0;         // keep items seen by >= this many distinct users
};

/// One interaction plus its position in the source file; position breaks
/// timestamp ties everywhere.
struct OrderedInteraction {
    Interaction ia;
    std::size_t file_pos = 0;
};

/// Temporally split dataset with per-user chronological histories.
class SplitDataset {
public:
    SplitDataset() = default;

    SplitDataset(Catalog catalog, std::vector<OrderedInteraction> kept, std::size_t n_train,
                 std::size_t n_val)
        : catalog_(std::move(catalog)) {
        // `kept` arrives sorted by (timestamp, file_pos).
        all_ = std::move(kept);
        for (std::size_t i = 0; i < all_.size(); ++i) {
            const Interaction& ia = all_[i].ia;
            if (i < n_train) {
                train_.push_back(ia);
            } else if (i < n_train + n_val) {
                validation_.push_back(ia);
            } else {
                test_.push_back(ia);
            }
            user_history_[ia.user_id].push_back(all_[i]);
        }
    }

    const Catalog& catalog() const { return catalog_; }
    const std::vector<Interaction>& train() const { return train_; }
    const std::vector<Interaction>& validation() const { return validation_; }
    const std::vector<Interaction>& test() const { return test_; }
    std::size_t total_interactions() const { return all_.size(); }

    std::size_t user_count() const { return user_history_.size(); }

    /// Full chronological sequence (item ids) for one user.
    std::vector<std::int64_t> full_history(std::int64_t user_id) const {
        std::vector<std::int64_t> out;
        auto it = user_history_.find(user_id);
        if (it == user_history_.end()) return out;
        for (const OrderedInteraction& oi : it->second) out.push_back(oi.ia.item_id);
        return out;
    }

    std::size_t full_history_length(std::int64_t user_id) const {
        auto it = user_history_.find(user_id);
        return it == user_history_.end() ? 0 : it->second.size();
    }

    /// The at-most-K most recent items strictly before `anchor_timestamp`,
    /// oldest first. Empty result if the user has no prior interactions.
    std::vector<std::int64_t> try_truncate_history(std::int64_t user_id,
                                                   std::int64_t anchor_timestamp,
                                                   std::size_t k) const {
        if (k < 1) throw ConfigError("truncate_history: K must be >= 1");
        std::vector<std::int64_t> out;
        auto it = user_history_.find(user_id);
        if (it == user_history_.end()) return out;
        const auto& seq = it->second;
        // seq is sorted by (timestamp, file_pos); find first entry at or past
        // the anchor.
        std::size_t hi = seq.size();
        std::size_t lo = 0;
        while (lo < hi) {
            const std::size_t mid = (lo + hi) / 2;
            if (seq[mid].ia.timestamp < anchor_timestamp) {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        const std::size_t end = lo;
        const std::size_t start = end > k ? end - k : 0;
        for (std::size_t i = start; i < end; ++i) out.push_back(seq[i].ia.item_id);
        return out;
    }

    std::vector<std::int64_t> truncate_history(std::int64_t user_id, std::int64_t anchor_timestamp,
                                               std::size_t k) const {
        auto out = try_truncate_history(user_id, anchor_timestamp, k);
        if (out.empty()) {
            throw EmptyHistoryError("truncate_history: user " + std::to_string(user_id) +
                                    " has no interactions before " +
                                    std::to_string(anchor_timestamp));
        }
        return out;
    }

private:
    Catalog catalog_;
    std::vector<OrderedInteraction> all_;
    std::vector<Interaction> train_, validation_, test_;
    std::unordered_map<std::int64_t, std::vector<OrderedInteraction>> user_history_;
};

/// Rating/user/item filtering followed by the global 48:1:1 temporal split.
///
/// Filter order: rating threshold, then user count, then item distinct-user
/// count, then one user re-check. The split boundaries are the 48/50 and
/// 49/50 quantiles of the kept interactions ordered by (timestamp, file
/// position).
inline SplitDataset split_interactions(Catalog catalog, std::vector<Interaction> interactions,
                                       const FilterConfig& filter) {
    // Unknown item ids are a hard error, reported together.
    std::set<std::int64_t> unknown;
    for (const Interaction& ia : interactions) {
        if (!catalog.contains(ia.item_id)) unknown.insert(ia.item_id);
    }
    if (!unknown.empty()) {
        std::ostringstream os;
        os << "ingest: interactions reference unknown item ids:";
        for (std::int64_t id : unknown) os << ' ' << id;
        throw DataError(os.str());
    }

    std::vector<OrderedInteraction> kept;
    kept.reserve(interactions.size());
    for (std::size_t i = 0; i < interactions.size(); ++i) {
        if (interactions[i].rating >= filter.min_rating) kept.push_back({interactions[i], i});
    }

    auto filter_users = [&](std::vector<OrderedInteraction>& rows) {
        std::unordered_map<std::int64_t, std::size_t> counts;
        for (const auto& oi : rows) ++counts[oi.ia.user_id];
        std::erase_if(rows, [&](const OrderedInteraction& oi) {
            return counts[oi.ia.user_id] < filter.min_user_interactions;
        });
    };
    filter_users(kept);

    if (filter.min_item_users > 0) {
        std::unordered_map<std::int64_t, std::unordered_set<std::int64_t>> item_users;
        for (const auto& oi : kept) item_users[oi.ia.item_id].insert(oi.ia.user_id);
        std::erase_if(kept, [&](const OrderedInteraction& oi) {
            return item_users[oi.ia.item_id].size() < filter.min_item_users;
        });
        // One re-check pass of the user filter after item removal.
        filter_users(kept);
    }

    if (kept.empty()) throw DataError("ingest: no interactions remain after filtering");

    std::sort(kept.begin(), kept.end(), [](const OrderedInteraction& a, const OrderedInteraction& b) {
        if (a.ia.timestamp != b.ia.timestamp) return a.ia.timestamp < b.ia.timestamp;
        return a.file_pos < b.file_pos;
    });

    const std::size_t n = kept.size();
    const std::size_t n_train = n * 48 / 50;
    const std::size_t n_val = n * 49 / 50 - n_train;
    return SplitDataset(std::move(catalog), std::move(kept), n_train, n_val);
}

inline SplitDataset ingest(const std::string& catalog_path, const std::string& interactions_path,
                           const FilterConfig& filter) {
    return split_interactions(Catalog::load_tsv(catalog_path),
                              load_interactions_tsv(interactions_path), filter);
}

/// Table-1-style dataset statistics.
struct DatasetStats {
    std::size_t users = 0;
    std::size_t items = 0;
    std::size_t interactions = 0;
    std::size_t max_sequence_length = 0;
    double avg_sequence_length = 0.0;
    double avg_title_words = 0.0;
};

inline DatasetStats compute_stats(const Catalog& catalog,
                                  std::span<const Interaction> interactions) {
    DatasetStats s;
    s.items = catalog.size();
    s.interactions = interactions.size();
    std::unordered_map<std::int64_t, std::size_t> per_user;
    for (const Interaction& ia : interactions) ++per_user[ia.user_id];
    s.users = per_user.size();
    for (const auto& [user, count] : per_user) {
        s.max_sequence_length = std::max(s.max_sequence_length, count);
    }
    s.avg_sequence_length = s.users ? static_cast<double>(interactions.size()) /
                                          static_cast<double>(s.users)
                                    : 0.0;
    std::size_t words = 0;
    for (const Item& it : catalog.items()) {
        bool in_word = false;
        for (char c : it.title) {
            const bool alnum = std::isalnum(static_cast<unsigned char>(c)) != 0;
            if (alnum && !in_word) ++words;
            in_word = alnum;
        }
    }
    s.avg_title_words =
        catalog.size() ? static_cast<double>(words) / static_cast<double>(catalog.size()) : 0.0;
    return s;
}

} // namespace patchrec
