#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "patchrec/catalog.hpp"
#include "patchrec/error.hpp"
#include "patchrec/rng.hpp"

#include <json.hpp>

namespace patchrec {

/// Generator knobs. The defaults produce a catalog whose next-item signal
/// rewards long-history modeling: each user's interest mixture wanders, but
/// it keeps reverting to a persistent favorite genre, so early interactions
/// remain informative about what comes next.
struct SyntheticConfig {
    std::size_t users = 500;
    std::size_t items = 200;
    std::size_t interactions_per_user = 60;
    std::size_t genres = 8;
    double drift_rate = 0.05;
    double mode_weight = 0.75;       // probability mass on the user's favorite genre
    double popularity_exponent = 0.8; // within-genre zipf sharpness
    std::size_t words_per_genre = 24;
    std::size_t title_words_min = 2;
    std::size_t title_words_max = 6;
    std::uint64_t seed = 1;
};

struct SyntheticData {
    Catalog catalog;
    std::vector<Interaction> interactions;
};

namespace detail {

inline std::string make_word(Rng& rng) {
    static const char* consonants[] = {"b", "d", "f", "g", "k", "l", "m", "n",
                                       "p", "r", "s", "t", "v", "z", "ch", "th"};
    static const char* vowels[] = {"a", "e", "i", "o", "u", "ai", "ou"};
    const std::size_t syllables = 2 + rng.uniform_index(2);
    std::string w;
    for (std::size_t s = 0; s < syllables; ++s) {
        w += consonants[rng.uniform_index(16)];
        w += vowels[rng.uniform_index(7)];
    }
    if (rng.uniform() < 0.3) w += consonants[rng.uniform_index(16)];
    return w;
}

} // namespace detail

/// Deterministic synthetic catalog + interaction log.
///
/// Items belong to one genre each and their titles are drawn from disjoint
/// per-genre vocabularies, so titles carry the genre signal. Each user holds
/// a mixture over genres that starts at a base profile dominated by one
/// favorite genre; per step the mixture takes a small excursion but is pulled
/// back toward the base, a mean-reverting walk. drift_rate = 0 freezes the
/// mixture entirely.
inline SyntheticData generate_synthetic(const SyntheticConfig& cfg) {
    if (cfg.users == 0 || cfg.items == 0 || cfg.interactions_per_user == 0) {
        throw ConfigError("generate_synthetic: users, items and interactions_per_user "
                          "must all be positive");
    }
    if (cfg.genres < 2) throw ConfigError("generate_synthetic: need at least 2 genres");
    if (cfg.title_words_min < 1 || cfg.title_words_max < cfg.title_words_min) {
        throw ConfigError("generate_synthetic: bad title word range");
    }

    Rng rng(mix_seed(cfg.seed, 0xC0FFEE));

    // Disjoint genre vocabularies.
    std::set<std::string> used;
    std::vector<std::vector<std::string>> vocab(cfg.genres);
    for (std::size_t g = 0; g < cfg.genres; ++g) {
        while (vocab[g].size() < cfg.words_per_genre) {
            std::string w = detail::make_word(rng);
            if (used.insert(w).second) vocab[g].push_back(std::move(w));
        }
    }

    // Items: round-robin genre assignment, titles of 2..6 distinct words.
    std::vector<Item> items(cfg.items);
    std::vector<std::size_t> item_genre(cfg.items);
    for (std::size_t i = 0; i < cfg.items; ++i) {
        const std::size_t g = i % cfg.genres;
        item_genre[i] = g;
        const std::size_t nwords =
            cfg.title_words_min + rng.uniform_index(cfg.title_words_max - cfg.title_words_min + 1);
        std::vector<std::size_t> idx(vocab[g].size());
        for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = k;
        rng.shuffle(idx);
        std::string title;
        for (std::size_t k = 0; k < std::min(nwords, idx.size()); ++k) {
            if (k) title += ' ';
            title += vocab[g][idx[k]];
        }
        items[i] = Item{static_cast<std::int64_t>(i + 1), std::move(title)};
    }

    // Per-genre item lists with zipf-ish popularity.
    std::vector<std::vector<std::size_t>> genre_items(cfg.genres);
    for (std::size_t i = 0; i < cfg.items; ++i) genre_items[item_genre[i]].push_back(i);
    std::vector<std::vector<double>> genre_weights(cfg.genres);
    for (std::size_t g = 0; g < cfg.genres; ++g) {
        for (std::size_t r = 0; r < genre_items[g].size(); ++r) {
            genre_weights[g].push_back(
                1.0 / std::pow(static_cast<double>(r + 1), cfg.popularity_exponent));
        }
    }

    // User profiles.
    struct UserState {
        std::vector<double> base;    // long-term mode mixture
        std::vector<double> current; // drifting mixture
    };
    std::vector<UserState> users(cfg.users);
    for (std::size_t u = 0; u < cfg.users; ++u) {
        const std::size_t mode = rng.uniform_index(cfg.genres);
        UserState& s = users[u];
        s.base.assign(cfg.genres, (1.0 - cfg.mode_weight) / static_cast<double>(cfg.genres - 1));
        s.base[mode] = cfg.mode_weight;
        s.current = s.base;
    }

    // Events interleaved in rounds: every user interacts once per round, in a
    // per-round shuffled order. Timestamps are the global event index, so the
    // temporal split spreads each user across train/val/test.
    std::vector<Interaction> log;
    log.reserve(cfg.users * cfg.interactions_per_user);
    std::vector<std::size_t> order(cfg.users);
    for (std::size_t u = 0; u < cfg.users; ++u) order[u] = u;
    std::int64_t clock = 0;
    for (std::size_t round = 0; round < cfg.interactions_per_user; ++round) {
        rng.shuffle(order);
        for (std::size_t u : order) {
            UserState& s = users[u];
            if (cfg.drift_rate > 0.0) {
                // Mean-reverting excursion: blend toward base plus a random
                // genre bump.
                const std::size_t bump = rng.uniform_index(cfg.genres);
                double total = 0.0;
                for (std::size_t g = 0; g < cfg.genres; ++g) {
                    const double target = 0.5 * s.base[g] + (g == bump ? 0.5 : 0.0);
                    s.current[g] = (1.0 - cfg.drift_rate) * s.current[g] + cfg.drift_rate * target;
                    total += s.current[g];
                }
                for (double& p : s.current) p /= total;
            }
            const std::size_t g = rng.weighted_index(s.current);
            const std::size_t pick = rng.weighted_index(genre_weights[g]);
            const std::size_t item_idx = genre_items[g][pick];
            Interaction ia;
            ia.user_id = static_cast<std::int64_t>(u + 1);
            ia.item_id = items[item_idx].item_id;
            const double r = rng.uniform();
            ia.rating = r < 0.60 ? 5 : r < 0.85 ? 4 : 3;
            ia.timestamp = clock++;
            log.push_back(ia);
        }
    }

    return SyntheticData{Catalog(std::move(items)), std::move(log)};
}

inline nlohmann::json synthetic_config_json(const SyntheticConfig& cfg) {
    return nlohmann::json{{"users", cfg.users},
                          {"items", cfg.items},
                          {"interactions_per_user", cfg.interactions_per_user},
                          {"genres", cfg.genres},
                          {"drift_rate", cfg.drift_rate},
                          {"mode_weight", cfg.mode_weight},
                          {"popularity_exponent", cfg.popularity_exponent},
                          {"words_per_genre", cfg.words_per_genre},
                          {"title_words_min", cfg.title_words_min},
                          {"title_words_max", cfg.title_words_max},
                          {"seed", cfg.seed}};
}

inline SyntheticConfig synthetic_config_from_json(const nlohmann::json& j) {
    SyntheticConfig cfg;
    cfg.users = j.value("users", cfg.users);
    cfg.items = j.value("items", cfg.items);
    cfg.interactions_per_user = j.value("interactions_per_user", cfg.interactions_per_user);
    cfg.genres = j.value("genres", cfg.genres);
    cfg.drift_rate = j.value("drift_rate", cfg.drift_rate);
    cfg.mode_weight = j.value("mode_weight", cfg.mode_weight);
    cfg.popularity_exponent = j.value("popularity_exponent", cfg.popularity_exponent);
    cfg.words_per_genre = j.value("words_per_genre", cfg.words_per_genre);
    cfg.title_words_min = j.value("title_words_min", cfg.title_words_min);
    cfg.title_words_max = j.value("title_words_max", cfg.title_words_max);
    cfg.seed = j.value("seed", cfg.seed);
    return cfg;
}

/// Write catalog.tsv, interactions.tsv and a provenance sidecar recording the
/// full generator config.
inline void write_synthetic(const std::string& dir, const SyntheticData& data,
                            const SyntheticConfig& cfg) {
    std::filesystem::create_directories(dir);
    data.catalog.save_tsv(dir + "/catalog.tsv");
    save_interactions_tsv(dir + "/interactions.tsv", data.interactions);
    nlohmann::json prov;
    prov["generator"] = "patchrec synthetic v1";
    prov["config"] = synthetic_config_json(cfg);
    DatasetStats st = compute_stats(data.catalog, data.interactions);
    prov["stats"] = {{"users", st.users},
                     {"items", st.items},
                     {"interactions", st.interactions},
                     {"max_sequence_length", st.max_sequence_length},
                     {"avg_sequence_length", st.avg_sequence_length},
                     {"avg_title_words", st.avg_title_words}};
    std::ofstream out(dir + "/provenance.json");
    out << prov.dump(2) << '\n';
}

} // namespace patchrec
