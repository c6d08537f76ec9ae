#pragma once

#include <cctype>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "patchrec/catalog.hpp"
#include "patchrec/error.hpp"

namespace patchrec {

using TokenId = std::int32_t;

/// Word-level vocabulary over catalog titles plus five reserved specials.
///
/// Title tokenization lowercases and splits on every non-alphanumeric byte,
/// so the special token strings (which carry angle brackets) can never be
/// produced by tokenizing a title. Ids are assigned to words by first
/// occurrence over the catalog, making the mapping reproducible.
class Vocabulary {
public:
    /// Specials only; populate via build() or load().
    Vocabulary() { tokens_ = {"<bos>", "<sep>", "<ans>", "<eos>", "<unk>"}; }

    static constexpr TokenId kBos = 0;
    static constexpr TokenId kSep = 1;
    static constexpr TokenId kAns = 2;
    static constexpr TokenId kEos = 3;
    static constexpr TokenId kUnk = 4;

    TokenId bos() const { return kBos; }
    TokenId sep() const { return kSep; }
    TokenId ans() const { return kAns; }
    TokenId eos() const { return kEos; }
    TokenId unk() const { return kUnk; }

    static bool is_special(TokenId id) { return id >= 0 && id <= kUnk; }

    static std::vector<std::string> split_words(const std::string& text) {
        std::vector<std::string> words;
        std::string current;
        for (char c : text) {
            if (std::isalnum(static_cast<unsigned char>(c))) {
                current += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
            } else if (!current.empty()) {
                words.push_back(std::move(current));
                current.clear();
            }
        }
        if (!current.empty()) words.push_back(std::move(current));
        return words;
    }

    static Vocabulary build(const Catalog& catalog) {
        if (catalog.size() == 0) throw DataError("build_vocab: catalog is empty");
        Vocabulary v;
        for (const Item& item : catalog.items()) {
            for (const std::string& w : split_words(item.title)) {
                if (v.word_to_id_.emplace(w, static_cast<TokenId>(v.tokens_.size())).second) {
                    v.tokens_.push_back(w);
                }
            }
        }
        return v;
    }

    std::vector<TokenId> tokenize_title(const std::string& title) const {
        auto words = split_words(title);
        if (words.empty()) {
            throw DataError("tokenize_title: title '" + title + "' has no word tokens");
        }
        std::vector<TokenId> ids;
        ids.reserve(words.size());
        for (const std::string& w : words) {
            auto it = word_to_id_.find(w);
            ids.push_back(it == word_to_id_.end() ? kUnk : it->second);
        }
        return ids;
    }

    std::string detokenize(std::span<const TokenId> ids) const {
        std::string out;
        for (TokenId id : ids) {
            if (!out.empty()) out += ' ';
            out += token_text(id);
        }
        return out;
    }

    const std::string& token_text(TokenId id) const {
        if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
            throw DataError("token_text: id " + std::to_string(id) + " out of range");
        }
        return tokens_[static_cast<std::size_t>(id)];
    }

    std::optional<TokenId> lookup(const std::string& word) const {
        auto it = word_to_id_.find(word);
        if (it == word_to_id_.end()) return std::nullopt;
        return it->second;
    }

    std::size_t size() const { return tokens_.size(); }
    std::size_t word_count() const { return tokens_.size() - 5; }

    /// `id<TAB>token` dump, loadable for reproducible runs.
    void save(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw DataError("vocabulary: cannot write " + path);
        for (std::size_t i = 0; i < tokens_.size(); ++i) out << i << '\t' << tokens_[i] << '\n';
    }

    static Vocabulary load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw DataError("vocabulary: cannot open " + path);
        Vocabulary v;
        v.tokens_.clear();
        v.word_to_id_.clear();
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty()) continue;
            const auto tab = line.find('\t');
            if (tab == std::string::npos) {
                throw DataError("vocabulary: " + path + ":" + std::to_string(lineno) +
                                ": expected id<TAB>token");
            }
            const std::size_t id = std::stoull(line.substr(0, tab));
            if (id != v.tokens_.size()) {
                throw DataError("vocabulary: " + path + ":" + std::to_string(lineno) +
                                ": ids must be dense and ascending");
            }
            v.tokens_.push_back(line.substr(tab + 1));
        }
        if (v.tokens_.size() < 5) throw DataError("vocabulary: missing special tokens");
        for (std::size_t i = 5; i < v.tokens_.size(); ++i) {
            v.word_to_id_.emplace(v.tokens_[i], static_cast<TokenId>(i));
        }
        return v;
    }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, TokenId> word_to_id_;
};

} // namespace patchrec
