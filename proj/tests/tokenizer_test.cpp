#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <filesystem>
#include <set>

#include "patchrec/rng.hpp"
#include "patchrec/synthetic.hpp"
#include "patchrec/trie.hpp"
#include "patchrec/vocab.hpp"

using namespace patchrec;

namespace {

Catalog catalog_of(std::vector<std::string> titles) {
    std::vector<Item> items;
    for (std::size_t i = 0; i < titles.size(); ++i) {
        items.push_back({static_cast<std::int64_t>(i + 1), std::move(titles[i])});
    }
    return Catalog(std::move(items));
}

} // namespace

TEST_CASE("vocabulary enumerates words plus five specials") {
    Catalog c = catalog_of({"a b", "b c"});
    Vocabulary v = Vocabulary::build(c);
    CHECK(v.size() == 3 + 5);
    CHECK(v.word_count() == 3);
    CHECK(v.lookup("a").has_value());
    CHECK(v.lookup("b").has_value());
    CHECK(v.lookup("c").has_value());
    CHECK_FALSE(v.lookup("d").has_value());
}

TEST_CASE("vocabulary id assignment is deterministic") {
    Catalog c = catalog_of({"delta echo", "echo foxtrot golf"});
    Vocabulary v1 = Vocabulary::build(c);
    Vocabulary v2 = Vocabulary::build(c);
    for (const char* w : {"delta", "echo", "foxtrot", "golf"}) {
        CHECK(v1.lookup(w) == v2.lookup(w));
    }
    // First-occurrence order.
    CHECK(*v1.lookup("delta") == 5);
    CHECK(*v1.lookup("echo") == 6);
    CHECK(*v1.lookup("foxtrot") == 7);
    CHECK(*v1.lookup("golf") == 8);
}

TEST_CASE("five-word movie title tokenizes to five word tokens") {
    Catalog c = catalog_of({"The Bridges of Madison County"});
    Vocabulary v = Vocabulary::build(c);
    auto ids = v.tokenize_title("The Bridges of Madison County");
    CHECK(ids.size() == 5);
    for (TokenId id : ids) CHECK_FALSE(Vocabulary::is_special(id));
}

TEST_CASE("tokenize handles punctuation, case, unseen words and empties") {
    Catalog c = catalog_of({"alpha beta gamma"});
    Vocabulary v = Vocabulary::build(c);

    auto known = v.tokenize_title("Alpha, BETA: gamma!");
    REQUIRE(known.size() == 3);
    CHECK(known[0] == *v.lookup("alpha"));

    auto with_unseen = v.tokenize_title("alpha zeta");
    REQUIRE(with_unseen.size() == 2);
    CHECK(with_unseen[1] == Vocabulary::kUnk);

    CHECK_THROWS_AS(v.tokenize_title(""), DataError);
    CHECK_THROWS_AS(v.tokenize_title("!!!"), DataError);
}

TEST_CASE("tokenize after detokenize is the identity on in-vocab sequences") {
    SyntheticConfig cfg;
    cfg.users = 4;
    cfg.items = 40;
    cfg.interactions_per_user = 4;
    cfg.genres = 4;
    cfg.seed = 21;
    SyntheticData data = generate_synthetic(cfg);
    Vocabulary v = Vocabulary::build(data.catalog);

    Rng rng(77);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<TokenId> ids;
        const std::size_t len = 1 + rng.uniform_index(8);
        for (std::size_t i = 0; i < len; ++i) {
            ids.push_back(static_cast<TokenId>(5 + rng.uniform_index(v.word_count())));
        }
        CHECK(v.tokenize_title(v.detokenize(ids)) == ids);
    }
}

TEST_CASE("vocabulary dump round trips") {
    Catalog c = catalog_of({"alpha beta", "gamma delta"});
    Vocabulary v = Vocabulary::build(c);
    const std::string path =
        (std::filesystem::temp_directory_path() / "patchrec_vocab_test.tsv").string();
    v.save(path);
    Vocabulary loaded = Vocabulary::load(path);
    CHECK(loaded.size() == v.size());
    CHECK(loaded.lookup("gamma") == v.lookup("gamma"));
    CHECK(loaded.tokenize_title("alpha delta") == v.tokenize_title("alpha delta"));
}

TEST_CASE("trie shares prefixes and keeps one chain per single item") {
    Catalog c = catalog_of({"a b", "a c"});
    Vocabulary v = Vocabulary::build(c);
    TitleTrie trie = TitleTrie::build(c, v);

    auto first = trie.allowed_next(std::vector<TokenId>{});
    REQUIRE(first.size() == 1); // both titles start with "a"
    CHECK(first[0] == *v.lookup("a"));

    std::vector<TokenId> prefix = {*v.lookup("a")};
    auto next = trie.allowed_next(prefix);
    REQUIRE(next.size() == 2);
    CHECK(std::set<TokenId>(next.begin(), next.end()) ==
          std::set<TokenId>{*v.lookup("b"), *v.lookup("c")});

    Catalog single = catalog_of({"lonely chain here"});
    Vocabulary sv = Vocabulary::build(single);
    TitleTrie st = TitleTrie::build(single, sv);
    CHECK(st.node_count() == 4); // root + 3 tokens
    CHECK(st.path_count() == 1);
}

TEST_CASE("full title prefix offers EOS; specials never appear otherwise") {
    Catalog c = catalog_of({"alpha beta", "alpha beta gamma"});
    Vocabulary v = Vocabulary::build(c);
    TitleTrie trie = TitleTrie::build(c, v);

    auto at_terminal = trie.allowed_next(v.tokenize_title("alpha beta"));
    CHECK(std::count(at_terminal.begin(), at_terminal.end(), Vocabulary::kEos) == 1);
    // "alpha beta" is terminal AND has a continuation.
    CHECK(at_terminal.size() == 2);

    for (TokenId t : at_terminal) {
        if (Vocabulary::is_special(t)) CHECK(t == Vocabulary::kEos);
    }
}

TEST_CASE("invalid prefix throws (decoder bug signal)") {
    Catalog c = catalog_of({"alpha beta"});
    Vocabulary v = Vocabulary::build(c);
    TitleTrie trie = TitleTrie::build(c, v);
    std::vector<TokenId> bogus = {*v.lookup("beta")};
    CHECK_THROWS_AS(trie.allowed_next(bogus), DataError);
}

TEST_CASE("trie paths equal the set of distinct tokenized titles") {
    SyntheticConfig cfg;
    cfg.users = 4;
    cfg.items = 50;
    cfg.interactions_per_user = 4;
    cfg.genres = 5;
    cfg.seed = 31;
    SyntheticData data = generate_synthetic(cfg);
    Vocabulary v = Vocabulary::build(data.catalog);
    TitleTrie trie = TitleTrie::build(data.catalog, v);

    std::set<std::vector<TokenId>> expected;
    for (const Item& item : data.catalog.items()) {
        expected.insert(v.tokenize_title(item.title));
    }
    auto paths = trie.enumerate_paths();
    std::set<std::vector<TokenId>> actual(paths.begin(), paths.end());
    CHECK(actual == expected);
    CHECK(trie.path_count() == expected.size());
}

TEST_CASE("duplicate titles collapse onto one terminal with all item ids") {
    std::vector<Item> items = {{10, "same words"}, {20, "Same Words"}, {30, "other thing"}};
    Catalog c(std::move(items));
    Vocabulary v = Vocabulary::build(c);
    TitleTrie trie = TitleTrie::build(c, v);
    CHECK(trie.path_count() == 2);
    auto ids = trie.items_for(v.tokenize_title("same words"));
    REQUIRE(ids.size() == 2);
    CHECK(ids[0] == 10);
    CHECK(ids[1] == 20);
}
