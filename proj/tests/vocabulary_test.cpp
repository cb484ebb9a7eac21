#include <catch2/catch_amalgamated.hpp>

#include <fstream>
#include <random>

#include "palm/vocabulary.hpp"
#include "test_support.hpp"

using namespace palm;
using palm_test::TempDir;

TEST_CASE("canonicalize lowercases and strips", "[vocabulary]") {
    CHECK(canonicalize("Take ") == "take");
    CHECK(canonicalize("paint brush") == "paint_brush");
    CHECK(canonicalize("cut") == "cut");
    CHECK(canonicalize("  Mixed\tCase  Words ") == "mixed_case_words");
}

TEST_CASE("canonicalize rejects empty results", "[vocabulary]") {
    CHECK_THROWS_AS(canonicalize(""), EmptyToken);
    CHECK_THROWS_AS(canonicalize("   \t "), EmptyToken);
}

TEST_CASE("canonicalize is idempotent", "[vocabulary]") {
    std::mt19937 rng(41);
    const std::string alphabet = "aAzZ09 _\t-";
    for (int trial = 0; trial < 500; ++trial) {
        std::string s;
        const std::size_t len = 1 + rng() % 12;
        for (std::size_t i = 0; i < len; ++i) s.push_back(alphabet[rng() % alphabet.size()]);
        std::string once;
        try {
            once = canonicalize(s);
        } catch (const EmptyToken&) {
            continue;
        }
        CHECK(canonicalize(once) == once);
    }
}

TEST_CASE("load_vocabulary dedups preserving first occurrence", "[vocabulary]") {
    TempDir dir("vocab");
    palm_test::write_file(dir.str("verbs.txt"), "take\nput\ntake\n");
    palm_test::write_file(dir.str("nouns.txt"), "knife\n");
    Vocabulary v = load_vocabulary(dir.str("verbs.txt"), dir.str("nouns.txt"));
    REQUIRE(v.verbs() == std::vector<std::string>{"take", "put"});
    CHECK(v.verb_id("take") == 0);
    CHECK(v.verb_id("put") == 1);
}

TEST_CASE("load_vocabulary collapses case and whitespace variants", "[vocabulary]") {
    TempDir dir("vocab");
    palm_test::write_file(dir.str("verbs.txt"), "Cut \ncut\n");
    palm_test::write_file(dir.str("nouns.txt"), "board\n");
    Vocabulary v = load_vocabulary(dir.str("verbs.txt"), dir.str("nouns.txt"));
    CHECK(v.verbs() == std::vector<std::string>{"cut"});
}

TEST_CASE("load_vocabulary skips comments and blank lines", "[vocabulary]") {
    TempDir dir("vocab");
    palm_test::write_file(dir.str("verbs.txt"), "# header\ntake\n\n# more\nput\n");
    palm_test::write_file(dir.str("nouns.txt"), "knife\r\nonion\r\n");
    Vocabulary v = load_vocabulary(dir.str("verbs.txt"), dir.str("nouns.txt"));
    CHECK(v.verbs().size() == 2);
    CHECK(v.nouns() == std::vector<std::string>{"knife", "onion"});
}

TEST_CASE("load_vocabulary errors", "[vocabulary]") {
    TempDir dir("vocab");
    palm_test::write_file(dir.str("empty.txt"), "# only a comment\n");
    palm_test::write_file(dir.str("nouns.txt"), "knife\n");
    CHECK_THROWS_AS(load_vocabulary(dir.str("empty.txt"), dir.str("nouns.txt")), VocabularyEmpty);
    CHECK_THROWS_AS(load_vocabulary(dir.str("missing.txt"), dir.str("nouns.txt")), IoError);
}

TEST_CASE("fixture vocabulary sizes match a line-count oracle", "[vocabulary]") {
    // oracle: count distinct canonical non-comment lines directly
    auto count_tokens = [](const std::string& path) {
        std::ifstream in(path);
        REQUIRE(in);
        std::set<std::string> seen;
        std::string line;
        while (std::getline(in, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty() || line.front() == '#') continue;
            seen.insert(canonicalize(line));
        }
        return seen.size();
    };
    const std::size_t verb_lines = count_tokens(palm_test::fixture_path("verbs.txt"));
    const std::size_t noun_lines = count_tokens(palm_test::fixture_path("nouns.txt"));
    CHECK(verb_lines == 115);
    CHECK(noun_lines == 478);

    const Vocabulary& v = palm_test::fixture_vocabulary();
    CHECK(v.verbs().size() == verb_lines);
    CHECK(v.nouns().size() == noun_lines);
}

TEST_CASE("lookup canonicalizes and resolves both tokens", "[vocabulary]") {
    const Vocabulary& v = palm_test::fixture_vocabulary();
    auto label = lookup(v, "take", "knife");
    REQUIRE(label.has_value());
    CHECK(v.verb(label->verb_id) == "take");
    CHECK(v.noun(label->noun_id) == "knife");

    CHECK_FALSE(lookup(v, "levitate", "knife").has_value());
    CHECK(lookup(v, "Take", "KNIFE") == label);
    CHECK_FALSE(lookup(v, "", "knife").has_value());
}

TEST_CASE("lookup succeeds exactly when both canonical tokens exist", "[vocabulary]") {
    const Vocabulary& v = palm_test::fixture_vocabulary();
    const std::vector<std::pair<std::string, std::string>> cases = {
        {"take", "knife"}, {"Take ", "paint brush"}, {"warp", "knife"}, {"take", "warp_core"}};
    for (const auto& [verb, noun] : cases) {
        const bool verb_in = v.verb_id(canonicalize(verb)).has_value();
        const bool noun_in = v.noun_id(canonicalize(noun)).has_value();
        CHECK(lookup(v, verb, noun).has_value() == (verb_in && noun_in));
    }
}

TEST_CASE("vocabulary ids round-trip", "[vocabulary]") {
    const Vocabulary& v = palm_test::fixture_vocabulary();
    for (int id = 0; id < static_cast<int>(v.verbs().size()); ++id)
        CHECK(v.verb_id(v.verb(id)) == id);
    for (int id = 0; id < static_cast<int>(v.nouns().size()); ++id)
        CHECK(v.noun_id(v.noun(id)) == id);
}
