#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "palm/inference.hpp"
#include "palm/mock_backends.hpp"
#include "palm/prompting.hpp"
#include "test_support.hpp"

using namespace palm;

namespace {

const Vocabulary& vocab() { return palm_test::fixture_vocabulary(); }

ActionLabel label(const std::string& verb, const std::string& noun) {
    auto l = lookup(vocab(), verb, noun);
    REQUIRE(l.has_value());
    return *l;
}

std::string render_sequence(const ActionSequence& seq) {
    std::string out;
    for (std::size_t i = 0; i < seq.size(); ++i) {
        if (i) out += ", ";
        out += render_action(seq[i], vocab());
    }
    return out;
}

ActionSequence random_sequence(std::mt19937& rng, int len) {
    ActionSequence seq;
    for (int i = 0; i < len; ++i)
        seq.push_back(ActionLabel{static_cast<int>(rng() % vocab().verbs().size()),
                                  static_cast<int>(rng() % vocab().nouns().size())});
    return seq;
}

Query tiny_query() {
    Query q;
    q.clip_id = "q";
    q.anchor_action_idx = 1;
    q.narrations = {"A person is taking a knife", "A person is cutting an onion"};
    q.observed_actions = {label("take", "knife"), label("cut", "onion")};
    return q;
}

}  // namespace

TEST_CASE("parse_action_pair accepts both pair forms", "[inference]") {
    CHECK(parse_action_pair("(take, knife)", vocab()) == label("take", "knife"));
    CHECK(parse_action_pair("( CUT , Onion )", vocab()) == label("cut", "onion"));
    CHECK(parse_action_pair("take knife", vocab()) == label("take", "knife"));
    CHECK(parse_action_pair("(put, paint brush)", vocab()) == label("put", "paint_brush"));
    CHECK(parse_action_pair("  (wash, pan)  ", vocab()) == label("wash", "pan"));
}

TEST_CASE("parse_action_pair drops out-of-vocabulary and malformed tokens", "[inference]") {
    CHECK_FALSE(parse_action_pair("(fly, moon)", vocab()).has_value());
    CHECK_FALSE(parse_action_pair("(take, moon)", vocab()).has_value());
    CHECK_FALSE(parse_action_pair("(fly, knife)", vocab()).has_value());
    CHECK_FALSE(parse_action_pair("knife", vocab()).has_value());
    CHECK_FALSE(parse_action_pair("()", vocab()).has_value());
    CHECK_FALSE(parse_action_pair("", vocab()).has_value());
    CHECK_FALSE(parse_action_pair("(, knife)", vocab()).has_value());
}

TEST_CASE("parse_completion keeps all pairs when the model is exact", "[inference]") {
    std::mt19937 rng(17);
    const ActionSequence want = random_sequence(rng, 20);
    auto [got, stats] = parse_completion(render_sequence(want), vocab(), 20, label("take", "knife"));
    CHECK(got == want);
    CHECK(stats.pairs_seen == 20);
    CHECK(stats.pairs_in_vocab == 20);
    CHECK(stats.padded == 0);
}

TEST_CASE("parse_completion pads short output with the last action", "[inference]") {
    std::mt19937 rng(18);
    ActionSequence partial = random_sequence(rng, 17);
    partial.push_back(label("wash", "pan"));
    auto [got, stats] = parse_completion(render_sequence(partial), vocab(), 20, label("take", "knife"));
    REQUIRE(got.size() == 20);
    for (int i = 0; i < 18; ++i) CHECK(got[i] == partial[i]);
    CHECK(got[18] == label("wash", "pan"));
    CHECK(got[19] == label("wash", "pan"));
    CHECK(stats.padded == 2);
}

TEST_CASE("parse_completion falls back to the last observed action", "[inference]") {
    auto [got, stats] =
        parse_completion("complete gibberish with no pairs at all", vocab(), 20, label("take", "knife"));
    REQUIRE(got.size() == 20);
    for (const ActionLabel& l : got) CHECK(l == label("take", "knife"));
    CHECK(stats.pairs_in_vocab == 0);
    CHECK(stats.padded == 20);
}

TEST_CASE("parse_completion stops at a hallucinated block header", "[inference]") {
    const std::string text = "(take, knife), (cut, onion)\n"
                             "Narrations: A person is washing a pan\n"
                             "(wash, pan), (wash, pan)";
    auto [got, stats] = parse_completion(text, vocab(), 4, label("put", "plate"));
    REQUIRE(got.size() == 4);
    CHECK(got[0] == label("take", "knife"));
    CHECK(got[1] == label("cut", "onion"));
    CHECK(got[2] == label("cut", "onion"));  // padded, pairs after the header are ignored
    CHECK(stats.pairs_in_vocab == 2);

    const std::string actions_header = "(take, knife)\n  Actions: (wash, pan)";
    auto [got2, stats2] = parse_completion(actions_header, vocab(), 2, label("put", "plate"));
    CHECK(got2[0] == label("take", "knife"));
    CHECK(got2[1] == label("take", "knife"));
    CHECK(stats2.pairs_in_vocab == 1);
}

TEST_CASE("parse_completion tolerates whitespace and a trailing comma", "[inference]") {
    auto [got, stats] =
        parse_completion("   (take , knife)  ,   ( cut,onion ) ,  ", vocab(), 2, label("put", "plate"));
    CHECK(got[0] == label("take", "knife"));
    CHECK(got[1] == label("cut", "onion"));
    CHECK(stats.pairs_seen == 2);
    CHECK(stats.padded == 0);
}

TEST_CASE("parse_completion mixes valid and invalid pairs in order", "[inference]") {
    const std::string text = "(take, knife), nonsense, (fly, moon), (cut, onion)";
    auto [got, stats] = parse_completion(text, vocab(), 3, label("put", "plate"));
    CHECK(got[0] == label("take", "knife"));
    CHECK(got[1] == label("cut", "onion"));
    CHECK(got[2] == label("cut", "onion"));
    CHECK(stats.pairs_seen == 4);
    CHECK(stats.pairs_in_vocab == 2);
    CHECK(stats.padded == 1);
}

TEST_CASE("parse_completion always returns exactly Z actions", "[inference]") {
    std::mt19937 rng(99);
    for (int trial = 0; trial < 1000; ++trial) {
        std::string junk;
        const std::size_t len = rng() % 120;
        for (std::size_t i = 0; i < len; ++i) junk.push_back(static_cast<char>(rng() % 256));
        const int z = 1 + static_cast<int>(rng() % 25);
        auto [seq, stats] = parse_completion(junk, vocab(), z, label("take", "knife"));
        REQUIRE(static_cast<int>(seq.size()) == z);
        CHECK(stats.pairs_in_vocab <= stats.pairs_seen);
        const int expected_padding = std::max(0, z - std::min(z, stats.pairs_in_vocab));
        CHECK(stats.padded == expected_padding);
    }
}

TEST_CASE("render then parse is the identity on in-vocabulary sequences", "[inference]") {
    std::mt19937 rng(4);
    for (int trial = 0; trial < 200; ++trial) {
        const int len = 1 + static_cast<int>(rng() % 20);
        const ActionSequence want = random_sequence(rng, len);
        auto [got, stats] = parse_completion(render_sequence(want), vocab(), len, label("take", "knife"));
        REQUIRE(got == want);
        CHECK(stats.padded == 0);
    }
}

TEST_CASE("predict samples k completions and parses each", "[inference]") {
    PromptDocument prompt;
    prompt.text = "INSTR\n\nActions: (take, knife), (cut, onion), ";
    prompt.query_ref = {"q", 1};

    ScriptedCompletionBackend backend;
    SamplingConfig sampling;
    sampling.k = 5;
    sampling.seed = 100;
    for (int i = 0; i < 5; ++i)
        backend.script(prompt.text, 100 + i, "(wash, pan), (put, plate)");

    PredictionSet set = predict(prompt, tiny_query(), vocab(), sampling, 20, backend);
    REQUIRE(set.sequences.size() == 5);
    REQUIRE(set.raw_completions.size() == 5);
    REQUIRE(set.parse_stats.size() == 5);
    for (const ActionSequence& seq : set.sequences) {
        REQUIRE(seq.size() == 20);
        CHECK(seq[0] == label("wash", "pan"));
        CHECK(seq[1] == label("put", "plate"));
        CHECK(seq[19] == label("put", "plate"));
    }
    CHECK(set.query_ref == ExampleRef{"q", 1});

    PredictionSet again = predict(prompt, tiny_query(), vocab(), sampling, 20, backend);
    CHECK(again.sequences == set.sequences);
    CHECK(again.raw_completions == set.raw_completions);
}

TEST_CASE("predict with the echo mock reproduces the observed actions", "[inference]") {
    PromptDocument prompt;
    prompt.text = "INSTR\n\nNarrations: A person is taking a knife\n"
                  "Actions: (take, knife), (cut, onion), ";
    prompt.query_ref = {"q", 1};

    EchoCompletionBackend backend(4);
    SamplingConfig sampling;
    sampling.k = 1;
    sampling.seed = 0;
    PredictionSet set = predict(prompt, tiny_query(), vocab(), sampling, 4, backend);
    const ActionSequence want{label("take", "knife"), label("cut", "onion"), label("take", "knife"),
                              label("cut", "onion")};
    CHECK(set.sequences.at(0) == want);
}

TEST_CASE("predict reports the failing sample index", "[inference]") {
    PromptDocument prompt;
    prompt.text = "Actions: (take, knife), ";
    prompt.query_ref = {"q", 0};

    EchoCompletionBackend backend(4);
    backend.fail_on_call(3);
    SamplingConfig sampling;
    sampling.k = 5;
    sampling.seed = 1;
    try {
        predict(prompt, tiny_query(), vocab(), sampling, 4, backend);
        FAIL("expected BackendUnavailable");
    } catch (const BackendUnavailable& e) {
        CHECK(e.sample_index == 2);
    }
}
