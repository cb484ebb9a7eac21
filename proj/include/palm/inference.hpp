#pragma once

#include <cctype>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "palm/backends.hpp"
#include "palm/dataset.hpp"
#include "palm/errors.hpp"
#include "palm/prompting.hpp"
#include "palm/selection.hpp"
#include "palm/vocabulary.hpp"

namespace palm {

struct SamplingConfig {
    int k = 5;  // completions sampled per query
    double temperature = 0.7;
    int max_new_tokens = 256;
    std::optional<std::int64_t> seed;

    void validate() const {
        if (k < 1) throw ConfigError("sampling requires k >= 1");
        if (temperature <= 0.0) throw ConfigError("temperature must be > 0");
    }
};

struct ParseStats {
    int pairs_seen = 0;      // candidate tokens attempted
    int pairs_in_vocab = 0;  // tokens that resolved to an in-vocabulary pair
    int padded = 0;          // slots filled by repetition or fallback
};

/// K parsed candidate sequences (each exactly Z long) for one query.
struct PredictionSet {
    std::vector<ActionSequence> sequences;
    std::vector<std::string> raw_completions;
    ExampleRef query_ref;
    std::vector<ParseStats> parse_stats;
};

namespace detail {

inline std::string_view trim_view(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

/// Splits one line on commas outside parentheses, so "(take, knife)" stays
/// one token while "take knife, cut onion" splits into two.
inline void split_pair_tokens(std::string_view line, std::vector<std::string>& out) {
    int depth = 0;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i) {
        if (i < line.size()) {
            const char c = line[i];
            if (c == '(') ++depth;
            if (c == ')' && depth > 0) --depth;
            if (!(c == ',' && depth == 0)) continue;
        }
        std::string_view token = trim_view(line.substr(start, i - start));
        if (!token.empty()) out.emplace_back(token);
        start = i + 1;
    }
}

}  // namespace detail

/// Accepts "(verb, noun)" or "verb noun" after trimming; canonicalizes and
/// resolves against the vocabulary. Anything unparseable is an empty result.
inline std::optional<ActionLabel> parse_action_pair(std::string_view token, const Vocabulary& vocab) {
    std::string_view s = detail::trim_view(token);
    if (!s.empty() && s.front() == '(') s.remove_prefix(1);
    if (!s.empty() && s.back() == ')') s.remove_suffix(1);
    s = detail::trim_view(s);
    if (s.empty()) return std::nullopt;

    std::string_view verb, noun;
    const std::size_t comma = s.find(',');
    if (comma != std::string_view::npos) {
        verb = s.substr(0, comma);
        noun = s.substr(comma + 1);
    } else {
        std::size_t space = std::string_view::npos;
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (std::isspace(static_cast<unsigned char>(s[i]))) {
                space = i;
                break;
            }
        }
        if (space == std::string_view::npos) return std::nullopt;
        verb = s.substr(0, space);
        noun = s.substr(space + 1);
    }
    verb = detail::trim_view(verb);
    noun = detail::trim_view(noun);
    if (verb.empty() || noun.empty()) return std::nullopt;
    return lookup(vocab, verb, noun);
}

/// Total parse of one completion into exactly z actions. Scans line by line,
/// stopping when the model starts hallucinating a next example block; keeps
/// in-vocabulary pairs in order; short output repeats the last kept pair and
/// zero kept pairs fall back to the last observed query action.
inline std::pair<ActionSequence, ParseStats> parse_completion(std::string_view text, const Vocabulary& vocab,
                                                              int z, const ActionLabel& fallback) {
    ParseStats stats;
    ActionSequence kept;
    std::size_t pos = 0;
    bool stopped = false;
    while (pos <= text.size() && !stopped) {
        const std::size_t eol = text.find('\n', pos);
        std::string_view line = text.substr(pos, eol == std::string_view::npos ? std::string_view::npos
                                                                               : eol - pos);
        pos = eol == std::string_view::npos ? text.size() + 1 : eol + 1;

        const std::string_view stripped = detail::trim_view(line);
        if (stripped.rfind("Narrations:", 0) == 0 || stripped.rfind("Actions:", 0) == 0) {
            stopped = true;
            break;
        }
        std::vector<std::string> tokens;
        detail::split_pair_tokens(line, tokens);
        for (const std::string& token : tokens) {
            ++stats.pairs_seen;
            if (auto label = parse_action_pair(token, vocab)) {
                ++stats.pairs_in_vocab;
                if (static_cast<int>(kept.size()) < z) kept.push_back(*label);
            }
        }
    }

    if (kept.empty()) {
        kept.assign(static_cast<std::size_t>(z), fallback);
        stats.padded = z;
    } else if (static_cast<int>(kept.size()) < z) {
        stats.padded = z - static_cast<int>(kept.size());
        kept.resize(static_cast<std::size_t>(z), kept.back());
    }
    return {std::move(kept), stats};
}

/// Samples k completions for the prompt and parses each into a length-z
/// sequence. Per-sample seeds are offset from the configured seed so seeded
/// runs are reproducible yet diverse. No partial results: any backend
/// failure aborts the whole set.
inline PredictionSet predict(const PromptDocument& prompt, const Query& query, const Vocabulary& vocab,
                             const SamplingConfig& sampling, int z, CompletionBackend& backend) {
    sampling.validate();
    if (query.observed_actions.empty()) throw NoObservedActions();
    const ActionLabel fallback = query.observed_actions.back();

    PredictionSet set;
    set.query_ref = prompt.query_ref;
    for (int i = 0; i < sampling.k; ++i) {
        CompletionParams params;
        params.temperature = sampling.temperature;
        params.max_new_tokens = sampling.max_new_tokens;
        if (sampling.seed) params.seed = *sampling.seed + i;
        std::string completion;
        try {
            completion = backend.complete(prompt.text, params);
        } catch (const BackendUnavailable& e) {
            throw BackendUnavailable(e.what(), i);
        }
        auto [sequence, stats] = parse_completion(completion, vocab, z, fallback);
        set.sequences.push_back(std::move(sequence));
        set.raw_completions.push_back(std::move(completion));
        set.parse_stats.push_back(stats);
    }
    return set;
}

}  // namespace palm
