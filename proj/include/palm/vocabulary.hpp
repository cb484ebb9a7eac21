#pragma once

#include <cctype>
#include <cstddef>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "palm/errors.hpp"

namespace palm {

/// Canonical token form: lowercase, trimmed, internal whitespace runs
/// collapsed to a single underscore. Idempotent.
inline std::string canonicalize(std::string_view raw) {
    std::string out;
    out.reserve(raw.size());
    bool pending_sep = false;
    for (char ch : raw) {
        unsigned char c = static_cast<unsigned char>(ch);
        if (std::isspace(c)) {
            if (!out.empty()) pending_sep = true;
            continue;
        }
        if (pending_sep) {
            out.push_back('_');
            pending_sep = false;
        }
        out.push_back(static_cast<char>(std::tolower(c)));
    }
    if (out.empty()) throw EmptyToken(std::string(raw));
    return out;
}

/// A (verb, noun) pair by id into the owning Vocabulary.
struct ActionLabel {
    int verb_id = 0;
    int noun_id = 0;

    friend bool operator==(const ActionLabel&, const ActionLabel&) = default;
};

using ActionSequence = std::vector<ActionLabel>;

/// Closed verb/noun label space. Immutable after construction.
class Vocabulary {
public:
    Vocabulary(std::vector<std::string> verbs, std::vector<std::string> nouns)
        : verbs_(std::move(verbs)), nouns_(std::move(nouns)) {
        for (std::size_t i = 0; i < verbs_.size(); ++i) verb_index_[verbs_[i]] = static_cast<int>(i);
        for (std::size_t i = 0; i < nouns_.size(); ++i) noun_index_[nouns_[i]] = static_cast<int>(i);
    }

    const std::vector<std::string>& verbs() const { return verbs_; }
    const std::vector<std::string>& nouns() const { return nouns_; }

    const std::string& verb(int id) const { return verbs_.at(static_cast<std::size_t>(id)); }
    const std::string& noun(int id) const { return nouns_.at(static_cast<std::size_t>(id)); }

    std::optional<int> verb_id(std::string_view canonical) const { return find(verb_index_, canonical); }
    std::optional<int> noun_id(std::string_view canonical) const { return find(noun_index_, canonical); }

private:
    static std::optional<int> find(const std::unordered_map<std::string, int>& index, std::string_view key) {
        auto it = index.find(std::string(key));
        if (it == index.end()) return std::nullopt;
        return it->second;
    }

    std::vector<std::string> verbs_;
    std::vector<std::string> nouns_;
    std::unordered_map<std::string, int> verb_index_;
    std::unordered_map<std::string, int> noun_index_;
};

namespace detail {

inline std::vector<std::string> read_token_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError(path);
    std::vector<std::string> tokens;
    std::unordered_map<std::string, bool> seen;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line.front() == '#') continue;
        bool blank = true;
        for (char c : line)
            if (!std::isspace(static_cast<unsigned char>(c))) blank = false;
        if (blank) continue;
        std::string canon = canonicalize(line);
        if (!seen.emplace(canon, true).second) continue;  // dedup, keep first occurrence
        tokens.push_back(std::move(canon));
    }
    if (in.bad()) throw IoError(path, "read failure");
    if (tokens.empty()) throw VocabularyEmpty(path);
    return tokens;
}

}  // namespace detail

/// Loads the closed label space from two one-token-per-line files.
/// Lines starting with '#' are comments.
inline Vocabulary load_vocabulary(const std::string& verb_path, const std::string& noun_path) {
    return Vocabulary(detail::read_token_file(verb_path), detail::read_token_file(noun_path));
}

/// Canonicalizes both tokens and resolves them against the vocabulary.
/// Out-of-vocabulary (or unusable) tokens give an empty result, not an error.
inline std::optional<ActionLabel> lookup(const Vocabulary& vocab, std::string_view verb, std::string_view noun) {
    std::string cv, cn;
    try {
        cv = canonicalize(verb);
        cn = canonicalize(noun);
    } catch (const EmptyToken&) {
        return std::nullopt;
    }
    auto v = vocab.verb_id(cv);
    auto n = vocab.noun_id(cn);
    if (!v || !n) return std::nullopt;
    return ActionLabel{*v, *n};
}

}  // namespace palm
