#pragma once

#include <stdexcept>
#include <string>

namespace palm {

/// Base class for every error raised by this library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// --- vocabulary ---

class IoError : public Error {
public:
    explicit IoError(const std::string& path, const std::string& detail = "")
        : Error("cannot read '" + path + "'" + (detail.empty() ? "" : ": " + detail)), path(path) {}
    std::string path;
};

class VocabularyEmpty : public Error {
public:
    explicit VocabularyEmpty(const std::string& path)
        : Error("vocabulary file '" + path + "' contains no tokens"), path(path) {}
    std::string path;
};

class EmptyToken : public Error {
public:
    explicit EmptyToken(const std::string& raw)
        : Error("token is empty after canonicalization: \"" + raw + "\""), raw(raw) {}
    std::string raw;
};

// --- dataset ---

class SchemaError : public Error {
public:
    SchemaError(const std::string& clip_id, const std::string& field, const std::string& detail = "")
        : Error("annotation schema violation in clip '" + clip_id + "', field '" + field + "'" +
                (detail.empty() ? "" : ": " + detail)),
          clip_id(clip_id),
          field(field) {}
    std::string clip_id;
    std::string field;
};

class UnknownLabel : public Error {
public:
    UnknownLabel(const std::string& clip_id, int action_idx, const std::string& token)
        : Error("clip '" + clip_id + "', action " + std::to_string(action_idx) +
                ": label token '" + token + "' is not in the vocabulary"),
          clip_id(clip_id),
          action_idx(action_idx),
          token(token) {}
    std::string clip_id;
    int action_idx;
    std::string token;
};

class NoObservedActions : public Error {
public:
    NoObservedActions() : Error("query horizon requires at least one observed action") {}
};

class InsufficientContext : public Error {
public:
    InsufficientContext(const std::string& clip_id, int anchor, const std::string& detail)
        : Error("clip '" + clip_id + "', anchor " + std::to_string(anchor) + ": " + detail),
          clip_id(clip_id),
          anchor(anchor) {}
    std::string clip_id;
    int anchor;
};

class MissingNarration : public Error {
public:
    MissingNarration(const std::string& clip_id, int action_idx)
        : Error("clip '" + clip_id + "' has no narration for action " + std::to_string(action_idx)),
          clip_id(clip_id),
          action_idx(action_idx) {}
    std::string clip_id;
    int action_idx;
};

// --- selection ---

class DimMismatch : public Error {
public:
    DimMismatch(std::size_t lhs, std::size_t rhs)
        : Error("embedding dimensions differ: " + std::to_string(lhs) + " vs " + std::to_string(rhs)),
          lhs(lhs),
          rhs(rhs) {}
    std::size_t lhs;
    std::size_t rhs;
};

class ZeroVector : public Error {
public:
    ZeroVector() : Error("cosine similarity is undefined for a zero vector") {}
};

class NoCandidates : public Error {
public:
    NoCandidates() : Error("cannot select examples from an empty candidate list") {}
};

// --- prompting ---

class ConfigMismatch : public Error {
public:
    explicit ConfigMismatch(const std::string& detail) : Error("prompt config mismatch: " + detail) {}
};

// --- backends ---

class BackendUnavailable : public Error {
public:
    explicit BackendUnavailable(const std::string& detail, int sample_index = -1)
        : Error("backend unavailable" +
                (sample_index >= 0 ? " (sample " + std::to_string(sample_index) + ")" : "") + ": " + detail),
          sample_index(sample_index) {}
    int sample_index;
};

class ProtocolError : public Error {
public:
    explicit ProtocolError(const std::string& detail) : Error("backend protocol error: " + detail) {}
};

class EmptyInput : public Error {
public:
    explicit EmptyInput(const std::string& what_input) : Error(what_input + " must not be empty") {}
};

// --- evaluation ---

class EmptySequences : public Error {
public:
    EmptySequences() : Error("edit distance is undefined when both sequences are empty") {}
};

class LengthMismatch : public Error {
public:
    LengthMismatch(std::size_t lhs, std::size_t rhs)
        : Error("sequence lengths differ: " + std::to_string(lhs) + " vs " + std::to_string(rhs)),
          lhs(lhs),
          rhs(rhs) {}
    std::size_t lhs;
    std::size_t rhs;
};

class DegenerateRegressor : public Error {
public:
    DegenerateRegressor() : Error("regression requires a non-constant x column") {}
};

class TooFewPoints : public Error {
public:
    explicit TooFewPoints(std::size_t n)
        : Error("regression requires at least 3 points, got " + std::to_string(n)), n(n) {}
    std::size_t n;
};

class IncompleteRun : public Error {
public:
    IncompleteRun(const std::string& clip_id, int anchor, const std::string& detail)
        : Error("query (" + clip_id + ", " + std::to_string(anchor) + ") " + detail),
          clip_id(clip_id),
          anchor(anchor) {}
    std::string clip_id;
    int anchor;
};

// --- cli / config ---

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& detail) : Error("configuration error: " + detail) {}
};

}  // namespace palm
