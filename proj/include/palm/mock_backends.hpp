#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "palm/backends.hpp"
#include "palm/hash.hpp"

namespace palm {

/// Deterministic caption mock: scripted entries keyed by (clip_id, frame),
/// with a stable templated fallback. Counts calls for cache tests.
class MockCaptionBackend final : public CaptionBackend {
public:
    void script(const std::string& clip_id, int frame_index, std::string caption) {
        scripted_[{clip_id, frame_index}] = std::move(caption);
    }

    /// Drop the prefix from responses to exercise the contract check.
    void set_misbehave(bool value) { misbehave_ = value; }

    int calls() const { return calls_.load(); }

private:
    std::string do_caption(const std::string& clip_id, int frame_index, const std::string& prefix) override {
        calls_.fetch_add(1);
        if (misbehave_) return "doing something with " + clip_id;
        auto it = scripted_.find({clip_id, frame_index});
        if (it != scripted_.end()) return it->second;
        return prefix + " handling item " + std::to_string(frame_index) + " in " + clip_id;
    }

    std::map<std::pair<std::string, int>, std::string> scripted_;
    bool misbehave_ = false;
    std::atomic<int> calls_{0};
};

/// Hash-seeded unit vector per input text; bit-stable across calls and runs.
class MockEmbeddingBackend final : public EmbeddingBackend {
public:
    explicit MockEmbeddingBackend(std::size_t dim = 16) : dim_(dim) {}

    int calls() const { return calls_.load(); }

private:
    Embedding do_embed(const std::string& text) override {
        calls_.fetch_add(1);
        std::uint64_t state = fnv1a64(text);
        Embedding emb;
        emb.values.resize(dim_);
        double norm_sq = 0.0;
        for (std::size_t i = 0; i < dim_; ++i) {
            const std::uint64_t bits = splitmix64(state);
            // uniform in (-1, 1) from the top 53 bits
            const double u = static_cast<double>(bits >> 11) * (1.0 / 9007199254740992.0);
            emb.values[i] = 2.0 * u - 1.0;
            norm_sq += emb.values[i] * emb.values[i];
        }
        const double norm = std::sqrt(norm_sq);
        for (double& v : emb.values) v /= norm;
        return emb;
    }

    std::size_t dim_;
    std::atomic<int> calls_{0};
};

/// Replays scripted completions keyed by (prompt hash, seed).
class ScriptedCompletionBackend final : public CompletionBackend {
public:
    void script(const std::string& prompt, std::optional<std::int64_t> seed, std::string completion) {
        scripted_[{fnv1a64(prompt), seed.value_or(-1)}] = std::move(completion);
    }

    int calls() const { return calls_.load(); }

private:
    std::string do_complete(const std::string& prompt, const CompletionParams& params) override {
        calls_.fetch_add(1);
        auto it = scripted_.find({fnv1a64(prompt), params.seed.value_or(-1)});
        if (it == scripted_.end())
            throw ProtocolError("no scripted completion for this (prompt, seed)");
        return it->second;
    }

    std::map<std::pair<std::uint64_t, std::int64_t>, std::string> scripted_;
    std::atomic<int> calls_{0};
};

/// Echoes the observed actions found on the prompt's final "Actions:" line,
/// rotated by the sample seed and repeated cyclically. Deterministic in
/// (prompt, seed); an empty query action list yields an empty completion.
class EchoCompletionBackend final : public CompletionBackend {
public:
    explicit EchoCompletionBackend(int n_pairs = 20) : n_pairs_(n_pairs) {}

    int calls() const { return calls_.load(); }

    /// Throw BackendUnavailable on the given 1-based call number (test knob).
    void fail_on_call(int call_number) { fail_on_call_ = call_number; }

private:
    std::string do_complete(const std::string& prompt, const CompletionParams& params) override {
        const int call = calls_.fetch_add(1) + 1;
        if (fail_on_call_ && call == *fail_on_call_)
            throw BackendUnavailable("scripted outage (call " + std::to_string(call) + ")");

        const std::vector<std::string> pairs = observed_pairs(prompt);
        if (pairs.empty()) return "";
        const std::size_t offset =
            static_cast<std::size_t>(params.seed.value_or(0) % static_cast<std::int64_t>(pairs.size()));
        std::string out;
        for (int i = 0; i < n_pairs_; ++i) {
            if (i) out += ", ";
            out += pairs[(offset + static_cast<std::size_t>(i)) % pairs.size()];
        }
        return out;
    }

    static std::vector<std::string> observed_pairs(const std::string& prompt) {
        const std::size_t line_start = prompt.rfind('\n');
        std::string last_line = line_start == std::string::npos ? prompt : prompt.substr(line_start + 1);
        const std::string header = "Actions:";
        const std::size_t at = last_line.rfind(header);
        if (at == std::string::npos) return {};
        std::string body = last_line.substr(at + header.size());
        std::vector<std::string> pairs;
        std::string current;
        int depth = 0;
        for (char c : body) {
            if (c == '(') ++depth;
            if (c == ')' && depth > 0) --depth;
            if (c == ',' && depth == 0) {
                if (!current.empty()) pairs.push_back(trim(current));
                current.clear();
                continue;
            }
            current.push_back(c);
        }
        if (!trim(current).empty()) pairs.push_back(trim(current));
        return pairs;
    }

    static std::string trim(const std::string& s) {
        std::size_t b = s.find_first_not_of(" \t");
        std::size_t e = s.find_last_not_of(" \t");
        return b == std::string::npos ? "" : s.substr(b, e - b + 1);
    }

    int n_pairs_;
    std::optional<int> fail_on_call_;
    std::atomic<int> calls_{0};
};

}  // namespace palm
