#pragma once

#include <cmath>
#include <cstddef>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "palm/dataset.hpp"
#include "palm/errors.hpp"

namespace palm {

struct Embedding {
    std::vector<double> values;

    std::size_t dim() const { return values.size(); }
};

/// Balance parameter and selection count for greedy marginal-relevance
/// selection: score(p) = lambda * S(q,p) - (1-lambda) * max_{s in T} S(s,p).
struct MmrConfig {
    double lambda = 0.5;
    int k = 8;
};

inline double cosine_similarity(const Embedding& a, const Embedding& b) {
    if (a.dim() != b.dim()) throw DimMismatch(a.dim(), b.dim());
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        dot += a.values[i] * b.values[i];
        na += a.values[i] * a.values[i];
        nb += b.values[i] * b.values[i];
    }
    if (na == 0.0 || nb == 0.0) throw ZeroVector();
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

/// Greedy selection of min(k, |candidates|) ids. Each step takes the argmax
/// of lambda*S(q,p) - (1-lambda)*max_{s selected} S(s,p); the diversity term
/// is 0 while nothing is selected. Ties go to the lowest candidate position.
template <typename Id>
std::vector<Id> mmr_select(const Embedding& query, const std::vector<std::pair<Id, Embedding>>& candidates,
                           const MmrConfig& config) {
    if (candidates.empty()) throw NoCandidates();
    const std::size_t n = candidates.size();
    const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(config.k), n);

    std::vector<double> relevance(n);
    for (std::size_t i = 0; i < n; ++i) relevance[i] = cosine_similarity(query, candidates[i].second);

    std::vector<double> max_sim_to_selected(n, 0.0);
    std::vector<bool> selected(n, false);
    std::vector<Id> result;
    result.reserve(take);

    for (std::size_t step = 0; step < take; ++step) {
        std::optional<std::size_t> best;
        double best_score = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (selected[i]) continue;
            const double diversity = result.empty() ? 0.0 : max_sim_to_selected[i];
            const double score = config.lambda * relevance[i] - (1.0 - config.lambda) * diversity;
            if (!best || score > best_score) {
                best = i;
                best_score = score;
            }
        }
        const std::size_t pick = *best;
        selected[pick] = true;
        result.push_back(candidates[pick].first);
        for (std::size_t i = 0; i < n; ++i) {
            if (selected[i]) continue;
            const double s = cosine_similarity(candidates[pick].second, candidates[i].second);
            if (s > max_sim_to_selected[i]) max_sim_to_selected[i] = s;
        }
    }
    return result;
}

/// The text a query or candidate example is embedded as: its narrations
/// joined by newline. Action labels are not part of the embedding input.
inline std::string embedding_text(const std::vector<std::string>& narrations) {
    std::string out;
    for (std::size_t i = 0; i < narrations.size(); ++i) {
        if (i) out.push_back('\n');
        out += narrations[i];
    }
    return out;
}

inline std::string embedding_text(const Query& query) { return embedding_text(query.narrations); }
inline std::string embedding_text(const Example& example) { return embedding_text(example.narrations); }

/// Key for precomputed candidate embeddings.
struct ExampleRef {
    std::string clip_id;
    int anchor = 0;

    friend bool operator==(const ExampleRef&, const ExampleRef&) = default;
    friend bool operator<(const ExampleRef& a, const ExampleRef& b) {
        return std::tie(a.clip_id, a.anchor) < std::tie(b.clip_id, b.anchor);
    }
};

/// Sidecar store of candidate embeddings, one JSON object per line:
/// {"clip_id": str, "anchor": int, "dim": int, "values": [..]}.
class EmbeddingCache {
public:
    EmbeddingCache() = default;

    static EmbeddingCache load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IoError(path);
        EmbeddingCache cache;
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            nlohmann::json row;
            try {
                row = nlohmann::json::parse(line);
            } catch (const nlohmann::json::exception& e) {
                throw IoError(path, "line " + std::to_string(lineno) + ": " + e.what());
            }
            Embedding emb;
            emb.values = row.at("values").get<std::vector<double>>();
            if (row.at("dim").get<std::size_t>() != emb.dim())
                throw IoError(path, "line " + std::to_string(lineno) + ": dim does not match values");
            cache.put({row.at("clip_id").get<std::string>(), row.at("anchor").get<int>()}, std::move(emb));
        }
        return cache;
    }

    void save(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw IoError(path);
        for (const auto& [ref, emb] : entries_) {
            nlohmann::json row{{"clip_id", ref.clip_id},
                               {"anchor", ref.anchor},
                               {"dim", emb.dim()},
                               {"values", emb.values}};
            out << row.dump() << '\n';
        }
    }

    void put(const ExampleRef& ref, Embedding emb) { entries_[ref] = std::move(emb); }

    const Embedding* find(const ExampleRef& ref) const {
        auto it = entries_.find(ref);
        return it == entries_.end() ? nullptr : &it->second;
    }

    std::size_t size() const { return entries_.size(); }

private:
    std::map<ExampleRef, Embedding> entries_;
};

}  // namespace palm
