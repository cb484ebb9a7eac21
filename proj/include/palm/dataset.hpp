#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "palm/errors.hpp"
#include "palm/vocabulary.hpp"

namespace palm {

struct ActionSegment {
    int start_frame = 0;
    int end_frame = 0;
    ActionLabel label;
    int action_idx = 0;  // 0-based position within the clip
};

struct ClipAnnotation {
    std::string clip_id;
    std::vector<ActionSegment> segments;
    std::map<int, std::string> narrations;  // action_idx -> caption

    const std::string* narration(int action_idx) const {
        auto it = narrations.find(action_idx);
        return it == narrations.end() ? nullptr : &it->second;
    }
};

/// Few-shot exemplar: N observed (narrated) actions plus Z future actions.
struct Example {
    std::vector<std::string> narrations;
    std::vector<ActionLabel> observed_actions;
    std::vector<ActionLabel> future_actions;
};

/// Evaluation query: the N' most recent observed actions ending at the anchor.
struct Query {
    std::vector<std::string> narrations;
    std::vector<ActionLabel> observed_actions;
    std::string clip_id;
    int anchor_action_idx = 0;
};

inline int middle_frame(const ActionSegment& segment) {
    return (segment.start_frame + segment.end_frame) / 2;
}

/// N' = min(cap, observed action count).
inline int query_horizon(int action_idx_count, int cap = 12) {
    if (action_idx_count < 1) throw NoObservedActions();
    return std::min(cap, action_idx_count);
}

inline Example build_example(const ClipAnnotation& clip, int anchor, int n, int z) {
    const int len = static_cast<int>(clip.segments.size());
    if (anchor < 0 || anchor >= len)
        throw InsufficientContext(clip.clip_id, anchor, "anchor outside clip");
    if (anchor + 1 < n)
        throw InsufficientContext(clip.clip_id, anchor,
                                  "needs " + std::to_string(n) + " observed actions, has " +
                                      std::to_string(anchor + 1));
    if (len - (anchor + 1) < z)
        throw InsufficientContext(clip.clip_id, anchor,
                                  "needs " + std::to_string(z) + " future actions, has " +
                                      std::to_string(len - anchor - 1));
    Example ex;
    for (int i = anchor - n + 1; i <= anchor; ++i) {
        const std::string* narr = clip.narration(i);
        if (!narr) throw MissingNarration(clip.clip_id, i);
        ex.narrations.push_back(*narr);
        ex.observed_actions.push_back(clip.segments[static_cast<std::size_t>(i)].label);
    }
    for (int i = anchor + 1; i <= anchor + z; ++i)
        ex.future_actions.push_back(clip.segments[static_cast<std::size_t>(i)].label);
    return ex;
}

inline Query build_query(const ClipAnnotation& clip, int anchor, int cap) {
    const int len = static_cast<int>(clip.segments.size());
    if (anchor < 0 || anchor >= len)
        throw InsufficientContext(clip.clip_id, anchor, "anchor outside clip");
    const int n_prime = query_horizon(anchor + 1, cap);
    Query q;
    q.clip_id = clip.clip_id;
    q.anchor_action_idx = anchor;
    for (int i = anchor - n_prime + 1; i <= anchor; ++i) {
        const std::string* narr = clip.narration(i);
        if (!narr) throw MissingNarration(clip.clip_id, i);
        q.narrations.push_back(*narr);
        q.observed_actions.push_back(clip.segments[static_cast<std::size_t>(i)].label);
    }
    return q;
}

struct TrainingExample {
    std::string clip_id;
    int anchor = 0;
    Example example;
};

/// Materializes the candidate pool: every (clip, anchor) admitting a full
/// N-observed / Z-future window, in clip order then ascending anchor.
inline std::vector<TrainingExample> enumerate_training_examples(const std::vector<ClipAnnotation>& clips,
                                                                int n, int z) {
    std::vector<TrainingExample> pool;
    for (const ClipAnnotation& clip : clips) {
        const int len = static_cast<int>(clip.segments.size());
        for (int anchor = n - 1; anchor <= len - z - 1; ++anchor)
            pool.push_back({clip.clip_id, anchor, build_example(clip, anchor, n, z)});
    }
    return pool;
}

namespace detail {

inline const nlohmann::json& require_field(const nlohmann::json& obj, const char* key,
                                           const std::string& clip_id) {
    auto it = obj.find(key);
    if (it == obj.end()) throw SchemaError(clip_id, key, "missing");
    return *it;
}

}  // namespace detail

/// Parses the annotation document (see README for the schema) and resolves
/// every label against the vocabulary.
inline std::vector<ClipAnnotation> parse_annotations(const nlohmann::json& doc, const Vocabulary& vocab) {
    if (!doc.is_array()) throw SchemaError("<document>", "$", "top level must be a list of clips");
    std::vector<ClipAnnotation> clips;
    for (const auto& entry : doc) {
        if (!entry.is_object()) throw SchemaError("<document>", "clip", "clip entry must be an object");
        const auto& id_field = detail::require_field(entry, "clip_id", "<unknown>");
        if (!id_field.is_string()) throw SchemaError("<unknown>", "clip_id", "must be a string");
        ClipAnnotation clip;
        clip.clip_id = id_field.get<std::string>();

        const auto& segs = detail::require_field(entry, "segments", clip.clip_id);
        if (!segs.is_array()) throw SchemaError(clip.clip_id, "segments", "must be a list");
        int idx = 0;
        int prev_start = -1;
        for (const auto& seg : segs) {
            const std::string where = "segments[" + std::to_string(idx) + "]";
            if (!seg.is_object()) throw SchemaError(clip.clip_id, where, "must be an object");
            const auto& start = detail::require_field(seg, "start_frame", clip.clip_id);
            const auto& end = detail::require_field(seg, "end_frame", clip.clip_id);
            if (!start.is_number_integer() || !end.is_number_integer())
                throw SchemaError(clip.clip_id, where, "frame bounds must be integers");
            ActionSegment s;
            s.start_frame = start.get<int>();
            s.end_frame = end.get<int>();
            s.action_idx = idx;
            if (s.start_frame < 0) throw SchemaError(clip.clip_id, where + ".start_frame", "negative");
            if (s.end_frame <= s.start_frame)
                throw SchemaError(clip.clip_id, where + ".end_frame", "must exceed start_frame");
            if (s.start_frame < prev_start)
                throw SchemaError(clip.clip_id, where + ".start_frame", "segments not sorted");
            prev_start = s.start_frame;
            const auto& verb = detail::require_field(seg, "verb", clip.clip_id);
            const auto& noun = detail::require_field(seg, "noun", clip.clip_id);
            if (!verb.is_string() || !noun.is_string())
                throw SchemaError(clip.clip_id, where, "verb/noun must be strings");
            auto label = lookup(vocab, verb.get<std::string>(), noun.get<std::string>());
            if (!label) {
                auto v = verb.get<std::string>();
                bool verb_known = false;
                try {
                    verb_known = vocab.verb_id(canonicalize(v)).has_value();
                } catch (const EmptyToken&) {
                }
                throw UnknownLabel(clip.clip_id, idx, verb_known ? noun.get<std::string>() : v);
            }
            s.label = *label;
            clip.segments.push_back(s);
            ++idx;
        }

        if (auto it = entry.find("narrations"); it != entry.end() && !it->is_null()) {
            if (!it->is_object()) throw SchemaError(clip.clip_id, "narrations", "must be an object");
            for (const auto& [key, value] : it->items()) {
                int nidx = 0;
                try {
                    std::size_t pos = 0;
                    nidx = std::stoi(key, &pos);
                    if (pos != key.size()) throw std::invalid_argument(key);
                } catch (const std::exception&) {
                    throw SchemaError(clip.clip_id, "narrations." + key, "key must be an action index");
                }
                if (nidx < 0 || nidx >= static_cast<int>(clip.segments.size()))
                    throw SchemaError(clip.clip_id, "narrations." + key, "index out of range");
                if (!value.is_string())
                    throw SchemaError(clip.clip_id, "narrations." + key, "must be a string");
                clip.narrations[nidx] = value.get<std::string>();
            }
        }
        clips.push_back(std::move(clip));
    }
    return clips;
}

inline std::vector<ClipAnnotation> load_annotations(const std::string& path, const Vocabulary& vocab) {
    std::ifstream in(path);
    if (!in) throw IoError(path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError("<document>", path, e.what());
    }
    return parse_annotations(doc, vocab);
}

}  // namespace palm
