#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "palm/backends.hpp"
#include "palm/dataset.hpp"
#include "palm/errors.hpp"
#include "palm/evaluation.hpp"
#include "palm/hash.hpp"
#include "palm/inference.hpp"
#include "palm/mock_backends.hpp"
#include "palm/parallel.hpp"
#include "palm/prompting.hpp"
#include "palm/selection.hpp"
#include "palm/vocabulary.hpp"

namespace palm {

enum class SelectionStrategy { mmr, random_uniform };

inline std::string to_string(SelectionStrategy s) {
    return s == SelectionStrategy::mmr ? "mmr" : "random";
}

inline SelectionStrategy selection_strategy_from_string(const std::string& s) {
    if (s == "mmr") return SelectionStrategy::mmr;
    if (s == "random") return SelectionStrategy::random_uniform;
    throw ConfigError("unknown selection strategy: " + s);
}

inline std::string to_string(EditVariant v) {
    return v == EditVariant::levenshtein ? "levenshtein" : "osa";
}

inline EditVariant edit_variant_from_string(const std::string& s) {
    if (s == "levenshtein") return EditVariant::levenshtein;
    if (s == "osa") return EditVariant::osa;
    throw ConfigError("unknown edit distance variant: " + s);
}

struct BackendSettings {
    bool mock = false;
    std::size_t mock_embed_dim = 16;
    std::optional<std::string> caption_url;
    std::optional<std::string> embed_url;
    std::optional<std::string> llm_url;
    std::optional<std::string> api_token;  // kept out of every output file
    int timeout_ms = 30000;
    int max_retries = 2;
    int retry_backoff_ms = 200;
    std::optional<std::string> cache_dir;
};

/// Full run configuration. Paths are kept exactly as the user wrote them;
/// input paths resolve against the config file's directory, output_dir
/// against the working directory.
struct RunConfig {
    std::string annotations;
    std::optional<std::string> train_annotations;
    std::string verbs;
    std::string nouns;
    std::optional<std::string> captions;
    std::optional<std::string> recognized;
    std::optional<std::string> embedding_cache;
    std::string output_dir = "out";

    PromptConfig prompt;
    double mmr_lambda = 0.5;
    SamplingConfig sampling;
    BackendSettings backends;
    SelectionStrategy selection = SelectionStrategy::mmr;
    EditVariant ed_variant = EditVariant::levenshtein;

    std::uint64_t seed = 0;
    int anchor = 7;
    bool all_anchors = false;
    int jobs = 1;
    bool dump_prompts = false;

    std::string base_dir = ".";  // not serialized
    // resolved as-is and kept out of embedded configs; used by ablate to
    // share one candidate-embedding cache across cells
    std::optional<std::string> embedding_cache_override;

    void validate() const {
        prompt.validate();
        sampling.validate();
        if (mmr_lambda < 0.0 || mmr_lambda > 1.0) throw ConfigError("lambda must be in [0, 1]");
        if (anchor < 0) throw ConfigError("anchor must be >= 0");
        if (jobs < 1) throw ConfigError("jobs must be >= 1");
        if (annotations.empty()) throw ConfigError("annotations path is required");
        if (verbs.empty() || nouns.empty()) throw ConfigError("verb and noun vocabulary paths are required");
    }

    std::string resolve_input(const std::string& path) const {
        std::filesystem::path p(path);
        if (p.is_absolute()) return path;
        return (std::filesystem::path(base_dir) / p).string();
    }

    std::filesystem::path out_dir() const { return std::filesystem::path(output_dir); }
};

namespace detail {

inline nlohmann::json opt_str(const std::optional<std::string>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

inline std::optional<std::string> opt_str_from(const nlohmann::json& doc, const char* key) {
    auto it = doc.find(key);
    if (it == doc.end() || it->is_null()) return std::nullopt;
    if (!it->is_string()) throw ConfigError(std::string("config field '") + key + "' must be a string");
    return it->get<std::string>();
}

}  // namespace detail

/// Serializes everything that affects results (the API token stays out).
inline nlohmann::json to_config_json(const RunConfig& c) {
    nlohmann::json doc;
    doc["annotations"] = c.annotations;
    doc["train_annotations"] = detail::opt_str(c.train_annotations);
    doc["verbs"] = c.verbs;
    doc["nouns"] = c.nouns;
    doc["captions"] = detail::opt_str(c.captions);
    doc["recognized"] = detail::opt_str(c.recognized);
    doc["embedding_cache"] = detail::opt_str(c.embedding_cache);
    doc["output_dir"] = c.output_dir;
    doc["prompt"] = {{"n", c.prompt.n},
                     {"z", c.prompt.z},
                     {"n_prime_cap", c.prompt.n_prime_cap},
                     {"num_examples", c.prompt.num_examples},
                     {"include_narrations", c.prompt.include_narrations},
                     {"include_actions", c.prompt.include_actions},
                     {"instruction_template", c.prompt.instruction_template}};
    doc["selection"] = {{"strategy", to_string(c.selection)}, {"lambda", c.mmr_lambda}};
    doc["sampling"] = {{"k", c.sampling.k},
                       {"temperature", c.sampling.temperature},
                       {"max_new_tokens", c.sampling.max_new_tokens},
                       {"seed", c.sampling.seed ? nlohmann::json(*c.sampling.seed) : nlohmann::json(nullptr)}};
    doc["backends"] = {{"mock", c.backends.mock},
                       {"mock_embed_dim", c.backends.mock_embed_dim},
                       {"caption_url", detail::opt_str(c.backends.caption_url)},
                       {"embed_url", detail::opt_str(c.backends.embed_url)},
                       {"llm_url", detail::opt_str(c.backends.llm_url)},
                       {"timeout_ms", c.backends.timeout_ms},
                       {"max_retries", c.backends.max_retries},
                       {"retry_backoff_ms", c.backends.retry_backoff_ms},
                       {"cache_dir", detail::opt_str(c.backends.cache_dir)}};
    doc["edit_distance"] = to_string(c.ed_variant);
    doc["seed"] = c.seed;
    doc["anchor"] = c.anchor;
    doc["all_anchors"] = c.all_anchors;
    doc["jobs"] = c.jobs;
    doc["dump_prompts"] = c.dump_prompts;
    return doc;
}

inline RunConfig config_from_json(const nlohmann::json& doc, const std::string& base_dir = ".") {
    if (!doc.is_object()) throw ConfigError("config document must be a JSON object");
    RunConfig c;
    c.base_dir = base_dir;
    c.annotations = doc.value("annotations", c.annotations);
    c.train_annotations = detail::opt_str_from(doc, "train_annotations");
    c.verbs = doc.value("verbs", c.verbs);
    c.nouns = doc.value("nouns", c.nouns);
    c.captions = detail::opt_str_from(doc, "captions");
    c.recognized = detail::opt_str_from(doc, "recognized");
    c.embedding_cache = detail::opt_str_from(doc, "embedding_cache");
    c.output_dir = doc.value("output_dir", c.output_dir);
    if (auto it = doc.find("prompt"); it != doc.end()) {
        c.prompt.n = it->value("n", c.prompt.n);
        c.prompt.z = it->value("z", c.prompt.z);
        c.prompt.n_prime_cap = it->value("n_prime_cap", c.prompt.n_prime_cap);
        c.prompt.num_examples = it->value("num_examples", c.prompt.num_examples);
        c.prompt.include_narrations = it->value("include_narrations", c.prompt.include_narrations);
        c.prompt.include_actions = it->value("include_actions", c.prompt.include_actions);
        c.prompt.instruction_template = it->value("instruction_template", c.prompt.instruction_template);
    }
    if (auto it = doc.find("selection"); it != doc.end()) {
        c.selection = selection_strategy_from_string(it->value("strategy", to_string(c.selection)));
        c.mmr_lambda = it->value("lambda", c.mmr_lambda);
    }
    if (auto it = doc.find("sampling"); it != doc.end()) {
        c.sampling.k = it->value("k", c.sampling.k);
        c.sampling.temperature = it->value("temperature", c.sampling.temperature);
        c.sampling.max_new_tokens = it->value("max_new_tokens", c.sampling.max_new_tokens);
        if (it->contains("seed") && !(*it)["seed"].is_null())
            c.sampling.seed = (*it)["seed"].get<std::int64_t>();
    }
    if (auto it = doc.find("backends"); it != doc.end()) {
        c.backends.mock = it->value("mock", c.backends.mock);
        c.backends.mock_embed_dim = it->value("mock_embed_dim", c.backends.mock_embed_dim);
        c.backends.caption_url = detail::opt_str_from(*it, "caption_url");
        c.backends.embed_url = detail::opt_str_from(*it, "embed_url");
        c.backends.llm_url = detail::opt_str_from(*it, "llm_url");
        c.backends.timeout_ms = it->value("timeout_ms", c.backends.timeout_ms);
        c.backends.max_retries = it->value("max_retries", c.backends.max_retries);
        c.backends.retry_backoff_ms = it->value("retry_backoff_ms", c.backends.retry_backoff_ms);
        c.backends.cache_dir = detail::opt_str_from(*it, "cache_dir");
    }
    c.ed_variant = edit_variant_from_string(doc.value("edit_distance", to_string(c.ed_variant)));
    c.seed = doc.value("seed", c.seed);
    c.anchor = doc.value("anchor", c.anchor);
    c.all_anchors = doc.value("all_anchors", c.all_anchors);
    c.jobs = doc.value("jobs", c.jobs);
    c.dump_prompts = doc.value("dump_prompts", c.dump_prompts);
    return c;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError(path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
    }
    return config_from_json(doc, std::filesystem::path(path).parent_path().string());
}

inline nlohmann::json run_metadata(const RunConfig& c) {
    const nlohmann::json config = to_config_json(c);
    return {{"config", config},
            {"config_hash", to_hex(fnv1a64(config.dump()))},
            {"seed", c.seed}};
}

// ---------------------------------------------------------------------------
// backend assembly

struct BackendSet {
    std::unique_ptr<CaptionBackend> caption_impl;
    std::unique_ptr<CachingCaptionBackend> caption_cache;
    std::unique_ptr<EmbeddingBackend> embedding;
    std::unique_ptr<CompletionBackend> completion;

    CaptionBackend& caption() { return caption_cache ? static_cast<CaptionBackend&>(*caption_cache)
                                                     : *caption_impl; }
};

namespace detail {

inline std::optional<std::string> env_value(const char* name) {
    const char* v = std::getenv(name);
    if (!v || !*v) return std::nullopt;
    return std::string(v);
}

inline BackendConfig http_config(const BackendSettings& s, const std::optional<std::string>& url,
                                 const char* env_name, const char* service) {
    std::optional<std::string> endpoint = url ? url : env_value(env_name);
    if (!endpoint)
        throw ConfigError(std::string(service) + " endpoint missing: set it in the config or via " + env_name);
    BackendConfig c;
    c.endpoint = *endpoint;
    c.timeout = std::chrono::milliseconds(s.timeout_ms);
    c.max_retries = s.max_retries;
    c.retry_backoff = std::chrono::milliseconds(s.retry_backoff_ms);
    c.auth_token = s.api_token ? s.api_token : env_value("PALM_API_TOKEN");
    return c;
}

}  // namespace detail

/// Builds the three service clients: deterministic in-process mocks, or
/// HTTP clients against the configured (or PALM_*_URL) endpoints. The
/// caption client is wrapped in the on-disk cache.
inline BackendSet make_backends(const RunConfig& cfg) {
    BackendSet set;
    if (cfg.backends.mock) {
        set.caption_impl = std::make_unique<MockCaptionBackend>();
        set.embedding = std::make_unique<MockEmbeddingBackend>(cfg.backends.mock_embed_dim);
        set.completion = std::make_unique<EchoCompletionBackend>(cfg.prompt.z);
    } else {
        set.caption_impl = std::make_unique<HttpCaptionBackend>(
            detail::http_config(cfg.backends, cfg.backends.caption_url, "PALM_CAPTION_URL", "caption"));
        set.embedding = std::make_unique<HttpEmbeddingBackend>(
            detail::http_config(cfg.backends, cfg.backends.embed_url, "PALM_EMBED_URL", "embedding"));
        set.completion = std::make_unique<HttpCompletionBackend>(
            detail::http_config(cfg.backends, cfg.backends.llm_url, "PALM_LLM_URL", "completion"));
    }
    const std::filesystem::path cache_dir =
        cfg.backends.cache_dir ? std::filesystem::path(cfg.resolve_input(*cfg.backends.cache_dir))
                               : cfg.out_dir();
    std::filesystem::create_directories(cache_dir);
    set.caption_cache = std::make_unique<CachingCaptionBackend>((cache_dir / "caption_cache.jsonl").string(),
                                                                *set.caption_impl);
    return set;
}

// ---------------------------------------------------------------------------
// shared pipeline steps

inline Vocabulary load_pipeline_vocabulary(const RunConfig& cfg) {
    return load_vocabulary(cfg.resolve_input(cfg.verbs), cfg.resolve_input(cfg.nouns));
}

/// Overlays a captions sidecar (the cmd_caption output) onto the clips.
inline void merge_caption_sidecar(std::vector<ClipAnnotation>& clips, const nlohmann::json& sidecar) {
    if (!sidecar.contains("clips") || !sidecar["clips"].is_object())
        throw ConfigError("captions sidecar has no 'clips' object");
    for (ClipAnnotation& clip : clips) {
        auto it = sidecar["clips"].find(clip.clip_id);
        if (it == sidecar["clips"].end()) continue;
        for (const auto& [key, value] : it->items()) {
            int idx = -1;
            try {
                idx = std::stoi(key);
            } catch (const std::exception&) {
                throw ConfigError("captions sidecar key '" + key + "' is not an action index");
            }
            if (idx >= 0 && idx < static_cast<int>(clip.segments.size()) && value.is_string())
                clip.narrations[idx] = value.get<std::string>();
        }
    }
}

inline std::vector<ClipAnnotation> load_eval_clips(const RunConfig& cfg, const Vocabulary& vocab) {
    std::vector<ClipAnnotation> clips = load_annotations(cfg.resolve_input(cfg.annotations), vocab);
    if (cfg.captions) {
        std::ifstream in(cfg.resolve_input(*cfg.captions));
        if (!in) throw IoError(cfg.resolve_input(*cfg.captions));
        nlohmann::json sidecar;
        in >> sidecar;
        merge_caption_sidecar(clips, sidecar);
    }
    return clips;
}

struct QueryPlanEntry {
    std::size_t clip_index = 0;
    int anchor = 0;
};

/// One query per clip at the configured anchor, or a sweep over every
/// anchor that still leaves Z ground-truth actions. Short clips are skipped
/// with a diagnostic.
inline std::vector<QueryPlanEntry> plan_queries(const std::vector<ClipAnnotation>& clips,
                                                const RunConfig& cfg) {
    std::vector<QueryPlanEntry> plan;
    for (std::size_t ci = 0; ci < clips.size(); ++ci) {
        const int len = static_cast<int>(clips[ci].segments.size());
        const int last_anchor = len - cfg.prompt.z - 1;
        if (cfg.anchor > last_anchor) {
            std::cerr << "warning: clip '" << clips[ci].clip_id << "' has only " << len
                      << " actions; skipping (needs anchor " << cfg.anchor << " plus " << cfg.prompt.z
                      << " future actions)\n";
            continue;
        }
        if (cfg.all_anchors) {
            for (int a = cfg.anchor; a <= last_anchor; ++a) plan.push_back({ci, a});
        } else {
            plan.push_back({ci, cfg.anchor});
        }
    }
    return plan;
}

namespace detail {

inline std::uint64_t query_seed(std::uint64_t run_seed, const ExampleRef& ref) {
    std::uint64_t state = run_seed ^ fnv1a64(ref.clip_id + ":" + std::to_string(ref.anchor));
    return splitmix64(state);
}

inline std::int64_t sampling_seed_for(const RunConfig& cfg, const ExampleRef& ref) {
    if (cfg.sampling.seed) return *cfg.sampling.seed;
    return static_cast<std::int64_t>(query_seed(cfg.seed, ref) >> 1);
}

}  // namespace detail

/// Candidate pool plus the embeddings MMR needs. Pool examples come from
/// the train annotations when given, otherwise from the evaluation clips
/// with the query's own clip excluded at selection time.
struct CandidatePool {
    std::vector<TrainingExample> examples;
    bool from_eval_clips = false;
    EmbeddingCache embeddings;
};

inline CandidatePool build_candidate_pool(const RunConfig& cfg, const Vocabulary& vocab,
                                          const std::vector<ClipAnnotation>& eval_clips,
                                          EmbeddingBackend& embedding) {
    CandidatePool pool;
    if (cfg.train_annotations) {
        std::vector<ClipAnnotation> train = load_annotations(cfg.resolve_input(*cfg.train_annotations), vocab);
        if (cfg.captions) {
            // the sidecar may also carry captions for training clips
            std::ifstream in(cfg.resolve_input(*cfg.captions));
            if (in) {
                nlohmann::json sidecar;
                in >> sidecar;
                merge_caption_sidecar(train, sidecar);
            }
        }
        pool.examples = enumerate_training_examples(train, cfg.prompt.n, cfg.prompt.z);
    } else {
        pool.examples = enumerate_training_examples(eval_clips, cfg.prompt.n, cfg.prompt.z);
        pool.from_eval_clips = true;
    }

    const bool needs_embeddings =
        cfg.selection == SelectionStrategy::mmr && cfg.prompt.num_examples > 0 && !pool.examples.empty();
    if (!needs_embeddings) return pool;

    const std::optional<std::string> cache_path =
        cfg.embedding_cache_override
            ? cfg.embedding_cache_override
            : (cfg.embedding_cache ? std::optional<std::string>(cfg.resolve_input(*cfg.embedding_cache))
                                   : std::nullopt);
    if (cache_path && std::filesystem::exists(*cache_path))
        pool.embeddings = EmbeddingCache::load(*cache_path);

    bool added = false;
    for (const TrainingExample& te : pool.examples) {
        const ExampleRef ref{te.clip_id, te.anchor};
        if (pool.embeddings.find(ref)) continue;
        pool.embeddings.put(ref, embedding.embed(embedding_text(te.example)));
        added = true;
    }
    if (cache_path && added) {
        std::filesystem::create_directories(std::filesystem::path(*cache_path).parent_path());
        pool.embeddings.save(*cache_path);
    }
    return pool;
}

/// Picks the few-shot examples for one query: greedy marginal relevance over
/// cached candidate embeddings, or a seeded uniform draw.
inline std::vector<ExampleRef> select_example_refs(const Query& query, const CandidatePool& pool,
                                                   const RunConfig& cfg, EmbeddingBackend& embedding) {
    if (cfg.prompt.num_examples == 0) return {};
    std::vector<std::size_t> usable;
    for (std::size_t i = 0; i < pool.examples.size(); ++i) {
        if (pool.from_eval_clips && pool.examples[i].clip_id == query.clip_id) continue;
        usable.push_back(i);
    }
    if (usable.empty()) throw NoCandidates();

    if (cfg.selection == SelectionStrategy::random_uniform) {
        std::mt19937_64 rng(detail::query_seed(cfg.seed, {query.clip_id, query.anchor_action_idx}));
        const std::size_t take = std::min<std::size_t>(usable.size(),
                                                       static_cast<std::size_t>(cfg.prompt.num_examples));
        // partial Fisher-Yates; raw modulo keeps the draw platform-stable
        for (std::size_t i = 0; i < take; ++i) {
            const std::size_t j = i + static_cast<std::size_t>(rng() % (usable.size() - i));
            std::swap(usable[i], usable[j]);
        }
        std::vector<ExampleRef> refs;
        for (std::size_t i = 0; i < take; ++i)
            refs.push_back({pool.examples[usable[i]].clip_id, pool.examples[usable[i]].anchor});
        return refs;
    }

    std::vector<std::pair<ExampleRef, Embedding>> candidates;
    candidates.reserve(usable.size());
    for (std::size_t i : usable) {
        const ExampleRef ref{pool.examples[i].clip_id, pool.examples[i].anchor};
        const Embedding* emb = pool.embeddings.find(ref);
        if (!emb)
            throw IncompleteRun(ref.clip_id, ref.anchor, "has no candidate embedding");
        candidates.emplace_back(ref, *emb);
    }
    const Embedding query_embedding = embedding.embed(embedding_text(query));
    return mmr_select(query_embedding, candidates, {cfg.mmr_lambda, cfg.prompt.num_examples});
}

// ---------------------------------------------------------------------------
// caption command

struct CaptionOutcome {
    std::size_t clips = 0;
    std::size_t captions = 0;
    std::filesystem::path sidecar_path;
};

/// Captions the middle frame of every segment and writes the narrations
/// sidecar. Repeat runs are served from the on-disk caption cache.
inline CaptionOutcome cmd_caption(const RunConfig& cfg, CaptionBackend& caption) {
    const Vocabulary vocab = load_pipeline_vocabulary(cfg);
    const std::vector<ClipAnnotation> clips =
        load_annotations(cfg.resolve_input(cfg.annotations), vocab);

    nlohmann::json out_clips = nlohmann::json::object();
    CaptionOutcome outcome;
    for (const ClipAnnotation& clip : clips) {
        nlohmann::json per_clip = nlohmann::json::object();
        for (const ActionSegment& segment : clip.segments) {
            per_clip[std::to_string(segment.action_idx)] =
                caption.caption(clip.clip_id, middle_frame(segment));
            ++outcome.captions;
        }
        out_clips[clip.clip_id] = std::move(per_clip);
        ++outcome.clips;
    }

    std::filesystem::create_directories(cfg.out_dir());
    outcome.sidecar_path = cfg.out_dir() / "captions.json";
    std::ofstream out(outcome.sidecar_path, std::ios::binary);
    if (!out) throw IoError(outcome.sidecar_path.string());
    out << nlohmann::json{{"run", run_metadata(cfg)}, {"clips", out_clips}}.dump(2) << '\n';
    return outcome;
}

// ---------------------------------------------------------------------------
// predict command

struct PredictOutcome {
    std::size_t queries = 0;
    std::size_t skipped_resume = 0;
    std::size_t full_fallback_completions = 0;  // completions that parsed to zero pairs
    std::filesystem::path predictions_path;
};

namespace detail {

inline nlohmann::json sequences_to_json(const PredictionSet& set, const Vocabulary& vocab) {
    nlohmann::json sequences = nlohmann::json::array();
    for (const ActionSequence& seq : set.sequences) {
        nlohmann::json one = nlohmann::json::array();
        for (const ActionLabel& label : seq)
            one.push_back({vocab.verb(label.verb_id), vocab.noun(label.noun_id)});
        sequences.push_back(std::move(one));
    }
    return sequences;
}

inline nlohmann::json stats_to_json(const std::vector<ParseStats>& stats) {
    nlohmann::json rows = nlohmann::json::array();
    for (const ParseStats& s : stats)
        rows.push_back({{"pairs_seen", s.pairs_seen},
                        {"pairs_in_vocab", s.pairs_in_vocab},
                        {"padded", s.padded}});
    return rows;
}

}  // namespace detail

/// Runs the full few-shot prediction loop and writes predictions.jsonl:
/// one header line with the run metadata, then one row per query. A backend
/// failure flushes the completed prefix plus a resume manifest and raises
/// IncompleteRun; --resume skips rows already on disk.
inline PredictOutcome cmd_predict(const RunConfig& cfg, EmbeddingBackend& embedding,
                                  CompletionBackend& completion, bool resume = false) {
    cfg.validate();
    const Vocabulary vocab = load_pipeline_vocabulary(cfg);
    std::vector<ClipAnnotation> clips = load_eval_clips(cfg, vocab);
    const CandidatePool pool = build_candidate_pool(cfg, vocab, clips, embedding);
    const std::vector<QueryPlanEntry> plan = plan_queries(clips, cfg);

    std::filesystem::create_directories(cfg.out_dir());
    const std::filesystem::path predictions_path = cfg.out_dir() / "predictions.jsonl";
    const std::filesystem::path manifest_path = cfg.out_dir() / "predict_manifest.json";
    const nlohmann::json metadata = run_metadata(cfg);

    std::set<ExampleRef> done;
    if (resume && std::filesystem::exists(predictions_path)) {
        std::ifstream in(predictions_path);
        std::string line;
        bool header = true;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const nlohmann::json row = nlohmann::json::parse(line);
            if (header) {
                header = false;
                if (row.value("run", nlohmann::json::object()).value("config_hash", "") !=
                    metadata["config_hash"].get<std::string>())
                    throw ConfigError("cannot resume: predictions.jsonl was produced by a different config");
                continue;
            }
            done.insert({row.at("clip_id").get<std::string>(), row.at("anchor").get<int>()});
        }
    }

    std::vector<std::optional<std::string>> rows(plan.size());
    std::vector<std::size_t> fallbacks(plan.size(), 0);
    PredictOutcome outcome;
    outcome.predictions_path = predictions_path;

    if (cfg.dump_prompts) std::filesystem::create_directories(cfg.out_dir() / "prompts");

    std::map<ExampleRef, const Example*> by_ref;
    for (const TrainingExample& te : pool.examples) by_ref[{te.clip_id, te.anchor}] = &te.example;

    std::exception_ptr failure;
    try {
        run_indexed(plan.size(), cfg.jobs, [&](std::size_t i) {
            const ClipAnnotation& clip = clips[plan[i].clip_index];
            const ExampleRef ref{clip.clip_id, plan[i].anchor};
            if (done.count(ref)) {
                rows[i] = std::nullopt;
                return;
            }
            const Query query = build_query(clip, plan[i].anchor, cfg.prompt.n_prime_cap);
            const std::vector<ExampleRef> refs = select_example_refs(query, pool, cfg, embedding);

            std::vector<std::string> rendered;
            for (const ExampleRef& r : refs)
                rendered.push_back(render_example(*by_ref.at(r), cfg.prompt, vocab));

            const PromptDocument prompt =
                assemble_prompt(render_instruction(cfg.prompt), rendered,
                                render_query(query, cfg.prompt, vocab), refs, ref);
            if (cfg.dump_prompts) {
                const std::string stem =
                    (cfg.out_dir() / "prompts" / (ref.clip_id + "_" + std::to_string(ref.anchor))).string();
                write_prompt_files(prompt, stem, metadata);
            }

            SamplingConfig sampling = cfg.sampling;
            sampling.seed = detail::sampling_seed_for(cfg, ref);
            const PredictionSet set = predict(prompt, query, vocab, sampling, cfg.prompt.z, completion);

            for (const ParseStats& s : set.parse_stats)
                if (s.pairs_in_vocab == 0) ++fallbacks[i];

            nlohmann::json example_ids = nlohmann::json::array();
            for (const ExampleRef& r : refs) example_ids.push_back({r.clip_id, r.anchor});
            const nlohmann::json row{{"clip_id", ref.clip_id},
                                     {"anchor", ref.anchor},
                                     {"example_ids", example_ids},
                                     {"sequences", detail::sequences_to_json(set, vocab)},
                                     {"parse_stats", detail::stats_to_json(set.parse_stats)}};
            rows[i] = row.dump();
        });
    } catch (...) {
        failure = std::current_exception();
    }

    const bool fresh = !resume || !std::filesystem::exists(predictions_path);
    std::ofstream out(predictions_path, fresh ? std::ios::binary : (std::ios::binary | std::ios::app));
    if (!out) throw IoError(predictions_path.string());
    if (fresh) out << nlohmann::json{{"run", metadata}}.dump() << '\n';

    nlohmann::json completed = nlohmann::json::array();
    std::optional<ExampleRef> first_missing;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const ExampleRef ref{clips[plan[i].clip_index].clip_id, plan[i].anchor};
        if (done.count(ref)) {
            ++outcome.skipped_resume;
            completed.push_back({ref.clip_id, ref.anchor});
            continue;
        }
        if (!rows[i]) {  // completed prefix only keeps the file ordered
            first_missing = ref;
            break;
        }
        out << *rows[i] << '\n';
        outcome.full_fallback_completions += fallbacks[i];
        completed.push_back({ref.clip_id, ref.anchor});
    }
    out.flush();
    outcome.queries = completed.size();

    if (failure) {
        std::string reason = "backend failure";
        try {
            std::rethrow_exception(failure);
        } catch (const std::exception& e) {
            reason = e.what();
        }
        std::ofstream manifest(manifest_path, std::ios::binary);
        manifest << nlohmann::json{{"run", metadata}, {"completed", completed}, {"error", reason}}.dump(2)
                 << '\n';
        const ExampleRef ref = first_missing.value_or(ExampleRef{"<none>", -1});
        throw IncompleteRun(ref.clip_id, ref.anchor,
                            "not predicted; partial progress saved for --resume: " + reason);
    }
    std::error_code ec;
    std::filesystem::remove(manifest_path, ec);
    return outcome;
}

// ---------------------------------------------------------------------------
// evaluate command

struct EvaluateOutcome {
    EvalReport report;
    std::filesystem::path report_json_path;
    std::filesystem::path report_csv_path;
};

namespace detail {

inline ActionLabel label_from_tokens(const nlohmann::json& pair, const Vocabulary& vocab,
                                     const std::string& clip_id, const char* field) {
    if (!pair.is_array() || pair.size() != 2)
        throw SchemaError(clip_id, field, "expected [verb, noun]");
    auto label = lookup(vocab, pair[0].get<std::string>(), pair[1].get<std::string>());
    if (!label) throw UnknownLabel(clip_id, -1, pair[0].get<std::string>() + "/" + pair[1].get<std::string>());
    return *label;
}

}  // namespace detail

/// Scores predictions.jsonl against the annotation ground truth, with
/// recognition accuracies from the recognizer output when provided
/// (otherwise the ground-truth past is assumed, i.e. accuracy 1).
inline EvaluateOutcome cmd_evaluate(const RunConfig& cfg) {
    cfg.validate();
    const Vocabulary vocab = load_pipeline_vocabulary(cfg);
    const std::vector<ClipAnnotation> clips = load_eval_clips(cfg, vocab);
    const std::vector<QueryPlanEntry> plan = plan_queries(clips, cfg);

    const std::filesystem::path predictions_path = cfg.out_dir() / "predictions.jsonl";
    std::ifstream in(predictions_path);
    if (!in) throw IoError(predictions_path.string());

    std::map<ExampleRef, std::vector<ActionSequence>> predictions;
    nlohmann::json audit = nlohmann::json::array();
    nlohmann::json dump_run;
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const nlohmann::json row = nlohmann::json::parse(line);
        if (header) {
            header = false;
            dump_run = row.value("run", nlohmann::json::object());
            continue;
        }
        const ExampleRef ref{row.at("clip_id").get<std::string>(), row.at("anchor").get<int>()};
        std::vector<ActionSequence> sequences;
        for (const auto& seq : row.at("sequences")) {
            ActionSequence parsed;
            for (const auto& pair : seq)
                parsed.push_back(detail::label_from_tokens(pair, vocab, ref.clip_id, "sequences"));
            if (static_cast<int>(parsed.size()) != cfg.prompt.z)
                throw SchemaError(ref.clip_id, "sequences",
                                  "length " + std::to_string(parsed.size()) + " != z = " +
                                      std::to_string(cfg.prompt.z));
            sequences.push_back(std::move(parsed));
        }
        predictions[ref] = std::move(sequences);
        audit.push_back({{"clip_id", ref.clip_id},
                         {"anchor", ref.anchor},
                         {"example_ids", row.value("example_ids", nlohmann::json::array())}});
    }

    std::vector<GroundTruthQuery> queries;
    for (const QueryPlanEntry& entry : plan) {
        const ClipAnnotation& clip = clips[entry.clip_index];
        GroundTruthQuery q;
        q.ref = {clip.clip_id, entry.anchor};
        for (int i = entry.anchor + 1; i <= entry.anchor + cfg.prompt.z; ++i)
            q.future.push_back(clip.segments[static_cast<std::size_t>(i)].label);
        for (int i = 0; i <= entry.anchor; ++i)
            q.past.push_back(clip.segments[static_cast<std::size_t>(i)].label);
        queries.push_back(std::move(q));
    }

    std::map<ExampleRef, std::vector<ActionLabel>> recognized;
    if (cfg.recognized) {
        std::ifstream rec_in(cfg.resolve_input(*cfg.recognized));
        if (!rec_in) throw IoError(cfg.resolve_input(*cfg.recognized));
        nlohmann::json rec_doc;
        rec_in >> rec_doc;
        if (!rec_doc.is_array()) throw ConfigError("recognized actions file must be a JSON list");
        for (const auto& entry : rec_doc) {
            const ExampleRef ref{entry.at("clip_id").get<std::string>(), entry.at("anchor").get<int>()};
            std::vector<ActionLabel> labels;
            for (const auto& pair : entry.at("actions"))
                labels.push_back(detail::label_from_tokens(pair, vocab, ref.clip_id, "actions"));
            recognized[ref] = std::move(labels);
        }
    } else {
        for (const GroundTruthQuery& q : queries) recognized[q.ref] = q.past;
    }

    EvaluateOutcome outcome;
    outcome.report = evaluate_dataset(queries, predictions, recognized, cfg.ed_variant);

    nlohmann::json metadata = run_metadata(cfg);
    metadata["aggregation"] = "unweighted_mean_over_queries";
    metadata["example_ids_audit"] = audit;
    if (!dump_run.empty()) metadata["predictions_run"] = dump_run;

    std::filesystem::create_directories(cfg.out_dir());
    outcome.report_json_path = cfg.out_dir() / "report.json";
    outcome.report_csv_path = cfg.out_dir() / "report.csv";
    {
        std::ofstream out(outcome.report_json_path, std::ios::binary);
        if (!out) throw IoError(outcome.report_json_path.string());
        out << report_to_json(outcome.report, metadata).dump(2) << '\n';
    }
    {
        std::ofstream out(outcome.report_csv_path, std::ios::binary);
        if (!out) throw IoError(outcome.report_csv_path.string());
        out << report_to_csv(outcome.report,
                             "config=" + to_config_json(cfg).dump() +
                                 " config_hash=" + metadata["config_hash"].get<std::string>() +
                                 " seed=" + std::to_string(cfg.seed));
    }
    return outcome;
}

// ---------------------------------------------------------------------------
// regress command

struct RegressionCell {
    std::string x;  // accuracy column
    std::string y;  // edit distance column
    RegressionResult result;
};

struct RegressOutcome {
    std::vector<RegressionCell> cells;
    std::filesystem::path regress_json_path;
};

/// Univariate OLS of each edit-distance column on each accuracy column of
/// the per-clip table (six cells).
inline RegressOutcome cmd_regress(const RunConfig& cfg, const std::string& report_path = "") {
    const std::filesystem::path path =
        report_path.empty() ? cfg.out_dir() / "report.json" : std::filesystem::path(report_path);
    std::ifstream in(path);
    if (!in) throw IoError(path.string());
    nlohmann::json doc;
    in >> doc;
    const EvalReport report = report_from_json(doc);

    auto column = [&](auto getter) {
        std::vector<double> values;
        for (const QueryEval& row : report.per_clip) values.push_back(getter(row));
        return values;
    };
    const std::vector<std::pair<std::string, std::vector<double>>> xs = {
        {"verb_acc", column([](const QueryEval& r) { return r.verb_acc; })},
        {"noun_acc", column([](const QueryEval& r) { return r.noun_acc; })}};
    const std::vector<std::pair<std::string, std::vector<double>>> ys = {
        {"verb_ed", column([](const QueryEval& r) { return r.verb_ed; })},
        {"noun_ed", column([](const QueryEval& r) { return r.noun_ed; })},
        {"action_ed", column([](const QueryEval& r) { return r.action_ed; })}};

    RegressOutcome outcome;
    for (const auto& [yname, ycol] : ys)
        for (const auto& [xname, xcol] : xs)
            outcome.cells.push_back({xname, yname, ols_regression(xcol, ycol)});

    nlohmann::json cells = nlohmann::json::array();
    for (const RegressionCell& cell : outcome.cells)
        cells.push_back({{"x", cell.x},
                         {"y", cell.y},
                         {"coefficient", cell.result.coefficient},
                         {"stderr", cell.result.stderr_},
                         {"intercept", cell.result.intercept},
                         {"n", cell.result.n}});

    std::filesystem::create_directories(cfg.out_dir());
    outcome.regress_json_path = cfg.out_dir() / "regress.json";
    std::ofstream out(outcome.regress_json_path, std::ios::binary);
    if (!out) throw IoError(outcome.regress_json_path.string());
    out << nlohmann::json{{"run", run_metadata(cfg)}, {"cells", cells}}.dump(2) << '\n';
    return outcome;
}

inline std::string format_regression_table(const std::vector<RegressionCell>& cells) {
    auto find = [&](const std::string& y, const std::string& x) -> const RegressionCell& {
        for (const RegressionCell& cell : cells)
            if (cell.x == x && cell.y == y) return cell;
        throw ConfigError("missing regression cell " + y + " vs " + x);
    };
    std::string out = "              verb_acc              noun_acc\n";
    for (const std::string& y : {"verb_ed", "noun_ed", "action_ed"}) {
        std::string line = y;
        line.resize(12, ' ');
        for (const std::string& x : {"verb_acc", "noun_acc"}) {
            const RegressionCell& cell = find(y, x);
            std::string entry = "  " + format_double(cell.result.coefficient) + " (" +
                                format_double(cell.result.stderr_) + ")";
            line += entry;
        }
        out += line + "\n";
    }
    return out;
}

// ---------------------------------------------------------------------------
// ablate command

struct AblationAxes {
    bool narrations = false;
    bool actions = false;
    bool selection = false;
    std::vector<int> num_examples;  // empty = keep configured value
};

struct AblationCell {
    bool include_narrations = true;
    bool include_actions = true;
    SelectionStrategy selection = SelectionStrategy::mmr;
    int num_examples = 8;
    EvalReport report;
    std::string slug;
};

struct AblateOutcome {
    std::vector<AblationCell> cells;
    std::filesystem::path ablation_json_path;
};

/// Runs predict+evaluate over the cross-product of the requested axes,
/// sharing the embedding and caption caches across cells. Cells with both
/// prompt content blocks disabled are invalid and skipped.
inline AblateOutcome cmd_ablate(const RunConfig& cfg, const AblationAxes& axes, EmbeddingBackend& embedding,
                                CompletionBackend& completion) {
    cfg.validate();
    const std::vector<bool> narr_values =
        axes.narrations ? std::vector<bool>{true, false} : std::vector<bool>{cfg.prompt.include_narrations};
    const std::vector<bool> act_values =
        axes.actions ? std::vector<bool>{true, false} : std::vector<bool>{cfg.prompt.include_actions};
    const std::vector<SelectionStrategy> sel_values =
        axes.selection ? std::vector<SelectionStrategy>{SelectionStrategy::mmr, SelectionStrategy::random_uniform}
                       : std::vector<SelectionStrategy>{cfg.selection};
    const std::vector<int> ex_values =
        axes.num_examples.empty() ? std::vector<int>{cfg.prompt.num_examples} : axes.num_examples;

    // one embedding cache shared by every cell: the embedded text does not
    // depend on any ablated flag
    RunConfig base = cfg;
    if (!base.embedding_cache && !base.embedding_cache_override) {
        const auto shared = cfg.out_dir() / "ablate" / "embeddings.jsonl";
        base.embedding_cache_override = shared.string();
        std::filesystem::create_directories(shared.parent_path());
    }

    AblateOutcome outcome;
    for (bool narr : narr_values)
        for (bool act : act_values)
            for (SelectionStrategy sel : sel_values)
                for (int n_ex : ex_values) {
                    if (!narr && !act) continue;  // no prompt content: invalid cell
                    AblationCell cell;
                    cell.include_narrations = narr;
                    cell.include_actions = act;
                    cell.selection = sel;
                    cell.num_examples = n_ex;
                    cell.slug = std::string("narr") + (narr ? "1" : "0") + "_act" + (act ? "1" : "0") +
                                "_" + to_string(sel) + "_ex" + std::to_string(n_ex);

                    RunConfig cell_cfg = base;
                    cell_cfg.prompt.include_narrations = narr;
                    cell_cfg.prompt.include_actions = act;
                    cell_cfg.selection = sel;
                    cell_cfg.prompt.num_examples = n_ex;
                    cell_cfg.output_dir = (cfg.out_dir() / "ablate" / cell.slug).string();

                    cmd_predict(cell_cfg, embedding, completion);
                    cell.report = cmd_evaluate(cell_cfg).report;
                    outcome.cells.push_back(std::move(cell));
                }
    if (outcome.cells.empty())
        throw ConfigError("ablation produced no valid cells (both prompt content blocks disabled)");

    nlohmann::json cells = nlohmann::json::array();
    for (const AblationCell& cell : outcome.cells)
        cells.push_back({{"narrations", cell.include_narrations},
                         {"actions", cell.include_actions},
                         {"selection", to_string(cell.selection)},
                         {"num_examples", cell.num_examples},
                         {"verb_ed", cell.report.verb_ed},
                         {"noun_ed", cell.report.noun_ed},
                         {"action_ed", cell.report.action_ed},
                         {"n_queries", cell.report.n_queries}});

    std::filesystem::create_directories(cfg.out_dir());
    outcome.ablation_json_path = cfg.out_dir() / "ablation.json";
    std::ofstream out(outcome.ablation_json_path, std::ios::binary);
    if (!out) throw IoError(outcome.ablation_json_path.string());
    out << nlohmann::json{{"run", run_metadata(cfg)}, {"cells", cells}}.dump(2) << '\n';
    return outcome;
}

inline std::string format_ablation_table(const std::vector<AblationCell>& cells) {
    std::string out = "narrations  actions  selection  examples  verb_ed  noun_ed  action_ed\n";
    for (const AblationCell& cell : cells) {
        std::string line;
        line += cell.include_narrations ? "yes         " : "no          ";
        line += cell.include_actions ? "yes      " : "no       ";
        std::string sel = to_string(cell.selection);
        sel.resize(11, ' ');
        line += sel;
        std::string ex = std::to_string(cell.num_examples);
        ex.resize(10, ' ');
        line += ex;
        line += format_double(cell.report.verb_ed) + "  " + format_double(cell.report.noun_ed) + "  " +
                format_double(cell.report.action_ed);
        out += line + "\n";
    }
    return out;
}

}  // namespace palm
