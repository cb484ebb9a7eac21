#pragma once

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "palm/pipeline.hpp"

namespace palm::cli {

/// CLI flag values layered over the config file: flags > file > defaults.
struct Overrides {
    std::optional<std::string> annotations, train_annotations, verbs, nouns;
    std::optional<std::string> captions, recognized, embedding_cache, output_dir;
    std::optional<std::uint64_t> seed;
    std::optional<double> lambda;
    std::optional<int> k;
    std::optional<int> num_examples;
    std::optional<std::string> selection;
    bool no_narrations = false;
    bool no_actions = false;
    bool mock_backends = false;
    std::optional<int> anchor;
    bool all_anchors = false;
    std::optional<int> jobs;
    bool dump_prompts = false;
    std::optional<std::string> ed_variant;
    std::optional<double> temperature;
    std::optional<int> max_new_tokens;
    std::optional<std::int64_t> sampling_seed;
    std::optional<std::string> caption_url, embed_url, llm_url, api_token, cache_dir;
    std::optional<int> timeout_ms, max_retries, retry_backoff_ms;
};

inline void add_common_options(CLI::App* cmd, std::string& config_path, Overrides& o) {
    cmd->add_option("--config", config_path, "JSON config file; flags override its values");
    cmd->add_option("--annotations", o.annotations, "clip annotation file (JSON)");
    cmd->add_option("--train-annotations", o.train_annotations,
                    "separate candidate pool; defaults to the evaluation file with the query's clip excluded");
    cmd->add_option("--verbs", o.verbs, "verb vocabulary file");
    cmd->add_option("--nouns", o.nouns, "noun vocabulary file");
    cmd->add_option("--captions", o.captions, "captions sidecar to merge into the annotations");
    cmd->add_option("--recognized", o.recognized, "recognized past actions file (JSON)");
    cmd->add_option("--embedding-cache", o.embedding_cache, "candidate embedding cache file (JSONL)");
    cmd->add_option("--output-dir", o.output_dir, "output directory");
    cmd->add_option("--seed", o.seed, "run seed, recorded in every output");
    cmd->add_option("--lambda", o.lambda, "MMR balance parameter in [0,1]");
    cmd->add_option("--k", o.k, "completions sampled per query");
    cmd->add_option("--num-examples", o.num_examples, "few-shot examples per prompt");
    cmd->add_option("--selection", o.selection, "example selection strategy")
        ->check(CLI::IsMember({"mmr", "random"}));
    cmd->add_flag("--no-narrations", o.no_narrations, "drop Narrations blocks from prompts");
    cmd->add_flag("--no-actions", o.no_actions, "drop observed action lists from prompts");
    cmd->add_flag("--mock-backends", o.mock_backends, "use deterministic in-process backends");
    cmd->add_option("--anchor", o.anchor, "first query anchor (0-based action index)");
    cmd->add_flag("--all-anchors", o.all_anchors, "sweep every eligible anchor from --anchor upward");
    cmd->add_option("--jobs", o.jobs, "worker pool size for per-query stages");
    cmd->add_flag("--dump-prompts", o.dump_prompts, "write each prompt and its provenance sidecar");
    cmd->add_option("--ed-variant", o.ed_variant, "edit distance variant")
        ->check(CLI::IsMember({"levenshtein", "osa"}));
    cmd->add_option("--temperature", o.temperature, "sampling temperature");
    cmd->add_option("--max-new-tokens", o.max_new_tokens, "completion length limit");
    cmd->add_option("--sampling-seed", o.sampling_seed, "fixed base seed for completion sampling");
    cmd->add_option("--caption-url", o.caption_url, "caption service endpoint (or PALM_CAPTION_URL)");
    cmd->add_option("--embed-url", o.embed_url, "embedding service endpoint (or PALM_EMBED_URL)");
    cmd->add_option("--llm-url", o.llm_url, "completion service endpoint (or PALM_LLM_URL)");
    cmd->add_option("--api-token", o.api_token, "bearer token (or PALM_API_TOKEN)");
    cmd->add_option("--cache-dir", o.cache_dir, "directory for the caption response cache");
    cmd->add_option("--timeout-ms", o.timeout_ms, "per-request timeout");
    cmd->add_option("--max-retries", o.max_retries, "retries after a transient backend failure");
    cmd->add_option("--retry-backoff-ms", o.retry_backoff_ms, "sleep between retries");
}

inline RunConfig resolve_config(const std::string& config_path, const Overrides& o) {
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
    if (o.annotations) cfg.annotations = *o.annotations;
    if (o.train_annotations) cfg.train_annotations = o.train_annotations;
    if (o.verbs) cfg.verbs = *o.verbs;
    if (o.nouns) cfg.nouns = *o.nouns;
    if (o.captions) cfg.captions = o.captions;
    if (o.recognized) cfg.recognized = o.recognized;
    if (o.embedding_cache) cfg.embedding_cache = o.embedding_cache;
    if (o.output_dir) cfg.output_dir = *o.output_dir;
    if (o.seed) cfg.seed = *o.seed;
    if (o.lambda) cfg.mmr_lambda = *o.lambda;
    if (o.k) cfg.sampling.k = *o.k;
    if (o.num_examples) cfg.prompt.num_examples = *o.num_examples;
    if (o.selection) cfg.selection = selection_strategy_from_string(*o.selection);
    if (o.no_narrations) cfg.prompt.include_narrations = false;
    if (o.no_actions) cfg.prompt.include_actions = false;
    if (o.mock_backends) cfg.backends.mock = true;
    if (o.anchor) cfg.anchor = *o.anchor;
    if (o.all_anchors) cfg.all_anchors = true;
    if (o.jobs) cfg.jobs = *o.jobs;
    if (o.dump_prompts) cfg.dump_prompts = true;
    if (o.ed_variant) cfg.ed_variant = edit_variant_from_string(*o.ed_variant);
    if (o.temperature) cfg.sampling.temperature = *o.temperature;
    if (o.max_new_tokens) cfg.sampling.max_new_tokens = *o.max_new_tokens;
    if (o.sampling_seed) cfg.sampling.seed = o.sampling_seed;
    if (o.caption_url) cfg.backends.caption_url = o.caption_url;
    if (o.embed_url) cfg.backends.embed_url = o.embed_url;
    if (o.llm_url) cfg.backends.llm_url = o.llm_url;
    if (o.api_token) cfg.backends.api_token = o.api_token;
    if (o.cache_dir) cfg.backends.cache_dir = o.cache_dir;
    if (o.timeout_ms) cfg.backends.timeout_ms = *o.timeout_ms;
    if (o.max_retries) cfg.backends.max_retries = *o.max_retries;
    if (o.retry_backoff_ms) cfg.backends.retry_backoff_ms = *o.retry_backoff_ms;
    cfg.validate();

    // referenced input files must exist at validation time
    std::vector<std::string> inputs{cfg.annotations, cfg.verbs, cfg.nouns};
    if (cfg.train_annotations) inputs.push_back(*cfg.train_annotations);
    if (cfg.captions) inputs.push_back(*cfg.captions);
    if (cfg.recognized) inputs.push_back(*cfg.recognized);
    for (const std::string& path : inputs) {
        const std::string resolved = cfg.resolve_input(path);
        if (!std::filesystem::exists(resolved))
            throw ConfigError("referenced file does not exist: " + resolved);
    }
    return cfg;
}

inline int run(int argc, const char* const* argv) {
    CLI::App app{"palm: few-shot long-term action anticipation pipeline"};
    app.require_subcommand(1);

    std::string config_path;
    Overrides o;
    bool resume = false;
    std::string report_path;
    AblationAxes axes;

    CLI::App* caption = app.add_subcommand("caption", "caption the middle frame of every action segment");
    add_common_options(caption, config_path, o);

    CLI::App* predict = app.add_subcommand("predict", "select examples, render prompts, sample completions");
    add_common_options(predict, config_path, o);
    predict->add_flag("--resume", resume, "skip queries already present in predictions.jsonl");

    CLI::App* evaluate = app.add_subcommand("evaluate", "score predictions against ground truth");
    add_common_options(evaluate, config_path, o);

    CLI::App* ablate = app.add_subcommand("ablate", "predict+evaluate over a grid of prompt settings");
    add_common_options(ablate, config_path, o);
    ablate->add_flag("--axis-narrations", axes.narrations, "toggle Narrations blocks on/off");
    ablate->add_flag("--axis-actions", axes.actions, "toggle observed action lists on/off");
    ablate->add_flag("--axis-selection", axes.selection, "compare mmr and random selection");
    ablate->add_option("--axis-num-examples", axes.num_examples, "example counts to compare")
        ->delimiter(',');

    CLI::App* regress = app.add_subcommand("regress", "regress edit distances on recognition accuracy");
    add_common_options(regress, config_path, o);
    regress->add_option("--report", report_path, "evaluation report to analyze (default: <output-dir>/report.json)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        const RunConfig cfg = resolve_config(config_path, o);
        if (caption->parsed()) {
            BackendSet backends = make_backends(cfg);
            const CaptionOutcome outcome = cmd_caption(cfg, backends.caption());
            std::cout << "captioned " << outcome.clips << " clips (" << outcome.captions
                      << " captions, " << backends.caption_cache->hits() << " cache hits) -> "
                      << outcome.sidecar_path.string() << "\n";
            return 0;
        }
        if (predict->parsed()) {
            BackendSet backends = make_backends(cfg);
            const PredictOutcome outcome = cmd_predict(cfg, *backends.embedding, *backends.completion, resume);
            std::cout << "predicted " << outcome.queries << " queries -> "
                      << outcome.predictions_path.string() << "\n";
            if (outcome.skipped_resume > 0)
                std::cout << "resumed past " << outcome.skipped_resume << " completed queries\n";
            if (outcome.full_fallback_completions > 0) {
                std::cout << "warning: " << outcome.full_fallback_completions
                          << " completions parsed to zero pairs (padded with the fallback action)\n";
                return 1;
            }
            return 0;
        }
        if (evaluate->parsed()) {
            const EvaluateOutcome outcome = cmd_evaluate(cfg);
            std::cout << "verb_ed=" << format_double(outcome.report.verb_ed)
                      << " noun_ed=" << format_double(outcome.report.noun_ed)
                      << " action_ed=" << format_double(outcome.report.action_ed)
                      << " (n=" << outcome.report.n_queries << ")\n"
                      << "report -> " << outcome.report_json_path.string() << "\n";
            return 0;
        }
        if (ablate->parsed()) {
            BackendSet backends = make_backends(cfg);
            const AblateOutcome outcome = cmd_ablate(cfg, axes, *backends.embedding, *backends.completion);
            std::cout << format_ablation_table(outcome.cells)
                      << "table -> " << outcome.ablation_json_path.string() << "\n";
            return 0;
        }
        if (regress->parsed()) {
            const RegressOutcome outcome = cmd_regress(cfg, report_path);
            std::cout << format_regression_table(outcome.cells)
                      << "cells -> " << outcome.regress_json_path.string() << "\n";
            return 0;
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}

inline int run(const std::vector<std::string>& args) {
    std::vector<const char*> argv;
    argv.push_back("palm");
    for (const std::string& a : args) argv.push_back(a.c_str());
    return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace palm::cli
