#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "palm/dataset.hpp"
#include "palm/errors.hpp"
#include "palm/selection.hpp"
#include "palm/vocabulary.hpp"

namespace palm {

inline const std::string& default_instruction_template() {
    static const std::string tpl =
        "You are going to complete an action sequence, an action is one (verb, noun) pair. "
        "A complete sequence consists of {total_actions} actions. "
        "You will also be given a text description of the past actions for reference.";
    return tpl;
}

struct PromptConfig {
    int n = 8;                       // observed actions per example
    int z = 20;                      // future actions to predict
    int n_prime_cap = 12;            // query horizon cap
    int num_examples = 8;            // few-shot examples per prompt
    bool include_narrations = true;  // render "Narrations:" blocks
    bool include_actions = true;     // render observed-action lists
    std::string instruction_template = default_instruction_template();

    void validate() const {
        if (n < 1 || z < 1) throw ConfigError("prompt requires n >= 1 and z >= 1");
        if (num_examples < 0) throw ConfigError("num_examples must be >= 0");
        if (!include_narrations && !include_actions)
            throw ConfigError("at least one of narrations/actions must be included in the prompt");
    }
};

/// Fully rendered prompt plus the provenance needed to reproduce it.
struct PromptDocument {
    std::string text;
    std::vector<ExampleRef> example_ids;
    ExampleRef query_ref;
};

/// Instruction paragraph with the total sequence length (N+Z) substituted
/// for every "{total_actions}" placeholder.
inline std::string render_instruction(const PromptConfig& config) {
    std::string out = config.instruction_template;
    const std::string total = std::to_string(config.n + config.z);
    const std::string placeholder = "{total_actions}";
    std::size_t pos = 0;
    while ((pos = out.find(placeholder, pos)) != std::string::npos) {
        out.replace(pos, placeholder.size(), total);
        pos += total.size();
    }
    return out;
}

inline std::string render_action(const ActionLabel& label, const Vocabulary& vocab) {
    return "(" + vocab.verb(label.verb_id) + ", " + vocab.noun(label.noun_id) + ")";
}

namespace detail {

inline std::string render_action_list(const std::vector<ActionLabel>& labels, const Vocabulary& vocab) {
    std::string out;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (i) out += ", ";
        out += render_action(labels[i], vocab);
    }
    return out;
}

inline std::string render_narrations_block(const std::vector<std::string>& narrations) {
    std::string out = "Narrations: ";
    for (std::size_t i = 0; i < narrations.size(); ++i) {
        if (i) out.push_back('\n');
        out += narrations[i];
    }
    return out;
}

}  // namespace detail

/// One few-shot block. The "Actions:" line carries the N observed plus Z
/// future actions; with include_actions off only the future actions remain,
/// so the completion format is still demonstrated.
inline std::string render_example(const Example& ex, const PromptConfig& config, const Vocabulary& vocab) {
    if (static_cast<int>(ex.narrations.size()) != config.n ||
        static_cast<int>(ex.observed_actions.size()) != config.n)
        throw ConfigMismatch("example has " + std::to_string(ex.narrations.size()) +
                             " observed items, config.n = " + std::to_string(config.n));
    if (static_cast<int>(ex.future_actions.size()) != config.z)
        throw ConfigMismatch("example has " + std::to_string(ex.future_actions.size()) +
                             " future actions, config.z = " + std::to_string(config.z));
    std::string out;
    if (config.include_narrations) {
        out += detail::render_narrations_block(ex.narrations);
        out.push_back('\n');
    }
    out += "Actions: ";
    if (config.include_actions) {
        out += detail::render_action_list(ex.observed_actions, vocab);
        out += ", ";
    }
    out += detail::render_action_list(ex.future_actions, vocab);
    return out;
}

/// The query block ends mid-line so the completion continues the
/// "Actions:" line directly: after the last observed action and a ", "
/// separator, or right after the bare header when actions are suppressed.
inline std::string render_query(const Query& q, const PromptConfig& config, const Vocabulary& vocab) {
    std::string out;
    if (config.include_narrations) {
        out += detail::render_narrations_block(q.narrations);
        out.push_back('\n');
    }
    if (config.include_actions) {
        out += "Actions: ";
        out += detail::render_action_list(q.observed_actions, vocab);
        out += ", ";
    } else {
        out += "Actions:";
    }
    return out;
}

/// instruction + blank line + examples joined by blank lines + blank line + query.
inline PromptDocument assemble_prompt(const std::string& instruction, const std::vector<std::string>& examples,
                                      const std::string& query, std::vector<ExampleRef> example_ids,
                                      ExampleRef query_ref) {
    PromptDocument doc;
    doc.text = instruction;
    for (const std::string& ex : examples) {
        doc.text += "\n\n";
        doc.text += ex;
    }
    doc.text += "\n\n";
    doc.text += query;
    doc.example_ids = std::move(example_ids);
    doc.query_ref = std::move(query_ref);
    return doc;
}

/// Exports the prompt as UTF-8 text plus a JSON sidecar recording which
/// examples it was built from.
inline void write_prompt_files(const PromptDocument& doc, const std::string& path_stem,
                               const nlohmann::json& run_metadata = nlohmann::json::object()) {
    {
        std::ofstream txt(path_stem + ".txt", std::ios::binary);
        if (!txt) throw IoError(path_stem + ".txt");
        txt << doc.text;
    }
    nlohmann::json sidecar;
    sidecar["query_ref"] = {{"clip_id", doc.query_ref.clip_id}, {"anchor", doc.query_ref.anchor}};
    auto& ids = sidecar["example_ids"] = nlohmann::json::array();
    for (const ExampleRef& ref : doc.example_ids)
        ids.push_back({{"clip_id", ref.clip_id}, {"anchor", ref.anchor}});
    if (!run_metadata.empty()) sidecar["run"] = run_metadata;
    std::ofstream js(path_stem + ".json", std::ios::binary);
    if (!js) throw IoError(path_stem + ".json");
    js << sidecar.dump(2) << '\n';
}

}  // namespace palm
