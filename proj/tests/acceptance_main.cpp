// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Oracles here are deliberately independent re-implementations of
// the code paths they check.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "palm/dataset.hpp"
#include "palm/evaluation.hpp"
#include "palm/inference.hpp"
#include "palm/mock_backends.hpp"
#include "palm/pipeline.hpp"
#include "palm/prompting.hpp"
#include "palm/selection.hpp"
#include "palm/vocabulary.hpp"

using namespace palm;
using nlohmann::json;

namespace {

int g_failures = 0;

void report(const std::string& name, bool ok, const std::string& detail) {
    std::cout << (ok ? "[PASS] " : "[FAIL] ") << name << (detail.empty() ? "" : " — " + detail) << "\n";
    if (!ok) ++g_failures;
}

void run_criterion(const std::string& name, const std::function<std::string()>& body) {
    try {
        report(name, true, body());
    } catch (const std::exception& e) {
        report(name, false, e.what());
    }
}

struct Check {
    std::size_t failures = 0;
    std::string first;

    void expect(bool ok, const std::string& what) {
        if (!ok) {
            ++failures;
            if (first.empty()) first = what;
        }
    }
    void done() const {
        if (failures) throw std::runtime_error(std::to_string(failures) + " mismatches, first: " + first);
    }
};

std::string fixture(const std::string& name) { return std::string(PALM_FIXTURES_DIR) + "/" + name; }
std::string golden(const std::string& name) { return std::string(PALM_GOLDEN_DIR) + "/" + name; }

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

const Vocabulary& vocab() {
    static Vocabulary v = load_vocabulary(fixture("verbs.txt"), fixture("nouns.txt"));
    return v;
}

std::filesystem::path fresh_dir(const std::string& tag) {
    const auto path = std::filesystem::temp_directory_path() /
                      ("palm_accept_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
    return path;
}

// --- criterion 1: exhaustive edit-distance oracle ---

int recursive_ed(const std::vector<int>& a, const std::vector<int>& b, std::size_t i, std::size_t j) {
    if (i == a.size()) return static_cast<int>(b.size() - j);
    if (j == b.size()) return static_cast<int>(a.size() - i);
    const int sub = recursive_ed(a, b, i + 1, j + 1) + (a[i] == b[j] ? 0 : 1);
    const int del = recursive_ed(a, b, i + 1, j) + 1;
    const int ins = recursive_ed(a, b, i, j + 1) + 1;
    return std::min({sub, del, ins});
}

std::string criterion_edit_distance_oracle() {
    const auto start = std::chrono::steady_clock::now();
    std::vector<std::vector<int>> sequences{{}};
    std::size_t level_start = 0;
    for (int len = 1; len <= 5; ++len) {
        const std::size_t level_end = sequences.size();
        for (std::size_t i = level_start; i < level_end; ++i)
            for (int s = 0; s < 3; ++s) {
                auto next = sequences[i];
                next.push_back(s);
                sequences.push_back(std::move(next));
            }
        level_start = level_end;
    }

    Check check;
    std::size_t pairs = 0;
    for (const auto& a : sequences)
        for (const auto& b : sequences) {
            if (a.empty() && b.empty()) continue;
            ++pairs;
            const double want = static_cast<double>(recursive_ed(a, b, 0, 0)) /
                                static_cast<double>(std::max(a.size(), b.size()));
            check.expect(edit_distance(a, b) == want, "dp != recursion on a pair");
        }
    check.done();
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (seconds >= 10.0) throw std::runtime_error("took " + std::to_string(seconds) + " s (limit 10 s)");
    std::ostringstream detail;
    detail << pairs << " pairs exact in " << seconds << " s";
    return detail.str();
}

// --- criterion 2/3 helpers ---

ActionSequence random_labels(std::mt19937& rng, int len, int verbs, int nouns) {
    ActionSequence seq;
    for (int i = 0; i < len; ++i)
        seq.push_back(ActionLabel{static_cast<int>(rng() % verbs), static_cast<int>(rng() % nouns)});
    return seq;
}

std::string criterion_best_of_k() {
    std::mt19937 rng(7001);
    Check check;
    for (int trial = 0; trial < 1000; ++trial) {
        const int len = 1 + static_cast<int>(rng() % 20);
        const ActionSequence gt = random_labels(rng, len, 6, 6);
        std::vector<ActionSequence> candidates{random_labels(rng, len, 6, 6)};
        double prev = best_of_k(candidates, gt, Projection::action);
        for (int add = 0; add < 3; ++add) {
            candidates.push_back(random_labels(rng, len, 6, 6));
            const double cur = best_of_k(candidates, gt, Projection::action);
            check.expect(cur <= prev, "min increased when a candidate was added");
            prev = cur;
        }
        candidates.push_back(gt);
        check.expect(best_of_k(candidates, gt, Projection::action) == 0.0,
                     "ground truth among candidates did not give 0");
    }
    check.done();
    return "1000 seeded cases exact";
}

std::string criterion_projection_inequality() {
    std::mt19937 rng(7002);
    Check check;
    for (int trial = 0; trial < 1000; ++trial) {
        const ActionSequence a = random_labels(rng, 1 + static_cast<int>(rng() % 15), 4, 4);
        const ActionSequence b = random_labels(rng, 1 + static_cast<int>(rng() % 15), 4, 4);
        const double action = edit_distance(a, b, Projection::action);
        check.expect(edit_distance(a, b, Projection::verb) <= action, "verb ED exceeds action ED");
        check.expect(edit_distance(a, b, Projection::noun) <= action, "noun ED exceeds action ED");
    }
    check.done();
    return "1000 random pairs exact";
}

// --- criterion 4: MMR oracle ---

std::vector<int> mmr_reference(const Embedding& query, const std::vector<std::pair<int, Embedding>>& cands,
                               double lambda, int k) {
    std::vector<int> picked;
    const int take = std::min<int>(k, static_cast<int>(cands.size()));
    std::vector<bool> used(cands.size(), false);
    while (static_cast<int>(picked.size()) < take) {
        int best = -1;
        double best_score = 0.0;
        for (int j = 0; j < static_cast<int>(cands.size()); ++j) {
            if (used[j]) continue;
            double diversity = 0.0;
            for (std::size_t p = 0; p < cands.size(); ++p)
                if (used[p])
                    diversity = std::max(diversity, cosine_similarity(cands[p].second, cands[j].second));
            const double score =
                lambda * cosine_similarity(query, cands[j].second) - (1.0 - lambda) * diversity;
            if (best < 0 || score > best_score) {
                best = j;
                best_score = score;
            }
        }
        used[static_cast<std::size_t>(best)] = true;
        picked.push_back(cands[static_cast<std::size_t>(best)].first);
    }
    return picked;
}

std::string criterion_mmr_oracle() {
    Check check;

    // the worked three-candidate case
    const std::vector<std::pair<int, Embedding>> worked{
        {0, {{1, 0}}}, {1, {{0, 1}}}, {2, {{0.6, 0.8}}}};
    const std::vector<int> picked = mmr_select(Embedding{{1, 0}}, worked, {0.7, 2});
    check.expect(picked == std::vector<int>{0, 2}, "worked example selected wrong ids");

    std::mt19937 rng(7004);
    const double lambdas[] = {0.0, 0.3, 0.5, 0.7, 1.0};
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 1 + static_cast<int>(rng() % 10);
        const int dim = 1 + static_cast<int>(rng() % 8);
        const double lambda = lambdas[rng() % 5];
        const int k = 1 + static_cast<int>(rng() % (n + 1));
        std::vector<std::pair<int, Embedding>> cands;
        for (int i = 0; i < n; ++i) {
            Embedding e;
            bool nonzero = false;
            for (int d = 0; d < dim; ++d) {
                const double v = (static_cast<double>(rng() % 2001) - 1000.0) / 400.0;
                nonzero = nonzero || v != 0.0;
                e.values.push_back(v);
            }
            if (!nonzero) e.values[0] = 0.5;
            cands.emplace_back(i, std::move(e));
        }
        Embedding query;
        bool nonzero = false;
        for (int d = 0; d < dim; ++d) {
            const double v = (static_cast<double>(rng() % 2001) - 1000.0) / 400.0;
            nonzero = nonzero || v != 0.0;
            query.values.push_back(v);
        }
        if (!nonzero) query.values[0] = 0.5;

        check.expect(mmr_select(query, cands, {lambda, k}) == mmr_reference(query, cands, lambda, k),
                     "greedy selection diverged from the reference");
    }
    check.done();
    return "worked example + 100 random candidate sets exact";
}

// --- criterion 5: prompt determinism ---

PromptDocument fixture_prompt(const PromptConfig& config) {
    auto clips = load_annotations(fixture("annotations.json"), vocab());
    Query query = build_query(clips[0], 7, config.n_prime_cap);
    std::vector<ClipAnnotation> pool_clips(clips.begin() + 1, clips.end());
    auto pool = enumerate_training_examples(pool_clips, config.n, config.z);
    std::vector<std::string> rendered;
    std::vector<ExampleRef> ids;
    for (const TrainingExample& te : pool) {
        rendered.push_back(render_example(te.example, config, vocab()));
        ids.push_back({te.clip_id, te.anchor});
    }
    return assemble_prompt(render_instruction(config), rendered, render_query(query, config, vocab()),
                           std::move(ids), {query.clip_id, query.anchor_action_idx});
}

std::vector<std::string> split_lines(const std::string& text) {
    std::vector<std::string> lines;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const std::size_t eol = text.find('\n', pos);
        if (eol == std::string::npos) {
            lines.push_back(text.substr(pos));
            break;
        }
        lines.push_back(text.substr(pos, eol - pos));
        pos = eol + 1;
    }
    return lines;
}

std::string criterion_prompt_determinism() {
    Check check;
    const std::string want = read_file(golden("prompt_fixture.txt"));
    if (want.empty()) throw std::runtime_error("golden prompt_fixture.txt missing or empty");
    const PromptConfig base;
    check.expect(fixture_prompt(base).text == want, "prompt differs from the frozen golden file");
    check.expect(fixture_prompt(base).text == fixture_prompt(base).text, "repeat render differs");

    // narration toggle: exactly the narration lines disappear
    PromptConfig no_narr = base;
    no_narr.include_narrations = false;
    const auto full = split_lines(fixture_prompt(base).text);
    const auto stripped = split_lines(fixture_prompt(no_narr).text);
    std::vector<std::string> expected;
    for (const std::string& line : full) {
        if (line.rfind("Narrations: ", 0) == 0) continue;
        if (line.rfind("A person is", 0) == 0) continue;
        expected.push_back(line);
    }
    check.expect(stripped == expected, "narration toggle touched non-narration content");

    // action toggle: only Actions lines change, each keeping its future suffix
    PromptConfig no_act = base;
    no_act.include_actions = false;
    const auto act_off = split_lines(fixture_prompt(no_act).text);
    check.expect(act_off.size() == full.size(), "action toggle changed the line count");
    for (std::size_t i = 0; i < full.size() && i < act_off.size(); ++i) {
        if (full[i] == act_off[i]) continue;
        const bool both_actions =
            full[i].rfind("Actions:", 0) == 0 && act_off[i].rfind("Actions:", 0) == 0;
        check.expect(both_actions, "action toggle touched a non-Actions line");
        if (!both_actions) continue;
        const std::string suffix = act_off[i].substr(std::string("Actions:").size());
        check.expect(suffix.empty() ||
                         full[i].size() >= suffix.size() &&
                             full[i].compare(full[i].size() - suffix.size(), suffix.size(), suffix) == 0,
                     "future actions were not preserved");
    }
    check.done();
    return "golden byte-exact; toggles change only their blocks";
}

// --- criterion 6: parser totality and round-trip ---

std::string criterion_parser() {
    Check check;
    std::mt19937 rng(7006);
    for (int trial = 0; trial < 10000; ++trial) {
        std::string junk;
        const std::size_t len = rng() % 200;
        for (std::size_t i = 0; i < len; ++i) junk.push_back(static_cast<char>(rng() % 256));
        const int z = 1 + static_cast<int>(rng() % 30);
        const auto [seq, stats] = parse_completion(junk, vocab(), z, ActionLabel{0, 0});
        check.expect(static_cast<int>(seq.size()) == z, "parse returned the wrong length");
        check.expect(stats.pairs_in_vocab <= stats.pairs_seen, "stats invariant violated");
    }

    const int n_verbs = static_cast<int>(vocab().verbs().size());
    const int n_nouns = static_cast<int>(vocab().nouns().size());
    for (int trial = 0; trial < 1000; ++trial) {
        const int len = 1 + static_cast<int>(rng() % 20);
        ActionSequence want = random_labels(rng, len, n_verbs, n_nouns);
        std::string rendered;
        for (int i = 0; i < len; ++i) {
            if (i) rendered += ", ";
            rendered += render_action(want[static_cast<std::size_t>(i)], vocab());
        }
        const auto [got, stats] = parse_completion(rendered, vocab(), len, ActionLabel{0, 0});
        check.expect(got == want, "render-then-parse was not the identity");
        check.expect(stats.padded == 0, "identity round-trip padded");
    }
    check.done();
    return "10000 fuzz inputs total; 1000 round-trips exact";
}

// --- criterion 7: end-to-end mock run vs metric oracle ---

/// Memoized top-down edit distance: independent of the two-row DP.
int memo_ed(const ActionSequence& a, const ActionSequence& b, Projection proj, std::size_t i,
            std::size_t j, std::vector<int>& memo, std::size_t cols) {
    int& slot = memo[i * cols + j];
    if (slot >= 0) return slot;
    int result;
    if (i == a.size())
        result = static_cast<int>(b.size() - j);
    else if (j == b.size())
        result = static_cast<int>(a.size() - i);
    else {
        const int sub =
            memo_ed(a, b, proj, i + 1, j + 1, memo, cols) + (labels_equal(a[i], b[j], proj) ? 0 : 1);
        const int del = memo_ed(a, b, proj, i + 1, j, memo, cols) + 1;
        const int ins = memo_ed(a, b, proj, i, j + 1, memo, cols) + 1;
        result = std::min({sub, del, ins});
    }
    slot = result;
    return result;
}

double oracle_ed(const ActionSequence& a, const ActionSequence& b, Projection proj) {
    const std::size_t cols = b.size() + 1;
    std::vector<int> memo((a.size() + 1) * cols, -1);
    return static_cast<double>(memo_ed(a, b, proj, 0, 0, memo, cols)) /
           static_cast<double>(std::max(a.size(), b.size()));
}

std::string criterion_end_to_end() {
    const auto start = std::chrono::steady_clock::now();
    const auto dir = fresh_dir("e2e");

    RunConfig cfg = load_run_config(fixture("config.json"));
    cfg.output_dir = (dir / "out").string();

    MockEmbeddingBackend embedding(cfg.backends.mock_embed_dim);
    EchoCompletionBackend completion(cfg.prompt.z);
    cmd_predict(cfg, embedding, completion);
    const EvalReport report = cmd_evaluate(cfg).report;

    // independent recomputation from the dump and the raw annotation file
    const auto clips = load_annotations(fixture("annotations.json"), vocab());
    std::map<std::string, const ClipAnnotation*> by_id;
    for (const auto& clip : clips) by_id[clip.clip_id] = &clip;

    std::map<std::string, std::vector<ActionSequence>> dumped;
    std::ifstream in(dir / "out" / "predictions.jsonl");
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (header) {
            header = false;
            continue;
        }
        const json row = json::parse(line);
        std::vector<ActionSequence> sequences;
        for (const auto& seq : row["sequences"]) {
            ActionSequence parsed;
            for (const auto& pair : seq) {
                auto label = lookup(vocab(), pair[0].get<std::string>(), pair[1].get<std::string>());
                if (!label) throw std::runtime_error("dump contains an out-of-vocabulary token");
                parsed.push_back(*label);
            }
            sequences.push_back(std::move(parsed));
        }
        dumped[row["clip_id"].get<std::string>()] = std::move(sequences);
    }

    std::map<std::string, std::vector<ActionLabel>> recognized;
    const json rec_doc = json::parse(read_file(fixture("recognized.json")));
    for (const auto& entry : rec_doc) {
        std::vector<ActionLabel> labels;
        for (const auto& pair : entry["actions"])
            labels.push_back(*lookup(vocab(), pair[0].get<std::string>(), pair[1].get<std::string>()));
        recognized[entry["clip_id"].get<std::string>()] = std::move(labels);
    }

    Check check;
    check.expect(report.per_clip.size() == 3, "expected 3 per-clip rows");
    double sum_verb = 0, sum_noun = 0, sum_action = 0;
    for (const QueryEval& row : report.per_clip) {
        const ClipAnnotation& clip = *by_id.at(row.clip_id);
        ActionSequence gt;
        for (int i = 8; i < 28; ++i) gt.push_back(clip.segments[static_cast<std::size_t>(i)].label);
        std::vector<ActionLabel> past;
        for (int i = 0; i <= 7; ++i) past.push_back(clip.segments[static_cast<std::size_t>(i)].label);

        const auto& preds = dumped.at(row.clip_id);
        double want_verb = 2.0, want_noun = 2.0, want_action = 2.0;
        for (const ActionSequence& p : preds) {
            want_verb = std::min(want_verb, oracle_ed(p, gt, Projection::verb));
            want_noun = std::min(want_noun, oracle_ed(p, gt, Projection::noun));
            want_action = std::min(want_action, oracle_ed(p, gt, Projection::action));
        }
        check.expect(std::abs(row.verb_ed - want_verb) <= 1e-12, "verb ED mismatch for " + row.clip_id);
        check.expect(std::abs(row.noun_ed - want_noun) <= 1e-12, "noun ED mismatch for " + row.clip_id);
        check.expect(std::abs(row.action_ed - want_action) <= 1e-12,
                     "action ED mismatch for " + row.clip_id);

        const auto& rec = recognized.at(row.clip_id);
        int verb_hits = 0, noun_hits = 0;
        for (std::size_t i = 0; i < rec.size(); ++i) {
            verb_hits += rec[i].verb_id == past[i].verb_id ? 1 : 0;
            noun_hits += rec[i].noun_id == past[i].noun_id ? 1 : 0;
        }
        check.expect(std::abs(row.verb_acc - verb_hits / 8.0) <= 1e-12, "verb accuracy mismatch");
        check.expect(std::abs(row.noun_acc - noun_hits / 8.0) <= 1e-12, "noun accuracy mismatch");

        sum_verb += row.verb_ed;
        sum_noun += row.noun_ed;
        sum_action += row.action_ed;
    }
    check.expect(std::abs(report.verb_ed - sum_verb / 3.0) <= 1e-12, "verb aggregate mismatch");
    check.expect(std::abs(report.noun_ed - sum_noun / 3.0) <= 1e-12, "noun aggregate mismatch");
    check.expect(std::abs(report.action_ed - sum_action / 3.0) <= 1e-12, "action aggregate mismatch");
    check.done();

    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (seconds >= 5.0) throw std::runtime_error("took " + std::to_string(seconds) + " s (limit 5 s)");
    std::filesystem::remove_all(dir);
    std::ostringstream detail;
    detail << "report matches the metric oracle within 1e-12 in " << seconds << " s";
    return detail.str();
}

// --- criterion 8: OLS ---

std::string criterion_ols() {
    Check check;
    {
        const RegressionResult r = ols_regression({0, 1, 2, 3, 4}, {1, 3, 5, 7, 9});
        check.expect(std::abs(r.coefficient - 2.0) <= 1e-9, "perfect-line slope off");
        check.expect(std::abs(r.intercept - 1.0) <= 1e-9, "perfect-line intercept off");
        check.expect(r.stderr_ == 0.0, "perfect-line stderr must be exactly 0");
    }
    {
        const RegressionResult r = ols_regression({0, 1, 2}, {0, 1, 3});
        check.expect(std::abs(r.coefficient - 1.5) <= 1e-9, "closed-form slope off");
        check.expect(std::abs(r.intercept + 1.0 / 6.0) <= 1e-9, "closed-form intercept off");
        check.expect(std::abs(r.stderr_ - std::sqrt(1.0 / 12.0)) <= 1e-9, "closed-form stderr off");
    }
    {
        // synthetic negative relation: higher accuracy, lower edit distance
        std::mt19937 rng(7008);
        std::vector<double> acc, ed;
        for (int i = 0; i < 50; ++i) {
            const double a = static_cast<double>(i) / 50.0;
            const double noise = (static_cast<double>(rng() % 1000) - 500.0) / 50000.0;
            acc.push_back(a);
            ed.push_back(0.9 - 0.25 * a + noise);
        }
        check.expect(ols_regression(acc, ed).coefficient < 0.0, "synthetic slope is not negative");
    }
    check.done();
    return "closed forms within 1e-9; exact zero stderr; negative sign reproduced";
}

// --- criterion 9: horizon rule ---

std::string criterion_horizon() {
    Check check;
    for (int count = 1; count <= 40; ++count)
        check.expect(query_horizon(count) == std::min(12, count), "horizon mismatch");
    bool threw = false;
    try {
        query_horizon(0);
    } catch (const NoObservedActions&) {
        threw = true;
    }
    check.expect(threw, "count 0 must raise NoObservedActions");
    check.done();
    return "counts 1..40 exact";
}

// --- criterion 10: reproducibility ---

void one_full_run(const std::filesystem::path& where) {
    const auto previous = std::filesystem::current_path();
    std::filesystem::current_path(where);
    try {
        const RunConfig cfg = load_run_config(fixture("config.json"));
        BackendSet backends = make_backends(cfg);
        cmd_caption(cfg, backends.caption());
        cmd_predict(cfg, *backends.embedding, *backends.completion);
        cmd_evaluate(cfg);
        cmd_regress(cfg);
    } catch (...) {
        std::filesystem::current_path(previous);
        throw;
    }
    std::filesystem::current_path(previous);
}

std::string criterion_reproducibility() {
    const auto dir_a = fresh_dir("repr_a");
    const auto dir_b = fresh_dir("repr_b");
    one_full_run(dir_a);
    one_full_run(dir_b);

    const std::vector<std::string> files = {"out/captions.json", "out/caption_cache.jsonl",
                                            "out/predictions.jsonl", "out/report.json",
                                            "out/report.csv",       "out/regress.json"};
    Check check;
    for (const std::string& name : files) {
        const std::string a = read_file((dir_a / name).string());
        const std::string b = read_file((dir_b / name).string());
        check.expect(!a.empty(), name + " missing in run A");
        check.expect(a == b, name + " differs between runs");
    }
    check.done();
    std::filesystem::remove_all(dir_a);
    std::filesystem::remove_all(dir_b);
    return std::to_string(files.size()) + " output files byte-identical across two runs";
}

}  // namespace

int main() {
    run_criterion("edit-distance oracle equivalence (lengths 0-5, 3 symbols)", criterion_edit_distance_oracle);
    run_criterion("best-of-k min-monotonicity and zero-on-exact", criterion_best_of_k);
    run_criterion("projection inequality (verb/noun ED <= action ED)", criterion_projection_inequality);
    run_criterion("mmr oracle equivalence (greedy reference)", criterion_mmr_oracle);
    run_criterion("prompt determinism (golden + block toggles)", criterion_prompt_determinism);
    run_criterion("parser totality and render/parse round-trip", criterion_parser);
    run_criterion("end-to-end mock run matches the metric oracle", criterion_end_to_end);
    run_criterion("ols coefficient/stderr correctness", criterion_ols);
    run_criterion("query horizon rule N' = min(12, count)", criterion_horizon);
    run_criterion("seeded mock runs are byte-identical", criterion_reproducibility);

    if (g_failures) {
        std::cout << g_failures << " criterion(s) failed\n";
        return 1;
    }
    std::cout << "all criteria passed\n";
    return 0;
}
