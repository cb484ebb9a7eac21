#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "palm/errors.hpp"
#include "palm/inference.hpp"
#include "palm/selection.hpp"
#include "palm/vocabulary.hpp"

namespace palm {

/// Classic unit-cost edit distance, or the optimal-string-alignment variant
/// that additionally counts adjacent transpositions as one edit.
enum class EditVariant { levenshtein, osa };

/// Which field of an action symbol is compared.
enum class Projection { action, verb, noun };

inline bool labels_equal(const ActionLabel& a, const ActionLabel& b, Projection projection) {
    switch (projection) {
        case Projection::verb: return a.verb_id == b.verb_id;
        case Projection::noun: return a.noun_id == b.noun_id;
        case Projection::action: break;
    }
    return a == b;
}

namespace detail {

template <typename Eq>
int raw_edit_distance(std::size_t la, std::size_t lb, Eq&& eq, EditVariant variant) {
    // rows indexed by position in b; keeps the two (or three, for OSA)
    // most recent DP rows
    std::vector<int> prev2(lb + 1), prev(lb + 1), cur(lb + 1);
    for (std::size_t j = 0; j <= lb; ++j) prev[j] = static_cast<int>(j);
    for (std::size_t i = 1; i <= la; ++i) {
        cur[0] = static_cast<int>(i);
        for (std::size_t j = 1; j <= lb; ++j) {
            const int sub = prev[j - 1] + (eq(i - 1, j - 1) ? 0 : 1);
            const int del = prev[j] + 1;
            const int ins = cur[j - 1] + 1;
            cur[j] = std::min({sub, del, ins});
            if (variant == EditVariant::osa && i > 1 && j > 1 && eq(i - 1, j - 2) && eq(i - 2, j - 1))
                cur[j] = std::min(cur[j], prev2[j - 2] + 1);
        }
        std::swap(prev2, prev);
        std::swap(prev, cur);
    }
    return prev[lb];
}

}  // namespace detail

/// Edit distance normalized by max(|a|, |b|), in [0, 1].
template <typename Symbol, typename Eq = std::equal_to<Symbol>>
double edit_distance(const std::vector<Symbol>& a, const std::vector<Symbol>& b,
                     EditVariant variant = EditVariant::levenshtein, Eq eq = Eq{}) {
    if (a.empty() && b.empty()) throw EmptySequences();
    const int raw = detail::raw_edit_distance(
        a.size(), b.size(), [&](std::size_t i, std::size_t j) { return eq(a[i], b[j]); }, variant);
    return static_cast<double>(raw) / static_cast<double>(std::max(a.size(), b.size()));
}

inline double edit_distance(const ActionSequence& a, const ActionSequence& b, Projection projection,
                            EditVariant variant = EditVariant::levenshtein) {
    return edit_distance(a, b, variant,
                         [&](const ActionLabel& x, const ActionLabel& y) { return labels_equal(x, y, projection); });
}

/// Best (minimum) edit distance over the candidate sequences.
inline double best_of_k(const std::vector<ActionSequence>& candidates, const ActionSequence& ground_truth,
                        Projection projection, EditVariant variant = EditVariant::levenshtein) {
    double best = 1.0;
    bool first = true;
    for (const ActionSequence& candidate : candidates) {
        const double d = edit_distance(candidate, ground_truth, projection, variant);
        if (first || d < best) best = d;
        first = false;
    }
    return best;
}

inline double best_of_k(const PredictionSet& predictions, const ActionSequence& ground_truth,
                        Projection projection, EditVariant variant = EditVariant::levenshtein) {
    return best_of_k(predictions.sequences, ground_truth, projection, variant);
}

/// Positionwise exact-match fraction on the chosen field.
inline double recognition_accuracy(const std::vector<ActionLabel>& recognized,
                                   const std::vector<ActionLabel>& ground_truth, Projection field) {
    if (recognized.size() != ground_truth.size()) throw LengthMismatch(recognized.size(), ground_truth.size());
    if (recognized.empty()) throw EmptySequences();
    std::size_t hits = 0;
    for (std::size_t i = 0; i < recognized.size(); ++i)
        if (labels_equal(recognized[i], ground_truth[i], field)) ++hits;
    return static_cast<double>(hits) / static_cast<double>(recognized.size());
}

struct RegressionResult {
    double coefficient = 0.0;
    double stderr_ = 0.0;
    double intercept = 0.0;
    std::size_t n = 0;
};

/// Simple least squares of y on x with the slope's standard error.
inline RegressionResult ols_regression(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw LengthMismatch(x.size(), y.size());
    const std::size_t n = x.size();
    if (n < 3) throw TooFewPoints(n);
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    if (sxx == 0.0) throw DegenerateRegressor();
    RegressionResult r;
    r.n = n;
    r.coefficient = sxy / sxx;
    r.intercept = my - r.coefficient * mx;
    double ssr = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double resid = y[i] - (r.intercept + r.coefficient * x[i]);
        ssr += resid * resid;
    }
    r.stderr_ = std::sqrt(ssr / static_cast<double>(n - 2) / sxx);
    return r;
}

struct QueryEval {
    std::string clip_id;
    int anchor = 0;
    double verb_ed = 0.0;
    double noun_ed = 0.0;
    double action_ed = 0.0;
    double verb_acc = 0.0;
    double noun_acc = 0.0;
};

struct EvalReport {
    double verb_ed = 0.0;
    double noun_ed = 0.0;
    double action_ed = 0.0;
    std::vector<QueryEval> per_clip;
    std::size_t n_queries = 0;
};

/// Ground truth for one evaluation query: the Z future actions plus the
/// observed past actions the recognizer is scored against.
struct GroundTruthQuery {
    ExampleRef ref;
    ActionSequence future;
    std::vector<ActionLabel> past;
};

/// Per-query best-of-K for the three projections plus verb/noun recognition
/// accuracy, aggregated as an unweighted mean over queries.
inline EvalReport evaluate_dataset(const std::vector<GroundTruthQuery>& queries,
                                   const std::map<ExampleRef, std::vector<ActionSequence>>& predictions,
                                   const std::map<ExampleRef, std::vector<ActionLabel>>& recognized_past,
                                   EditVariant variant = EditVariant::levenshtein) {
    EvalReport report;
    for (const GroundTruthQuery& q : queries) {
        auto pred = predictions.find(q.ref);
        if (pred == predictions.end() || pred->second.empty())
            throw IncompleteRun(q.ref.clip_id, q.ref.anchor, "has no predictions");
        auto rec = recognized_past.find(q.ref);
        if (rec == recognized_past.end())
            throw IncompleteRun(q.ref.clip_id, q.ref.anchor, "has no recognized past actions");

        QueryEval row;
        row.clip_id = q.ref.clip_id;
        row.anchor = q.ref.anchor;
        row.verb_ed = best_of_k(pred->second, q.future, Projection::verb, variant);
        row.noun_ed = best_of_k(pred->second, q.future, Projection::noun, variant);
        row.action_ed = best_of_k(pred->second, q.future, Projection::action, variant);
        row.verb_acc = recognition_accuracy(rec->second, q.past, Projection::verb);
        row.noun_acc = recognition_accuracy(rec->second, q.past, Projection::noun);
        report.per_clip.push_back(std::move(row));
    }
    report.n_queries = report.per_clip.size();
    for (const QueryEval& row : report.per_clip) {
        report.verb_ed += row.verb_ed;
        report.noun_ed += row.noun_ed;
        report.action_ed += row.action_ed;
    }
    if (report.n_queries > 0) {
        report.verb_ed /= static_cast<double>(report.n_queries);
        report.noun_ed /= static_cast<double>(report.n_queries);
        report.action_ed /= static_cast<double>(report.n_queries);
    }
    return report;
}

/// Shortest round-trip decimal rendering, shared by the JSON and CSV writers.
inline std::string format_double(double v) { return nlohmann::json(v).dump(); }

inline nlohmann::json report_to_json(const EvalReport& report,
                                     const nlohmann::json& metadata = nlohmann::json::object()) {
    nlohmann::json doc;
    doc["aggregate"] = {{"verb_ed", report.verb_ed},
                        {"noun_ed", report.noun_ed},
                        {"action_ed", report.action_ed}};
    doc["n_queries"] = report.n_queries;
    auto& rows = doc["per_clip"] = nlohmann::json::array();
    for (const QueryEval& row : report.per_clip)
        rows.push_back({{"clip_id", row.clip_id},
                        {"anchor", row.anchor},
                        {"verb_ed", row.verb_ed},
                        {"noun_ed", row.noun_ed},
                        {"action_ed", row.action_ed},
                        {"verb_acc", row.verb_acc},
                        {"noun_acc", row.noun_acc}});
    if (!metadata.empty()) doc["run"] = metadata;
    return doc;
}

inline EvalReport report_from_json(const nlohmann::json& doc) {
    EvalReport report;
    report.verb_ed = doc.at("aggregate").at("verb_ed").get<double>();
    report.noun_ed = doc.at("aggregate").at("noun_ed").get<double>();
    report.action_ed = doc.at("aggregate").at("action_ed").get<double>();
    report.n_queries = doc.at("n_queries").get<std::size_t>();
    for (const auto& row : doc.at("per_clip"))
        report.per_clip.push_back({row.at("clip_id").get<std::string>(), row.at("anchor").get<int>(),
                                   row.at("verb_ed").get<double>(), row.at("noun_ed").get<double>(),
                                   row.at("action_ed").get<double>(), row.at("verb_acc").get<double>(),
                                   row.at("noun_acc").get<double>()});
    return report;
}

inline std::string report_to_csv(const EvalReport& report, const std::string& comment = "") {
    std::string out;
    if (!comment.empty()) out += "# " + comment + "\n";
    out += "clip_id,anchor,verb_ed,noun_ed,action_ed,verb_acc,noun_acc\n";
    for (const QueryEval& row : report.per_clip) {
        out += row.clip_id + "," + std::to_string(row.anchor) + "," + format_double(row.verb_ed) + "," +
               format_double(row.noun_ed) + "," + format_double(row.action_ed) + "," +
               format_double(row.verb_acc) + "," + format_double(row.noun_acc) + "\n";
    }
    return out;
}

}  // namespace palm
