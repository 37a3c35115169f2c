#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "itercqr/common.hpp"
#include "itercqr/data.hpp"
#include "itercqr/retrieval.hpp"

namespace itercqr {

using Qrels = std::map<std::string, std::set<std::string>>;

inline Qrels load_qrels(const std::filesystem::path& path) {
    Qrels qrels;
    for (const auto& [lineno, line] : read_numbered_lines(path)) {
        std::istringstream ss(line);
        std::string qid, zero, pid;
        int rel = 0;
        if (!(ss >> qid >> zero >> pid >> rel) || zero != "0") {
            throw ParseError(path.string() + ":" + std::to_string(lineno) +
                             ": malformed qrels line");
        }
        if (rel > 0) {
            qrels[qid].insert(pid);
        }
    }
    return qrels;
}

// Reciprocal rank of the first relevant passage, over the full returned depth.
inline double mrr(const RunEntry& run, const std::set<std::string>& relevant) {
    for (std::size_t i = 0; i < run.ranking.size(); ++i) {
        if (relevant.count(run.ranking[i].first)) {
            return 1.0 / static_cast<double>(i + 1);
        }
    }
    return 0.0;
}

// Binary gains: DCG@3 = sum rel_i / log2(i+1), ideal has min(|relevant|, 3)
// ones at the top.
inline double ndcg_at_3(const RunEntry& run, const std::set<std::string>& relevant) {
    double dcg = 0.0;
    for (std::size_t i = 0; i < run.ranking.size() && i < 3; ++i) {
        if (relevant.count(run.ranking[i].first)) {
            dcg += 1.0 / std::log2(static_cast<double>(i + 2));
        }
    }
    double idcg = 0.0;
    std::size_t ideal = std::min<std::size_t>(relevant.size(), 3);
    for (std::size_t i = 0; i < ideal; ++i) {
        idcg += 1.0 / std::log2(static_cast<double>(i + 2));
    }
    return idcg == 0.0 ? 0.0 : dcg / idcg;
}

inline double recall_at_k(const RunEntry& run, const std::set<std::string>& relevant,
                          std::size_t k) {
    if (relevant.empty()) {
        return 0.0;
    }
    std::size_t hits = 0;
    for (std::size_t i = 0; i < run.ranking.size() && i < k; ++i) {
        if (relevant.count(run.ranking[i].first)) {
            ++hits;
        }
    }
    return static_cast<double>(hits) / static_cast<double>(relevant.size());
}

struct MetricReport {
    std::string slice = "overall";
    int num_queries = 0;
    double mrr = 0.0;
    double ndcg3 = 0.0;
    double recall10 = 0.0;
    double recall100 = 0.0;

    json to_json() const {
        return json{{"slice", slice},          {"num_queries", num_queries},
                    {"mrr", mrr},              {"ndcg@3", ndcg3},
                    {"recall@10", recall10},   {"recall@100", recall100}};
    }
};

// Macro-averages over the run entries whose query is in qrels and (when a
// filter is given) in the filter set. Queries missing from qrels are counted
// as excluded, never an error; zero overlap with qrels is.
struct EvaluationResult {
    MetricReport report;
    int excluded_queries = 0;
};

inline EvaluationResult evaluate_entries(const std::vector<RunEntry>& entries, const Qrels& qrels,
                                         const std::string& slice_name,
                                         const std::set<std::string>* filter = nullptr) {
    EvaluationResult result;
    result.report.slice = slice_name;
    double sum_mrr = 0.0, sum_ndcg = 0.0, sum_r10 = 0.0, sum_r100 = 0.0;
    for (const auto& e : entries) {
        auto it = qrels.find(e.query_id);
        if (it == qrels.end()) {
            result.excluded_queries++;
            continue;
        }
        if (filter && !filter->count(e.query_id)) {
            continue;
        }
        sum_mrr += mrr(e, it->second);
        sum_ndcg += ndcg_at_3(e, it->second);
        sum_r10 += recall_at_k(e, it->second, 10);
        sum_r100 += recall_at_k(e, it->second, 100);
        result.report.num_queries++;
    }
    if (result.report.num_queries > 0) {
        double n = result.report.num_queries;
        result.report.mrr = sum_mrr / n;
        result.report.ndcg3 = sum_ndcg / n;
        result.report.recall10 = sum_r10 / n;
        result.report.recall100 = sum_r100 / n;
    }
    return result;
}

enum class ShiftCriterion { none, label, pid };

inline ShiftCriterion shift_criterion_from_string(const std::string& s) {
    if (s == "none") return ShiftCriterion::none;
    if (s == "label") return ShiftCriterion::label;
    if (s == "pid") return ShiftCriterion::pid;
    throw ValidationError("unknown slice criterion: " + s + " (expected label or pid)");
}

// Overall report first; with a criterion, adds the topic-shifted and
// topic-concentrated slices drawn from the instances' shift flags.
inline std::vector<MetricReport> evaluate_run(const std::vector<RunEntry>& entries,
                                              const Qrels& qrels, ShiftCriterion criterion,
                                              const std::vector<ReformulationInstance>& instances,
                                              int* excluded_out = nullptr) {
    bool any_known = false;
    for (const auto& e : entries) {
        if (qrels.count(e.query_id)) {
            any_known = true;
            break;
        }
    }
    if (!entries.empty() && !any_known) {
        throw ValidationError(
            "no run query id appears in the qrels; the id schemes likely do not match");
    }
    std::vector<MetricReport> reports;
    EvaluationResult overall = evaluate_entries(entries, qrels, "overall");
    if (excluded_out) {
        *excluded_out = overall.excluded_queries;
    }
    reports.push_back(overall.report);
    if (criterion == ShiftCriterion::none) {
        return reports;
    }
    std::set<std::string> shifted, concentrated;
    for (const auto& inst : instances) {
        std::optional<bool> flag = criterion == ShiftCriterion::label ? inst.topic_shift_by_label
                                                                      : inst.topic_shift_by_pid;
        if (!flag.has_value()) {
            continue;
        }
        (*flag ? shifted : concentrated).insert(inst.instance_id);
    }
    std::string prefix = criterion == ShiftCriterion::label ? "label" : "pid";
    reports.push_back(
        evaluate_entries(entries, qrels, prefix + "_shifted", &shifted).report);
    reports.push_back(
        evaluate_entries(entries, qrels, prefix + "_concentrated", &concentrated).report);
    return reports;
}

}  // namespace itercqr
