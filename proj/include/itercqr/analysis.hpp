#pragma once

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "itercqr/common.hpp"
#include "itercqr/data.hpp"
#include "itercqr/text.hpp"

namespace itercqr {

// Sorensen-Dice over token sets by default (duplicates collapse); the
// multiset variant keeps counts for sensitivity checks.
inline double dice(const std::string& a_text, const std::string& b_text, bool multiset = false) {
    std::vector<std::string> at = tokenize(a_text);
    std::vector<std::string> bt = tokenize(b_text);
    if (at.empty() && bt.empty()) {
        return 1.0;
    }
    if (at.empty() || bt.empty()) {
        return 0.0;
    }
    if (multiset) {
        std::map<std::string, std::size_t> ca, cb;
        for (const auto& t : at) ca[t]++;
        for (const auto& t : bt) cb[t]++;
        std::size_t inter = 0;
        for (const auto& [t, n] : ca) {
            auto it = cb.find(t);
            if (it != cb.end()) {
                inter += std::min(n, it->second);
            }
        }
        return 2.0 * static_cast<double>(inter) /
               static_cast<double>(at.size() + bt.size());
    }
    std::set<std::string> sa(at.begin(), at.end());
    std::set<std::string> sb(bt.begin(), bt.end());
    std::size_t inter = 0;
    for (const auto& t : sa) {
        inter += sb.count(t);
    }
    return 2.0 * static_cast<double>(inter) / static_cast<double>(sa.size() + sb.size());
}

// Unique token n-grams over total; fewer than n tokens counts as fully
// distinct by convention.
inline double distinct_ngram_ratio(const std::string& text, std::size_t n = 3) {
    std::vector<std::string> grams = token_ngrams(tokenize(text), n);
    if (grams.empty()) {
        return 1.0;
    }
    std::set<std::string> unique(grams.begin(), grams.end());
    return static_cast<double>(unique.size()) / static_cast<double>(grams.size());
}

struct QueryStats {
    int iteration = 0;
    double dice_history = 0.0;
    double dice_gold = 0.0;
    double token_length = 0.0;
    double distinct_3gram_ratio = 0.0;

    json to_json() const {
        return json{{"iteration", iteration},
                    {"dice_history", dice_history},
                    {"dice_gold", dice_gold},
                    {"token_length", token_length},
                    {"distinct_3gram_ratio", distinct_3gram_ratio}};
    }
};

// Macro-averages one iteration's reformulations. Turn-1 instances have no
// history and are excluded from the history overlap average only.
inline QueryStats analyze_iteration(const std::vector<std::string>& queries,
                                    const std::vector<ReformulationInstance>& instances,
                                    const std::vector<Passage>& passages, int iteration) {
    if (queries.size() != instances.size()) {
        throw ValidationError("one reformulated query per instance is required (" +
                              std::to_string(queries.size()) + " queries, " +
                              std::to_string(instances.size()) + " instances)");
    }
    std::unordered_map<std::string, const std::string*> passage_text;
    for (const auto& p : passages) {
        passage_text[p.passage_id] = &p.text;
    }
    QueryStats stats;
    stats.iteration = iteration;
    double dh_sum = 0.0;
    std::size_t dh_count = 0;
    double dg_sum = 0.0, len_sum = 0.0, ngram_sum = 0.0;
    for (std::size_t i = 0; i < queries.size(); ++i) {
        const auto& q = queries[i];
        const auto& inst = instances[i];
        if (!inst.history_text.empty()) {
            dh_sum += dice(q, inst.history_text);
            dh_count++;
        }
        std::string gold_text;
        for (const auto& pid : inst.gold_passage_ids) {
            auto it = passage_text.find(pid);
            if (it == passage_text.end()) {
                throw ValidationError("instance " + inst.instance_id +
                                      " references unknown passage " + pid);
            }
            if (!gold_text.empty()) {
                gold_text += " ";
            }
            gold_text += *it->second;
        }
        dg_sum += dice(q, gold_text);
        len_sum += static_cast<double>(tokenize(q).size());
        ngram_sum += distinct_ngram_ratio(q, 3);
    }
    double n = static_cast<double>(queries.size());
    if (queries.empty()) {
        return stats;
    }
    stats.dice_history = dh_count ? dh_sum / static_cast<double>(dh_count) : 0.0;
    stats.dice_gold = dg_sum / n;
    stats.token_length = len_sum / n;
    stats.distinct_3gram_ratio = ngram_sum / n;
    return stats;
}

namespace detail {

inline std::string fmt6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

inline std::string fmt2(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

}  // namespace detail

// Minimal self-contained line chart; fixed-precision coordinates keep the
// bytes reproducible.
inline void write_svg_line_chart(const std::string& title, const std::vector<double>& xs,
                                 const std::vector<double>& ys,
                                 const std::filesystem::path& path) {
    if (xs.size() != ys.size() || xs.empty()) {
        throw ValidationError("chart needs matching non-empty x/y series");
    }
    const double w = 640, h = 400, ml = 70, mr = 20, mt = 40, mb = 50;
    double xmin = xs[0], xmax = xs[0], ymin = ys[0], ymax = ys[0];
    for (std::size_t i = 0; i < xs.size(); ++i) {
        xmin = std::min(xmin, xs[i]);
        xmax = std::max(xmax, xs[i]);
        ymin = std::min(ymin, ys[i]);
        ymax = std::max(ymax, ys[i]);
    }
    if (xmax == xmin) {
        xmax = xmin + 1.0;
    }
    if (ymax == ymin) {
        ymax = ymin + 1.0;
    }
    auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (w - ml - mr); };
    auto py = [&](double y) { return h - mb - (y - ymin) / (ymax - ymin) * (h - mt - mb); };

    std::string svg;
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\" "
           "viewBox=\"0 0 640 400\">\n";
    svg += "<rect width=\"640\" height=\"400\" fill=\"white\"/>\n";
    svg += "<text x=\"320\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
           "font-size=\"16\">" + title + "</text>\n";
    svg += "<line x1=\"" + detail::fmt2(ml) + "\" y1=\"" + detail::fmt2(mt) + "\" x2=\"" +
           detail::fmt2(ml) + "\" y2=\"" + detail::fmt2(h - mb) + "\" stroke=\"black\"/>\n";
    svg += "<line x1=\"" + detail::fmt2(ml) + "\" y1=\"" + detail::fmt2(h - mb) + "\" x2=\"" +
           detail::fmt2(w - mr) + "\" y2=\"" + detail::fmt2(h - mb) + "\" stroke=\"black\"/>\n";
    svg += "<text x=\"" + detail::fmt2(ml - 8) + "\" y=\"" + detail::fmt2(h - mb + 4) +
           "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\">" +
           detail::fmt6(ymin) + "</text>\n";
    svg += "<text x=\"" + detail::fmt2(ml - 8) + "\" y=\"" + detail::fmt2(mt + 4) +
           "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\">" +
           detail::fmt6(ymax) + "</text>\n";
    std::string points;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (!points.empty()) {
            points += " ";
        }
        points += detail::fmt2(px(xs[i])) + "," + detail::fmt2(py(ys[i]));
    }
    svg += "<polyline points=\"" + points + "\" fill=\"none\" stroke=\"#1f6fb2\" "
           "stroke-width=\"2\"/>\n";
    for (std::size_t i = 0; i < xs.size(); ++i) {
        svg += "<circle cx=\"" + detail::fmt2(px(xs[i])) + "\" cy=\"" + detail::fmt2(py(ys[i])) +
               "\" r=\"3\" fill=\"#1f6fb2\"/>\n";
        svg += "<text x=\"" + detail::fmt2(px(xs[i])) + "\" y=\"" + detail::fmt2(h - mb + 18) +
               "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" +
               detail::fmt2(xs[i]) + "</text>\n";
    }
    svg += "</svg>\n";
    write_file(path, svg);
}

inline constexpr const char* kTrendCsvHeader =
    "iteration,dice_history,dice_gold,token_length,distinct_3gram_ratio";

// CSV plus one SVG per metric, named after the CSV columns.
inline void trend_report(const std::vector<QueryStats>& stats,
                         const std::filesystem::path& out_dir) {
    if (stats.empty()) {
        throw ValidationError("trend report needs at least one analyzed iteration");
    }
    std::string csv = std::string(kTrendCsvHeader) + "\n";
    std::vector<double> xs;
    std::vector<std::vector<double>> series(4);
    for (const auto& s : stats) {
        csv += std::to_string(s.iteration) + "," + detail::fmt6(s.dice_history) + "," +
               detail::fmt6(s.dice_gold) + "," + detail::fmt6(s.token_length) + "," +
               detail::fmt6(s.distinct_3gram_ratio) + "\n";
        xs.push_back(static_cast<double>(s.iteration));
        series[0].push_back(s.dice_history);
        series[1].push_back(s.dice_gold);
        series[2].push_back(s.token_length);
        series[3].push_back(s.distinct_3gram_ratio);
    }
    write_file(out_dir / "trends.csv", csv);
    const char* names[4] = {"dice_history", "dice_gold", "token_length", "distinct_3gram_ratio"};
    for (int i = 0; i < 4; ++i) {
        write_svg_line_chart(names[i], xs, series[static_cast<std::size_t>(i)],
                             out_dir / (std::string(names[i]) + ".svg"));
    }
}

}  // namespace itercqr
