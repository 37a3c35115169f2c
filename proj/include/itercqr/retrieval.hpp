#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "itercqr/common.hpp"
#include "itercqr/data.hpp"
#include "itercqr/embedding.hpp"
#include "itercqr/text.hpp"

namespace itercqr {

struct RunEntry {
    std::string query_id;
    std::vector<std::pair<std::string, double>> ranking;  // (passage_id, score), scores non-increasing
    std::string tag = "itercqr";
};

// ---------------------------------------------------------------------------
// Dense retrieval: exact cosine over the whole store.
// ---------------------------------------------------------------------------

inline RunEntry dense_search(const std::string& query_text, const EmbeddingStore& store,
                             std::size_t k, const std::string& query_id = "q") {
    if (store.rows() == 0) {
        throw ValidationError("dense search over an empty store");
    }
    if (k < 1) {
        throw ValidationError("k must be at least 1");
    }
    EmbeddingVector q = encode(query_text, store.dim);
    std::vector<std::pair<std::string, double>> scored;
    scored.reserve(store.id_to_row.size());
    for (const auto& [pid, row] : store.id_to_row) {
        const float* p = store.matrix.data() + row * store.dim;
        scored.emplace_back(pid, cosine(q, EmbeddingVector(p, p + store.dim)));
    }
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) {
            return a.second > b.second;
        }
        return a.first < b.first;
    });
    if (scored.size() > k) {
        scored.resize(k);
    }
    return RunEntry{query_id, std::move(scored), "itercqr"};
}

// ---------------------------------------------------------------------------
// BM25 with Lucene-style non-negative IDF.
// ---------------------------------------------------------------------------

struct BM25Index {
    double k1 = 1.2;
    double b = 0.75;
    std::vector<std::string> doc_ids;       // row -> passage id
    std::vector<std::uint32_t> doc_lengths;  // tokens per doc
    std::map<std::string, std::vector<std::pair<std::uint32_t, std::uint32_t>>> postings;

    std::size_t doc_count() const { return doc_ids.size(); }

    double avgdl() const {
        if (doc_lengths.empty()) {
            return 0.0;
        }
        double sum = 0.0;
        for (auto dl : doc_lengths) {
            sum += dl;
        }
        return sum / static_cast<double>(doc_lengths.size());
    }

    double idf(const std::string& term) const {
        auto it = postings.find(term);
        if (it == postings.end()) {
            return 0.0;
        }
        double n = static_cast<double>(doc_count());
        double df = static_cast<double>(it->second.size());
        return std::log(1.0 + (n - df + 0.5) / (df + 0.5));
    }
};

inline BM25Index bm25_build(const std::vector<Passage>& passages, double k1 = 1.2,
                            double b = 0.75) {
    BM25Index index;
    index.k1 = k1;
    index.b = b;
    std::set<std::string> seen;
    for (const auto& p : passages) {
        if (!seen.insert(p.passage_id).second) {
            throw ValidationError("duplicate passage id in index: " + p.passage_id);
        }
        std::uint32_t row = static_cast<std::uint32_t>(index.doc_ids.size());
        index.doc_ids.push_back(p.passage_id);
        std::vector<std::string> tokens = tokenize(p.text);
        index.doc_lengths.push_back(static_cast<std::uint32_t>(tokens.size()));
        std::map<std::string, std::uint32_t> tf;
        for (const auto& t : tokens) {
            tf[t]++;
        }
        for (const auto& [term, count] : tf) {
            index.postings[term].emplace_back(row, count);
        }
    }
    return index;
}

// Query terms are deduplicated; documents sharing no term are omitted.
inline RunEntry bm25_search(const BM25Index& index, const std::string& query_text, std::size_t k,
                            const std::string& query_id = "q") {
    if (k < 1) {
        throw ValidationError("k must be at least 1");
    }
    std::set<std::string> terms;
    for (const auto& t : tokenize(query_text)) {
        terms.insert(t);
    }
    const double avgdl = index.avgdl();
    std::map<std::uint32_t, double> scores;
    for (const auto& term : terms) {
        auto it = index.postings.find(term);
        if (it == index.postings.end()) {
            continue;
        }
        double idf = index.idf(term);
        for (const auto& [row, tf] : it->second) {
            double dl = static_cast<double>(index.doc_lengths[row]);
            double tfd = static_cast<double>(tf);
            double norm = tfd + index.k1 * (1.0 - index.b + index.b * dl / avgdl);
            scores[row] += idf * tfd * (index.k1 + 1.0) / norm;
        }
    }
    std::vector<std::pair<std::string, double>> ranked;
    ranked.reserve(scores.size());
    for (const auto& [row, score] : scores) {
        ranked.emplace_back(index.doc_ids[row], score);
    }
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) {
            return a.second > b.second;
        }
        return a.first < b.first;
    });
    if (ranked.size() > k) {
        ranked.resize(k);
    }
    return RunEntry{query_id, std::move(ranked), "itercqr"};
}

// JSON container keeps the index human-inspectable at desk scale.
inline void persist_bm25(const BM25Index& index, const std::filesystem::path& path) {
    json postings = json::object();
    for (const auto& [term, plist] : index.postings) {
        json rows = json::array();
        for (const auto& [row, tf] : plist) {
            rows.push_back(json::array({row, tf}));
        }
        postings[term] = std::move(rows);
    }
    json j = {{"format", "ITCQBM25"}, {"version", 1},          {"k1", index.k1},
              {"b", index.b},         {"doc_ids", index.doc_ids}, {"doc_lengths", index.doc_lengths},
              {"postings", std::move(postings)}};
    write_file(path, j.dump(2) + "\n");
}

inline BM25Index load_bm25(const std::filesystem::path& path) {
    json j = json::parse(read_file(path), nullptr, false);
    if (j.is_discarded()) {
        throw FormatError(path.string() + ": malformed index JSON");
    }
    try {
        if (j.at("format").get<std::string>() != "ITCQBM25" || j.at("version").get<int>() != 1) {
            throw FormatError(path.string() + ": unsupported index container");
        }
        BM25Index index;
        index.k1 = j.at("k1").get<double>();
        index.b = j.at("b").get<double>();
        index.doc_ids = j.at("doc_ids").get<std::vector<std::string>>();
        index.doc_lengths = j.at("doc_lengths").get<std::vector<std::uint32_t>>();
        for (const auto& [term, rows] : j.at("postings").items()) {
            auto& plist = index.postings[term];
            for (const auto& entry : rows) {
                plist.emplace_back(entry.at(0).get<std::uint32_t>(),
                                   entry.at(1).get<std::uint32_t>());
            }
        }
        if (index.doc_ids.size() != index.doc_lengths.size()) {
            throw FormatError(path.string() + ": doc id/length count mismatch");
        }
        return index;
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": bad index container: " + e.what());
    }
}

// ---------------------------------------------------------------------------
// TREC run files: "qid Q0 pid rank score tag".
// ---------------------------------------------------------------------------

inline std::string format_score(double score) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", score);
    return buf;
}

inline void write_run(const std::vector<RunEntry>& entries, const std::filesystem::path& path) {
    std::string out;
    for (const auto& e : entries) {
        for (std::size_t i = 0; i < e.ranking.size(); ++i) {
            out += e.query_id + " Q0 " + e.ranking[i].first + " " + std::to_string(i + 1) + " " +
                   format_score(e.ranking[i].second) + " " + e.tag + "\n";
        }
    }
    write_file(path, out);
}

inline std::vector<RunEntry> read_run(const std::filesystem::path& path) {
    std::vector<RunEntry> entries;
    std::set<std::string> closed;
    for (const auto& [lineno, line] : read_numbered_lines(path)) {
        std::istringstream ss(line);
        std::string qid, q0, pid, tag;
        long rank = 0;
        double score = 0.0;
        if (!(ss >> qid >> q0 >> pid >> rank >> score >> tag) || q0 != "Q0") {
            throw ParseError(path.string() + ":" + std::to_string(lineno) +
                             ": malformed run line");
        }
        if (entries.empty() || entries.back().query_id != qid) {
            if (closed.count(qid)) {
                throw ParseError(path.string() + ":" + std::to_string(lineno) +
                                 ": query " + qid + " is split across the file");
            }
            if (!entries.empty()) {
                closed.insert(entries.back().query_id);
            }
            entries.push_back(RunEntry{qid, {}, tag});
        }
        RunEntry& e = entries.back();
        if (rank != static_cast<long>(e.ranking.size()) + 1) {
            throw ParseError(path.string() + ":" + std::to_string(lineno) + ": rank " +
                             std::to_string(rank) + " breaks the contiguous 1..k order");
        }
        if (!e.ranking.empty() && score > e.ranking.back().second) {
            throw ParseError(path.string() + ":" + std::to_string(lineno) +
                             ": scores must be non-increasing within a query");
        }
        e.ranking.emplace_back(pid, score);
    }
    return entries;
}

}  // namespace itercqr
