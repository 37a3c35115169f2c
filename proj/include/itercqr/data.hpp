#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "itercqr/common.hpp"
#include "itercqr/text.hpp"

namespace itercqr {

struct Turn {
    int turn_index = 0;  // 1-based, consecutive within a session
    std::string query;
    std::string answer;
    std::vector<std::string> gold_passage_ids;
    std::optional<std::string> topic_label;
};

struct Session {
    std::string session_id;
    std::vector<Turn> turns;
};

struct Passage {
    std::string passage_id;
    std::string text;
};

struct ReformulationInstance {
    std::string instance_id;  // "<session_id>_<turn_index>"
    std::string session_id;
    int turn_index = 0;
    std::string current_query;
    std::string history_text;  // empty exactly when turn_index == 1
    std::vector<std::string> gold_passage_ids;
    std::optional<std::string> bootstrap_rewrite;
    std::optional<bool> topic_shift_by_label;
    std::optional<bool> topic_shift_by_pid;
};

inline std::string instance_id_for(const std::string& session_id, int turn_index) {
    return session_id + "_" + std::to_string(turn_index);
}

// ---------------------------------------------------------------------------
// Corpus loading (JSONL)
// ---------------------------------------------------------------------------

namespace detail {

inline json parse_json_line(const std::filesystem::path& path, int lineno, const std::string& line) {
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) {
        throw ParseError(path.string() + ":" + std::to_string(lineno) + ": malformed JSON line");
    }
    return j;
}

}  // namespace detail

inline std::vector<Session> load_sessions(const std::filesystem::path& path) {
    std::vector<Session> sessions;
    std::unordered_set<std::string> seen_ids;
    for (const auto& [lineno, line] : read_numbered_lines(path)) {
        json j = detail::parse_json_line(path, lineno, line);
        Session s;
        try {
            s.session_id = j.at("session_id").get<std::string>();
            for (const auto& jt : j.at("turns")) {
                Turn t;
                t.turn_index = jt.at("turn").get<int>();
                t.query = jt.at("query").get<std::string>();
                t.answer = jt.value("answer", std::string{});
                if (jt.contains("gold_pids")) {
                    t.gold_passage_ids = jt.at("gold_pids").get<std::vector<std::string>>();
                }
                if (jt.contains("topic") && !jt.at("topic").is_null()) {
                    t.topic_label = jt.at("topic").get<std::string>();
                }
                s.turns.push_back(std::move(t));
            }
        } catch (const json::exception& e) {
            throw ParseError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
        if (!seen_ids.insert(s.session_id).second) {
            throw ValidationError("duplicate session_id: " + s.session_id);
        }
        for (std::size_t i = 0; i < s.turns.size(); ++i) {
            if (s.turns[i].turn_index != static_cast<int>(i) + 1) {
                throw ValidationError("session " + s.session_id +
                                      ": turn indices must be consecutive from 1");
            }
            if (s.turns[i].query.empty()) {
                throw ValidationError("session " + s.session_id + " turn " +
                                      std::to_string(s.turns[i].turn_index) + ": empty query");
            }
        }
        sessions.push_back(std::move(s));
    }
    return sessions;
}

inline std::vector<Passage> load_passages(const std::filesystem::path& path) {
    std::vector<Passage> passages;
    std::unordered_set<std::string> seen_ids;
    for (const auto& [lineno, line] : read_numbered_lines(path)) {
        json j = detail::parse_json_line(path, lineno, line);
        Passage p;
        try {
            p.passage_id = j.at("pid").get<std::string>();
            p.text = j.at("text").get<std::string>();
        } catch (const json::exception& e) {
            throw ParseError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
        if (p.text.empty()) {
            throw ValidationError("passage " + p.passage_id + ": empty text");
        }
        if (!seen_ids.insert(p.passage_id).second) {
            throw ValidationError("duplicate passage_id: " + p.passage_id);
        }
        passages.push_back(std::move(p));
    }
    return passages;
}

inline std::pair<std::vector<Session>, std::vector<Passage>> load_corpus(
    const std::filesystem::path& sessions_path, const std::filesystem::path& passages_path) {
    return {load_sessions(sessions_path), load_passages(passages_path)};
}

// ---------------------------------------------------------------------------
// History construction
// ---------------------------------------------------------------------------

inline constexpr const char* kSepToken = "<sep>";

// Serialized context for turn k: most recent turn first, query before answer,
// turns joined by the separator token. Empty for the first turn.
inline std::string build_history(const Session& session, int k) {
    if (k < 1 || k > static_cast<int>(session.turns.size())) {
        throw ValidationError("turn index " + std::to_string(k) + " out of range for session " +
                              session.session_id);
    }
    std::string out;
    for (int j = k - 1; j >= 1; --j) {
        const Turn& t = session.turns[static_cast<std::size_t>(j) - 1];
        if (!out.empty()) {
            out += " ";
            out += kSepToken;
            out += " ";
        }
        out += "question: " + t.query + " answer: " + t.answer;
    }
    return out;
}

// Model input for one instance; the current query anchors the front.
inline std::string model_input(const ReformulationInstance& inst) {
    if (inst.history_text.empty()) {
        return inst.current_query;
    }
    return inst.current_query + " " + kSepToken + " " + inst.history_text;
}

inline std::vector<ReformulationInstance> build_instances(const std::vector<Session>& sessions) {
    std::vector<ReformulationInstance> out;
    for (const auto& s : sessions) {
        std::unordered_set<std::string> seen_pids;
        for (const auto& t : s.turns) {
            ReformulationInstance inst;
            inst.instance_id = instance_id_for(s.session_id, t.turn_index);
            inst.session_id = s.session_id;
            inst.turn_index = t.turn_index;
            inst.current_query = t.query;
            inst.history_text = build_history(s, t.turn_index);
            inst.gold_passage_ids = t.gold_passage_ids;

            if (t.topic_label.has_value()) {
                if (t.turn_index == 1) {
                    inst.topic_shift_by_label = false;  // no preceding label to differ from
                } else {
                    const Turn& prev = s.turns[static_cast<std::size_t>(t.turn_index) - 2];
                    inst.topic_shift_by_label =
                        !prev.topic_label.has_value() || *prev.topic_label != *t.topic_label;
                }
            }
            if (!t.gold_passage_ids.empty()) {
                // Shifted when no gold pid of this turn was gold in any earlier turn.
                bool seen_before = false;
                for (const auto& pid : t.gold_passage_ids) {
                    if (seen_pids.count(pid)) {
                        seen_before = true;
                        break;
                    }
                }
                inst.topic_shift_by_pid = !seen_before;
            }
            for (const auto& pid : t.gold_passage_ids) {
                seen_pids.insert(pid);
            }
            out.push_back(std::move(inst));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Low-resource sampling: whole sessions, so history chains stay intact.
// ---------------------------------------------------------------------------

inline std::vector<ReformulationInstance> sample_fraction(
    const std::vector<ReformulationInstance>& instances, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0) || fraction > 1.0) {
        throw ValidationError("fraction must be in (0, 1]");
    }
    if (fraction == 1.0 || instances.empty()) {
        return instances;
    }
    std::vector<std::string> session_order;
    std::unordered_map<std::string, std::size_t> counts;
    for (const auto& inst : instances) {
        if (!counts.count(inst.session_id)) {
            session_order.push_back(inst.session_id);
        }
        counts[inst.session_id]++;
    }
    std::mt19937_64 rng(seed);
    deterministic_shuffle(session_order, rng);

    const double total = static_cast<double>(instances.size());
    std::unordered_set<std::string> selected;
    std::size_t covered = 0;
    for (const auto& sid : session_order) {
        if (static_cast<double>(covered) / total >= fraction) {
            break;
        }
        selected.insert(sid);
        covered += counts[sid];
    }
    std::vector<ReformulationInstance> out;
    for (const auto& inst : instances) {
        if (selected.count(inst.session_id)) {
            out.push_back(inst);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Dataset versions D_t
// ---------------------------------------------------------------------------

enum class Provenance { llm_bootstrap, file, generated };

inline std::string to_string(Provenance p) {
    switch (p) {
        case Provenance::llm_bootstrap: return "llm_bootstrap";
        case Provenance::file: return "file";
        case Provenance::generated: return "generated";
    }
    throw InvariantError("unknown provenance");
}

inline Provenance provenance_from_string(const std::string& s) {
    if (s == "llm_bootstrap") return Provenance::llm_bootstrap;
    if (s == "file") return Provenance::file;
    if (s == "generated") return Provenance::generated;
    throw FormatError("unknown provenance: " + s);
}

struct CandidateRow {
    std::string text;
    double logprob = 0.0;  // total sequence log-probability under the generating model
    double reward = 0.0;   // raw cosine reward against the gold passage embedding(s)
};

struct DatasetRow {
    std::string instance_id;
    std::string target;                    // iteration 0 only
    std::vector<CandidateRow> candidates;  // iterations >= 1, exactly n entries
};

struct DatasetVersion {
    int iteration = 0;
    int n = 1;  // candidates per row for iteration >= 1
    Provenance provenance = Provenance::generated;
    std::vector<DatasetRow> rows;
};

inline void validate_dataset(const DatasetVersion& d) {
    std::unordered_set<std::string> ids;
    for (const auto& row : d.rows) {
        if (!ids.insert(row.instance_id).second) {
            throw ValidationError("duplicate instance_id in dataset: " + row.instance_id);
        }
        if (d.iteration == 0) {
            if (!row.candidates.empty()) {
                throw FormatError("iteration-0 dataset rows carry a single target, not candidates");
            }
        } else if (static_cast<int>(row.candidates.size()) != d.n) {
            throw FormatError("row " + row.instance_id + " has " +
                              std::to_string(row.candidates.size()) + " candidates, expected " +
                              std::to_string(d.n));
        }
    }
}

// Every row must refer to a known instance.
inline void validate_dataset_against(const DatasetVersion& d,
                                     const std::vector<ReformulationInstance>& instances) {
    std::unordered_set<std::string> known;
    for (const auto& inst : instances) {
        known.insert(inst.instance_id);
    }
    for (const auto& row : d.rows) {
        if (!known.count(row.instance_id)) {
            throw ValidationError("dataset row refers to unknown instance: " + row.instance_id);
        }
    }
}

inline void persist_dataset_version(const DatasetVersion& d, const std::filesystem::path& path) {
    validate_dataset(d);
    std::string out;
    json header = {{"iteration", d.iteration}, {"n", d.n}, {"provenance", to_string(d.provenance)}};
    out += header.dump();
    out += "\n";
    for (const auto& row : d.rows) {
        json j;
        j["instance_id"] = row.instance_id;
        if (d.iteration == 0) {
            j["target"] = row.target;
        } else {
            json cands = json::array();
            for (const auto& c : row.candidates) {
                cands.push_back({{"text", c.text}, {"logprob", c.logprob}, {"reward", c.reward}});
            }
            j["candidates"] = std::move(cands);
        }
        out += j.dump();
        out += "\n";
    }
    write_file(path, out);
}

inline DatasetVersion load_dataset_version(const std::filesystem::path& path) {
    auto lines = read_numbered_lines(path);
    if (lines.empty()) {
        throw FormatError(path.string() + ": missing dataset header");
    }
    DatasetVersion d;
    {
        const auto& [lineno, line] = lines.front();
        json header = detail::parse_json_line(path, lineno, line);
        try {
            d.iteration = header.at("iteration").get<int>();
            d.n = header.at("n").get<int>();
            d.provenance = provenance_from_string(header.at("provenance").get<std::string>());
        } catch (const json::exception& e) {
            throw FormatError(path.string() + ": bad dataset header: " + e.what());
        }
    }
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const auto& [lineno, line] = lines[i];
        json j = detail::parse_json_line(path, lineno, line);
        DatasetRow row;
        try {
            row.instance_id = j.at("instance_id").get<std::string>();
            if (d.iteration == 0) {
                row.target = j.at("target").get<std::string>();
            } else {
                for (const auto& jc : j.at("candidates")) {
                    CandidateRow c;
                    c.text = jc.at("text").get<std::string>();
                    c.logprob = jc.at("logprob").get<double>();
                    c.reward = jc.at("reward").get<double>();
                    row.candidates.push_back(std::move(c));
                }
            }
        } catch (const json::exception& e) {
            throw ParseError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
        d.rows.push_back(std::move(row));
    }
    validate_dataset(d);
    return d;
}

// ---------------------------------------------------------------------------
// Qrels (TREC text format: "<qid> 0 <pid> 1")
// ---------------------------------------------------------------------------

struct QrelsEntry {
    std::string query_id;
    std::string passage_id;
};

inline void write_qrels(const std::vector<QrelsEntry>& entries, const std::filesystem::path& path) {
    std::string out;
    for (const auto& e : entries) {
        out += e.query_id + " 0 " + e.passage_id + " 1\n";
    }
    write_file(path, out);
}

// ---------------------------------------------------------------------------
// Synthetic coreference corpus
// ---------------------------------------------------------------------------

struct ToyCorpus {
    std::vector<Session> sessions;
    std::vector<Passage> passages;
    std::vector<QrelsEntry> qrels;
};

namespace detail {

// Pronounceable pseudo-words keep the synthetic vocabulary disjoint from the
// fixed templates.
inline std::string pseudo_word(std::mt19937_64& rng, std::size_t syllables = 3) {
    static const char* consonants = "bdfgklmnprstvz";
    static const char* vowels = "aeiou";
    std::string w;
    for (std::size_t i = 0; i < syllables; ++i) {
        w += consonants[rng() % 14];
        w += vowels[rng() % 5];
    }
    return w;
}

struct ToyTemplate {
    const char* query;    // contains "{p}" where the pronoun goes
    const char* content;  // discriminative content word, shared by query and passage
};

inline const std::vector<ToyTemplate>& toy_templates() {
    static const std::vector<ToyTemplate> templates = {
        {"where is {p} located", "located"},
        {"who created {p}", "created"},
        {"when was {p} founded", "founded"},
        {"why is {p} popular", "popular"},
        {"how is {p} made", "made"},
        {"what does {p} produce", "produce"},
        {"where did {p} originate", "originate"},
        {"who owns {p}", "owns"},
    };
    return templates;
}

inline std::string expand_pronoun(std::string templ, const std::string& pronoun) {
    auto pos = templ.find("{p}");
    templ.replace(pos, 3, pronoun);
    return templ;
}

}  // namespace detail

// Each session introduces one distinct entity in turn 1 and refers to it with
// a pronoun afterwards. Every turn has its own gold passage carrying the
// entity, the turn's content word, and the session descriptors, so resolving
// the pronoun (and pulling context words) is what separates the passages.
inline ToyCorpus generate_toy_corpus(std::uint64_t seed, int num_sessions, int turns_per_session,
                                     int entity_vocab_size) {
    if (num_sessions <= 0 || turns_per_session <= 0 || entity_vocab_size <= 0) {
        throw ValidationError("toy corpus counts must be positive");
    }
    if (entity_vocab_size < num_sessions) {
        throw ValidationError("entity_vocab_size must be >= num_sessions");
    }
    std::mt19937_64 rng(seed);

    std::vector<std::string> entities;
    std::set<std::string> unique;
    while (static_cast<int>(entities.size()) < entity_vocab_size) {
        std::string w = detail::pseudo_word(rng);
        if (unique.insert(w).second) {
            entities.push_back(w);
        }
    }
    deterministic_shuffle(entities, rng);

    const auto& templates = detail::toy_templates();
    ToyCorpus corpus;
    for (int s = 0; s < num_sessions; ++s) {
        const std::string& entity = entities[static_cast<std::size_t>(s)];
        std::string sid = "s" + std::string(s < 10 ? "0" : "") + std::to_string(s);
        std::string pronoun = (rng() % 4 == 0) ? "they" : "it";
        // Session descriptors: shared by all of the session's passages and
        // introduced in the turn-1 answer, so later history carries them.
        std::string cat = detail::pseudo_word(rng);
        std::string region = detail::pseudo_word(rng);

        Session session;
        session.session_id = sid;

        // Distinct template per later turn within a session.
        std::vector<std::size_t> order(templates.size());
        for (std::size_t i = 0; i < order.size(); ++i) {
            order[i] = i;
        }
        deterministic_shuffle(order, rng);

        for (int k = 1; k <= turns_per_session; ++k) {
            Turn turn;
            turn.turn_index = k;
            std::string pid = sid + "_p" + std::to_string(k);
            std::string attr1 = detail::pseudo_word(rng);
            std::string attr2 = detail::pseudo_word(rng);
            std::string passage_text;
            if (k == 1) {
                turn.query = "what is " + entity;
                turn.answer = entity + " is a " + cat + " from " + region + " known for " + attr1;
                passage_text = entity + " overview the " + cat + " " + entity + " comes from " +
                               region + " and is known for " + attr1 + " " + attr2;
            } else {
                const auto& t = templates[order[static_cast<std::size_t>(k - 2) % order.size()]];
                turn.query = detail::expand_pronoun(t.query, pronoun);
                turn.answer = "the " + entity + " " + t.content + " " + attr1;
                passage_text = entity + " " + t.content + " the " + cat + " " + entity + " " +
                               t.content + " " + attr1 + " " + attr2 + " in " + region;
            }
            turn.gold_passage_ids = {pid};
            // Final turn drifts to a related topic label; earlier turns share one.
            turn.topic_label =
                (turns_per_session > 1 && k == turns_per_session) ? entity + "-related" : entity;
            corpus.passages.push_back({pid, passage_text});
            corpus.qrels.push_back({instance_id_for(sid, k), pid});
            session.turns.push_back(std::move(turn));
        }
        corpus.sessions.push_back(std::move(session));
    }
    return corpus;
}

// Rule-based pronoun resolver fixture: resolves every second eligible turn
// (exactly 50%), in corpus order. Turn-1 queries pass through unchanged.
struct OfflineRewrite {
    std::string instance_id;
    std::string rewrite;
};

inline std::vector<OfflineRewrite> imperfect_resolver_rewrites(const std::vector<Session>& sessions,
                                                               double resolve_rate = 0.5) {
    if (resolve_rate < 0.0 || resolve_rate > 1.0) {
        throw ValidationError("resolve_rate must be in [0, 1]");
    }
    std::vector<OfflineRewrite> out;
    double budget = 0.0;
    for (const auto& s : sessions) {
        std::string entity;
        if (!s.turns.empty()) {
            auto toks = tokenize(s.turns.front().query);
            if (!toks.empty()) {
                entity = toks.back();  // turn-1 queries introduce the entity last
            }
        }
        for (const auto& t : s.turns) {
            std::string rewrite = t.query;
            auto toks = tokenize(t.query);
            bool has_pronoun = std::find(toks.begin(), toks.end(), "it") != toks.end() ||
                               std::find(toks.begin(), toks.end(), "they") != toks.end();
            if (t.turn_index > 1 && has_pronoun && !entity.empty()) {
                budget += resolve_rate;
                if (budget >= 1.0 - 1e-12) {
                    budget -= 1.0;
                    std::vector<std::string> resolved;
                    for (auto& tok : toks) {
                        resolved.push_back(tok == "it" || tok == "they" ? entity : tok);
                    }
                    rewrite = join_tokens(resolved);
                }
            }
            out.push_back({instance_id_for(s.session_id, t.turn_index), rewrite});
        }
    }
    return out;
}

inline void write_sessions_jsonl(const std::vector<Session>& sessions,
                                 const std::filesystem::path& path) {
    std::string out;
    for (const auto& s : sessions) {
        json turns = json::array();
        for (const auto& t : s.turns) {
            json jt = {{"turn", t.turn_index},
                       {"query", t.query},
                       {"answer", t.answer},
                       {"gold_pids", t.gold_passage_ids}};
            jt["topic"] = t.topic_label.has_value() ? json(*t.topic_label) : json(nullptr);
            turns.push_back(std::move(jt));
        }
        out += json{{"session_id", s.session_id}, {"turns", std::move(turns)}}.dump();
        out += "\n";
    }
    write_file(path, out);
}

inline void write_passages_jsonl(const std::vector<Passage>& passages,
                                 const std::filesystem::path& path) {
    std::string out;
    for (const auto& p : passages) {
        out += json{{"pid", p.passage_id}, {"text", p.text}}.dump();
        out += "\n";
    }
    write_file(path, out);
}

inline void write_rewrites_jsonl(const std::vector<OfflineRewrite>& rewrites,
                                 const std::filesystem::path& path) {
    std::string out;
    for (const auto& r : rewrites) {
        out += json{{"instance_id", r.instance_id}, {"rewrite", r.rewrite}}.dump();
        out += "\n";
    }
    write_file(path, out);
}

}  // namespace itercqr
