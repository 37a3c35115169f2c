#include <catch2/catch_amalgamated.hpp>

#include <map>
#include <set>

#include "helpers.hpp"
#include "itercqr/data.hpp"

using namespace itercqr;

namespace {

Session make_session(const std::string& sid, int turns) {
    Session s;
    s.session_id = sid;
    for (int k = 1; k <= turns; ++k) {
        Turn t;
        t.turn_index = k;
        t.query = "query " + std::to_string(k);
        t.answer = "answer " + std::to_string(k);
        t.gold_passage_ids = {sid + "_p" + std::to_string(k)};
        s.turns.push_back(t);
    }
    return s;
}

}  // namespace

TEST_CASE("session loader enforces ids, turn order, and non-empty queries") {
    TempDir tmp;
    auto path = tmp / "sessions.jsonl";

    SECTION("valid file round-trips") {
        write_sessions_jsonl({make_session("s1", 2), make_session("s2", 1)}, path);
        auto sessions = load_sessions(path);
        REQUIRE(sessions.size() == 2);
        CHECK(sessions[0].session_id == "s1");
        CHECK(sessions[0].turns.size() == 2);
        CHECK(sessions[0].turns[1].query == "query 2");
    }

    SECTION("duplicate session ids are rejected") {
        write_sessions_jsonl({make_session("s1", 1), make_session("s1", 1)}, path);
        CHECK_THROWS_AS(load_sessions(path), ValidationError);
    }

    SECTION("turn indices must be consecutive from 1") {
        Session s = make_session("s1", 2);
        s.turns[1].turn_index = 3;
        write_sessions_jsonl({s}, path);
        CHECK_THROWS_AS(load_sessions(path), ValidationError);
    }

    SECTION("empty query is rejected") {
        Session s = make_session("s1", 1);
        s.turns[0].query = "";
        write_sessions_jsonl({s}, path);
        CHECK_THROWS_AS(load_sessions(path), ValidationError);
    }

    SECTION("malformed JSON names the line number") {
        write_file(path, "{\"session_id\": \"a\", \"turns\": []}\nnot json\n");
        try {
            load_sessions(path);
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(std::string(e.what()).find(":2") != std::string::npos);
        }
    }
}

TEST_CASE("passage loader rejects duplicates and empty text") {
    TempDir tmp;
    auto path = tmp / "passages.jsonl";
    write_passages_jsonl({{"p1", "alpha"}, {"p2", "beta"}}, path);
    auto passages = load_passages(path);
    REQUIRE(passages.size() == 2);
    CHECK(passages[1].text == "beta");

    write_passages_jsonl({{"p1", "alpha"}, {"p1", "beta"}}, path);
    CHECK_THROWS_AS(load_passages(path), ValidationError);

    write_file(path, "{\"pid\": \"p1\", \"text\": \"\"}\n");
    CHECK_THROWS_AS(load_passages(path), ValidationError);
}

TEST_CASE("history serializes most recent turn first") {
    Session s = make_session("s1", 3);
    CHECK(build_history(s, 1) == "");
    CHECK(build_history(s, 2) == "question: query 1 answer: answer 1");
    CHECK(build_history(s, 3) ==
          "question: query 2 answer: answer 2 <sep> question: query 1 answer: answer 1");
    CHECK_THROWS_AS(build_history(s, 0), ValidationError);
    CHECK_THROWS_AS(build_history(s, 5), ValidationError);
}

TEST_CASE("model input concatenates query and history with the separator") {
    auto instances = build_instances({make_session("s1", 2)});
    REQUIRE(instances.size() == 2);
    CHECK(model_input(instances[0]) == "query 1");
    CHECK(model_input(instances[1]) == "query 2 <sep> question: query 1 answer: answer 1");
    CHECK(instances[0].instance_id == "s1_1");
    CHECK(instances[1].instance_id == "s1_2");
}

TEST_CASE("topic-shift flags by label and by gold pid") {
    Session s;
    s.session_id = "s1";
    auto add = [&](const std::string& topic, std::vector<std::string> pids) {
        Turn t;
        t.turn_index = static_cast<int>(s.turns.size()) + 1;
        t.query = "q" + std::to_string(t.turn_index);
        t.answer = "a";
        t.topic_label = topic;
        t.gold_passage_ids = std::move(pids);
        s.turns.push_back(t);
    };
    add("cats", {"p1"});
    add("cats", {"p1"});  // same topic, seen pid
    add("dogs", {"p2"});  // label shift, new pid
    add("dogs", {"p1"});  // no label shift, pid seen at turns 1-2

    auto inst = build_instances({s});
    REQUIRE(inst.size() == 4);
    // first turn: never label-shifted, always pid-shifted when it has golds
    CHECK(inst[0].topic_shift_by_label.value() == false);
    CHECK(inst[0].topic_shift_by_pid == true);
    CHECK(inst[1].topic_shift_by_label.value() == false);
    CHECK(inst[1].topic_shift_by_pid == false);
    CHECK(inst[2].topic_shift_by_label.value() == true);
    CHECK(inst[2].topic_shift_by_pid == true);
    CHECK(inst[3].topic_shift_by_label.value() == false);
    CHECK(inst[3].topic_shift_by_pid == false);
}

TEST_CASE("label flag is unset when labels are missing") {
    Session s = make_session("s1", 2);  // no topic labels
    auto inst = build_instances({s});
    CHECK_FALSE(inst[0].topic_shift_by_label.has_value());
    CHECK_FALSE(inst[1].topic_shift_by_label.has_value());
}

TEST_CASE("sample_fraction keeps whole sessions and validates the fraction") {
    std::vector<Session> sessions;
    for (int i = 0; i < 10; ++i) {
        sessions.push_back(make_session("s" + std::to_string(i), 3));
    }
    auto all = build_instances(sessions);
    CHECK(sample_fraction(all, 1.0, 7).size() == all.size());

    auto half = sample_fraction(all, 0.5, 7);
    CHECK(half.size() >= all.size() / 2);
    CHECK(half.size() < all.size());
    std::map<std::string, int> per_session;
    for (const auto& inst : half) {
        per_session[inst.session_id]++;
    }
    for (const auto& [sid, count] : per_session) {
        CHECK(count == 3);  // sessions are sampled whole
    }
    // seed-stable
    auto again = sample_fraction(all, 0.5, 7);
    REQUIRE(again.size() == half.size());
    for (std::size_t i = 0; i < half.size(); ++i) {
        CHECK(again[i].instance_id == half[i].instance_id);
    }

    CHECK_THROWS_AS(sample_fraction(all, 0.0, 7), ValidationError);
    CHECK_THROWS_AS(sample_fraction(all, 1.5, 7), ValidationError);
}

TEST_CASE("dataset versions round-trip and validate row shape") {
    TempDir tmp;
    DatasetVersion d0;
    d0.iteration = 0;
    d0.n = 1;
    d0.provenance = Provenance::llm_bootstrap;
    d0.rows.push_back({"s1_1", "what is alpha", {}});
    d0.rows.push_back({"s1_2", "where is alpha made", {}});
    persist_dataset_version(d0, tmp / "d0.jsonl");
    auto loaded = load_dataset_version(tmp / "d0.jsonl");
    CHECK(loaded.iteration == 0);
    CHECK(loaded.provenance == Provenance::llm_bootstrap);
    REQUIRE(loaded.rows.size() == 2);
    CHECK(loaded.rows[1].target == "where is alpha made");

    DatasetVersion d1;
    d1.iteration = 1;
    d1.n = 2;
    d1.provenance = Provenance::generated;
    d1.rows.push_back({"s1_1", "", {{"cand a", -1.5, 0.25}, {"cand b", -2.5, 0.75}}});
    persist_dataset_version(d1, tmp / "d1.jsonl");
    auto l1 = load_dataset_version(tmp / "d1.jsonl");
    REQUIRE(l1.rows.size() == 1);
    REQUIRE(l1.rows[0].candidates.size() == 2);
    CHECK(l1.rows[0].candidates[1].text == "cand b");
    CHECK(l1.rows[0].candidates[1].logprob == -2.5);
    CHECK(l1.rows[0].candidates[1].reward == 0.75);

    SECTION("iteration-0 rows must not carry candidates") {
        DatasetVersion bad = d0;
        bad.rows[0].candidates.push_back({"x", 0.0, 0.0});
        CHECK_THROWS_AS(persist_dataset_version(bad, tmp / "bad.jsonl"), FormatError);
    }
    SECTION("candidate count must equal n for later iterations") {
        DatasetVersion bad = d1;
        bad.rows[0].candidates.pop_back();
        CHECK_THROWS_AS(persist_dataset_version(bad, tmp / "bad.jsonl"), FormatError);
    }
    SECTION("duplicate instance ids are rejected") {
        DatasetVersion bad = d0;
        bad.rows.push_back(bad.rows[0]);
        CHECK_THROWS_AS(persist_dataset_version(bad, tmp / "bad.jsonl"), ValidationError);
    }
    SECTION("rows must reference known instances") {
        auto instances = build_instances({make_session("s1", 2)});
        CHECK_NOTHROW(validate_dataset_against(d0, instances));
        DatasetVersion bad = d0;
        bad.rows[0].instance_id = "ghost_1";
        CHECK_THROWS_AS(validate_dataset_against(bad, instances), ValidationError);
    }
}

TEST_CASE("toy corpus generation is seed-deterministic") {
    ToyCorpus a = generate_toy_corpus(0, 6, 4, 8);
    ToyCorpus b = generate_toy_corpus(0, 6, 4, 8);
    ToyCorpus c = generate_toy_corpus(1, 6, 4, 8);

    REQUIRE(a.sessions.size() == 6);
    REQUIRE(a.sessions[0].turns.size() == 4);
    CHECK(a.passages.size() == 24);
    CHECK(a.qrels.size() == 24);

    TempDir tmp;
    write_sessions_jsonl(a.sessions, tmp / "a.jsonl");
    write_sessions_jsonl(b.sessions, tmp / "b.jsonl");
    write_sessions_jsonl(c.sessions, tmp / "c.jsonl");
    CHECK(read_file(tmp / "a.jsonl") == read_file(tmp / "b.jsonl"));
    CHECK(read_file(tmp / "a.jsonl") != read_file(tmp / "c.jsonl"));

    // every turn has exactly one gold passage that exists in the corpus
    std::set<std::string> pids;
    for (const auto& p : a.passages) {
        pids.insert(p.passage_id);
    }
    for (const auto& s : a.sessions) {
        for (const auto& t : s.turns) {
            REQUIRE(t.gold_passage_ids.size() == 1);
            CHECK(pids.count(t.gold_passage_ids[0]) == 1);
        }
    }

    CHECK_THROWS_AS(generate_toy_corpus(0, 0, 4, 8), ValidationError);
    CHECK_THROWS_AS(generate_toy_corpus(0, 6, 0, 8), ValidationError);
    CHECK_THROWS_AS(generate_toy_corpus(0, 6, 4, 3), ValidationError);
}

TEST_CASE("later toy turns reference the entity only through pronouns") {
    ToyCorpus toy = generate_toy_corpus(3, 5, 4, 6);
    for (const auto& s : toy.sessions) {
        std::string entity = tokenize(s.turns[0].query).back();
        for (std::size_t k = 1; k < s.turns.size(); ++k) {
            auto toks = tokenize(s.turns[k].query);
            CHECK(std::find(toks.begin(), toks.end(), entity) == toks.end());
            bool has_pronoun = std::find(toks.begin(), toks.end(), "it") != toks.end() ||
                               std::find(toks.begin(), toks.end(), "they") != toks.end();
            CHECK(has_pronoun);
        }
    }
}

TEST_CASE("imperfect resolver rewrites the configured fraction of pronoun turns") {
    ToyCorpus toy = generate_toy_corpus(0, 8, 4, 10);

    auto count_resolved = [&](double rate) {
        auto rewrites = imperfect_resolver_rewrites(toy.sessions, rate);
        std::map<std::string, std::string> by_id;
        for (const auto& r : rewrites) {
            by_id[r.instance_id] = r.rewrite;
        }
        int pronoun_turns = 0;
        int resolved = 0;
        for (const auto& s : toy.sessions) {
            std::string entity = tokenize(s.turns[0].query).back();
            for (std::size_t k = 1; k < s.turns.size(); ++k) {
                pronoun_turns++;
                auto toks = tokenize(by_id.at(instance_id_for(s.session_id, s.turns[k].turn_index)));
                if (std::find(toks.begin(), toks.end(), entity) != toks.end()) {
                    resolved++;
                }
            }
        }
        return std::pair<int, int>(resolved, pronoun_turns);
    };

    auto [r0, total0] = count_resolved(0.0);
    CHECK(r0 == 0);
    auto [r1, total1] = count_resolved(1.0);
    CHECK(r1 == total1);
    auto [rh, totalh] = count_resolved(0.5);
    CHECK(rh == totalh / 2);

    // first turns always pass through verbatim
    auto rewrites = imperfect_resolver_rewrites(toy.sessions, 0.5);
    std::map<std::string, std::string> by_id;
    for (const auto& r : rewrites) {
        by_id[r.instance_id] = r.rewrite;
    }
    for (const auto& s : toy.sessions) {
        CHECK(by_id.at(instance_id_for(s.session_id, 1)) == s.turns[0].query);
    }

    CHECK_THROWS_AS(imperfect_resolver_rewrites(toy.sessions, -0.1), ValidationError);
    CHECK_THROWS_AS(imperfect_resolver_rewrites(toy.sessions, 1.1), ValidationError);
}

TEST_CASE("qrels writer emits one binary judgment per line") {
    TempDir tmp;
    write_qrels({{"q1", "p1"}, {"q1", "p2"}, {"q2", "p9"}}, tmp / "qrels.txt");
    CHECK(read_file(tmp / "qrels.txt") == "q1 0 p1 1\nq1 0 p2 1\nq2 0 p9 1\n");
}

TEST_CASE("provenance strings round-trip") {
    for (Provenance p : {Provenance::llm_bootstrap, Provenance::file, Provenance::generated}) {
        CHECK(provenance_from_string(to_string(p)) == p);
    }
    CHECK_THROWS_AS(provenance_from_string("mystery"), FormatError);
}
