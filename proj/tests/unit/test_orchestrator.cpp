#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>
#include <unistd.h>

#include <string>
#include <vector>

#include "helpers.hpp"
#include "itercqr/orchestrator.hpp"

using namespace itercqr;

TEST_CASE("config text parsing") {
    CliConfig defaults = parse_config_text("", "inline");
    CHECK(defaults.run.n == 10);
    CHECK(defaults.run.tau == 1);
    CHECK(defaults.run.iterations == 3);
    CHECK(defaults.run.runs_dir == "runs");
    CHECK(defaults.retriever == "dense");
    CHECK(defaults.bootstrap_mode == "file");

    CliConfig cfg = parse_config_text(
        "# toy run\n"
        "n = 4\n"
        "tau=2\n"
        "  iterations = 2   # covers t = 0..2\n"
        "learning_rate = 3e-3\n"
        "seed = 42\n"
        "use_copy = false\n"
        "holdout_last_turn = true\n"
        "sessions = data/sessions.jsonl\n"
        "retriever = sparse\n"
        "bm25_k1 = 0.9\n",
        "inline");
    CHECK(cfg.run.n == 4);
    CHECK(cfg.run.tau == 2);
    CHECK(cfg.run.iterations == 2);
    CHECK(cfg.run.learning_rate == Catch::Approx(3e-3));
    CHECK(cfg.run.seed == 42);
    CHECK(cfg.run.use_copy == false);
    CHECK(cfg.run.holdout_last_turn == true);
    CHECK(cfg.run.sessions_path == "data/sessions.jsonl");
    CHECK(cfg.retriever == "sparse");
    CHECK(cfg.bm25_k1 == Catch::Approx(0.9));

    CHECK_THROWS_WITH(parse_config_text("n = 1\nx = 2\n", "cfg"),
                      Catch::Matchers::ContainsSubstring("cfg:2") &&
                          Catch::Matchers::ContainsSubstring("unknown config key 'x'"));
    CHECK_THROWS_WITH(parse_config_text("n\n", "cfg"),
                      Catch::Matchers::ContainsSubstring("expected key=value"));
    CHECK_THROWS_WITH(parse_config_text("n = abc\n", "cfg"),
                      Catch::Matchers::ContainsSubstring("bad value for 'n'"));
    CHECK_THROWS_AS(parse_config_text("use_copy = maybe\n", "cfg"), ValidationError);

    TempDir tmp;
    write_file(tmp / "run.cfg", "n = 7\n");
    CHECK(parse_config_file(tmp / "run.cfg").run.n == 7);
}

TEST_CASE("run config validation") {
    RunConfig cfg;
    cfg.sessions_path = "s";
    cfg.passages_path = "p";
    cfg.d0_path = "d";
    CHECK_NOTHROW(cfg.validate());
    CHECK(cfg.effective_beam_width() == cfg.n);
    cfg.beam_width = 32;
    CHECK(cfg.effective_beam_width() == 32);

    auto broken = [&](auto mutate) {
        RunConfig c = cfg;
        mutate(c);
        CHECK_THROWS_AS(c.validate(), ValidationError);
    };
    broken([](RunConfig& c) { c.n = 0; });
    broken([](RunConfig& c) { c.tau = c.iterations + 1; });
    broken([](RunConfig& c) { c.tau = -1; });
    broken([](RunConfig& c) { c.epochs_mbr = 0; });
    broken([](RunConfig& c) { c.batch_size = 0; });
    broken([](RunConfig& c) { c.data_fraction = 0.0; });
    broken([](RunConfig& c) { c.data_fraction = 1.5; });
    broken([](RunConfig& c) { c.beam_width = c.n - 1; });
    broken([](RunConfig& c) { c.sessions_path.clear(); });
    broken([](RunConfig& c) { c.d0_path.clear(); });
    broken([](RunConfig& c) { c.eval_each_iteration = true; });  // no qrels path
}

TEST_CASE("manifest round-trip") {
    TempDir tmp;
    RunManifest m;
    m.config = json{{"n", 3}, {"seed", 1}};
    IterationRecord r0;
    r0.t = 0;
    r0.phase = Phase::init;
    r0.completed = true;
    r0.model_path = "iter0/model.bin";
    r0.model_checksum = "aa";
    r0.dataset_path = "iter0/dataset.jsonl";
    r0.dataset_checksum = "bb";
    r0.dataset_source = "bootstrap";
    r0.stats_path = "iter0/stats.jsonl";
    r0.stats_checksum = "cc";
    IterationRecord r1 = r0;
    r1.t = 1;
    r1.phase = Phase::mbr;
    r1.dataset_source = "model_iter_0";
    r1.eval_path = "iter1/eval.json";
    m.iterations = {r0, r1};

    save_manifest(m, tmp / "manifest.json");
    RunManifest back = load_manifest(tmp / "manifest.json");
    CHECK(back.to_json() == m.to_json());
    CHECK(back.iterations[0].phase == Phase::init);
    CHECK(back.iterations[1].phase == Phase::mbr);
    CHECK(back.iterations[0].eval_path.empty());
    CHECK(back.iterations[1].eval_path == "iter1/eval.json");

    write_file(tmp / "broken.json", "{not json");
    CHECK_THROWS_AS(load_manifest(tmp / "broken.json"), FormatError);
    write_file(tmp / "partial.json", "{\"config\": {}}");
    CHECK_THROWS_AS(load_manifest(tmp / "partial.json"), FormatError);
}

TEST_CASE("run lock ownership") {
    TempDir tmp;
    auto dir = tmp / "run";
    {
        RunLock lock(dir);
        CHECK(read_file(dir / ".lock") == std::to_string(::getpid()));
        // the owner may re-enter its own lock (in-process recovery)
        CHECK_NOTHROW(RunLock(dir));
    }
    CHECK_FALSE(std::filesystem::exists(dir / ".lock"));

    // a lock held by a live foreign process refuses takeover
    std::filesystem::create_directories(dir);
    write_file(dir / ".lock", "1");
    CHECK_THROWS_WITH(RunLock(dir), Catch::Matchers::ContainsSubstring("live process 1"));

    // a lock whose owner died is stale and gets stolen
    pid_t child = ::fork();
    if (child == 0) {
        ::_exit(0);
    }
    REQUIRE(child > 0);
    int status = 0;
    ::waitpid(child, &status, 0);
    write_file(dir / ".lock", std::to_string(child));
    CHECK_NOTHROW(RunLock(dir));
}

namespace {

struct PipelineFixture {
    TempDir tmp;
    RunConfig cfg;
    std::vector<Session> sessions;

    explicit PipelineFixture(bool holdout = false) {
        ToyCorpus toy = generate_toy_corpus(5, 3, 3, 4);
        sessions = toy.sessions;
        write_sessions_jsonl(toy.sessions, tmp / "sessions.jsonl");
        write_passages_jsonl(toy.passages, tmp / "passages.jsonl");
        write_qrels(toy.qrels, tmp / "qrels.txt");

        DatasetVersion d0;
        d0.iteration = 0;
        d0.n = 1;
        d0.provenance = Provenance::file;
        for (const auto& rw : imperfect_resolver_rewrites(toy.sessions, 1.0)) {
            DatasetRow row;
            row.instance_id = rw.instance_id;
            row.target = rw.rewrite;
            d0.rows.push_back(std::move(row));
        }
        persist_dataset_version(d0, tmp / "d0.jsonl");

        cfg.n = 3;
        cfg.tau = 1;
        cfg.iterations = 2;
        cfg.epochs_init = 1;
        cfg.epochs_mbr = 1;
        cfg.epochs_top1 = 1;
        cfg.learning_rate = 2e-3;
        cfg.batch_size = 4;
        cfg.max_query_len = 8;
        cfg.seed = 3;
        cfg.hidden_size = 16;
        cfg.embed_size = 8;
        cfg.sessions_path = (tmp / "sessions.jsonl").string();
        cfg.passages_path = (tmp / "passages.jsonl").string();
        cfg.d0_path = (tmp / "d0.jsonl").string();
        cfg.qrels_path = (tmp / "qrels.txt").string();
        cfg.runs_dir = (tmp / "runs").string();
        cfg.run_name = "toy";
        cfg.holdout_last_turn = holdout;
        cfg.eval_each_iteration = true;
        cfg.eval_k = 10;
    }

    std::filesystem::path run_dir() const {
        return std::filesystem::path(cfg.runs_dir) / cfg.run_name;
    }
};

}  // namespace

TEST_CASE("full run, resume, and artifact verification") {
    PipelineFixture fx;
    RunOutcome outcome = Orchestrator(fx.cfg).run_all();
    CHECK(outcome.completed_iterations == 3);
    CHECK(outcome.resumed_iterations == 0);
    CHECK(outcome.run_dir == fx.run_dir());

    RunManifest manifest = load_manifest(outcome.manifest_path);
    CHECK(manifest.config == fx.cfg.to_json());
    REQUIRE(manifest.iterations.size() == 3);
    CHECK(manifest.iterations[0].phase == Phase::init);
    CHECK(manifest.iterations[1].phase == Phase::mbr);
    CHECK(manifest.iterations[2].phase == Phase::top1);
    CHECK(manifest.iterations[0].dataset_source == "bootstrap");
    CHECK(manifest.iterations[1].dataset_source == "model_iter_0");
    CHECK(manifest.iterations[2].dataset_source == "model_iter_1");
    for (const auto& rec : manifest.iterations) {
        CHECK(rec.completed);
        CHECK(std::filesystem::exists(fx.run_dir() / rec.model_path));
        CHECK(std::filesystem::exists(fx.run_dir() / rec.dataset_path));
        CHECK(std::filesystem::exists(fx.run_dir() / rec.stats_path));
        CHECK(rec.eval_path == "iter" + std::to_string(rec.t) + "/eval.json");
        CHECK(std::filesystem::exists(fx.run_dir() / rec.eval_path));
        CHECK(rec.model_checksum == fnv1a64_file_hex(fx.run_dir() / rec.model_path));
    }
    CHECK_FALSE(std::filesystem::exists(fx.run_dir() / ".lock"));

    // one machine-readable stats line per epoch
    auto stats_lines = read_numbered_lines(fx.run_dir() / "iter0/stats.jsonl");
    CHECK(stats_lines.size() == 1);
    json stats = json::parse(stats_lines[0].second);
    CHECK(stats.at("phase") == "init");

    // generated datasets carry exactly n candidates per training instance
    DatasetVersion d1 = load_dataset_version(fx.run_dir() / "iter1/dataset.jsonl");
    CHECK(d1.iteration == 1);
    CHECK(d1.n == 3);
    CHECK(d1.rows.size() == 9);
    for (const auto& row : d1.rows) {
        CHECK(row.candidates.size() == 3);
    }

    json eval = json::parse(read_file(fx.run_dir() / "iter2/eval.json"));
    CHECK(eval.at("iteration") == 2);
    CHECK(eval.contains("mean_top1_reward"));
    CHECK(eval.contains("dense_mrr"));
    CHECK(eval.at("num_eval_queries") == 9);

    GeneratorModel final_model = load_model(outcome.final_model_path);
    CHECK_FALSE(final_model.generate_candidates("where is it located", 2, 4).empty());

    // a completed run resumes as a pure no-op with identical manifest bytes
    std::string manifest_bytes = read_file(outcome.manifest_path);
    RunOutcome again = Orchestrator(fx.cfg).run_all();
    CHECK(again.resumed_iterations == 3);
    CHECK(read_file(outcome.manifest_path) == manifest_bytes);

    // a different configuration must not silently reuse the directory
    RunConfig other = fx.cfg;
    other.n = 4;
    CHECK_THROWS_WITH(Orchestrator(other).run_all(),
                      Catch::Matchers::ContainsSubstring("different configuration"));

    // resuming over a tampered artifact is an invariant violation
    auto dataset_path = fx.run_dir() / "iter1/dataset.jsonl";
    write_file(dataset_path, read_file(dataset_path) + "\n");
    CHECK_THROWS_AS(Orchestrator(fx.cfg).run_all(), InvariantError);
}

TEST_CASE("holdout keeps last turns out of training") {
    PipelineFixture fx(true);
    Orchestrator orch(fx.cfg);
    CHECK(orch.train_instances().size() == 6);
    CHECK(orch.eval_instances().size() == 3);
    for (const auto& inst : orch.train_instances()) {
        CHECK(inst.turn_index < 3);
    }
    for (const auto& inst : orch.eval_instances()) {
        CHECK(inst.turn_index == 3);
    }
}

TEST_CASE("constructor rejects unusable bootstrap datasets") {
    PipelineFixture fx;

    DatasetVersion wrong_iter;
    wrong_iter.iteration = 1;
    wrong_iter.n = 1;
    wrong_iter.provenance = Provenance::generated;
    DatasetRow row;
    row.instance_id = "s1_1";
    row.candidates.push_back({"text", -1.0, 0.5});
    wrong_iter.rows.push_back(row);
    persist_dataset_version(wrong_iter, fx.tmp / "d1.jsonl");
    RunConfig cfg = fx.cfg;
    cfg.d0_path = (fx.tmp / "d1.jsonl").string();
    CHECK_THROWS_WITH(Orchestrator(cfg).run_all(),
                      Catch::Matchers::ContainsSubstring("iteration-0"));

    DatasetVersion ghost;
    ghost.iteration = 0;
    ghost.n = 1;
    ghost.provenance = Provenance::file;
    DatasetRow g;
    g.instance_id = "nope_1";
    g.target = "words";
    ghost.rows.push_back(g);
    persist_dataset_version(ghost, fx.tmp / "ghost.jsonl");
    cfg = fx.cfg;
    cfg.d0_path = (fx.tmp / "ghost.jsonl").string();
    CHECK_THROWS_WITH(Orchestrator(cfg).run_all(),
                      Catch::Matchers::ContainsSubstring("unknown instance"));
}
