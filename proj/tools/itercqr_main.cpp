#include <functional>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "itercqr/analysis.hpp"
#include "itercqr/bootstrap.hpp"
#include "itercqr/bootstrap_http.hpp"
#include "itercqr/common.hpp"
#include "itercqr/data.hpp"
#include "itercqr/embedding.hpp"
#include "itercqr/evaluation.hpp"
#include "itercqr/generator.hpp"
#include "itercqr/orchestrator.hpp"
#include "itercqr/retrieval.hpp"

namespace {

using namespace itercqr;

void emit_summary(const json& summary) { std::cout << summary.dump() << "\n"; }

// eval: last turn per session; train: the rest; all: everything;
// auto: eval when the run holds out last turns, otherwise all.
std::vector<ReformulationInstance> select_split(const std::vector<Session>& sessions,
                                                const std::vector<ReformulationInstance>& instances,
                                                const std::string& split, bool holdout_last_turn) {
    std::string effective = split;
    if (effective == "auto") {
        effective = holdout_last_turn ? "eval" : "all";
    }
    if (effective == "all") {
        return instances;
    }
    std::map<std::string, int> last_turn;
    for (const auto& s : sessions) {
        last_turn[s.session_id] = static_cast<int>(s.turns.size());
    }
    std::vector<ReformulationInstance> out;
    for (const auto& inst : instances) {
        bool is_last = inst.turn_index == last_turn.at(inst.session_id);
        if ((effective == "eval") == is_last) {
            out.push_back(inst);
        }
    }
    if (out.empty()) {
        throw ValidationError("selected split '" + effective + "' is empty");
    }
    return out;
}

// Beam-best reformulation per instance under a checkpointed model.
std::vector<std::string> reformulate(const GeneratorModel& model,
                                     const std::vector<ReformulationInstance>& instances, int n,
                                     int beam_width) {
    std::vector<std::string> out(instances.size());
    parallel_for(instances.size(), [&](std::size_t i) {
        auto cands = model.generate_candidates(model_input(instances[i]), n, beam_width);
        out[i] = cands.front().text;
    });
    return out;
}

int cmd_synth_data(std::uint64_t seed, int num_sessions, int turns, int entities,
                   double resolve_rate, const std::string& out_dir) {
    if (entities == 0) {
        entities = num_sessions;
    }
    ToyCorpus toy = generate_toy_corpus(seed, num_sessions, turns, entities);
    std::filesystem::path dir(out_dir);
    std::filesystem::create_directories(dir);
    write_sessions_jsonl(toy.sessions, dir / "sessions.jsonl");
    write_passages_jsonl(toy.passages, dir / "passages.jsonl");
    write_qrels(toy.qrels, dir / "qrels.txt");
    auto rewrites = imperfect_resolver_rewrites(toy.sessions, resolve_rate);
    write_rewrites_jsonl(rewrites, dir / "rewrites.jsonl");
    emit_summary({{"command", "synth-data"},
                  {"sessions", num_sessions},
                  {"turns_per_session", turns},
                  {"passages", toy.passages.size()},
                  {"rewrites", rewrites.size()},
                  {"out", out_dir}});
    return 0;
}

int cmd_bootstrap(const std::string& sessions_path, const std::string& mode,
                  const std::string& rewrites_path, const std::string& cache_path,
                  const std::string& out_path, const LlmConfig& knobs) {
    auto sessions = load_sessions(sessions_path);
    auto instances = build_instances(sessions);
    LlmConfig cfg = knobs;
    cfg.mode = mode;
    cfg.rewrites_path = rewrites_path;
    cfg.cache_path = cache_path;
    HttpTransport transport;
    if (mode == "api") {
        transport = default_http_transport;
    }
    LlmClient client(cfg, transport);
    DatasetVersion d0 = bootstrap_dataset(instances, sessions, client, mode);
    persist_dataset_version(d0, out_path);
    emit_summary({{"command", "bootstrap"},
                  {"mode", mode},
                  {"instances", instances.size()},
                  {"rows", d0.rows.size()},
                  {"network_calls", client.network_calls()},
                  {"out", out_path}});
    return 0;
}

int cmd_embed(const std::string& passages_path, int dim, const std::string& out_path) {
    if (dim < 1) {
        throw ValidationError("dim must be >= 1");
    }
    auto passages = load_passages(passages_path);
    EmbeddingStore store = build_store(passages, static_cast<std::uint32_t>(dim));
    persist_store(store, out_path);
    emit_summary({{"command", "embed"},
                  {"passages", passages.size()},
                  {"dim", dim},
                  {"out", out_path}});
    return 0;
}

int cmd_train(const std::string& config_path) {
    CliConfig cfg = parse_config_file(config_path);
    cfg.run.validate();
    Orchestrator orch(cfg.run);
    RunOutcome out = orch.run_all();
    emit_summary({{"command", "train"},
                  {"iterations", out.completed_iterations},
                  {"resumed", out.resumed_iterations},
                  {"run_dir", out.run_dir.string()},
                  {"manifest", out.manifest_path.string()},
                  {"final_model", out.final_model_path.string()}});
    return 0;
}

int cmd_retrieve(const std::string& config_path, int model_iter, const std::string& retriever,
                 int k, const std::string& split, const std::string& out_path) {
    if (model_iter < 0) {
        throw ValidationError("--model-iter must be >= 0");
    }
    if (k < 1) {
        throw ValidationError("--k must be >= 1");
    }
    if (retriever != "dense" && retriever != "sparse") {
        throw ValidationError("--retriever must be dense or sparse");
    }
    CliConfig cfg = parse_config_file(config_path);
    auto [sessions, passages] = load_corpus(cfg.run.sessions_path, cfg.run.passages_path);
    auto instances = select_split(sessions, build_instances(sessions), split,
                                  cfg.run.holdout_last_turn);
    std::filesystem::path model_path = std::filesystem::path(cfg.run.runs_dir) /
                                       cfg.run.run_name /
                                       ("iter" + std::to_string(model_iter)) / "model.bin";
    GeneratorModel model = load_model(model_path);
    std::vector<std::string> queries =
        reformulate(model, instances, cfg.run.n, cfg.run.effective_beam_width());

    std::vector<RunEntry> entries(instances.size());
    if (retriever == "dense") {
        EmbeddingStore store = cfg.run.store_path.empty()
                                   ? build_store(passages)
                                   : load_store(cfg.run.store_path);
        parallel_for(instances.size(), [&](std::size_t i) {
            entries[i] = dense_search(queries[i], store, static_cast<std::size_t>(k),
                                      instances[i].instance_id);
        });
    } else {
        BM25Index index = bm25_build(passages, cfg.bm25_k1, cfg.bm25_b);
        parallel_for(instances.size(), [&](std::size_t i) {
            entries[i] = bm25_search(index, queries[i], static_cast<std::size_t>(k),
                                     instances[i].instance_id);
        });
    }
    write_run(entries, out_path);
    emit_summary({{"command", "retrieve"},
                  {"model_iter", model_iter},
                  {"retriever", retriever},
                  {"k", k},
                  {"queries", entries.size()},
                  {"out", out_path}});
    return 0;
}

int cmd_evaluate(const std::string& run_path, const std::string& qrels_path,
                 const std::string& slices, const std::string& sessions_path,
                 const std::string& out_path) {
    std::vector<RunEntry> entries = read_run(run_path);
    Qrels qrels = load_qrels(qrels_path);
    ShiftCriterion criterion = ShiftCriterion::none;
    std::vector<ReformulationInstance> instances;
    if (!slices.empty()) {
        criterion = shift_criterion_from_string(slices);
        if (sessions_path.empty()) {
            throw ValidationError("--slices requires --sessions for topic-shift flags");
        }
        instances = build_instances(load_sessions(sessions_path));
    }
    int excluded = 0;
    std::vector<MetricReport> reports = evaluate_run(entries, qrels, criterion, instances, &excluded);
    json jreports = json::array();
    for (const auto& r : reports) {
        jreports.push_back(r.to_json());
    }
    json summary = {{"command", "evaluate"},
                    {"run", run_path},
                    {"excluded_queries", excluded},
                    {"reports", jreports}};
    if (!out_path.empty()) {
        write_file(out_path, json{{"excluded_queries", excluded}, {"reports", jreports}}.dump(2) + "\n");
        summary["out"] = out_path;
    }
    emit_summary(summary);
    return 0;
}

int cmd_analyze(const std::string& config_path, const std::string& iters,
                const std::string& split, const std::string& out_dir) {
    CliConfig cfg = parse_config_file(config_path);
    int lo = 0;
    int hi = 0;
    auto dots = iters.find("..");
    try {
        if (dots == std::string::npos) {
            lo = hi = std::stoi(iters);
        } else {
            lo = std::stoi(iters.substr(0, dots));
            hi = std::stoi(iters.substr(dots + 2));
        }
    } catch (const std::exception&) {
        throw ValidationError("--iters expects N or A..B, got '" + iters + "'");
    }
    if (lo < 0 || hi < lo) {
        throw ValidationError("--iters range is empty or negative: '" + iters + "'");
    }
    auto [sessions, passages] = load_corpus(cfg.run.sessions_path, cfg.run.passages_path);
    auto instances = select_split(sessions, build_instances(sessions), split,
                                  cfg.run.holdout_last_turn);
    std::vector<QueryStats> stats;
    for (int t = lo; t <= hi; ++t) {
        std::filesystem::path model_path = std::filesystem::path(cfg.run.runs_dir) /
                                           cfg.run.run_name / ("iter" + std::to_string(t)) /
                                           "model.bin";
        GeneratorModel model = load_model(model_path);
        std::vector<std::string> queries =
            reformulate(model, instances, cfg.run.n, cfg.run.effective_beam_width());
        stats.push_back(analyze_iteration(queries, instances, passages, t));
    }
    trend_report(stats, out_dir);
    json jstats = json::array();
    for (const auto& s : stats) {
        jstats.push_back(s.to_json());
    }
    emit_summary({{"command", "analyze"},
                  {"iterations", hi - lo + 1},
                  {"out", out_dir},
                  {"csv", (std::filesystem::path(out_dir) / "trends.csv").string()},
                  {"stats", jstats}});
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    using namespace itercqr;
    CLI::App app{"iterative conversational query reformulation pipeline"};
    app.require_subcommand(1);
    std::function<int()> action;

    {
        auto* c = app.add_subcommand("synth-data", "generate a seeded toy conversational corpus");
        auto seed = std::make_shared<std::uint64_t>(0);
        auto sessions = std::make_shared<int>(40);
        auto turns = std::make_shared<int>(4);
        auto entities = std::make_shared<int>(0);
        auto resolve_rate = std::make_shared<double>(0.5);
        auto out = std::make_shared<std::string>();
        c->add_option("--seed", *seed, "corpus seed");
        c->add_option("--sessions", *sessions, "number of sessions");
        c->add_option("--turns", *turns, "turns per session");
        c->add_option("--entities", *entities, "entity vocabulary size (0 = one per session)");
        c->add_option("--resolve-rate", *resolve_rate, "fraction of pronoun turns the offline rewriter resolves");
        c->add_option("--out", *out, "output directory")->required();
        c->callback([=, &action] {
            action = [=] {
                return cmd_synth_data(*seed, *sessions, *turns, *entities, *resolve_rate, *out);
            };
        });
    }
    {
        auto* c = app.add_subcommand("bootstrap", "produce the iteration-0 rewrite dataset");
        auto sessions = std::make_shared<std::string>();
        auto mode = std::make_shared<std::string>("file");
        auto rewrites = std::make_shared<std::string>();
        auto cache = std::make_shared<std::string>();
        auto out = std::make_shared<std::string>();
        auto knobs = std::make_shared<LlmConfig>();
        c->add_option("--sessions", *sessions, "sessions JSONL")->required();
        c->add_option("--mode", *mode, "api or file")->check(CLI::IsMember({"api", "file"}));
        c->add_option("--rewrites", *rewrites, "offline rewrites JSONL (file mode)");
        c->add_option("--cache", *cache, "rewrite cache JSONL");
        c->add_option("--out", *out, "output dataset path")->required();
        c->add_option("--endpoint", knobs->endpoint, "chat completions endpoint (api mode)");
        c->add_option("--model-name", knobs->model_name, "remote model name (api mode)");
        c->add_option("--temperature", knobs->temperature, "sampling temperature (api mode)");
        c->add_option("--timeout-ms", knobs->timeout_ms, "request timeout (api mode)");
        c->add_option("--max-attempts", knobs->max_attempts, "retry budget (api mode)");
        c->add_option("--backoff-ms", knobs->backoff_base_ms, "retry backoff base (api mode)");
        c->add_option("--max-query-tokens", knobs->max_query_tokens, "rewrite length cap in words");
        c->callback([=, &action] {
            action = [=] { return cmd_bootstrap(*sessions, *mode, *rewrites, *cache, *out, *knobs); };
        });
    }
    {
        auto* c = app.add_subcommand("embed", "build the passage embedding store");
        auto passages = std::make_shared<std::string>();
        auto dim = std::make_shared<int>(static_cast<int>(kEmbeddingDim));
        auto out = std::make_shared<std::string>();
        c->add_option("--passages", *passages, "passages JSONL")->required();
        c->add_option("--dim", *dim, "embedding dimensionality");
        c->add_option("--out", *out, "output store path")->required();
        c->callback([=, &action] {
            action = [=] { return cmd_embed(*passages, *dim, *out); };
        });
    }
    {
        auto* c = app.add_subcommand("train", "run the iterative training loop");
        auto config = std::make_shared<std::string>();
        c->add_option("--config", *config, "run config file")->required();
        c->callback([=, &action] {
            action = [=] { return cmd_train(*config); };
        });
    }
    {
        auto* c = app.add_subcommand("retrieve", "reformulate a split and write a ranked run file");
        auto config = std::make_shared<std::string>();
        auto model_iter = std::make_shared<int>(-1);
        auto retriever = std::make_shared<std::string>("dense");
        auto k = std::make_shared<int>(100);
        auto split = std::make_shared<std::string>("auto");
        auto out = std::make_shared<std::string>();
        c->add_option("--config", *config, "run config file")->required();
        c->add_option("--model-iter", *model_iter, "iteration checkpoint to reformulate with")->required();
        c->add_option("--retriever", *retriever, "dense or sparse")
            ->check(CLI::IsMember({"dense", "sparse"}));
        c->add_option("--k", *k, "ranking depth");
        c->add_option("--split", *split, "auto, eval, train, or all")
            ->check(CLI::IsMember({"auto", "eval", "train", "all"}));
        c->add_option("--out", *out, "output run file")->required();
        c->callback([=, &action] {
            action = [=] { return cmd_retrieve(*config, *model_iter, *retriever, *k, *split, *out); };
        });
    }
    {
        auto* c = app.add_subcommand("evaluate", "score a run file against qrels");
        auto run = std::make_shared<std::string>();
        auto qrels = std::make_shared<std::string>();
        auto slices = std::make_shared<std::string>();
        auto sessions = std::make_shared<std::string>();
        auto out = std::make_shared<std::string>();
        c->add_option("--run", *run, "run file")->required();
        c->add_option("--qrels", *qrels, "qrels file")->required();
        c->add_option("--slices", *slices, "topic-shift slicing: label or pid")
            ->check(CLI::IsMember({"label", "pid"}));
        c->add_option("--sessions", *sessions, "sessions JSONL (needed for --slices)");
        c->add_option("--out", *out, "optional report JSON path");
        c->callback([=, &action] {
            action = [=] { return cmd_evaluate(*run, *qrels, *slices, *sessions, *out); };
        });
    }
    {
        auto* c = app.add_subcommand("analyze", "query-trend statistics across iterations");
        auto config = std::make_shared<std::string>();
        auto iters = std::make_shared<std::string>();
        auto split = std::make_shared<std::string>("auto");
        auto out = std::make_shared<std::string>();
        c->add_option("--config", *config, "run config file")->required();
        c->add_option("--iters", *iters, "iteration range, N or A..B")->required();
        c->add_option("--split", *split, "auto, eval, train, or all")
            ->check(CLI::IsMember({"auto", "eval", "train", "all"}));
        c->add_option("--out", *out, "output directory")->required();
        c->callback([=, &action] {
            action = [=] { return cmd_analyze(*config, *iters, *split, *out); };
        });
    }

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
        return action();
    } catch (const ExternalError& e) {
        log_error(e.what());
        return 3;
    } catch (const InvariantError& e) {
        log_error(e.what());
        return 4;
    } catch (const PipelineError& e) {
        log_error(e.what());
        return 2;
    } catch (const std::filesystem::filesystem_error& e) {
        log_error(e.what());
        return 2;
    } catch (const std::exception& e) {
        log_error(e.what());
        return 4;
    }
}
