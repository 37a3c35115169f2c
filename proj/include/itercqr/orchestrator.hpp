#pragma once

#include <csignal>
#include <unistd.h>

#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "itercqr/common.hpp"
#include "itercqr/data.hpp"
#include "itercqr/embedding.hpp"
#include "itercqr/evaluation.hpp"
#include "itercqr/generator.hpp"
#include "itercqr/retrieval.hpp"
#include "itercqr/training.hpp"

namespace itercqr {

// ---------------------------------------------------------------------------
// Run configuration, parsed from a flat key=value file. Unknown keys are
// rejected so typos cannot silently fall back to defaults.
// ---------------------------------------------------------------------------

struct RunConfig {
    int n = 10;
    int tau = 1;
    int iterations = 3;  // final iteration index T; the run covers t = 0..T
    int epochs_init = 5;
    int epochs_mbr = 2;
    int epochs_top1 = 5;
    double learning_rate = 1e-5;
    int batch_size = 8;
    int max_query_len = 32;
    std::uint64_t seed = 0;
    double data_fraction = 1.0;
    int beam_width = 0;  // 0 means same as n

    int hidden_size = 128;
    int embed_size = 64;
    int min_frequency = 1;
    bool use_copy = true;

    std::string sessions_path;
    std::string passages_path;
    std::string store_path;  // empty: build the store from the passages
    std::string d0_path;
    std::string qrels_path;
    std::string runs_dir = "runs";
    std::string run_name = "run";
    bool holdout_last_turn = false;
    bool eval_each_iteration = false;
    int eval_k = 100;

    int effective_beam_width() const { return beam_width > 0 ? beam_width : n; }

    void validate() const {
        if (n < 1) throw ValidationError("n must be >= 1");
        if (iterations < 0) throw ValidationError("iterations must be >= 0");
        if (tau < 0 || tau > iterations) throw ValidationError("tau must satisfy 0 <= tau <= iterations");
        if (epochs_init < 1 || epochs_mbr < 1 || epochs_top1 < 1)
            throw ValidationError("all epoch counts must be >= 1");
        if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
        if (max_query_len < 1) throw ValidationError("max_query_len must be >= 1");
        if (!(data_fraction > 0.0) || data_fraction > 1.0)
            throw ValidationError("data_fraction must be in (0, 1]");
        if (beam_width != 0 && beam_width < n)
            throw ValidationError("beam_width must be 0 or >= n");
        if (hidden_size < 1 || embed_size < 1)
            throw ValidationError("model sizes must be positive");
        if (min_frequency < 1) throw ValidationError("min_frequency must be >= 1");
        if (eval_k < 1) throw ValidationError("eval_k must be >= 1");
        if (sessions_path.empty()) throw ValidationError("sessions path is required");
        if (passages_path.empty()) throw ValidationError("passages path is required");
        if (d0_path.empty()) throw ValidationError("d0 path is required");
        if (run_name.empty()) throw ValidationError("run_name must be non-empty");
        if (eval_each_iteration && qrels_path.empty())
            throw ValidationError("eval_each_iteration requires a qrels path");
    }

    json to_json() const {
        return json{{"n", n},
                    {"tau", tau},
                    {"iterations", iterations},
                    {"epochs_init", epochs_init},
                    {"epochs_mbr", epochs_mbr},
                    {"epochs_top1", epochs_top1},
                    {"learning_rate", learning_rate},
                    {"batch_size", batch_size},
                    {"max_query_len", max_query_len},
                    {"seed", seed},
                    {"data_fraction", data_fraction},
                    {"beam_width", beam_width},
                    {"hidden_size", hidden_size},
                    {"embed_size", embed_size},
                    {"min_frequency", min_frequency},
                    {"use_copy", use_copy},
                    {"sessions", sessions_path},
                    {"passages", passages_path},
                    {"store", store_path},
                    {"d0", d0_path},
                    {"qrels", qrels_path},
                    {"runs_dir", runs_dir},
                    {"run_name", run_name},
                    {"holdout_last_turn", holdout_last_turn},
                    {"eval_each_iteration", eval_each_iteration},
                    {"eval_k", eval_k}};
    }
};

namespace detail {

inline bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw ValidationError("config key '" + key + "' expects true/false, got '" + value + "'");
}

}  // namespace detail

// Bootstrap and retrieval knobs only the CLI consumes, plus the run config.
struct CliConfig {
    RunConfig run;
    std::string retriever = "dense";  // dense | sparse | both
    std::string bootstrap_mode = "file";
    std::string rewrites_path;
    std::string cache_path;
    std::string llm_endpoint = "http://localhost:8080/v1/chat/completions";
    std::string llm_model = "gpt-3.5-turbo";
    double llm_temperature = 0.0;
    int llm_timeout_ms = 30000;
    int llm_max_attempts = 5;
    int llm_backoff_ms = 250;
    double bm25_k1 = 1.2;
    double bm25_b = 0.75;

    void validate() const {
        run.validate();
        if (retriever != "dense" && retriever != "sparse" && retriever != "both")
            throw ValidationError("retriever must be dense, sparse, or both");
        if (bootstrap_mode != "api" && bootstrap_mode != "file")
            throw ValidationError("bootstrap_mode must be api or file");
        if (llm_max_attempts < 1) throw ValidationError("llm_max_attempts must be >= 1");
    }
};

inline CliConfig parse_config_text(const std::string& text, const std::string& origin) {
    CliConfig cfg;
    std::map<std::string, std::function<void(const std::string&)>> setters;
    auto& r = cfg.run;
    setters["n"] = [&](const std::string& v) { r.n = std::stoi(v); };
    setters["tau"] = [&](const std::string& v) { r.tau = std::stoi(v); };
    setters["iterations"] = [&](const std::string& v) { r.iterations = std::stoi(v); };
    setters["epochs_init"] = [&](const std::string& v) { r.epochs_init = std::stoi(v); };
    setters["epochs_mbr"] = [&](const std::string& v) { r.epochs_mbr = std::stoi(v); };
    setters["epochs_top1"] = [&](const std::string& v) { r.epochs_top1 = std::stoi(v); };
    setters["learning_rate"] = [&](const std::string& v) { r.learning_rate = std::stod(v); };
    setters["batch_size"] = [&](const std::string& v) { r.batch_size = std::stoi(v); };
    setters["max_query_len"] = [&](const std::string& v) { r.max_query_len = std::stoi(v); };
    setters["seed"] = [&](const std::string& v) { r.seed = std::stoull(v); };
    setters["data_fraction"] = [&](const std::string& v) { r.data_fraction = std::stod(v); };
    setters["beam_width"] = [&](const std::string& v) { r.beam_width = std::stoi(v); };
    setters["hidden_size"] = [&](const std::string& v) { r.hidden_size = std::stoi(v); };
    setters["embed_size"] = [&](const std::string& v) { r.embed_size = std::stoi(v); };
    setters["min_frequency"] = [&](const std::string& v) { r.min_frequency = std::stoi(v); };
    setters["use_copy"] = [&](const std::string& v) { r.use_copy = detail::parse_bool("use_copy", v); };
    setters["sessions"] = [&](const std::string& v) { r.sessions_path = v; };
    setters["passages"] = [&](const std::string& v) { r.passages_path = v; };
    setters["store"] = [&](const std::string& v) { r.store_path = v; };
    setters["d0"] = [&](const std::string& v) { r.d0_path = v; };
    setters["qrels"] = [&](const std::string& v) { r.qrels_path = v; };
    setters["runs_dir"] = [&](const std::string& v) { r.runs_dir = v; };
    setters["run_name"] = [&](const std::string& v) { r.run_name = v; };
    setters["holdout_last_turn"] = [&](const std::string& v) {
        r.holdout_last_turn = detail::parse_bool("holdout_last_turn", v);
    };
    setters["eval_each_iteration"] = [&](const std::string& v) {
        r.eval_each_iteration = detail::parse_bool("eval_each_iteration", v);
    };
    setters["eval_k"] = [&](const std::string& v) { r.eval_k = std::stoi(v); };
    setters["retriever"] = [&](const std::string& v) { cfg.retriever = v; };
    setters["bootstrap_mode"] = [&](const std::string& v) { cfg.bootstrap_mode = v; };
    setters["rewrites"] = [&](const std::string& v) { cfg.rewrites_path = v; };
    setters["cache"] = [&](const std::string& v) { cfg.cache_path = v; };
    setters["llm_endpoint"] = [&](const std::string& v) { cfg.llm_endpoint = v; };
    setters["llm_model"] = [&](const std::string& v) { cfg.llm_model = v; };
    setters["llm_temperature"] = [&](const std::string& v) { cfg.llm_temperature = std::stod(v); };
    setters["llm_timeout_ms"] = [&](const std::string& v) { cfg.llm_timeout_ms = std::stoi(v); };
    setters["llm_max_attempts"] = [&](const std::string& v) { cfg.llm_max_attempts = std::stoi(v); };
    setters["llm_backoff_ms"] = [&](const std::string& v) { cfg.llm_backoff_ms = std::stoi(v); };
    setters["bm25_k1"] = [&](const std::string& v) { cfg.bm25_k1 = std::stod(v); };
    setters["bm25_b"] = [&](const std::string& v) { cfg.bm25_b = std::stod(v); };

    std::istringstream ss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) {
            line = line.substr(0, hash);
        }
        auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) {
            continue;
        }
        auto last = line.find_last_not_of(" \t\r");
        line = line.substr(first, last - first + 1);
        auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ValidationError(origin + ":" + std::to_string(lineno) +
                                  ": expected key=value, got '" + line + "'");
        }
        auto trim = [](std::string s) {
            auto b = s.find_first_not_of(" \t");
            auto e = s.find_last_not_of(" \t");
            return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
        };
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        auto it = setters.find(key);
        if (it == setters.end()) {
            throw ValidationError(origin + ":" + std::to_string(lineno) + ": unknown config key '" +
                                  key + "'");
        }
        try {
            it->second(value);
        } catch (const std::invalid_argument&) {
            throw ValidationError(origin + ":" + std::to_string(lineno) + ": bad value for '" +
                                  key + "': '" + value + "'");
        } catch (const std::out_of_range&) {
            throw ValidationError(origin + ":" + std::to_string(lineno) + ": value out of range for '" +
                                  key + "': '" + value + "'");
        }
    }
    return cfg;
}

inline CliConfig parse_config_file(const std::filesystem::path& path) {
    return parse_config_text(read_file(path), path.string());
}

// ---------------------------------------------------------------------------
// Run directory lock: one owner per run directory. A lock whose process is
// gone is stale and gets taken over, so a crashed run can be resumed.
// ---------------------------------------------------------------------------

class RunLock {
public:
    explicit RunLock(const std::filesystem::path& run_dir) : path_(run_dir / ".lock") {
        std::filesystem::create_directories(run_dir);
        if (std::filesystem::exists(path_)) {
            long pid = 0;
            try {
                pid = std::stol(read_file(path_));
            } catch (...) {
                pid = 0;
            }
            if (pid > 0 && ::kill(static_cast<pid_t>(pid), 0) == 0 &&
                pid != static_cast<long>(::getpid())) {
                throw ValidationError("run directory is locked by live process " +
                                      std::to_string(pid));
            }
            log_warn("taking over stale lock from process " + std::to_string(pid));
        }
        write_file(path_, std::to_string(::getpid()));
        owned_ = true;
    }

    ~RunLock() {
        if (owned_) {
            std::error_code ec;
            std::filesystem::remove(path_, ec);
        }
    }

    RunLock(const RunLock&) = delete;
    RunLock& operator=(const RunLock&) = delete;

private:
    std::filesystem::path path_;
    bool owned_ = false;
};

// ---------------------------------------------------------------------------
// Manifest: every artifact with a content checksum, no timestamps, so a
// seeded rerun reproduces it byte for byte.
// ---------------------------------------------------------------------------

struct IterationRecord {
    int t = 0;
    Phase phase = Phase::init;
    bool completed = false;
    std::string model_path;  // relative to the run directory
    std::string model_checksum;
    std::string dataset_path;
    std::string dataset_checksum;
    std::string dataset_source;  // "bootstrap" or "model_iter_<t-1>"
    std::string stats_path;
    std::string stats_checksum;
    std::string eval_path;  // empty when per-iteration eval is off

    json to_json() const {
        json j{{"t", t},
               {"phase", to_string(phase)},
               {"completed", completed},
               {"model", model_path},
               {"model_checksum", model_checksum},
               {"dataset", dataset_path},
               {"dataset_checksum", dataset_checksum},
               {"dataset_source", dataset_source},
               {"stats", stats_path},
               {"stats_checksum", stats_checksum}};
        if (!eval_path.empty()) {
            j["eval"] = eval_path;
        }
        return j;
    }
};

struct RunManifest {
    json config;
    std::vector<IterationRecord> iterations;

    json to_json() const {
        json iters = json::array();
        for (const auto& it : iterations) {
            iters.push_back(it.to_json());
        }
        return json{{"config", config}, {"iterations", std::move(iters)}};
    }
};

inline void save_manifest(const RunManifest& m, const std::filesystem::path& path) {
    write_file(path, m.to_json().dump(2) + "\n");
}

inline RunManifest load_manifest(const std::filesystem::path& path) {
    json j = json::parse(read_file(path), nullptr, false);
    if (j.is_discarded()) {
        throw FormatError(path.string() + ": malformed manifest JSON");
    }
    RunManifest m;
    try {
        m.config = j.at("config");
        for (const auto& ji : j.at("iterations")) {
            IterationRecord rec;
            rec.t = ji.at("t").get<int>();
            std::string phase = ji.at("phase").get<std::string>();
            rec.phase = phase == "init" ? Phase::init : (phase == "mbr" ? Phase::mbr : Phase::top1);
            rec.completed = ji.at("completed").get<bool>();
            rec.model_path = ji.at("model").get<std::string>();
            rec.model_checksum = ji.at("model_checksum").get<std::string>();
            rec.dataset_path = ji.at("dataset").get<std::string>();
            rec.dataset_checksum = ji.at("dataset_checksum").get<std::string>();
            rec.dataset_source = ji.at("dataset_source").get<std::string>();
            rec.stats_path = ji.at("stats").get<std::string>();
            rec.stats_checksum = ji.at("stats_checksum").get<std::string>();
            rec.eval_path = ji.value("eval", std::string{});
            m.iterations.push_back(std::move(rec));
        }
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": bad manifest: " + e.what());
    }
    return m;
}

// ---------------------------------------------------------------------------
// Orchestrator: executes iterations 0..T with phase switching on tau,
// materializing D_t before each training phase and checkpointing after it.
// ---------------------------------------------------------------------------

struct RunOutcome {
    std::filesystem::path run_dir;
    std::filesystem::path manifest_path;
    std::filesystem::path final_model_path;
    int completed_iterations = 0;
    int resumed_iterations = 0;
};

class Orchestrator {
public:
    explicit Orchestrator(RunConfig config) : cfg_(std::move(config)) {
        cfg_.validate();
        run_dir_ = std::filesystem::path(cfg_.runs_dir) / cfg_.run_name;
        manifest_path_ = run_dir_ / "manifest.json";

        auto [sessions, passages] = load_corpus(cfg_.sessions_path, cfg_.passages_path);
        sessions_ = std::move(sessions);
        passages_ = std::move(passages);
        all_instances_ = build_instances(sessions_);
        for (const auto& inst : all_instances_) {
            bool is_last = is_last_turn(inst);
            if (cfg_.holdout_last_turn && is_last) {
                eval_instances_.push_back(inst);
            } else {
                train_instances_.push_back(inst);
            }
        }
        train_instances_ = sample_fraction(train_instances_, cfg_.data_fraction, cfg_.seed);
        if (train_instances_.empty()) {
            throw ValidationError("no training instances after split/sampling");
        }
        if (cfg_.store_path.empty()) {
            log_info("no store path configured; building the embedding store in memory");
            store_ = build_store(passages_);
        } else {
            store_ = load_store(cfg_.store_path);
        }
        d0_ = load_dataset_version(cfg_.d0_path);
        if (d0_.iteration != 0) {
            throw ValidationError("d0 file is not an iteration-0 dataset");
        }
        validate_dataset_against(d0_, all_instances_);
        if (cfg_.eval_each_iteration) {
            qrels_ = load_qrels(cfg_.qrels_path);
        }
    }

    const std::vector<ReformulationInstance>& train_instances() const { return train_instances_; }
    const std::vector<ReformulationInstance>& eval_instances() const { return eval_instances_; }

    RunOutcome run_all() {
        RunLock lock(run_dir_);
        RunManifest manifest;
        int resumed = 0;
        if (std::filesystem::exists(manifest_path_)) {
            manifest = load_manifest(manifest_path_);
            if (manifest.config != cfg_.to_json()) {
                throw ValidationError(
                    "existing manifest was produced by a different configuration");
            }
        } else {
            manifest.config = cfg_.to_json();
        }
        for (int t = 0; t <= cfg_.iterations; ++t) {
            if (static_cast<int>(manifest.iterations.size()) > t &&
                manifest.iterations[static_cast<std::size_t>(t)].completed) {
                verify_iteration_artifacts(manifest.iterations[static_cast<std::size_t>(t)]);
                log_info("iteration " + std::to_string(t) + " already completed; skipping");
                ++resumed;
                continue;
            }
            IterationRecord rec = run_iteration(t);
            if (static_cast<int>(manifest.iterations.size()) > t) {
                manifest.iterations[static_cast<std::size_t>(t)] = rec;
            } else {
                manifest.iterations.push_back(rec);
            }
            save_manifest(manifest, manifest_path_);
        }
        RunOutcome outcome;
        outcome.run_dir = run_dir_;
        outcome.manifest_path = manifest_path_;
        outcome.final_model_path =
            run_dir_ / manifest.iterations.back().model_path;
        outcome.completed_iterations = static_cast<int>(manifest.iterations.size());
        outcome.resumed_iterations = resumed;
        return outcome;
    }

private:
    bool is_last_turn(const ReformulationInstance& inst) const {
        for (const auto& s : sessions_) {
            if (s.session_id == inst.session_id) {
                return inst.turn_index == static_cast<int>(s.turns.size());
            }
        }
        throw InvariantError("instance without session: " + inst.instance_id);
    }

    std::filesystem::path iter_dir(int t) const {
        return run_dir_ / ("iter" + std::to_string(t));
    }

    void verify_iteration_artifacts(const IterationRecord& rec) const {
        auto check = [&](const std::string& rel, const std::string& expected) {
            std::filesystem::path p = run_dir_ / rel;
            if (!std::filesystem::exists(p)) {
                throw InvariantError("manifest lists missing artifact: " + p.string());
            }
            std::string actual = fnv1a64_file_hex(p);
            if (actual != expected) {
                throw InvariantError("checksum mismatch for " + p.string() +
                                     " (manifest " + expected + ", disk " + actual + ")");
            }
        };
        check(rec.model_path, rec.model_checksum);
        check(rec.dataset_path, rec.dataset_checksum);
        check(rec.stats_path, rec.stats_checksum);
    }

    GeneratorModel initial_model() const {
        std::vector<std::string> texts;
        for (const auto& inst : train_instances_) {
            texts.push_back(model_input(inst));
        }
        for (const auto& row : d0_.rows) {
            texts.push_back(row.target);
        }
        for (const auto& p : passages_) {
            texts.push_back(p.text);
        }
        Vocab vocab = fit_vocab(texts, cfg_.min_frequency);
        GeneratorConfig gcfg;
        gcfg.hidden_size = static_cast<std::size_t>(cfg_.hidden_size);
        gcfg.embed_size = static_cast<std::size_t>(cfg_.embed_size);
        gcfg.max_decode_len = static_cast<std::size_t>(cfg_.max_query_len);
        gcfg.use_copy = cfg_.use_copy;
        gcfg.learning_rate = cfg_.learning_rate;
        return GeneratorModel(gcfg, std::move(vocab), cfg_.seed);
    }

    // D_t for t >= 1: n candidates per training instance from M_{t-1},
    // rewards attached where gold passages exist.
    DatasetVersion generate_dataset(const GeneratorModel& model, int t) const {
        DatasetVersion d;
        d.iteration = t;
        d.n = cfg_.n;
        d.provenance = Provenance::generated;
        d.rows.resize(train_instances_.size());
        parallel_for(train_instances_.size(), [&](std::size_t i) {
            const auto& inst = train_instances_[i];
            std::vector<Candidate> cands =
                model.generate_candidates(model_input(inst), cfg_.n, cfg_.effective_beam_width());
            std::vector<std::string> texts;
            for (const auto& c : cands) {
                texts.push_back(c.text);
            }
            std::vector<double> rewards(cands.size(), 0.0);
            if (!inst.gold_passage_ids.empty()) {
                rewards = compute_rewards(texts, inst.gold_passage_ids, store_);
            }
            DatasetRow row;
            row.instance_id = inst.instance_id;
            for (std::size_t j = 0; j < cands.size(); ++j) {
                row.candidates.push_back({cands[j].text, cands[j].logprob, rewards[j]});
            }
            d.rows[i] = std::move(row);
        });
        return d;
    }

    IterationRecord run_iteration(int t) {
        log_info("iteration " + std::to_string(t) + " starting");
        Phase phase = phase_for_iteration(t, cfg_.tau);
        std::filesystem::path dir = iter_dir(t);
        std::filesystem::create_directories(dir);

        GeneratorModel model = t == 0 ? initial_model()
                                      : load_model(iter_dir(t - 1) / "model.bin");
        DatasetVersion dataset;
        if (t == 0) {
            dataset = d0_;
            // Keep only training-split rows so every dataset version covers
            // exactly the training instances.
            std::set<std::string> train_ids;
            for (const auto& inst : train_instances_) {
                train_ids.insert(inst.instance_id);
            }
            std::vector<DatasetRow> rows;
            for (auto& row : dataset.rows) {
                if (train_ids.count(row.instance_id)) {
                    rows.push_back(std::move(row));
                }
            }
            dataset.rows = std::move(rows);
        } else {
            dataset = generate_dataset(model, t);
        }
        persist_dataset_version(dataset, dir / "dataset.jsonl");

        std::vector<TrainExample> examples = assemble_examples(dataset, train_instances_);
        AdamOptimizer opt(cfg_.learning_rate);
        int epochs = phase == Phase::init ? cfg_.epochs_init
                                          : (phase == Phase::mbr ? cfg_.epochs_mbr : cfg_.epochs_top1);
        std::string stats_lines;
        for (int e = 0; e < epochs; ++e) {
            EpochStats stats =
                train_epoch(model, opt, examples, phase, cfg_.batch_size, cfg_.seed, t, e);
            stats_lines += stats.to_json().dump() + "\n";
            log_info("iter " + std::to_string(t) + " " + to_string(phase) + " epoch " +
                     std::to_string(e) + " mean_loss " + std::to_string(stats.mean_loss));
        }
        write_file(dir / "stats.jsonl", stats_lines);
        save_model(model, dir / "model.bin");

        IterationRecord rec;
        rec.t = t;
        rec.phase = phase;
        rec.model_path = "iter" + std::to_string(t) + "/model.bin";
        rec.dataset_path = "iter" + std::to_string(t) + "/dataset.jsonl";
        rec.stats_path = "iter" + std::to_string(t) + "/stats.jsonl";
        rec.dataset_source = t == 0 ? "bootstrap" : ("model_iter_" + std::to_string(t - 1));
        rec.model_checksum = fnv1a64_file_hex(dir / "model.bin");
        rec.dataset_checksum = fnv1a64_file_hex(dir / "dataset.jsonl");
        rec.stats_checksum = fnv1a64_file_hex(dir / "stats.jsonl");
        if (cfg_.eval_each_iteration) {
            evaluate_iteration(model, t, dir);
            rec.eval_path = "iter" + std::to_string(t) + "/eval.json";
        }
        rec.completed = true;
        log_info("iteration " + std::to_string(t) + " completed");
        return rec;
    }

    // Post-iteration probe on the held-out split: mean reward of the
    // best-rewarded candidate, plus dense retrieval quality of the top beam.
    void evaluate_iteration(const GeneratorModel& model, int t,
                            const std::filesystem::path& dir) const {
        const auto& split = eval_instances_.empty() ? train_instances_ : eval_instances_;
        struct EvalRow {
            std::string best_text;
            double best_logprob = 0.0;
            double top1_reward = 0.0;
            bool has_gold = false;
        };
        std::vector<EvalRow> rows(split.size());
        parallel_for(split.size(), [&](std::size_t i) {
            const auto& inst = split[i];
            std::vector<Candidate> cands =
                model.generate_candidates(model_input(inst), cfg_.n, cfg_.effective_beam_width());
            EvalRow row;
            row.best_text = cands.front().text;
            row.best_logprob = cands.front().logprob;
            if (!inst.gold_passage_ids.empty()) {
                std::vector<std::string> texts;
                for (const auto& c : cands) {
                    texts.push_back(c.text);
                }
                std::vector<double> rewards = compute_rewards(texts, inst.gold_passage_ids, store_);
                row.top1_reward = rewards[select_top1(rewards)];
                row.has_gold = true;
            }
            rows[i] = std::move(row);
        });

        std::string reforms;
        std::vector<RunEntry> entries;
        double reward_sum = 0.0;
        int reward_count = 0;
        for (std::size_t i = 0; i < split.size(); ++i) {
            reforms += json{{"instance_id", split[i].instance_id},
                            {"text", rows[i].best_text},
                            {"logprob", rows[i].best_logprob}}
                           .dump() +
                       "\n";
            entries.push_back(dense_search(rows[i].best_text, store_,
                                           static_cast<std::size_t>(cfg_.eval_k),
                                           split[i].instance_id));
            if (rows[i].has_gold) {
                reward_sum += rows[i].top1_reward;
                reward_count++;
            }
        }
        write_file(dir / "reformulations.jsonl", reforms);
        write_run(entries, dir / "eval_run.trec");
        EvaluationResult res = evaluate_entries(entries, qrels_, "eval");
        json eval = {{"iteration", t},
                     {"mean_top1_reward", reward_count ? reward_sum / reward_count : 0.0},
                     {"dense_mrr", res.report.mrr},
                     {"num_eval_queries", res.report.num_queries}};
        write_file(dir / "eval.json", eval.dump(2) + "\n");
    }

    RunConfig cfg_;
    std::filesystem::path run_dir_;
    std::filesystem::path manifest_path_;
    std::vector<Session> sessions_;
    std::vector<Passage> passages_;
    std::vector<ReformulationInstance> all_instances_;
    std::vector<ReformulationInstance> train_instances_;
    std::vector<ReformulationInstance> eval_instances_;
    EmbeddingStore store_;
    DatasetVersion d0_;
    Qrels qrels_;
};

}  // namespace itercqr
