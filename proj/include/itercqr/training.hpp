#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "itercqr/autodiff.hpp"
#include "itercqr/common.hpp"
#include "itercqr/data.hpp"
#include "itercqr/embedding.hpp"
#include "itercqr/generator.hpp"

namespace itercqr {

// ---------------------------------------------------------------------------
// Rewards: cosine against gold passage embeddings, max over multiple golds.
// ---------------------------------------------------------------------------

inline std::vector<double> compute_rewards(const std::vector<std::string>& candidate_texts,
                                           const std::vector<std::string>& gold_passage_ids,
                                           const EmbeddingStore& store) {
    if (gold_passage_ids.empty()) {
        throw InvariantError("rewards requested for an instance without gold passages");
    }
    std::vector<EmbeddingVector> golds;
    golds.reserve(gold_passage_ids.size());
    for (const auto& pid : gold_passage_ids) {
        golds.push_back(store.vector_for(pid));  // unknown id -> validation error
    }
    std::vector<double> rewards;
    rewards.reserve(candidate_texts.size());
    for (const auto& text : candidate_texts) {
        EmbeddingVector v = encode(text, store.dim);
        double best = -1.0;
        for (const auto& g : golds) {
            best = std::max(best, cosine(v, g));
        }
        rewards.push_back(best);
    }
    return rewards;
}

// Per-instance min-max scaling; a degenerate candidate set (max == min) maps
// to 0.5 everywhere, which carries zero MBR gradient anyway.
inline std::vector<double> minmax_normalize(const std::vector<double>& raw) {
    if (raw.empty()) {
        throw ValidationError("cannot normalize an empty reward vector");
    }
    double lo = raw[0], hi = raw[0];
    for (double r : raw) {
        lo = std::min(lo, r);
        hi = std::max(hi, r);
    }
    std::vector<double> out(raw.size());
    if (hi == lo) {
        std::fill(out.begin(), out.end(), 0.5);
        return out;
    }
    for (std::size_t i = 0; i < raw.size(); ++i) {
        out[i] = (raw[i] - lo) / (hi - lo);
    }
    return out;
}

inline std::vector<double> renormalize_probs(const std::vector<double>& logprobs) {
    if (logprobs.empty()) {
        throw ValidationError("cannot renormalize an empty logprob vector");
    }
    return Tape::softmax_values(logprobs);
}

// L = -sum_j p~_j R_j with p~ = softmax(logprobs).
inline double mbr_loss(const std::vector<double>& logprobs, const std::vector<double>& rewards) {
    if (logprobs.size() != rewards.size()) {
        throw ValidationError("logprob/reward length mismatch");
    }
    std::vector<double> p = renormalize_probs(logprobs);
    double expected = 0.0;
    for (std::size_t j = 0; j < p.size(); ++j) {
        expected += p[j] * rewards[j];
    }
    return -expected;
}

// dL/ds_j = -p~_j (R_j - sum_k p~_k R_k).
inline std::vector<double> mbr_gradient(const std::vector<double>& logprobs,
                                        const std::vector<double>& rewards) {
    if (logprobs.size() != rewards.size()) {
        throw ValidationError("logprob/reward length mismatch");
    }
    std::vector<double> p = renormalize_probs(logprobs);
    double expected = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
        expected += p[k] * rewards[k];
    }
    std::vector<double> g(p.size());
    for (std::size_t j = 0; j < p.size(); ++j) {
        g[j] = -p[j] * (rewards[j] - expected);
    }
    return g;
}

// Same loss composed on a tape: candidate scores are recomputed under the
// current parameters, so the gradient reaches every weight.
inline Tape::Ref mbr_loss_on_tape(Tape& t, const GeneratorModel& model,
                                  const std::string& input_text,
                                  const std::vector<std::string>& candidate_texts,
                                  const std::vector<double>& normalized_rewards) {
    if (candidate_texts.size() != normalized_rewards.size()) {
        throw ValidationError("candidate/reward length mismatch");
    }
    std::vector<Tape::Ref> scores = model.score_candidates_on_tape(t, input_text, candidate_texts);
    Tape::Ref probs = t.softmax(t.pack(scores));
    Tape::Ref expected = t.dot(probs, t.input(normalized_rewards));
    return t.affine(expected, -1.0, 0.0);
}

// Argmax over raw rewards; ties go to the lowest index (highest beam rank).
inline std::size_t select_top1(const std::vector<double>& raw_rewards) {
    if (raw_rewards.empty()) {
        throw ValidationError("cannot select from an empty candidate set");
    }
    std::size_t best = 0;
    for (std::size_t j = 1; j < raw_rewards.size(); ++j) {
        if (raw_rewards[j] > raw_rewards[best]) {
            best = j;
        }
    }
    return best;
}

inline double nll_loss(const GeneratorModel& model, const std::string& input_text,
                       const std::string& target_text) {
    Tape t(false);
    return t.scalar(model.nll_on_tape(t, input_text, target_text));
}

// ---------------------------------------------------------------------------
// Epoch driver
// ---------------------------------------------------------------------------

enum class Phase { init, mbr, top1 };

inline std::string to_string(Phase p) {
    switch (p) {
        case Phase::init: return "init";
        case Phase::mbr: return "mbr";
        case Phase::top1: return "top1";
    }
    throw InvariantError("unknown phase");
}

// t=0 trains on bootstrap targets; 1..tau explores with MBR; afterwards
// exploits the best candidate with NLL.
inline Phase phase_for_iteration(int t, int tau) {
    if (t == 0) {
        return Phase::init;
    }
    return t <= tau ? Phase::mbr : Phase::top1;
}

struct TrainExample {
    std::string instance_id;
    std::string input_text;
    std::string target;                   // init phase
    std::vector<std::string> candidates;  // mbr/top1 phases
    std::vector<double> raw_rewards;
    bool has_gold = false;
};

inline std::vector<TrainExample> assemble_examples(
    const DatasetVersion& dataset, const std::vector<ReformulationInstance>& instances) {
    std::unordered_map<std::string, const ReformulationInstance*> by_id;
    for (const auto& inst : instances) {
        by_id[inst.instance_id] = &inst;
    }
    std::vector<TrainExample> out;
    out.reserve(dataset.rows.size());
    for (const auto& row : dataset.rows) {
        auto it = by_id.find(row.instance_id);
        if (it == by_id.end()) {
            throw ValidationError("dataset row refers to unknown instance: " + row.instance_id);
        }
        TrainExample ex;
        ex.instance_id = row.instance_id;
        ex.input_text = model_input(*it->second);
        ex.target = row.target;
        ex.has_gold = !it->second->gold_passage_ids.empty();
        for (const auto& c : row.candidates) {
            ex.candidates.push_back(c.text);
            ex.raw_rewards.push_back(c.reward);
        }
        out.push_back(std::move(ex));
    }
    return out;
}

struct EpochStats {
    int iteration = 0;
    Phase phase = Phase::init;
    int epoch = 0;
    double mean_loss = 0.0;
    int skipped_instances = 0;
    double mean_raw_reward = 0.0;

    json to_json() const {
        return json{{"iteration", iteration},       {"phase", itercqr::to_string(phase)},
                    {"epoch", epoch},               {"mean_loss", mean_loss},
                    {"skipped_instances", skipped_instances},
                    {"mean_raw_reward", mean_raw_reward}};
    }
};

// One pass over the examples in a seeded shuffle order, accumulating
// gradients per batch and stepping the optimizer. Instances without gold
// passages (or with an empty selected target) carry no reward signal and are
// skipped outside the init phase.
inline EpochStats train_epoch(GeneratorModel& model, AdamOptimizer& opt,
                              const std::vector<TrainExample>& examples, Phase phase,
                              int batch_size, std::uint64_t seed, int iteration, int epoch) {
    if (batch_size < 1) {
        throw ValidationError("batch size must be positive");
    }
    std::vector<std::size_t> order(examples.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }
    std::string shuffle_key = "epoch:" + std::to_string(seed) + ":" + std::to_string(iteration) +
                              ":" + std::to_string(epoch);
    std::mt19937_64 rng(fnv1a64(shuffle_key));
    deterministic_shuffle(order, rng);

    EpochStats stats;
    stats.iteration = iteration;
    stats.phase = phase;
    stats.epoch = epoch;
    double loss_sum = 0.0;
    double reward_sum = 0.0;
    int processed = 0;
    int in_batch = 0;

    for (std::size_t oi = 0; oi < order.size(); ++oi) {
        const TrainExample& ex = examples[order[oi]];
        double loss_value = 0.0;
        if (phase == Phase::init) {
            if (ex.target.empty()) {
                stats.skipped_instances++;
                continue;
            }
            Tape t(true);
            Tape::Ref loss = model.nll_on_tape(t, ex.input_text, ex.target);
            loss_value = t.scalar(loss);
            if (!std::isfinite(loss_value)) {
                throw InvariantError("non-finite loss on instance " + ex.instance_id);
            }
            t.backward(loss);
        } else {
            if (!ex.has_gold || ex.candidates.empty()) {
                stats.skipped_instances++;
                continue;
            }
            if (phase == Phase::mbr) {
                Tape t(true);
                Tape::Ref loss = mbr_loss_on_tape(t, model, ex.input_text, ex.candidates,
                                                  minmax_normalize(ex.raw_rewards));
                loss_value = t.scalar(loss);
                if (!std::isfinite(loss_value)) {
                    throw InvariantError("non-finite loss on instance " + ex.instance_id);
                }
                t.backward(loss);
            } else {
                std::size_t top = select_top1(ex.raw_rewards);
                if (ex.candidates[top].empty()) {
                    stats.skipped_instances++;
                    continue;
                }
                Tape t(true);
                Tape::Ref loss = model.nll_on_tape(t, ex.input_text, ex.candidates[top]);
                loss_value = t.scalar(loss);
                if (!std::isfinite(loss_value)) {
                    throw InvariantError("non-finite loss on instance " + ex.instance_id);
                }
                t.backward(loss);
            }
            double best = ex.raw_rewards[select_top1(ex.raw_rewards)];
            reward_sum += best;
        }
        loss_sum += loss_value;
        processed++;
        in_batch++;
        if (in_batch == batch_size) {
            opt.step(model);
            in_batch = 0;
        }
    }
    if (in_batch > 0) {
        opt.step(model);
    }
    stats.mean_loss = processed ? loss_sum / processed : 0.0;
    stats.mean_raw_reward = (phase != Phase::init && processed) ? reward_sum / processed : 0.0;
    return stats;
}

}  // namespace itercqr
