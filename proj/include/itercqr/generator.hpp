#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "itercqr/autodiff.hpp"
#include "itercqr/common.hpp"
#include "itercqr/text.hpp"

namespace itercqr {

// ---------------------------------------------------------------------------
// Vocabulary: ids 0-3 reserved, remaining tokens by frequency desc then
// lexicographic, so two builds over the same corpus agree exactly.
// ---------------------------------------------------------------------------

struct Vocab {
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;
    static constexpr int kBos = 2;
    static constexpr int kEos = 3;

    std::vector<std::string> id_to_token;      // includes the 4 reserved entries
    std::vector<std::uint64_t> frequencies;    // 0 for reserved entries
    std::unordered_map<std::string, int> token_to_id;
    int min_frequency = 1;

    int size() const { return static_cast<int>(id_to_token.size()); }

    int id_of(const std::string& token) const {
        auto it = token_to_id.find(token);
        return it == token_to_id.end() ? kUnk : it->second;
    }

    std::vector<int> encode(const std::string& text) const {
        std::vector<int> ids;
        for (const auto& tok : tokenize(text)) {
            ids.push_back(id_of(tok));
        }
        return ids;
    }

    std::string decode(const std::vector<int>& ids) const {
        std::string out;
        for (int id : ids) {
            if (id < 0 || id >= size()) {
                throw InvariantError("token id out of range: " + std::to_string(id));
            }
            if (!out.empty()) {
                out += " ";
            }
            out += id_to_token[static_cast<std::size_t>(id)];
        }
        return out;
    }

    static Vocab with_reserved(int min_frequency) {
        Vocab v;
        v.min_frequency = min_frequency;
        v.id_to_token = {"<pad>", "<unk>", "<bos>", "<eos>"};
        v.frequencies = {0, 0, 0, 0};
        for (int i = 0; i < 4; ++i) {
            v.token_to_id[v.id_to_token[static_cast<std::size_t>(i)]] = i;
        }
        return v;
    }

    void append(const std::string& token, std::uint64_t freq) {
        token_to_id[token] = size();
        id_to_token.push_back(token);
        frequencies.push_back(freq);
    }
};

inline Vocab fit_vocab(const std::vector<std::string>& texts, int min_frequency = 1) {
    if (texts.empty()) {
        throw ValidationError("cannot fit a vocabulary on an empty corpus");
    }
    std::map<std::string, std::uint64_t> counts;
    for (const auto& text : texts) {
        for (const auto& tok : tokenize(text)) {
            counts[tok]++;
        }
    }
    std::vector<std::pair<std::string, std::uint64_t>> items(counts.begin(), counts.end());
    std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) {
            return a.second > b.second;
        }
        return a.first < b.first;
    });
    Vocab v = Vocab::with_reserved(min_frequency);
    for (const auto& [tok, freq] : items) {
        if (freq >= static_cast<std::uint64_t>(min_frequency)) {
            v.append(tok, freq);
        }
    }
    return v;
}

inline void save_vocab(const Vocab& v, const std::filesystem::path& path) {
    std::string out = "min_frequency " + std::to_string(v.min_frequency) + "\n";
    for (int i = 4; i < v.size(); ++i) {
        out += v.id_to_token[static_cast<std::size_t>(i)] + " " +
               std::to_string(v.frequencies[static_cast<std::size_t>(i)]) + "\n";
    }
    write_file(path, out);
}

inline Vocab load_vocab(const std::filesystem::path& path) {
    auto lines = read_numbered_lines(path);
    if (lines.empty() || lines.front().second.rfind("min_frequency ", 0) != 0) {
        throw FormatError(path.string() + ": expected 'min_frequency <k>' header");
    }
    Vocab v = Vocab::with_reserved(std::stoi(lines.front().second.substr(14)));
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const auto& [lineno, line] = lines[i];
        auto sp = line.find(' ');
        if (sp == std::string::npos) {
            throw FormatError(path.string() + ":" + std::to_string(lineno) +
                              ": expected '<token> <freq>'");
        }
        v.append(line.substr(0, sp), std::stoull(line.substr(sp + 1)));
    }
    return v;
}

// ---------------------------------------------------------------------------
// Beam search, generic over a decoding step source so tests can drive it
// with fixed probability tables.
// ---------------------------------------------------------------------------

struct Candidate {
    std::vector<int> token_ids;  // without <bos>/<eos>
    std::string text;
    double logprob = 0.0;  // total sequence log-probability including <eos>
};

struct BeamHypothesis {
    std::vector<int> tokens;
    double logprob = 0.0;
    int completion_step = 0;  // 1-based step at which <eos> was taken
};

struct StepResult {
    int state = 0;  // opaque handle owned by the stepper
    std::vector<double> log_probs;
};

// Stepper contract: begin() yields the distribution of the first token;
// advance(state, token) consumes one token and yields the next distribution.
// Length-unnormalized: hypotheses are ranked by total logprob; ties broken by
// earlier completion, then lexicographic token ids.
template <typename Stepper>
std::vector<BeamHypothesis> beam_search(Stepper& stepper, int n, int beam_width, int max_len,
                                        const std::vector<int>& banned_tokens, int eos_id) {
    if (n <= 0) {
        throw ValidationError("candidate count must be positive");
    }
    if (beam_width < n) {
        throw ValidationError("beam width must be at least the candidate count");
    }
    struct Live {
        std::vector<int> tokens;
        double lp;
        int state;
        std::vector<double> dist;
    };
    StepResult first = stepper.begin();
    const int vocab = static_cast<int>(first.log_probs.size());
    std::vector<char> banned(static_cast<std::size_t>(vocab), 0);
    for (int b : banned_tokens) {
        banned[static_cast<std::size_t>(b)] = 1;
    }
    std::vector<Live> live;
    live.push_back({{}, 0.0, first.state, std::move(first.log_probs)});
    std::vector<BeamHypothesis> finished;

    // Lexicographic order of (prefix + one extension token) pairs.
    auto seq_less = [](const std::vector<int>& at, int atok, const std::vector<int>& bt, int btok) {
        std::size_t na = at.size() + 1, nb = bt.size() + 1;
        std::size_t m = std::min(na, nb);
        for (std::size_t i = 0; i < m; ++i) {
            int av = i < at.size() ? at[i] : atok;
            int bv = i < bt.size() ? bt[i] : btok;
            if (av != bv) {
                return av < bv;
            }
        }
        return na < nb;
    };

    for (int step = 1; !live.empty(); ++step) {
        struct Ext {
            std::size_t src;
            int token;
            double lp;
        };
        std::vector<Ext> exts;
        for (std::size_t s = 0; s < live.size(); ++s) {
            const Live& l = live[s];
            if (static_cast<int>(l.tokens.size()) >= max_len) {
                exts.push_back({s, eos_id, l.lp + l.dist[static_cast<std::size_t>(eos_id)]});
                continue;
            }
            for (int tok = 0; tok < vocab; ++tok) {
                if (banned[static_cast<std::size_t>(tok)]) {
                    continue;
                }
                exts.push_back({s, tok, l.lp + l.dist[static_cast<std::size_t>(tok)]});
            }
        }
        std::sort(exts.begin(), exts.end(), [&](const Ext& a, const Ext& b) {
            if (a.lp != b.lp) {
                return a.lp > b.lp;
            }
            return seq_less(live[a.src].tokens, a.token, live[b.src].tokens, b.token);
        });
        if (static_cast<int>(exts.size()) > beam_width) {
            exts.resize(static_cast<std::size_t>(beam_width));
        }
        std::vector<Live> next_live;
        for (const Ext& e : exts) {
            if (e.token == eos_id) {
                finished.push_back({live[e.src].tokens, e.lp, step});
            } else {
                StepResult r = stepper.advance(live[e.src].state, e.token);
                Live nl;
                nl.tokens = live[e.src].tokens;
                nl.tokens.push_back(e.token);
                nl.lp = e.lp;
                nl.state = r.state;
                nl.dist = std::move(r.log_probs);
                next_live.push_back(std::move(nl));
            }
        }
        live = std::move(next_live);
        // Logprob only decreases along a path, so once the n-th finished
        // hypothesis beats every live beam no live beam can enter the top n.
        if (static_cast<int>(finished.size()) >= n && !live.empty()) {
            std::vector<double> lps;
            for (const auto& f : finished) {
                lps.push_back(f.logprob);
            }
            std::nth_element(lps.begin(), lps.begin() + (n - 1), lps.end(), std::greater<>());
            double nth = lps[static_cast<std::size_t>(n - 1)];
            double best_live = live.front().lp;
            for (const auto& l : live) {
                best_live = std::max(best_live, l.lp);
            }
            if (best_live < nth) {
                break;
            }
        }
    }
    std::sort(finished.begin(), finished.end(), [&](const BeamHypothesis& a, const BeamHypothesis& b) {
        if (a.logprob != b.logprob) {
            return a.logprob > b.logprob;
        }
        if (a.completion_step != b.completion_step) {
            return a.completion_step < b.completion_step;
        }
        return a.tokens < b.tokens;
    });
    // A degenerate vocabulary can finish fewer than n distinct hypotheses;
    // pad by repeating the weakest one so the result size is stable.
    while (static_cast<int>(finished.size()) < n && !finished.empty()) {
        finished.push_back(finished.back());
    }
    if (finished.empty()) {
        throw InvariantError("beam search produced no hypotheses");
    }
    finished.resize(static_cast<std::size_t>(n));
    return finished;
}

// ---------------------------------------------------------------------------
// Reference model: GRU encoder-decoder with dot-product attention and a
// generate/copy mixture over the source tokens.
// ---------------------------------------------------------------------------

struct GeneratorConfig {
    std::size_t hidden_size = 128;
    std::size_t embed_size = 64;
    std::size_t max_decode_len = 32;
    bool use_copy = true;
    double learning_rate = 1e-5;
};

struct TensorView {
    std::size_t offset = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t size() const { return rows * cols; }
};

class GeneratorModel {
public:
    GeneratorConfig config;
    Vocab vocab;
    std::vector<double> params;
    // Accumulated by backward passes; consumed and zeroed by the optimizer.
    std::vector<double> grads;

    TensorView emb;                          // V x E
    TensorView enc_wz, enc_wr, enc_wh;       // H x (E+H)
    TensorView enc_bz, enc_br, enc_bh;       // H
    TensorView dec_wz, dec_wr, dec_wh;       // H x (E+H)
    TensorView dec_bz, dec_br, dec_bh;       // H
    TensorView comb_w;                       // H x 2H
    TensorView comb_b;                       // H
    TensorView out_w;                        // V x H
    TensorView out_b;                        // V
    TensorView gate_w;                       // 1 x 2H
    TensorView gate_b;                       // 1

    GeneratorModel() = default;

    // Every block gets small random weights; a zero output head starts on a
    // plateau where only the token-frequency bias receives gradient.
    GeneratorModel(GeneratorConfig cfg, Vocab voc, std::uint64_t seed)
        : config(cfg), vocab(std::move(voc)) {
        allocate();
        std::mt19937_64 rng(seed);
        for (double& p : params) {
            p = rand_uniform(rng, -0.08, 0.08);
        }
        grads.assign(params.size(), 0.0);
    }

    std::size_t parameter_count() const { return params.size(); }

    struct BoundParams {
        Tape::Ref emb, enc_wz, enc_wr, enc_wh, enc_bz, enc_br, enc_bh;
        Tape::Ref dec_wz, dec_wr, dec_wh, dec_bz, dec_br, dec_bh;
        Tape::Ref comb_w, comb_b, out_w, out_b, gate_w, gate_b;
    };

    BoundParams bind(Tape& t) const {
        // Gradient pointers are written only by backward(), which only the
        // training path (holding a mutable model) ever invokes.
        auto* gbase = const_cast<double*>(grads.data());
        auto P = [&](const TensorView& v) {
            return t.param(params.data() + v.offset, gbase + v.offset, v.size());
        };
        return BoundParams{P(emb),    P(enc_wz), P(enc_wr), P(enc_wh), P(enc_bz), P(enc_br),
                           P(enc_bh), P(dec_wz), P(dec_wr), P(dec_wh), P(dec_bz), P(dec_br),
                           P(dec_bh), P(comb_w), P(comb_b), P(out_w),  P(out_b),  P(gate_w),
                           P(gate_b)};
    }

    struct EncodedInput {
        std::vector<Tape::Ref> states;
        Tape::Ref final_state = 0;
        std::vector<int> src_ids;
    };

    EncodedInput encode_source(Tape& t, const BoundParams& p, std::vector<int> src_ids) const {
        const std::size_t H = config.hidden_size;
        EncodedInput enc;
        enc.src_ids = std::move(src_ids);
        Tape::Ref h = t.input(std::vector<double>(H, 0.0));
        for (int id : enc.src_ids) {
            Tape::Ref x = t.embed_row(p.emb, static_cast<std::size_t>(id), config.embed_size);
            h = gru_cell(t, p.enc_wz, p.enc_bz, p.enc_wr, p.enc_br, p.enc_wh, p.enc_bh, x, h);
            enc.states.push_back(h);
        }
        enc.final_state = h;
        return enc;
    }

    struct DecodeStep {
        Tape::Ref state = 0;
        Tape::Ref logits = 0;
        Tape::Ref attn = Tape::kNoRef;
        Tape::Ref gate = Tape::kNoRef;
    };

    DecodeStep decode_step(Tape& t, const BoundParams& p, const EncodedInput& enc, int prev_token,
                           Tape::Ref prev_state) const {
        const std::size_t H = config.hidden_size;
        const std::size_t V = static_cast<std::size_t>(vocab.size());
        Tape::Ref x = t.embed_row(p.emb, static_cast<std::size_t>(prev_token), config.embed_size);
        Tape::Ref s = gru_cell(t, p.dec_wz, p.dec_bz, p.dec_wr, p.dec_br, p.dec_wh, p.dec_bh, x,
                               prev_state);
        DecodeStep out;
        out.state = s;
        Tape::Ref ctx;
        if (!enc.states.empty()) {
            std::vector<Tape::Ref> scores;
            scores.reserve(enc.states.size());
            for (Tape::Ref es : enc.states) {
                scores.push_back(t.dot(s, es));
            }
            out.attn = t.softmax(t.pack(scores));
            ctx = t.weighted_sum(out.attn, enc.states);
        } else {
            ctx = t.input(std::vector<double>(H, 0.0));
        }
        Tape::Ref sc = t.concat(s, ctx);
        Tape::Ref combined = t.tanh_op(t.add(t.matvec(p.comb_w, H, 2 * H, sc), p.comb_b));
        out.logits = t.add(t.matvec(p.out_w, V, H, combined), p.out_b);
        if (config.use_copy && out.attn != Tape::kNoRef) {
            out.gate = t.sigmoid(t.add(t.matvec(p.gate_w, 1, 2 * H, sc), p.gate_b));
        }
        return out;
    }

    // Full next-token log distribution (values only), mixture included.
    std::vector<double> step_log_probs(const Tape& t, const DecodeStep& d,
                                       const std::vector<int>& src_ids) const {
        std::vector<double> p = Tape::softmax_values(t.value_copy(d.logits));
        if (d.attn != Tape::kNoRef && d.gate != Tape::kNoRef) {
            double g = t.scalar(d.gate);
            for (double& v : p) {
                v *= g;
            }
            const double* av = t.vals(d.attn);
            for (std::size_t i = 0; i < src_ids.size(); ++i) {
                p[static_cast<std::size_t>(src_ids[i])] += (1.0 - g) * av[i];
            }
        }
        for (double& v : p) {
            v = std::log(v);
        }
        return p;
    }

    // Total sequence log-probability of target_ids + <eos>, teacher-forced.
    // Differentiable; equals the beam logprob of the same sequence.
    Tape::Ref score_sequence(Tape& t, const BoundParams& p, const EncodedInput& enc,
                             const std::vector<int>& target_ids) const {
        std::vector<int> ids = target_ids;
        ids.push_back(Vocab::kEos);
        std::vector<Tape::Ref> step_lps;
        step_lps.reserve(ids.size());
        Tape::Ref state = enc.final_state;
        int prev = Vocab::kBos;
        for (int id : ids) {
            DecodeStep d = decode_step(t, p, enc, prev, state);
            step_lps.push_back(t.log_mixture_prob(d.logits, d.attn, d.gate, enc.src_ids, id));
            state = d.state;
            prev = id;
        }
        Tape::Ref packed = t.pack(step_lps);
        return t.dot(packed, t.input(std::vector<double>(ids.size(), 1.0)));
    }

    // One tape ref per candidate; the input is encoded once. Empty candidate
    // text scores as an <eos>-only sequence.
    std::vector<Tape::Ref> score_candidates_on_tape(Tape& t, const std::string& input_text,
                                                    const std::vector<std::string>& texts) const {
        BoundParams p = bind(t);
        EncodedInput enc = encode_source(t, p, vocab.encode(input_text));
        std::vector<Tape::Ref> out;
        out.reserve(texts.size());
        for (const auto& text : texts) {
            out.push_back(score_sequence(t, p, enc, vocab.encode(text)));
        }
        return out;
    }

    std::vector<double> score_candidates(const std::string& input_text,
                                         const std::vector<std::string>& texts) const {
        Tape t(false);
        std::vector<double> out;
        for (Tape::Ref r : score_candidates_on_tape(t, input_text, texts)) {
            out.push_back(t.scalar(r));
        }
        return out;
    }

    // Mean per-token NLL of the target (including <eos>), teacher-forced.
    Tape::Ref nll_on_tape(Tape& t, const std::string& input_text,
                          const std::string& target_text) const {
        std::vector<int> target_ids = vocab.encode(target_text);
        if (target_ids.empty()) {
            throw ValidationError("nll target is empty: \"" + target_text + "\"");
        }
        BoundParams p = bind(t);
        EncodedInput enc = encode_source(t, p, vocab.encode(input_text));
        Tape::Ref total = score_sequence(t, p, enc, target_ids);
        return t.affine(total, -1.0 / static_cast<double>(target_ids.size() + 1), 0.0);
    }

    class ModelStepper {
    public:
        ModelStepper(const GeneratorModel& m, const std::string& input_text)
            : model_(m), tape_(false), bound_(m.bind(tape_)) {
            enc_ = m.encode_source(tape_, bound_, m.vocab.encode(input_text));
            states_.push_back(enc_.final_state);
        }
        StepResult begin() { return eval(0, Vocab::kBos); }
        StepResult advance(int state, int token) { return eval(state, token); }

    private:
        StepResult eval(int state_handle, int prev_token) {
            DecodeStep d = model_.decode_step(tape_, bound_, enc_,
                                              prev_token, states_[static_cast<std::size_t>(state_handle)]);
            states_.push_back(d.state);
            return {static_cast<int>(states_.size()) - 1,
                    model_.step_log_probs(tape_, d, enc_.src_ids)};
        }

        const GeneratorModel& model_;
        Tape tape_;
        BoundParams bound_;
        EncodedInput enc_;
        std::vector<Tape::Ref> states_;
    };

    std::vector<Candidate> generate_candidates(const std::string& input_text, int n,
                                               int beam_width) const {
        ModelStepper stepper(*this, input_text);
        auto hyps = beam_search(stepper, n, beam_width, static_cast<int>(config.max_decode_len),
                                {Vocab::kPad, Vocab::kUnk, Vocab::kBos}, Vocab::kEos);
        std::vector<Candidate> out;
        out.reserve(hyps.size());
        for (auto& h : hyps) {
            Candidate c;
            c.text = vocab.decode(h.tokens);
            c.token_ids = std::move(h.tokens);
            c.logprob = h.logprob;
            out.push_back(std::move(c));
        }
        return out;
    }

    void zero_grads() { std::fill(grads.begin(), grads.end(), 0.0); }

private:
    void allocate() {
        const std::size_t V = static_cast<std::size_t>(vocab.size());
        const std::size_t E = config.embed_size;
        const std::size_t H = config.hidden_size;
        std::size_t next = 0;
        auto alloc = [&](std::size_t rows, std::size_t cols) {
            TensorView v{next, rows, cols};
            next += rows * cols;
            return v;
        };
        emb = alloc(V, E);
        enc_wz = alloc(H, E + H);
        enc_wr = alloc(H, E + H);
        enc_wh = alloc(H, E + H);
        enc_bz = alloc(H, 1);
        enc_br = alloc(H, 1);
        enc_bh = alloc(H, 1);
        dec_wz = alloc(H, E + H);
        dec_wr = alloc(H, E + H);
        dec_wh = alloc(H, E + H);
        dec_bz = alloc(H, 1);
        dec_br = alloc(H, 1);
        dec_bh = alloc(H, 1);
        comb_w = alloc(H, 2 * H);
        comb_b = alloc(H, 1);
        out_w = alloc(V, H);
        out_b = alloc(V, 1);
        gate_w = alloc(1, 2 * H);
        gate_b = alloc(1, 1);
        params.assign(next, 0.0);
        grads.assign(next, 0.0);
    }

    Tape::Ref gru_cell(Tape& t, Tape::Ref wz, Tape::Ref bz, Tape::Ref wr, Tape::Ref br,
                       Tape::Ref wh, Tape::Ref bh, Tape::Ref x, Tape::Ref h) const {
        const std::size_t H = config.hidden_size;
        const std::size_t cols = config.embed_size + H;
        Tape::Ref xh = t.concat(x, h);
        Tape::Ref z = t.sigmoid(t.add(t.matvec(wz, H, cols, xh), bz));
        Tape::Ref r = t.sigmoid(t.add(t.matvec(wr, H, cols, xh), br));
        Tape::Ref xrh = t.concat(x, t.mul(r, h));
        Tape::Ref hc = t.tanh_op(t.add(t.matvec(wh, H, cols, xrh), bh));
        return t.add(t.mul(t.affine(z, -1.0, 1.0), h), t.mul(z, hc));
    }
};

// ---------------------------------------------------------------------------
// Adam with fixed betas; lr=0 leaves parameters bit-identical.
// ---------------------------------------------------------------------------

struct AdamOptimizer {
    double lr = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t steps = 0;
    std::vector<double> m, v;

    explicit AdamOptimizer(double learning_rate) : lr(learning_rate) {}

    void step(GeneratorModel& model) {
        if (m.empty()) {
            m.assign(model.params.size(), 0.0);
            v.assign(model.params.size(), 0.0);
        }
        if (m.size() != model.params.size()) {
            throw InvariantError("optimizer state does not match model size");
        }
        ++steps;
        double bc1 = 1.0 - std::pow(beta1, static_cast<double>(steps));
        double bc2 = 1.0 - std::pow(beta2, static_cast<double>(steps));
        for (std::size_t i = 0; i < model.params.size(); ++i) {
            double g = model.grads[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            double mhat = m[i] / bc1;
            double vhat = v[i] / bc2;
            model.params[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
        model.zero_grads();
    }
};

// ---------------------------------------------------------------------------
// Versioned model container: config+vocab JSON, then raw 64-bit parameters.
// ---------------------------------------------------------------------------

namespace detail {

inline constexpr char kGenMagic[8] = {'I', 'T', 'C', 'Q', 'G', 'E', 'N', '1'};
inline constexpr std::uint32_t kGenVersion = 1;

}  // namespace detail

inline void save_model(const GeneratorModel& model, const std::filesystem::path& path) {
    json vocab_items = json::array();
    for (int i = 4; i < model.vocab.size(); ++i) {
        vocab_items.push_back(
            {model.vocab.id_to_token[static_cast<std::size_t>(i)],
             model.vocab.frequencies[static_cast<std::size_t>(i)]});
    }
    json cfg = {{"embed_size", model.config.embed_size},
                {"hidden_size", model.config.hidden_size},
                {"learning_rate", model.config.learning_rate},
                {"max_decode_len", model.config.max_decode_len},
                {"min_frequency", model.vocab.min_frequency},
                {"use_copy", model.config.use_copy},
                {"vocab", std::move(vocab_items)}};
    std::string cfg_str = cfg.dump();

    std::string out;
    out.append(detail::kGenMagic, 8);
    detail::append_u32le(out, detail::kGenVersion);
    detail::append_u32le(out, static_cast<std::uint32_t>(cfg_str.size()));
    out += cfg_str;
    detail::append_u64le(out, model.params.size());
    for (double p : model.params) {
        detail::append_f64le(out, p);
    }
    write_file(path, out);
}

inline GeneratorModel load_model(const std::filesystem::path& path) {
    std::string data = read_file(path);
    detail::ByteReader r{data, path.string()};
    if (r.read_bytes(8) != std::string(detail::kGenMagic, 8)) {
        throw FormatError(path.string() + ": bad model magic");
    }
    std::uint32_t version = r.read_u32le();
    if (version != detail::kGenVersion) {
        throw FormatError(path.string() + ": unsupported model version " +
                          std::to_string(version));
    }
    std::uint32_t cfg_len = r.read_u32le();
    json cfg = json::parse(r.read_bytes(cfg_len), nullptr, false);
    if (cfg.is_discarded()) {
        throw FormatError(path.string() + ": malformed model config");
    }
    GeneratorConfig config;
    Vocab vocab;
    try {
        config.embed_size = cfg.at("embed_size").get<std::size_t>();
        config.hidden_size = cfg.at("hidden_size").get<std::size_t>();
        config.learning_rate = cfg.at("learning_rate").get<double>();
        config.max_decode_len = cfg.at("max_decode_len").get<std::size_t>();
        config.use_copy = cfg.at("use_copy").get<bool>();
        vocab = Vocab::with_reserved(cfg.at("min_frequency").get<int>());
        for (const auto& item : cfg.at("vocab")) {
            vocab.append(item.at(0).get<std::string>(), item.at(1).get<std::uint64_t>());
        }
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": bad model config: " + e.what());
    }
    GeneratorModel model(config, std::move(vocab), 0);
    std::uint64_t count = r.read_u64le();
    if (count != model.params.size()) {
        throw FormatError(path.string() + ": parameter count " + std::to_string(count) +
                          " does not match architecture (" + std::to_string(model.params.size()) +
                          ")");
    }
    for (auto& p : model.params) {
        p = r.read_f64le();
    }
    model.zero_grads();
    return model;
}

}  // namespace itercqr
