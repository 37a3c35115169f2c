#pragma once

#include <chrono>
#include <cstdlib>
#include <functional>
#include <map>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "itercqr/common.hpp"
#include "itercqr/data.hpp"
#include "itercqr/text.hpp"

namespace itercqr {

// ---------------------------------------------------------------------------
// Prompt construction: fixed instruction, up to three preceding
// question/answer pairs in chronological order, then the current query.
// ---------------------------------------------------------------------------

inline constexpr const char* kRewriteInstruction =
    "This is a part of conversational question answering. Rewrite the current query as a "
    "stand-alone question based on the previous conversation so that it could be "
    "context-independent.";

inline constexpr int kPromptContextTurns = 3;

inline std::string build_prompt(const ReformulationInstance& inst, const Session& session) {
    if (inst.session_id != session.session_id) {
        throw ValidationError("instance " + inst.instance_id + " does not belong to session " +
                              session.session_id);
    }
    std::string prompt = kRewriteInstruction;
    int first = std::max(1, inst.turn_index - kPromptContextTurns);
    for (int j = first; j < inst.turn_index; ++j) {
        const Turn& t = session.turns[static_cast<std::size_t>(j) - 1];
        prompt += "\nQuestion: " + t.query + "\nAnswer: " + t.answer;
    }
    prompt += "\n\nCurrent query: " + inst.current_query + "\nRewrite:";
    return prompt;
}

// ---------------------------------------------------------------------------
// HTTP transport seam: the real client goes through cpp-httplib; tests inject
// a stub, and offline mode must never invoke the transport at all.
// ---------------------------------------------------------------------------

struct HttpRequest {
    std::string url;
    std::string body;
    std::vector<std::pair<std::string, std::string>> headers;
    int timeout_ms = 30000;
};

struct HttpResponse {
    int status = 0;
    std::string body;
    bool network_error = false;
    std::string error;
};

// Null transport is fine for file mode; api mode requires one (the CLI wires
// in the cpp-httplib transport from bootstrap_http.hpp).
using HttpTransport = std::function<HttpResponse(const HttpRequest&)>;

struct LlmConfig {
    std::string mode = "file";  // "api" or "file"
    std::string endpoint = "http://localhost:8080/v1/chat/completions";
    std::string model_name = "gpt-3.5-turbo";
    double temperature = 0.0;
    int timeout_ms = 30000;
    int max_attempts = 5;
    int backoff_base_ms = 250;
    std::size_t max_query_tokens = 32;
    std::string api_key;  // from ITERCQR_LLM_API_KEY when unset
    std::filesystem::path cache_path;
    std::filesystem::path rewrites_path;
};

// Append-only JSONL cache; reloading applies last-write-wins per instance.
class BootstrapCache {
public:
    explicit BootstrapCache(std::filesystem::path path) : path_(std::move(path)) {
        if (!path_.empty() && std::filesystem::exists(path_)) {
            for (const auto& [lineno, line] : read_numbered_lines(path_)) {
                json j = json::parse(line, nullptr, false);
                if (j.is_discarded()) {
                    throw ParseError(path_.string() + ":" + std::to_string(lineno) +
                                     ": malformed cache line");
                }
                entries_[j.at("instance_id").get<std::string>()] =
                    j.at("rewrite").get<std::string>();
            }
        }
    }

    const std::string* find(const std::string& instance_id) const {
        auto it = entries_.find(instance_id);
        return it == entries_.end() ? nullptr : &it->second;
    }

    void put(const std::string& instance_id, const std::string& rewrite) {
        entries_[instance_id] = rewrite;
        if (path_.empty()) {
            return;
        }
        if (path_.has_parent_path()) {
            std::filesystem::create_directories(path_.parent_path());
        }
        std::ofstream out(path_, std::ios::app | std::ios::binary);
        if (!out) {
            throw IoError("cannot append to cache: " + path_.string());
        }
        out << json{{"instance_id", instance_id}, {"rewrite", rewrite}}.dump() << "\n";
        out.flush();
    }

private:
    std::filesystem::path path_;
    std::unordered_map<std::string, std::string> entries_;
};

inline std::string strip_rewrite(std::string s) {
    auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; };
    std::size_t b = 0, e = s.size();
    while (b < e && is_space(s[b])) ++b;
    while (e > b && is_space(s[e - 1])) --e;
    s = s.substr(b, e - b);
    while (s.size() >= 2 && ((s.front() == '"' && s.back() == '"') ||
                             (s.front() == '\'' && s.back() == '\''))) {
        s = s.substr(1, s.size() - 2);
    }
    return s;
}

class LlmClient {
public:
    LlmClient(LlmConfig config, HttpTransport transport = nullptr)
        : config_(std::move(config)),
          transport_(std::move(transport)),
          cache_(config_.cache_path) {
        if (config_.mode != "api" && config_.mode != "file") {
            throw ValidationError("bootstrap mode must be 'api' or 'file', got '" + config_.mode +
                                  "'");
        }
        if (config_.mode == "file") {
            if (config_.rewrites_path.empty()) {
                throw ValidationError("file mode requires a rewrites path");
            }
            for (const auto& [lineno, line] : read_numbered_lines(config_.rewrites_path)) {
                json j = json::parse(line, nullptr, false);
                if (j.is_discarded()) {
                    throw ParseError(config_.rewrites_path.string() + ":" +
                                     std::to_string(lineno) + ": malformed rewrite line");
                }
                rewrites_[j.at("instance_id").get<std::string>()] =
                    j.at("rewrite").get<std::string>();
            }
        } else {
            if (config_.api_key.empty()) {
                const char* env = std::getenv("ITERCQR_LLM_API_KEY");
                if (env) {
                    config_.api_key = env;
                }
            }
            if (config_.api_key.empty()) {
                throw ExternalError("api mode requires ITERCQR_LLM_API_KEY");
            }
        }
    }

    int network_calls() const { return network_calls_; }

    std::string rewrite(const ReformulationInstance& inst, const Session& session) {
        if (const std::string* hit = cache_.find(inst.instance_id)) {
            return *hit;
        }
        std::string text;
        if (config_.mode == "file") {
            auto it = rewrites_.find(inst.instance_id);
            if (it == rewrites_.end()) {
                throw ValidationError("rewrites file has no entry for instance " +
                                      inst.instance_id);
            }
            text = it->second;
        } else {
            text = call_api(build_prompt(inst, session));
        }
        text = strip_rewrite(text);
        if (text.empty()) {
            log_warn("empty rewrite for " + inst.instance_id + "; falling back to the raw query");
            text = inst.current_query;
        }
        text = truncate_words(text, config_.max_query_tokens);
        cache_.put(inst.instance_id, text);
        return text;
    }

private:
    std::string call_api(const std::string& prompt) {
        json body = {{"model", config_.model_name},
                     {"messages", json::array({json{{"role", "user"}, {"content", prompt}}})},
                     {"temperature", config_.temperature}};
        HttpRequest req;
        req.url = config_.endpoint;
        req.body = body.dump();
        req.headers = {{"Authorization", "Bearer " + config_.api_key},
                       {"Content-Type", "application/json"}};
        req.timeout_ms = config_.timeout_ms;

        if (!transport_) {
            throw ExternalError("api mode requires an HTTP transport");
        }
        std::string last_error;
        for (int attempt = 1; attempt <= config_.max_attempts; ++attempt) {
            if (attempt > 1) {
                int delay = config_.backoff_base_ms * (1 << (attempt - 2));
                std::this_thread::sleep_for(std::chrono::milliseconds(delay));
            }
            ++network_calls_;
            HttpResponse resp = transport_(req);
            if (resp.network_error || resp.status >= 500) {
                last_error = resp.network_error ? resp.error
                                                : ("HTTP " + std::to_string(resp.status));
                log_warn("completion attempt " + std::to_string(attempt) + " failed: " +
                         last_error);
                continue;
            }
            if (resp.status >= 400) {
                throw ExternalError("completion endpoint rejected the request: HTTP " +
                                    std::to_string(resp.status) + " " + resp.body);
            }
            json j = json::parse(resp.body, nullptr, false);
            if (j.is_discarded()) {
                throw ExternalError("completion endpoint returned malformed JSON");
            }
            try {
                return j.at("choices").at(0).at("message").at("content").get<std::string>();
            } catch (const json::exception& e) {
                throw ExternalError(std::string("unexpected completion response shape: ") +
                                    e.what());
            }
        }
        throw ExternalError("completion endpoint unreachable after " +
                            std::to_string(config_.max_attempts) + " attempts: " + last_error);
    }

    LlmConfig config_;
    HttpTransport transport_;
    BootstrapCache cache_;
    std::unordered_map<std::string, std::string> rewrites_;
    int network_calls_ = 0;
};

// D0: one row per instance, in instance order.
inline DatasetVersion bootstrap_dataset(const std::vector<ReformulationInstance>& instances,
                                        const std::vector<Session>& sessions, LlmClient& client,
                                        const std::string& mode) {
    std::unordered_map<std::string, const Session*> by_id;
    for (const auto& s : sessions) {
        by_id[s.session_id] = &s;
    }
    DatasetVersion d;
    d.iteration = 0;
    d.n = 1;
    d.provenance = mode == "api" ? Provenance::llm_bootstrap : Provenance::file;
    for (const auto& inst : instances) {
        auto it = by_id.find(inst.session_id);
        if (it == by_id.end()) {
            throw ValidationError("instance " + inst.instance_id + " has no session " +
                                  inst.session_id);
        }
        DatasetRow row;
        row.instance_id = inst.instance_id;
        row.target = client.rewrite(inst, *it->second);
        d.rows.push_back(std::move(row));
    }
    return d;
}

}  // namespace itercqr
