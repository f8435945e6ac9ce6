#pragma once

#include <atomic>
#include <cstdlib>
#include <memory>
#include <string>

#include <httplib.h>
#include <json.hpp>

#include "fusion/backend.hpp"
#include "fusion/errors.hpp"

namespace fusion {

/// Process-wide count of HTTP requests actually sent. Mock backends never
/// touch it, which is how pipelines prove a run was network-free.
inline std::atomic<std::uint64_t>& http_request_count() {
    static std::atomic<std::uint64_t> count{0};
    return count;
}

/// OpenAI-compatible chat endpoint plus a single-turn reward endpoint.
///
/// base_url carries scheme, authority and any path prefix (e.g.
/// "http://host:8080/v1"). Chat requests POST {prefix}/chat/completions with
/// the standard messages/temperature/top_p/seed body; reward requests POST
/// {prefix}/score with {"model", "prompt", "candidate"} and expect
/// {"score": <float>} back. Bearer auth from the env var named by
/// api_key_env.
class HttpBackend : public Backend {
public:
    explicit HttpBackend(BackendConfig config) : Backend(std::move(config)) {
        const auto& url = this->config().base_url;
        auto scheme_end = url.find("://");
        if (scheme_end == std::string::npos)
            throw ConfigError("backend '" + this->config().id + "': base_url must include a scheme: " + url);
        auto path_start = url.find('/', scheme_end + 3);
        if (path_start == std::string::npos) {
            origin_ = url;
        } else {
            origin_ = url.substr(0, path_start);
            path_prefix_ = url.substr(path_start);
            while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
        }
    }

protected:
    ChatResponse do_chat(const ChatRequest& request) override {
        nlohmann::json messages = nlohmann::json::array();
        if (request.system) messages.push_back({{"role", "system"}, {"content", *request.system}});
        messages.push_back({{"role", "user"}, {"content", request.user}});
        nlohmann::json body{{"model", config().model_name},
                            {"messages", messages},
                            {"temperature", request.temperature},
                            {"top_p", request.top_p},
                            {"max_tokens", request.max_tokens}};
        if (request.seed) body["seed"] = *request.seed;

        auto payload = post_json(path_prefix_ + "/chat/completions", body);
        try {
            const auto& choice = payload.at("choices").at(0);
            ChatResponse r;
            r.text = choice.at("message").at("content").get<std::string>();
            auto reason = choice.value("finish_reason", std::string("stop"));
            r.finish_reason = reason == "length" ? FinishReason::length : FinishReason::stop;
            if (payload.contains("usage")) {
                r.prompt_tokens = payload["usage"].value("prompt_tokens", std::uint64_t{0});
                r.completion_tokens = payload["usage"].value("completion_tokens", std::uint64_t{0});
            }
            return r;
        } catch (const nlohmann::json::exception& e) {
            throw ProtocolError("backend '" + config().id + "': malformed chat completion: " + e.what());
        }
    }

    double do_score(const std::string& prompt, const std::string& candidate) override {
        nlohmann::json body{{"model", config().model_name}, {"prompt", prompt}, {"candidate", candidate}};
        auto payload = post_json(path_prefix_ + "/score", body);
        if (!payload.contains("score") || !payload["score"].is_number())
            throw ProtocolError("backend '" + config().id + "': reward response lacks a numeric score field");
        return payload["score"].get<double>();
    }

private:
    nlohmann::json post_json(const std::string& path, const nlohmann::json& body) {
        // httplib clients are not safe for concurrent requests; one per call.
        httplib::Client client(origin_);
        client.set_connection_timeout(0, config().timeout_ms * 1000LL);
        client.set_read_timeout(0, config().timeout_ms * 1000LL);
        client.set_write_timeout(0, config().timeout_ms * 1000LL);

        httplib::Headers headers;
        if (!config().api_key_env.empty()) {
            const char* key = std::getenv(config().api_key_env.c_str());
            if (!key || !*key)
                throw AuthError("backend '" + config().id + "': environment variable " + config().api_key_env +
                                " is not set");
            headers.emplace("Authorization", std::string("Bearer ") + key);
        }

        ++http_request_count();
        auto res = client.Post(path, headers, body.dump(), "application/json");
        if (!res)
            throw detail::TransientFailure("backend '" + config().id +
                                           "': transport failure: " + httplib::to_string(res.error()));
        if (res->status == 429 || res->status >= 500)
            throw detail::TransientFailure("backend '" + config().id + "': HTTP " + std::to_string(res->status));
        if (res->status == 401 || res->status == 403)
            throw AuthError("backend '" + config().id + "': HTTP " + std::to_string(res->status));
        if (res->status != 200)
            throw ProtocolError("backend '" + config().id + "': HTTP " + std::to_string(res->status));
        try {
            return nlohmann::json::parse(res->body);
        } catch (const nlohmann::json::exception& e) {
            throw ProtocolError("backend '" + config().id + "': response is not valid JSON: " + e.what());
        }
    }

    std::string origin_;
    std::string path_prefix_;
};

inline std::unique_ptr<Backend> make_backend(const BackendConfig& config) {
    config.validate();
    if (config.kind == BackendKind::mock) return std::make_unique<MockBackend>(config);
    return std::make_unique<HttpBackend>(config);
}

/// Owns one live backend per configured id so gates, retry state and mock
/// scripts persist for a whole run.
class Backends {
public:
    Backends() = default;

    explicit Backends(const std::vector<BackendConfig>& configs) {
        for (const auto& c : configs) add(c);
    }

    void add(const BackendConfig& config) {
        if (by_id_.count(config.id)) throw ConfigError("duplicate backend id: " + config.id);
        by_id_.emplace(config.id, make_backend(config));
    }

    Backend& at(const std::string& id) const {
        auto it = by_id_.find(id);
        if (it == by_id_.end()) throw ConfigError("unknown backend id: " + id);
        return *it->second;
    }

    bool contains(const std::string& id) const { return by_id_.count(id) > 0; }

    /// Sum of single attempts across all owned backends.
    std::uint64_t total_attempts() const {
        std::uint64_t n = 0;
        for (const auto& [id, backend] : by_id_) n += backend->attempts();
        return n;
    }

    void set_retry_policy(RetryPolicy policy) {
        for (auto& [id, backend] : by_id_) backend->set_retry_policy(policy);
    }

private:
    std::map<std::string, std::unique_ptr<Backend>> by_id_;
};

/// One-shot helpers matching the operation signatures; pipelines that need
/// persistent gates or mock sequence state should use Backends instead.
inline ChatResponse chat_complete(const BackendConfig& config, const ChatRequest& request) {
    if (config.kind == BackendKind::reward)
        throw ConfigError("backend '" + config.id + "': reward backends cannot serve chat requests");
    return make_backend(config)->chat_complete(request);
}

inline double score_reward(const BackendConfig& config, const std::string& prompt, const std::string& candidate) {
    if (config.kind == BackendKind::chat)
        throw ConfigError("backend '" + config.id + "': chat backends cannot serve reward requests");
    return make_backend(config)->score_reward(prompt, candidate);
}

} // namespace fusion
