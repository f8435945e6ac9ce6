#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "fusion/concurrency.hpp"
#include "fusion/errors.hpp"
#include "fusion/sha256.hpp"
#include "fusion/util.hpp"

namespace fusion {

enum class BackendKind { chat, reward, mock };

inline std::string to_string(BackendKind k) {
    switch (k) {
        case BackendKind::chat: return "chat";
        case BackendKind::reward: return "reward";
        case BackendKind::mock: return "mock";
    }
    return "chat";
}

inline BackendKind backend_kind_from_string(const std::string& s) {
    if (s == "chat") return BackendKind::chat;
    if (s == "reward") return BackendKind::reward;
    if (s == "mock") return BackendKind::mock;
    throw ConfigError("unknown backend kind: " + s);
}

enum class FinishReason { stop, length, error };

inline std::string to_string(FinishReason r) {
    switch (r) {
        case FinishReason::stop: return "stop";
        case FinishReason::length: return "length";
        case FinishReason::error: return "error";
    }
    return "error";
}

inline FinishReason finish_reason_from_string(const std::string& s) {
    if (s == "stop") return FinishReason::stop;
    if (s == "length") return FinishReason::length;
    if (s == "error") return FinishReason::error;
    throw ProtocolError("unknown finish reason: " + s);
}

struct BackendConfig {
    std::string id;
    BackendKind kind = BackendKind::chat;
    std::string base_url;         // HTTP endpoint root, e.g. http://host:8080/v1; unused for mock
    std::string model_name;
    std::string api_key_env;      // name of the env var holding the secret; empty = no auth header
    int max_in_flight = 4;
    int timeout_ms = 120000;
    int max_retries = 3;
    std::string mock_script_path; // required iff kind == mock

    void validate() const {
        if (id.empty()) throw ConfigError("backend id must be non-empty");
        if (model_name.empty()) throw ConfigError("backend '" + id + "': model_name must be non-empty");
        if (max_in_flight < 1) throw ConfigError("backend '" + id + "': max_in_flight must be >= 1");
        if (timeout_ms < 1) throw ConfigError("backend '" + id + "': timeout_ms must be >= 1");
        if (max_retries < 0) throw ConfigError("backend '" + id + "': max_retries must be >= 0");
        bool is_mock = kind == BackendKind::mock;
        if (is_mock != !mock_script_path.empty())
            throw ConfigError("backend '" + id + "': mock_script_path is required iff kind is mock");
        if (!is_mock && base_url.empty())
            throw ConfigError("backend '" + id + "': base_url must be set for non-mock backends");
    }
};

struct ChatRequest {
    std::optional<std::string> system;
    std::string user;
    double temperature = 0.7;
    double top_p = 1.0;
    int max_tokens = 1024;
    std::optional<std::int64_t> seed;

    void validate() const {
        if (user.empty()) throw ConfigError("chat request: user message must be non-empty");
        if (!(temperature >= 0.0 && temperature <= 2.0))
            throw ConfigError("chat request: temperature must be in [0, 2]");
        if (!(top_p > 0.0 && top_p <= 1.0)) throw ConfigError("chat request: top_p must be in (0, 1]");
        if (max_tokens < 1) throw ConfigError("chat request: max_tokens must be >= 1");
    }
};

struct ChatResponse {
    std::string text;
    FinishReason finish_reason = FinishReason::stop;
    std::uint64_t prompt_tokens = 0;
    std::uint64_t completion_tokens = 0;
    std::string backend_id;
};

inline nlohmann::json to_json(const ChatResponse& r) {
    return {{"text", r.text},
            {"finish_reason", to_string(r.finish_reason)},
            {"prompt_tokens", r.prompt_tokens},
            {"completion_tokens", r.completion_tokens},
            {"backend_id", r.backend_id}};
}

inline ChatResponse chat_response_from_json(const nlohmann::json& j) {
    ChatResponse r;
    r.text = j.at("text").get<std::string>();
    r.finish_reason = finish_reason_from_string(j.at("finish_reason").get<std::string>());
    r.prompt_tokens = j.value("prompt_tokens", std::uint64_t{0});
    r.completion_tokens = j.value("completion_tokens", std::uint64_t{0});
    r.backend_id = j.value("backend_id", std::string{});
    return r;
}

/// Canonical serialization of a chat call. nlohmann objects serialize with
/// sorted keys and no insignificant whitespace, so equal inputs always yield
/// equal bytes; prompt text is embedded untouched.
inline nlohmann::json canonical_chat_json(const BackendConfig& config, const ChatRequest& request) {
    nlohmann::json j{{"backend_id", config.id},
                     {"kind", "chat"},
                     {"max_tokens", request.max_tokens},
                     {"model", config.model_name},
                     {"temperature", request.temperature},
                     {"top_p", request.top_p},
                     {"user", request.user}};
    j["system"] = request.system ? nlohmann::json(*request.system) : nlohmann::json(nullptr);
    j["seed"] = request.seed ? nlohmann::json(*request.seed) : nlohmann::json(nullptr);
    return j;
}

inline nlohmann::json canonical_reward_json(const BackendConfig& config, const std::string& prompt,
                                            const std::string& candidate) {
    return {{"backend_id", config.id},
            {"candidate", candidate},
            {"kind", "reward"},
            {"model", config.model_name},
            {"prompt", prompt}};
}

inline std::string chat_fingerprint(const BackendConfig& config, const ChatRequest& request) {
    return sha256_hex(canonical_chat_json(config, request).dump());
}

inline std::string reward_fingerprint(const BackendConfig& config, const std::string& prompt,
                                      const std::string& candidate) {
    return sha256_hex(canonical_reward_json(config, prompt, candidate).dump());
}

/// Exponential backoff with full jitter. Delay before retry k (1-based) is
/// uniform in [0, base_delay_ms * factor^(k-1)].
struct RetryPolicy {
    int base_delay_ms = 500;
    double factor = 2.0;
    bool jitter = true;

    std::chrono::milliseconds delay(int retry_number) const {
        double cap = base_delay_ms * std::pow(factor, retry_number - 1);
        if (!jitter) return std::chrono::milliseconds(static_cast<long>(cap));
        thread_local std::mt19937_64 rng{std::random_device{}()};
        std::uniform_real_distribution<double> dist(0.0, cap);
        return std::chrono::milliseconds(static_cast<long>(dist(rng)));
    }
};

namespace detail {

/// Transient failure (timeout, HTTP 429/5xx). Retried up to max_retries,
/// then surfaced as TransportError.
class TransientFailure : public Error {
public:
    using Error::Error;
};

} // namespace detail

/// Base for model endpoints. chat_complete/score_reward own the retry loop
/// and the per-backend admission gate; subclasses implement a single attempt.
class Backend {
public:
    explicit Backend(BackendConfig config)
        : config_(std::move(config)), gate_(static_cast<std::size_t>(config_.max_in_flight)) {
        config_.validate();
    }
    virtual ~Backend() = default;

    const BackendConfig& config() const { return config_; }

    ChatResponse chat_complete(const ChatRequest& request) {
        request.validate();
        auto attempt = [&] {
            AdmissionGate::Ticket ticket(gate_);
            ++attempts_;
            return do_chat(request);
        };
        ChatResponse response = with_retries<ChatResponse>(attempt);
        response.backend_id = config_.id;
        if (response.finish_reason == FinishReason::stop && response.text.empty())
            throw ProtocolError("backend '" + config_.id + "': empty completion with finish_reason=stop");
        return response;
    }

    double score_reward(const std::string& prompt, const std::string& candidate) {
        if (prompt.empty() || candidate.empty())
            throw ConfigError("score_reward: prompt and candidate must be non-empty");
        auto attempt = [&] {
            AdmissionGate::Ticket ticket(gate_);
            ++attempts_;
            return do_score(prompt, candidate);
        };
        double score = with_retries<double>(attempt);
        if (!std::isfinite(score))
            throw ProtocolError("backend '" + config_.id + "': reward score is not finite");
        return score;
    }

    /// Total single attempts issued (including retries).
    std::uint64_t attempts() const { return attempts_.load(); }

    void set_retry_policy(RetryPolicy policy) { retry_policy_ = policy; }
    const RetryPolicy& retry_policy() const { return retry_policy_; }

    AdmissionGate& gate() { return gate_; }

protected:
    virtual ChatResponse do_chat(const ChatRequest& request) = 0;
    virtual double do_score(const std::string& prompt, const std::string& candidate) = 0;

    /// Whether transient failures should back off before the next attempt.
    /// Mock failures are scripted, not transient, so the mock skips the sleep.
    virtual bool backoff_enabled() const { return true; }

private:
    template <typename T, typename Fn>
    T with_retries(Fn&& attempt) {
        std::string last_error;
        for (int tried = 0;; ++tried) {
            try {
                return attempt();
            } catch (const detail::TransientFailure& e) {
                last_error = e.what();
                if (tried >= config_.max_retries)
                    throw TransportError("backend '" + config_.id + "': retries exhausted after " +
                                         std::to_string(tried + 1) + " attempts; last error: " + last_error);
                if (backoff_enabled()) std::this_thread::sleep_for(retry_policy_.delay(tried + 1));
            }
        }
    }

    BackendConfig config_;
    AdmissionGate gate_;
    RetryPolicy retry_policy_{};
    std::atomic<std::uint64_t> attempts_{0};
};

/// Deterministic scripted backend driven by a JSONL rule file.
///
/// Each line is {"match": {...}, "respond": {...}}. The first rule whose
/// matchers all hold wins; rules are tried in file order.
///
/// Matchers: any (true), fingerprint, model, seed, temperature,
/// user_equals/user_contains (chat), prompt_equals/prompt_contains and
/// candidate_equals/candidate_contains (reward).
///
/// Responses: {"text": ...} with optional "finish_reason"; {"text_template":
/// ...} substituting {seed}/{user}/{system}/{model}; {"score": <num|"nan">};
/// {"error": "timeout"|"http_429"|"http_500"|"http_503"|"http_400"|
/// "http_401"|"malformed"}; or {"sequence": [entries...]} consumed one entry
/// per call, the last entry repeating once exhausted.
class MockBackend : public Backend {
public:
    explicit MockBackend(BackendConfig config) : Backend(std::move(config)) {
        std::ifstream in(this->config().mock_script_path);
        if (!in) throw ConfigError("mock backend '" + this->config().id + "': cannot open script " +
                                   this->config().mock_script_path);
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (trim_view(line).empty()) continue;
            Rule rule;
            try {
                auto j = nlohmann::json::parse(line);
                rule.match = j.value("match", nlohmann::json::object());
                rule.respond = j.at("respond");
            } catch (const nlohmann::json::exception& e) {
                throw ConfigError("mock script " + this->config().mock_script_path + ":" +
                                  std::to_string(line_no) + ": " + e.what());
            }
            rules_.push_back(std::move(rule));
        }
    }

protected:
    ChatResponse do_chat(const ChatRequest& request) override {
        RequestView view;
        view.user = request.user;
        view.system = request.system.value_or("");
        view.seed = request.seed;
        view.temperature = request.temperature;
        view.fingerprint = chat_fingerprint(config(), request);
        auto entry = next_entry(view);
        if (entry.contains("error")) raise_scripted(entry.at("error").get<std::string>());
        ChatResponse r;
        if (entry.contains("text_template")) {
            std::string t = entry.at("text_template").get<std::string>();
            replace_all(t, "{seed}", request.seed ? std::to_string(*request.seed) : "none");
            replace_all(t, "{user}", request.user);
            replace_all(t, "{system}", view.system);
            replace_all(t, "{model}", config().model_name);
            r.text = t;
        } else if (entry.contains("text")) {
            r.text = entry.at("text").get<std::string>();
        } else {
            throw ConfigError("mock backend '" + config().id + "': rule response lacks text for chat request");
        }
        r.finish_reason = finish_reason_from_string(entry.value("finish_reason", std::string("stop")));
        r.prompt_tokens = request.user.size() / 4;
        r.completion_tokens = r.text.size() / 4;
        return r;
    }

    double do_score(const std::string& prompt, const std::string& candidate) override {
        RequestView view;
        view.is_reward = true;
        view.user = prompt;
        view.candidate = candidate;
        view.fingerprint = reward_fingerprint(config(), prompt, candidate);
        auto entry = next_entry(view);
        if (entry.contains("error")) raise_scripted(entry.at("error").get<std::string>());
        if (!entry.contains("score"))
            throw ProtocolError("mock backend '" + config().id + "': response lacks a score field");
        const auto& s = entry.at("score");
        if (s.is_number()) return s.get<double>();
        if (s.is_string()) {
            auto v = s.get<std::string>();
            if (v == "nan") return std::nan("");
            if (v == "inf") return std::numeric_limits<double>::infinity();
        }
        throw ProtocolError("mock backend '" + config().id + "': score field is not numeric");
    }

    bool backoff_enabled() const override { return false; }

private:
    struct RequestView {
        bool is_reward = false;
        std::string user;      // chat user message, or reward prompt
        std::string system;
        std::string candidate; // reward only
        std::optional<std::int64_t> seed;
        double temperature = 0.0;
        std::string fingerprint;
    };

    struct Rule {
        nlohmann::json match;
        nlohmann::json respond;
        std::size_t sequence_pos = 0;
    };

    static bool contains(const std::string& haystack, const std::string& needle) {
        return haystack.find(needle) != std::string::npos;
    }

    bool matches(const nlohmann::json& m, const RequestView& v) const {
        if (m.contains("any") && m.at("any").get<bool>()) return true;
        if (m.empty()) return true;
        if (m.contains("fingerprint") && m.at("fingerprint").get<std::string>() != v.fingerprint) return false;
        if (m.contains("model") && m.at("model").get<std::string>() != config().model_name) return false;
        if (m.contains("seed") && (!v.seed || m.at("seed").get<std::int64_t>() != *v.seed)) return false;
        if (m.contains("temperature") && m.at("temperature").get<double>() != v.temperature) return false;
        if (m.contains("user_equals") && m.at("user_equals").get<std::string>() != v.user) return false;
        if (m.contains("user_contains") && !contains(v.user, m.at("user_contains").get<std::string>())) return false;
        if (m.contains("system_contains") && !contains(v.system, m.at("system_contains").get<std::string>()))
            return false;
        if (m.contains("prompt_equals") && m.at("prompt_equals").get<std::string>() != v.user) return false;
        if (m.contains("prompt_contains") && !contains(v.user, m.at("prompt_contains").get<std::string>()))
            return false;
        if (m.contains("candidate_equals") && m.at("candidate_equals").get<std::string>() != v.candidate) return false;
        if (m.contains("candidate_contains") && !contains(v.candidate, m.at("candidate_contains").get<std::string>()))
            return false;
        return true;
    }

    nlohmann::json next_entry(const RequestView& view) {
        std::lock_guard lock(mu_);
        for (auto& rule : rules_) {
            if (!matches(rule.match, view)) continue;
            if (rule.respond.contains("sequence")) {
                const auto& seq = rule.respond.at("sequence");
                if (!seq.is_array() || seq.empty())
                    throw ConfigError("mock backend '" + config().id + "': sequence must be a non-empty array");
                auto idx = std::min(rule.sequence_pos, seq.size() - 1);
                ++rule.sequence_pos;
                return seq.at(idx);
            }
            return rule.respond;
        }
        throw ConfigError("mock backend '" + config().id + "': no rule matches request (user=\"" + view.user + "\")");
    }

    [[noreturn]] void raise_scripted(const std::string& kind) {
        if (kind == "timeout") throw detail::TransientFailure("scripted timeout");
        if (kind == "http_429") throw detail::TransientFailure("scripted HTTP 429");
        if (kind == "http_500") throw detail::TransientFailure("scripted HTTP 500");
        if (kind == "http_503") throw detail::TransientFailure("scripted HTTP 503");
        if (kind == "http_400") throw ProtocolError("scripted HTTP 400");
        if (kind == "http_401") throw AuthError("scripted HTTP 401");
        if (kind == "malformed") throw ProtocolError("scripted malformed response");
        throw ConfigError("mock backend '" + config().id + "': unknown scripted error kind: " + kind);
    }

    std::mutex mu_;
    std::vector<Rule> rules_;
};

} // namespace fusion
