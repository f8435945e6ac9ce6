#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <unordered_map>

#include <json.hpp>

#include "fusion/backend.hpp"
#include "fusion/errors.hpp"
#include "fusion/sha256.hpp"

namespace fusion {

/// Content address of one model call. Equal inputs produce equal digests on
/// every platform; the attempt counter separates retries of parse failures
/// so a cached bad response cannot pin an operation into a failure loop.
struct CacheKey {
    std::string digest; // 64 hex chars

    static CacheKey for_chat(const BackendConfig& config, const ChatRequest& request, int attempt = 0) {
        auto j = canonical_chat_json(config, request);
        j["attempt"] = attempt;
        return CacheKey{sha256_hex(j.dump())};
    }

    static CacheKey for_reward(const BackendConfig& config, const std::string& prompt, const std::string& candidate,
                               int attempt = 0) {
        auto j = canonical_reward_json(config, prompt, candidate);
        j["attempt"] = attempt;
        return CacheKey{sha256_hex(j.dump())};
    }

    static CacheKey for_payload(const nlohmann::json& payload) { return CacheKey{sha256_hex(payload.dump())}; }
};

/// File-per-entry response cache under a two-level hex fan-out. Entries are
/// written to a temp file and renamed into place, so readers never observe a
/// partial entry; corrupt entries are treated as misses and overwritten.
/// Concurrent get_or_compute calls for one key coalesce onto a single
/// compute within the process.
class ResponseCache {
public:
    explicit ResponseCache(std::filesystem::path root) : root_(std::move(root)) {
        std::error_code ec;
        std::filesystem::create_directories(root_, ec);
        if (ec) throw IoError("cannot create cache directory " + root_.string() + ": " + ec.message());
    }

    const std::filesystem::path& root() const { return root_; }

    nlohmann::json get_or_compute(const CacheKey& key, const std::string& backend_id,
                                  const std::function<nlohmann::json()>& compute) {
        std::shared_ptr<InFlight> flight;
        bool leader = false;
        {
            std::lock_guard lock(mu_);
            auto it = inflight_.find(key.digest);
            if (it != inflight_.end()) {
                flight = it->second;
            } else {
                flight = std::make_shared<InFlight>();
                inflight_.emplace(key.digest, flight);
                leader = true;
            }
        }

        if (!leader) {
            std::unique_lock lock(flight->m);
            flight->cv.wait(lock, [&] { return flight->done; });
            if (flight->error) std::rethrow_exception(flight->error);
            return flight->value;
        }

        nlohmann::json result;
        std::exception_ptr error;
        try {
            if (auto cached = read_entry(key)) {
                result = std::move(*cached);
            } else {
                ++computes_;
                result = compute();
                write_entry(key, backend_id, result);
            }
        } catch (...) {
            error = std::current_exception();
        }

        {
            std::lock_guard lock(flight->m);
            flight->done = true;
            flight->value = result;
            flight->error = error;
        }
        flight->cv.notify_all();
        {
            std::lock_guard lock(mu_);
            inflight_.erase(key.digest);
        }
        if (error) std::rethrow_exception(error);
        return result;
    }

    bool contains(const CacheKey& key) const { return std::filesystem::exists(entry_path(key)); }

    /// Number of times a compute callback was actually invoked.
    std::uint64_t computes() const { return computes_.load(); }

private:
    struct InFlight {
        std::mutex m;
        std::condition_variable cv;
        bool done = false;
        nlohmann::json value;
        std::exception_ptr error;
    };

    std::filesystem::path entry_path(const CacheKey& key) const {
        return root_ / key.digest.substr(0, 2) / key.digest.substr(2, 2) / (key.digest + ".json");
    }

    std::optional<nlohmann::json> read_entry(const CacheKey& key) const {
        auto path = entry_path(key);
        std::ifstream in(path, std::ios::binary);
        if (!in) return std::nullopt;
        try {
            auto entry = nlohmann::json::parse(in);
            if (entry.at("key").get<std::string>() != key.digest) return std::nullopt;
            return entry.at("response");
        } catch (const nlohmann::json::exception&) {
            return std::nullopt; // corrupt entry: treat as miss
        }
    }

    void write_entry(const CacheKey& key, const std::string& backend_id, const nlohmann::json& response) const {
        auto path = entry_path(key);
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
        if (ec) throw IoError("cannot create cache subdirectory: " + ec.message());

        nlohmann::json entry{{"key", key.digest},
                             {"backend_id", backend_id},
                             {"created_at", unix_millis()},
                             {"response", response}};

        auto tmp = path;
        tmp += ".tmp." + std::to_string(reinterpret_cast<std::uintptr_t>(this)) + "." +
               std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()));
        {
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            if (!out) throw IoError("cannot write cache entry " + tmp.string());
            out << entry.dump();
            if (!out.flush()) throw IoError("short write to cache entry " + tmp.string());
        }
        std::filesystem::rename(tmp, path, ec);
        if (ec) {
            std::filesystem::remove(tmp);
            throw IoError("cannot publish cache entry " + path.string() + ": " + ec.message());
        }
    }

    static std::int64_t unix_millis() {
        return std::chrono::duration_cast<std::chrono::milliseconds>(
                   std::chrono::system_clock::now().time_since_epoch())
            .count();
    }

    std::filesystem::path root_;
    mutable std::mutex mu_;
    std::unordered_map<std::string, std::shared_ptr<InFlight>> inflight_;
    std::atomic<std::uint64_t> computes_{0};
};

/// Chat through the cache; a null cache degrades to a direct call.
inline ChatResponse cached_chat(Backend& backend, const ChatRequest& request, ResponseCache* cache, int attempt = 0) {
    if (!cache) return backend.chat_complete(request);
    auto key = CacheKey::for_chat(backend.config(), request, attempt);
    auto payload = cache->get_or_compute(key, backend.config().id,
                                         [&] { return to_json(backend.chat_complete(request)); });
    try {
        return chat_response_from_json(payload);
    } catch (const nlohmann::json::exception& e) {
        throw IoError("cache entry for chat call is malformed: " + std::string(e.what()));
    }
}

inline double cached_score(Backend& backend, const std::string& prompt, const std::string& candidate,
                           ResponseCache* cache, int attempt = 0) {
    if (!cache) return backend.score_reward(prompt, candidate);
    auto key = CacheKey::for_reward(backend.config(), prompt, candidate, attempt);
    auto payload = cache->get_or_compute(key, backend.config().id, [&] {
        return nlohmann::json{{"score", backend.score_reward(prompt, candidate)}};
    });
    if (!payload.contains("score") || !payload["score"].is_number())
        throw IoError("cache entry for reward call is malformed");
    return payload["score"].get<double>();
}

} // namespace fusion
