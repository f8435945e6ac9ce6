#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fusion/backend.hpp"
#include "fusion/concurrency.hpp"
#include "fusion/errors.hpp"
#include "fusion/store.hpp"

namespace fusion {

struct SamplingSpec {
    int n = 5;
    double temperature = 0.7;
    double top_p = 1.0;
    int max_tokens = 1024;
    std::int64_t seed = 0; // sample i uses seed + i

    void validate() const {
        if (n < 1) throw ConfigError("sampling spec: n must be >= 1");
    }
};

struct Candidate {
    std::string text;
    std::string teacher_id;
    int sample_index = 0;
    FinishReason finish_reason = FinishReason::stop;

    bool failed() const { return finish_reason == FinishReason::error; }
};

struct CandidatePool {
    std::string prompt_id;
    std::string prompt;
    std::string language;
    std::vector<Candidate> candidates;

    /// Candidates eligible for aggregation (failures filtered out).
    std::vector<Candidate> successful() const {
        std::vector<Candidate> out;
        for (const auto& c : candidates)
            if (!c.failed()) out.push_back(c);
        return out;
    }
};

inline nlohmann::json to_json(const Candidate& c) {
    return {{"text", c.text},
            {"teacher_id", c.teacher_id},
            {"sample_index", c.sample_index},
            {"finish_reason", to_string(c.finish_reason)}};
}

inline Candidate candidate_from_json(const nlohmann::json& j) {
    Candidate c;
    c.text = j.at("text").get<std::string>();
    c.teacher_id = j.at("teacher_id").get<std::string>();
    c.sample_index = j.at("sample_index").get<int>();
    c.finish_reason = finish_reason_from_string(j.at("finish_reason").get<std::string>());
    return c;
}

inline nlohmann::json to_json(const CandidatePool& pool) {
    auto candidates = nlohmann::json::array();
    for (const auto& c : pool.candidates) candidates.push_back(to_json(c));
    return {{"prompt_id", pool.prompt_id},
            {"prompt", pool.prompt},
            {"language", pool.language},
            {"candidates", candidates}};
}

inline CandidatePool pool_from_json(const nlohmann::json& j) {
    CandidatePool pool;
    pool.prompt_id = j.at("prompt_id").get<std::string>();
    pool.prompt = j.at("prompt").get<std::string>();
    pool.language = j.at("language").get<std::string>();
    for (const auto& c : j.at("candidates")) pool.candidates.push_back(candidate_from_json(c));
    return pool;
}

/// N temperature samples from one model. The pool always holds exactly
/// spec.n entries ordered by sample_index; individual failures are kept as
/// finish_reason=error placeholders so seeds stay aligned for audit.
inline CandidatePool sample_single_model(Backend& backend, const std::string& prompt_id, const std::string& prompt,
                                         const std::string& language, const SamplingSpec& spec,
                                         ResponseCache* cache = nullptr) {
    spec.validate();
    if (backend.config().kind == BackendKind::reward)
        throw ConfigError("sample_single_model: backend '" + backend.config().id + "' is a reward backend");

    CandidatePool pool;
    pool.prompt_id = prompt_id;
    pool.prompt = prompt;
    pool.language = language;
    pool.candidates.resize(static_cast<std::size_t>(spec.n));

    parallel_for(static_cast<std::size_t>(spec.n), static_cast<std::size_t>(backend.config().max_in_flight),
                 [&](std::size_t i) {
                     ChatRequest request;
                     request.user = prompt;
                     request.temperature = spec.temperature;
                     request.top_p = spec.top_p;
                     request.max_tokens = spec.max_tokens;
                     request.seed = spec.seed + static_cast<std::int64_t>(i);
                     Candidate c;
                     c.teacher_id = backend.config().id;
                     c.sample_index = static_cast<int>(i);
                     try {
                         auto response = cached_chat(backend, request, cache);
                         c.text = response.text;
                         // a completion with no text is unusable whatever its finish reason
                         c.finish_reason = response.text.empty() ? FinishReason::error : response.finish_reason;
                     } catch (const Error&) {
                         c.finish_reason = FinishReason::error;
                     }
                     pool.candidates[i] = std::move(c);
                 });

    if (pool.successful().empty())
        throw PoolError("all " + std::to_string(spec.n) + " samples failed for prompt '" + prompt_id + "'");
    return pool;
}

struct MultiTeacherParams {
    double top_p = 1.0;
    int max_tokens = 1024;
    std::optional<std::int64_t> seed;
};

/// One low-temperature completion from each teacher. Failed teachers are
/// dropped from the pool (and reported through on_failure); candidate order
/// follows the teacher list, presentation shuffling happens in aggregation.
inline CandidatePool assemble_multi_teacher_pool(
    const std::vector<Backend*>& teachers, const std::string& prompt_id, const std::string& prompt,
    const std::string& language, double temperature, const MultiTeacherParams& params = {},
    ResponseCache* cache = nullptr,
    const std::function<void(const std::string& teacher_id, const std::string& what)>& on_failure = {}) {
    if (teachers.empty()) throw ConfigError("assemble_multi_teacher_pool: teacher list is empty");
    for (std::size_t i = 0; i < teachers.size(); ++i)
        for (std::size_t j = i + 1; j < teachers.size(); ++j)
            if (teachers[i]->config().id == teachers[j]->config().id)
                throw ConfigError("assemble_multi_teacher_pool: duplicate teacher id '" + teachers[i]->config().id +
                                  "'");

    std::vector<std::optional<Candidate>> slots(teachers.size());
    std::vector<std::pair<std::string, std::string>> failures(teachers.size());

    parallel_for(teachers.size(), teachers.size(), [&](std::size_t i) {
        Backend& teacher = *teachers[i];
        ChatRequest request;
        request.user = prompt;
        request.temperature = temperature;
        request.top_p = params.top_p;
        request.max_tokens = params.max_tokens;
        request.seed = params.seed;
        try {
            auto response = cached_chat(teacher, request, cache);
            if (response.text.empty()) throw ProtocolError("empty completion");
            Candidate c;
            c.text = response.text;
            c.teacher_id = teacher.config().id;
            c.sample_index = 0;
            c.finish_reason = response.finish_reason;
            slots[i] = std::move(c);
        } catch (const Error& e) {
            failures[i] = {teacher.config().id, e.what()};
        }
    });

    CandidatePool pool;
    pool.prompt_id = prompt_id;
    pool.prompt = prompt;
    pool.language = language;
    for (std::size_t i = 0; i < slots.size(); ++i) {
        if (slots[i]) {
            pool.candidates.push_back(std::move(*slots[i]));
        } else if (on_failure) {
            on_failure(failures[i].first, failures[i].second);
        }
    }
    if (pool.candidates.empty())
        throw PoolError("all " + std::to_string(teachers.size()) + " teachers failed for prompt '" + prompt_id + "'");
    return pool;
}

} // namespace fusion
