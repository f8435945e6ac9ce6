#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fusion/aggregation.hpp"
#include "fusion/concurrency.hpp"
#include "fusion/config.hpp"
#include "fusion/errors.hpp"
#include "fusion/http_backend.hpp"
#include "fusion/jsonl.hpp"
#include "fusion/sampling.hpp"
#include "fusion/store.hpp"

namespace fusion {

/// One training pair plus enough provenance to reconstruct how it was made.
struct SftRecord {
    std::string prompt_id;
    std::string language;
    std::string prompt;
    std::string completion;
    Method method = Method::fusion;
    nlohmann::json provenance;
};

inline nlohmann::json to_json(const SftRecord& r) {
    return {{"prompt_id", r.prompt_id}, {"language", r.language},     {"prompt", r.prompt},
            {"completion", r.completion}, {"method", to_string(r.method)}, {"provenance", r.provenance}};
}

inline SftRecord sft_record_from_json(const nlohmann::json& j) {
    SftRecord r;
    r.prompt_id = j.at("prompt_id").get<std::string>();
    r.language = j.at("language").get<std::string>();
    r.prompt = j.at("prompt").get<std::string>();
    r.completion = j.at("completion").get<std::string>();
    r.method = method_from_string(j.at("method").get<std::string>());
    r.provenance = j.value("provenance", nlohmann::json::object());
    return r;
}

struct DatagenManifest {
    std::string config_hash;
    std::string method;
    std::size_t corpus_lines = 0;
    std::size_t records = 0;
    std::size_t failures = 0;
    std::uint64_t model_attempts = 0;
    std::uint64_t http_requests = 0;
    std::uint64_t cache_computes = 0;
    std::int64_t wall_clock_ms = 0;
};

inline nlohmann::json to_json(const DatagenManifest& m) {
    return {{"config_hash", m.config_hash},   {"method", m.method},
            {"corpus_lines", m.corpus_lines}, {"records", m.records},
            {"failures", m.failures},         {"model_attempts", m.model_attempts},
            {"http_requests", m.http_requests}, {"cache_computes", m.cache_computes},
            {"wall_clock_ms", m.wall_clock_ms}};
}

/// Aggregation options wired to the live backends a config names.
inline AggregateOptions make_aggregate_options(const RunConfig& cfg, Backends& live, ResponseCache* cache) {
    AggregateOptions opts;
    if (!cfg.reward_id.empty()) opts.reward = &live.at(cfg.reward_id);
    if (!cfg.judge_id.empty()) opts.judge = &live.at(cfg.judge_id);
    if (!cfg.fusor_id.empty()) opts.fusor = &live.at(cfg.fusor_id);
    opts.shuffle_seed = cfg.shuffle_seed;
    opts.parse_retries = cfg.retries;
    opts.fusor_params = cfg.fusor_params;
    opts.rater_params = cfg.rater_params;
    opts.fusion_template = cfg.fusion_template;
    opts.rater_template = cfg.rater_template;
    opts.cache = cache;
    return opts;
}

namespace detail {

inline nlohmann::json pool_cache_payload(const RunConfig& cfg, const std::string& prompt_id,
                                         const std::string& prompt, const std::string& language) {
    nlohmann::json j{{"kind", "pool"},
                     {"mode", to_string(cfg.sampling_mode)},
                     {"prompt_id", prompt_id},
                     {"prompt", prompt},
                     {"language", language}};
    if (cfg.sampling_mode == SamplingMode::single_model) {
        const auto& m = cfg.backend(cfg.model_id);
        j["model"] = {{"id", m.id}, {"model_name", m.model_name}};
        j["sampling"] = {{"n", cfg.sampling.n},
                         {"temperature", cfg.sampling.temperature},
                         {"top_p", cfg.sampling.top_p},
                         {"max_tokens", cfg.sampling.max_tokens},
                         {"seed", cfg.sampling.seed}};
    } else {
        auto teachers = nlohmann::json::array();
        for (const auto& id : cfg.teacher_ids) {
            const auto& t = cfg.backend(id);
            teachers.push_back({{"id", t.id}, {"model_name", t.model_name}});
        }
        j["teachers"] = teachers;
        j["sampling"] = {{"temperature", cfg.multi_teacher_temperature},
                         {"top_p", cfg.sampling.top_p},
                         {"max_tokens", cfg.sampling.max_tokens},
                         {"seed", cfg.multi_teacher_seed ? nlohmann::json(*cfg.multi_teacher_seed)
                                                         : nlohmann::json(nullptr)}};
    }
    return j;
}

} // namespace detail

/// Builds the candidate pool for one prompt according to the configured
/// sampling mode, loading it from the cache when available so that every
/// method consumes identical candidates.
inline CandidatePool build_pool(const RunConfig& cfg, Backends& backends, ResponseCache* cache,
                                const std::string& prompt_id, const std::string& prompt,
                                const std::string& language) {
    auto build = [&]() -> CandidatePool {
        if (cfg.sampling_mode == SamplingMode::single_model)
            return sample_single_model(backends.at(cfg.model_id), prompt_id, prompt, language, cfg.sampling, cache);
        std::vector<Backend*> teachers;
        for (const auto& id : cfg.teacher_ids) teachers.push_back(&backends.at(id));
        MultiTeacherParams params;
        params.top_p = cfg.sampling.top_p;
        params.max_tokens = cfg.sampling.max_tokens;
        params.seed = cfg.multi_teacher_seed;
        return assemble_multi_teacher_pool(teachers, prompt_id, prompt, language, cfg.multi_teacher_temperature,
                                           params, cache);
    };
    if (!cache) return build();
    auto key = CacheKey::for_payload(detail::pool_cache_payload(cfg, prompt_id, prompt, language));
    auto payload = cache->get_or_compute(key, "pool", [&] { return to_json(build()); });
    return pool_from_json(payload);
}

inline SftRecord make_sft_record(const CandidatePool& consumed_pool, const AggregationOutcome& outcome,
                                 const std::string& language) {
    SftRecord r;
    r.prompt_id = outcome.prompt_id;
    r.language = language;
    r.prompt = consumed_pool.prompt;
    r.completion = outcome.output;
    r.method = outcome.method;
    auto teacher_ids = nlohmann::json::array();
    for (const auto& c : consumed_pool.candidates) teacher_ids.push_back(c.teacher_id);
    nlohmann::json prov{{"teacher_ids", teacher_ids}};
    if (outcome.method == Method::fusion) {
        prov["permutation"] = outcome.permutation.value_or(std::vector<std::size_t>{});
        if (outcome.rationale) prov["rationale"] = *outcome.rationale;
        prov["fusor_id"] = outcome.aggregator_id;
    } else {
        prov["selected_index"] = outcome.selected_index.value_or(-1);
        if (outcome.scores) prov["scores"] = *outcome.scores;
        if (outcome.rationale) prov["rationale"] = *outcome.rationale;
        prov["scorer_id"] = outcome.aggregator_id;
    }
    r.provenance = std::move(prov);
    return r;
}

/// Runs aggregation over a prompt corpus and writes records.jsonl,
/// pools.jsonl and manifest.json under out_dir. Per-prompt failures are
/// skipped and counted; only I/O and configuration errors abort the run.
/// Output order follows corpus order regardless of completion order.
inline DatagenManifest generate_sft_dataset(const std::filesystem::path& corpus_path, Method method,
                                            const RunConfig& cfg, Backends& backends, ResponseCache* cache,
                                            const std::filesystem::path& out_dir,
                                            const std::function<void(const std::string&)>& log = {}) {
    cfg.require_method_backends(method);
    cfg.require_sampling_backends();
    auto started = std::chrono::steady_clock::now();
    auto attempts_before = backends.total_attempts();
    auto http_before = http_request_count().load();
    auto computes_before = cache ? cache->computes() : 0;

    struct Row {
        std::string prompt_id, language, prompt;
        bool valid = false;
    };
    std::vector<Row> rows;
    for_each_jsonl_line(corpus_path, [&](std::size_t line_no, const std::string& line) {
        Row row;
        try {
            auto j = nlohmann::json::parse(line);
            row.prompt_id = j.at("prompt_id").get<std::string>();
            row.language = j.at("language").get<std::string>();
            row.prompt = j.at("prompt").get<std::string>();
            row.valid = !row.prompt.empty();
        } catch (const nlohmann::json::exception&) {
            row.valid = false;
        }
        if (!row.valid && log) log("corpus line " + std::to_string(line_no) + " skipped: missing prompt fields");
        rows.push_back(std::move(row));
    });

    auto opts = make_aggregate_options(cfg, backends, cache);

    std::vector<std::optional<nlohmann::json>> record_slots(rows.size());
    std::vector<std::optional<nlohmann::json>> pool_slots(rows.size());

    parallel_for(rows.size(), static_cast<std::size_t>(cfg.max_concurrent_prompts), [&](std::size_t i) {
        const auto& row = rows[i];
        if (!row.valid) return;
        try {
            auto pool = build_pool(cfg, backends, cache, row.prompt_id, row.prompt, row.language);
            pool_slots[i] = to_json(pool);
            auto outcome = aggregate(method, pool, opts);
            CandidatePool consumed = pool;
            consumed.candidates = pool.successful();
            record_slots[i] = to_json(make_sft_record(consumed, outcome, row.language));
        } catch (const Error& e) {
            if (log) log("prompt '" + row.prompt_id + "' failed: " + e.what());
        }
    });

    std::filesystem::create_directories(out_dir);
    std::vector<nlohmann::json> records, pools;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (pool_slots[i]) pools.push_back(std::move(*pool_slots[i]));
        if (record_slots[i]) records.push_back(std::move(*record_slots[i]));
    }
    write_jsonl(out_dir / "records.jsonl", records);
    write_jsonl(out_dir / "pools.jsonl", pools);

    DatagenManifest manifest;
    manifest.config_hash = config_hash(cfg);
    manifest.method = to_string(method);
    manifest.corpus_lines = rows.size();
    manifest.records = records.size();
    manifest.failures = rows.size() - records.size();
    manifest.model_attempts = backends.total_attempts() - attempts_before;
    manifest.http_requests = http_request_count().load() - http_before;
    manifest.cache_computes = cache ? cache->computes() - computes_before : 0;
    manifest.wall_clock_ms = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() -
                                                                                   started)
                                 .count();

    std::ofstream mf(out_dir / "manifest.json", std::ios::binary | std::ios::trunc);
    if (!mf) throw IoError("cannot write manifest under " + out_dir.string());
    mf << to_json(manifest).dump(2) << '\n';
    return manifest;
}

} // namespace fusion
