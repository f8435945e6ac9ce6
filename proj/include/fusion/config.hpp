#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fusion/aggregation.hpp"
#include "fusion/backend.hpp"
#include "fusion/errors.hpp"
#include "fusion/sampling.hpp"
#include "fusion/sha256.hpp"
#include "fusion/templates.hpp"

namespace fusion {

enum class SamplingMode { single_model, multi_teacher };

inline std::string to_string(SamplingMode m) {
    return m == SamplingMode::single_model ? "single" : "multi";
}

inline SamplingMode sampling_mode_from_string(const std::string& s) {
    if (s == "single" || s == "single_model") return SamplingMode::single_model;
    if (s == "multi" || s == "multi_teacher") return SamplingMode::multi_teacher;
    throw ConfigError("unknown sampling mode: " + s);
}

struct RunPaths {
    std::string corpus;
    std::string cache;
    std::string out;
};

/// Everything a run needs. Loaded from a single JSON file; secrets never
/// appear here, only the names of the env vars that hold them.
struct RunConfig {
    std::vector<BackendConfig> backends;
    std::vector<std::string> teacher_ids;
    std::string model_id;  // single-model sampling source
    std::string fusor_id;
    std::string reward_id;
    std::string judge_id;
    Method method = Method::fusion;
    SamplingMode sampling_mode = SamplingMode::multi_teacher;
    SamplingSpec sampling{};
    double multi_teacher_temperature = 0.3;
    std::optional<std::int64_t> multi_teacher_seed;
    RunPaths paths;
    std::uint64_t shuffle_seed = 0;
    std::size_t min_block = 1;
    int retries = 2;
    int max_concurrent_prompts = 4;
    GenParams fusor_params{};
    GenParams rater_params{};
    GenParams judge_params{};
    std::string fusion_template{templates::kFusion};
    std::string rater_template{templates::kGenerativeRater};
    std::string judge_template{templates::kPairwiseJudge};
    std::string answer_marker = "Answer:";

    const BackendConfig& backend(const std::string& id) const {
        for (const auto& b : backends)
            if (b.id == id) return b;
        throw ConfigError("config references unknown backend id: " + id);
    }

    void validate() const {
        for (const auto& b : backends) b.validate();
        for (std::size_t i = 0; i < backends.size(); ++i)
            for (std::size_t j = i + 1; j < backends.size(); ++j)
                if (backends[i].id == backends[j].id)
                    throw ConfigError("duplicate backend id: " + backends[i].id);
        for (const auto& id : teacher_ids) backend(id);
        for (const auto* id : {&model_id, &fusor_id, &reward_id, &judge_id})
            if (!id->empty()) backend(*id);
        sampling.validate();
        if (min_block < 1) throw ConfigError("min_block must be >= 1");
        if (retries < 0) throw ConfigError("retries must be >= 0");
        if (max_concurrent_prompts < 1) throw ConfigError("max_concurrent_prompts must be >= 1");
    }

    /// Checks the backends a given aggregation method depends on.
    void require_method_backends(Method m) const {
        if (m == Method::bon_rm && reward_id.empty())
            throw ConfigError("method bon-rm requires reward_id in the config");
        if (m == Method::bon_gen && judge_id.empty())
            throw ConfigError("method bon-gen requires judge_id in the config");
        if (m == Method::fusion && fusor_id.empty())
            throw ConfigError("method fusion requires fusor_id in the config");
    }

    void require_sampling_backends() const {
        if (sampling_mode == SamplingMode::single_model) {
            if (model_id.empty()) throw ConfigError("sampling mode 'single' requires model_id in the config");
        } else if (teacher_ids.empty()) {
            throw ConfigError("sampling mode 'multi' requires a non-empty teacher_ids list");
        }
    }

};

namespace detail {

inline GenParams gen_params_from_json(const nlohmann::json& j, GenParams base = {}) {
    base.temperature = j.value("temperature", base.temperature);
    base.top_p = j.value("top_p", base.top_p);
    base.max_tokens = j.value("max_tokens", base.max_tokens);
    if (j.contains("seed") && !j["seed"].is_null()) base.seed = j["seed"].get<std::int64_t>();
    return base;
}

inline nlohmann::json gen_params_to_json(const GenParams& p) {
    nlohmann::json j{{"temperature", p.temperature}, {"top_p", p.top_p}, {"max_tokens", p.max_tokens}};
    if (p.seed) j["seed"] = *p.seed;
    return j;
}

inline std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open template file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace detail

inline BackendConfig backend_config_from_json(const nlohmann::json& j) {
    BackendConfig b;
    b.id = j.at("id").get<std::string>();
    b.kind = backend_kind_from_string(j.at("kind").get<std::string>());
    b.base_url = j.value("base_url", std::string{});
    b.model_name = j.value("model_name", std::string{});
    b.api_key_env = j.value("api_key_env", std::string{});
    b.max_in_flight = j.value("max_in_flight", 4);
    b.timeout_ms = j.value("timeout_ms", 120000);
    b.max_retries = j.value("max_retries", 3);
    b.mock_script_path = j.value("mock_script_path", std::string{});
    return b;
}

inline nlohmann::json to_json(const BackendConfig& b) {
    return {{"id", b.id},
            {"kind", to_string(b.kind)},
            {"base_url", b.base_url},
            {"model_name", b.model_name},
            {"api_key_env", b.api_key_env},
            {"max_in_flight", b.max_in_flight},
            {"timeout_ms", b.timeout_ms},
            {"max_retries", b.max_retries},
            {"mock_script_path", b.mock_script_path}};
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
    RunConfig cfg;
    try {
        if (!j.contains("backends") || !j["backends"].is_array() || j["backends"].empty())
            throw ConfigError("config must define a non-empty backends array");
        for (const auto& b : j["backends"]) cfg.backends.push_back(backend_config_from_json(b));
        cfg.teacher_ids = j.value("teacher_ids", std::vector<std::string>{});
        cfg.model_id = j.value("model_id", std::string{});
        cfg.fusor_id = j.value("fusor_id", std::string{});
        cfg.reward_id = j.value("reward_id", std::string{});
        cfg.judge_id = j.value("judge_id", std::string{});
        if (j.contains("method")) cfg.method = method_from_string(j["method"].get<std::string>());
        if (j.contains("sampling_mode"))
            cfg.sampling_mode = sampling_mode_from_string(j["sampling_mode"].get<std::string>());
        if (j.contains("sampling")) {
            const auto& s = j["sampling"];
            cfg.sampling.n = s.value("n", cfg.sampling.n);
            cfg.sampling.temperature = s.value("temperature", cfg.sampling.temperature);
            cfg.sampling.top_p = s.value("top_p", cfg.sampling.top_p);
            cfg.sampling.max_tokens = s.value("max_tokens", cfg.sampling.max_tokens);
            cfg.sampling.seed = s.value("seed", cfg.sampling.seed);
        }
        cfg.multi_teacher_temperature = j.value("multi_teacher_temperature", cfg.multi_teacher_temperature);
        if (j.contains("multi_teacher_seed") && !j["multi_teacher_seed"].is_null())
            cfg.multi_teacher_seed = j["multi_teacher_seed"].get<std::int64_t>();
        if (j.contains("paths")) {
            const auto& p = j["paths"];
            cfg.paths.corpus = p.value("corpus", std::string{});
            cfg.paths.cache = p.value("cache", std::string{});
            cfg.paths.out = p.value("out", std::string{});
        }
        cfg.shuffle_seed = j.value("shuffle_seed", cfg.shuffle_seed);
        cfg.min_block = j.value("min_block", cfg.min_block);
        cfg.retries = j.value("retries", cfg.retries);
        cfg.max_concurrent_prompts = j.value("max_concurrent_prompts", cfg.max_concurrent_prompts);
        if (j.contains("fusor_params")) cfg.fusor_params = detail::gen_params_from_json(j["fusor_params"]);
        if (j.contains("rater_params")) cfg.rater_params = detail::gen_params_from_json(j["rater_params"]);
        if (j.contains("judge_params")) cfg.judge_params = detail::gen_params_from_json(j["judge_params"]);
        if (j.contains("templates")) {
            const auto& t = j["templates"];
            if (t.contains("fusion")) cfg.fusion_template = detail::read_text_file(t["fusion"].get<std::string>());
            if (t.contains("rater")) cfg.rater_template = detail::read_text_file(t["rater"].get<std::string>());
            if (t.contains("judge")) cfg.judge_template = detail::read_text_file(t["judge"].get<std::string>());
        }
        cfg.answer_marker = j.value("answer_marker", cfg.answer_marker);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed run config: ") + e.what());
    }
    return cfg;
}

inline nlohmann::json to_json(const RunConfig& cfg) {
    auto backends = nlohmann::json::array();
    for (const auto& b : cfg.backends) backends.push_back(to_json(b));
    nlohmann::json j{{"backends", backends},
                     {"teacher_ids", cfg.teacher_ids},
                     {"model_id", cfg.model_id},
                     {"fusor_id", cfg.fusor_id},
                     {"reward_id", cfg.reward_id},
                     {"judge_id", cfg.judge_id},
                     {"method", to_string(cfg.method)},
                     {"sampling_mode", to_string(cfg.sampling_mode)},
                     {"sampling",
                      {{"n", cfg.sampling.n},
                       {"temperature", cfg.sampling.temperature},
                       {"top_p", cfg.sampling.top_p},
                       {"max_tokens", cfg.sampling.max_tokens},
                       {"seed", cfg.sampling.seed}}},
                     {"multi_teacher_temperature", cfg.multi_teacher_temperature},
                     {"paths", {{"corpus", cfg.paths.corpus}, {"cache", cfg.paths.cache}, {"out", cfg.paths.out}}},
                     {"shuffle_seed", cfg.shuffle_seed},
                     {"min_block", cfg.min_block},
                     {"retries", cfg.retries},
                     {"max_concurrent_prompts", cfg.max_concurrent_prompts},
                     {"fusor_params", detail::gen_params_to_json(cfg.fusor_params)},
                     {"rater_params", detail::gen_params_to_json(cfg.rater_params)},
                     {"judge_params", detail::gen_params_to_json(cfg.judge_params)},
                     {"fusion_template", cfg.fusion_template},
                     {"rater_template", cfg.rater_template},
                     {"judge_template", cfg.judge_template},
                     {"answer_marker", cfg.answer_marker}};
    if (cfg.multi_teacher_seed) j["multi_teacher_seed"] = *cfg.multi_teacher_seed;
    return j;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
    }
    return run_config_from_json(j);
}

/// Digest of the fully resolved configuration, recorded in run manifests.
inline std::string config_hash(const RunConfig& cfg) { return sha256_hex(to_json(cfg).dump()); }

} // namespace fusion
