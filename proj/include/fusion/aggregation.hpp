#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fusion/backend.hpp"
#include "fusion/concurrency.hpp"
#include "fusion/errors.hpp"
#include "fusion/sampling.hpp"
#include "fusion/store.hpp"
#include "fusion/templates.hpp"
#include "fusion/util.hpp"

namespace fusion {

enum class Method { bon_rm, bon_gen, fusion };

inline std::string to_string(Method m) {
    switch (m) {
        case Method::bon_rm: return "bon_rm";
        case Method::bon_gen: return "bon_gen";
        case Method::fusion: return "fusion";
    }
    return "fusion";
}

inline Method method_from_string(std::string s) {
    std::replace(s.begin(), s.end(), '-', '_');
    if (s == "bon_rm") return Method::bon_rm;
    if (s == "bon_gen") return Method::bon_gen;
    if (s == "fusion") return Method::fusion;
    throw ConfigError("unknown aggregation method: " + s);
}

/// Final output for one pool: either a selected candidate (with its scores)
/// or a synthesized text (with the presentation permutation that produced it).
struct AggregationOutcome {
    std::string prompt_id;
    Method method = Method::fusion;
    std::string output;
    std::optional<int> selected_index;           // BoN only
    std::optional<std::vector<double>> scores;   // BoN only, aligned to pool order
    std::optional<std::vector<std::size_t>> permutation; // fusion only: position -> pool index
    std::optional<std::string> rationale;
    std::string aggregator_id; // scorer for BoN, fusor for fusion
};

inline nlohmann::json to_json(const AggregationOutcome& o) {
    nlohmann::json j{{"prompt_id", o.prompt_id}, {"method", to_string(o.method)}, {"output", o.output}};
    if (o.selected_index) j["selected_index"] = *o.selected_index;
    if (o.scores) j["scores"] = *o.scores;
    if (o.permutation) j["permutation"] = *o.permutation;
    if (o.rationale) j["rationale"] = *o.rationale;
    j[o.method == Method::fusion ? "fusor_id" : "scorer_id"] = o.aggregator_id;
    return j;
}

inline AggregationOutcome outcome_from_json(const nlohmann::json& j) {
    AggregationOutcome o;
    o.prompt_id = j.at("prompt_id").get<std::string>();
    o.method = method_from_string(j.at("method").get<std::string>());
    o.output = j.at("output").get<std::string>();
    if (j.contains("selected_index")) o.selected_index = j["selected_index"].get<int>();
    if (j.contains("scores")) o.scores = j["scores"].get<std::vector<double>>();
    if (j.contains("permutation")) o.permutation = j["permutation"].get<std::vector<std::size_t>>();
    if (j.contains("rationale")) o.rationale = j["rationale"].get<std::string>();
    o.aggregator_id = j.value("fusor_id", j.value("scorer_id", std::string{}));
    return o;
}

/// Selects argmax(scores); ties go to the lowest pool index. The output is
/// the selected candidate's text, byte for byte.
inline AggregationOutcome best_of_n_select(const CandidatePool& pool, const std::vector<double>& scores,
                                           Method method = Method::bon_rm, const std::string& scorer_id = {}) {
    if (method == Method::fusion) throw ConfigError("best_of_n_select: method must be bon_rm or bon_gen");
    if (pool.candidates.empty()) throw EmptyPoolError("best_of_n_select: empty pool for '" + pool.prompt_id + "'");
    if (scores.size() != pool.candidates.size())
        throw MismatchError("best_of_n_select: " + std::to_string(scores.size()) + " scores for " +
                            std::to_string(pool.candidates.size()) + " candidates");
    std::size_t best = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!std::isfinite(scores[i]))
            throw InvalidScoreError("best_of_n_select: non-finite score at index " + std::to_string(i));
        if (scores[i] > scores[best]) best = i;
    }
    AggregationOutcome o;
    o.prompt_id = pool.prompt_id;
    o.method = method;
    o.output = pool.candidates[best].text;
    o.selected_index = static_cast<int>(best);
    o.scores = scores;
    o.aggregator_id = scorer_id;
    return o;
}

/// Returns the span between the last "[[" and the first "]]" after it,
/// whitespace-trimmed. The answer comes after an analysis preamble that may
/// itself quote bracket pairs, hence the last-pair rule.
inline std::string extract_double_bracket(const std::string& text) {
    auto open = text.rfind("[[");
    if (open == std::string::npos) throw ParseError("no double-bracket span found");
    auto close = text.find("]]", open + 2);
    if (close == std::string::npos) throw ParseError("unterminated double-bracket span");
    auto inner = trim(std::string_view(text).substr(open + 2, close - open - 2));
    if (inner.empty()) throw ParseError("double-bracket span is empty");
    return inner;
}

/// Text preceding the last double-bracket span (the judge's commentary).
inline std::string pre_bracket_text(const std::string& text) {
    auto open = text.rfind("[[");
    if (open == std::string::npos) return {};
    return trim(std::string_view(text).substr(0, open));
}

struct RenderedFusionPrompt {
    std::string text;
    std::vector<std::size_t> permutation; // presentation position (0-based) -> pool index
};

/// Shuffles the pool with a seeded RNG and renders the fusion instruction.
/// Candidates appear anonymized as "Generated Text <k>:" blocks in shuffled
/// order; equal (pool, seed) always renders identical bytes.
inline RenderedFusionPrompt render_fusion_prompt(const CandidatePool& pool, std::uint64_t shuffle_seed,
                                                 std::string_view tmpl = templates::kFusion) {
    if (pool.candidates.empty())
        throw EmptyPoolError("render_fusion_prompt: empty pool for '" + pool.prompt_id + "'");
    RenderedFusionPrompt out;
    out.permutation = shuffled_indices(pool.candidates.size(), shuffle_seed);
    std::string blocks;
    for (std::size_t k = 0; k < out.permutation.size(); ++k) {
        if (k > 0) blocks += "\n\n";
        blocks += "Generated Text " + std::to_string(k + 1) + ":\n";
        blocks += pool.candidates[out.permutation[k]].text;
    }
    out.text = render_template(
        tmpl, {{"language", pool.language}, {"prompt", pool.prompt}, {"generations", blocks}});
    return out;
}

/// Decoding parameters for fusor/rater/judge calls. Low temperature by
/// default to keep the judge role close to deterministic.
struct GenParams {
    double temperature = 0.3;
    double top_p = 1.0;
    int max_tokens = 4096;
    std::optional<std::int64_t> seed;
};

inline ChatRequest make_gen_request(std::string user, const GenParams& params) {
    ChatRequest r;
    r.user = std::move(user);
    r.temperature = params.temperature;
    r.top_p = params.top_p;
    r.max_tokens = params.max_tokens;
    r.seed = params.seed;
    return r;
}

namespace detail {

inline int parse_strict_int(std::string_view s) {
    s = trim_view(s);
    int value = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc{} || ptr != s.data() + s.size()) throw ParseError("not an integer: '" + std::string(s) + "'");
    return value;
}

} // namespace detail

/// Prompts a generative rater for a 1-5 integer score of one candidate.
/// Parse failures re-call the model up to parse_retries times; a cleanly
/// parsed score outside 1..5 is a contract violation and fails immediately.
inline int score_generative(Backend& judge, const std::string& prompt, const std::string& candidate,
                            const std::string& language, int parse_retries = 2,
                            std::string_view tmpl = templates::kGenerativeRater, const GenParams& params = {},
                            ResponseCache* cache = nullptr, std::string* analysis_out = nullptr) {
    auto rendered = render_template(
        tmpl, {{"language", language}, {"message", prompt}, {"generation", candidate}});
    auto request = make_gen_request(rendered, params);
    std::string last_error;
    for (int attempt = 0; attempt <= parse_retries; ++attempt) {
        auto response = cached_chat(judge, request, cache, attempt);
        std::string span;
        int score = 0;
        try {
            span = extract_double_bracket(response.text);
            score = detail::parse_strict_int(span);
        } catch (const ParseError& e) {
            last_error = e.what();
            continue;
        }
        if (score < 1 || score > 5)
            throw RangeError("generative score " + std::to_string(score) + " outside 1..5");
        if (analysis_out) *analysis_out = pre_bracket_text(response.text);
        return score;
    }
    throw ParseError("generative rater produced no parsable 1-5 score after " + std::to_string(parse_retries + 1) +
                     " attempts; last error: " + last_error);
}

/// Synthesizes one output from the whole pool with a single fusor call.
/// The prompt is rendered once; parse failures re-send the identical prompt.
inline AggregationOutcome fuse(Backend& fusor, const CandidatePool& pool, std::uint64_t shuffle_seed,
                               int parse_retries = 2, std::string_view tmpl = templates::kFusion,
                               const GenParams& params = {}, ResponseCache* cache = nullptr) {
    auto rendered = render_fusion_prompt(pool, shuffle_seed, tmpl);
    auto request = make_gen_request(rendered.text, params);
    std::string last_error;
    for (int attempt = 0; attempt <= parse_retries; ++attempt) {
        auto response = cached_chat(fusor, request, cache, attempt);
        try {
            AggregationOutcome o;
            o.prompt_id = pool.prompt_id;
            o.method = Method::fusion;
            o.output = extract_double_bracket(response.text);
            o.permutation = rendered.permutation;
            o.rationale = pre_bracket_text(response.text);
            o.aggregator_id = fusor.config().id;
            return o;
        } catch (const ParseError& e) {
            last_error = e.what();
        }
    }
    throw ParseError("fusor produced no double-bracketed output after " + std::to_string(parse_retries + 1) +
                     " attempts; last error: " + last_error);
}

struct AggregateOptions {
    Backend* reward = nullptr; // required for bon_rm
    Backend* judge = nullptr;  // required for bon_gen
    Backend* fusor = nullptr;  // required for fusion
    std::uint64_t shuffle_seed = 0;
    int parse_retries = 2;
    GenParams fusor_params{};
    GenParams rater_params{};
    std::string fusion_template{templates::kFusion};
    std::string rater_template{templates::kGenerativeRater};
    ResponseCache* cache = nullptr;
};

/// Dispatcher over the three aggregation methods. Failed candidates are
/// filtered out before aggregation; the outcome's indices and scores refer
/// to the filtered pool.
inline AggregationOutcome aggregate(Method method, const CandidatePool& raw_pool, const AggregateOptions& opts) {
    CandidatePool pool = raw_pool;
    pool.candidates = raw_pool.successful();
    if (pool.candidates.empty()) throw EmptyPoolError("aggregate: no successful candidates for '" + pool.prompt_id + "'");

    switch (method) {
        case Method::bon_rm: {
            if (!opts.reward) throw ConfigError("aggregate: method bon_rm requires a reward backend");
            std::vector<double> scores(pool.candidates.size());
            parallel_for(pool.candidates.size(), static_cast<std::size_t>(opts.reward->config().max_in_flight),
                         [&](std::size_t i) {
                             scores[i] = cached_score(*opts.reward, pool.prompt, pool.candidates[i].text, opts.cache);
                         });
            return best_of_n_select(pool, scores, Method::bon_rm, opts.reward->config().id);
        }
        case Method::bon_gen: {
            if (!opts.judge) throw ConfigError("aggregate: method bon_gen requires a judge backend");
            std::vector<double> scores(pool.candidates.size());
            std::vector<std::string> analyses(pool.candidates.size());
            parallel_for(pool.candidates.size(), static_cast<std::size_t>(opts.judge->config().max_in_flight),
                         [&](std::size_t i) {
                             scores[i] = score_generative(*opts.judge, pool.prompt, pool.candidates[i].text,
                                                          pool.language, opts.parse_retries, opts.rater_template,
                                                          opts.rater_params, opts.cache, &analyses[i]);
                         });
            auto outcome = best_of_n_select(pool, scores, Method::bon_gen, opts.judge->config().id);
            std::string joined;
            for (std::size_t i = 0; i < analyses.size(); ++i) {
                if (i > 0) joined += "\n---\n";
                joined += analyses[i];
            }
            outcome.rationale = joined;
            return outcome;
        }
        case Method::fusion: {
            if (!opts.fusor) throw ConfigError("aggregate: method fusion requires a fusor backend");
            return fuse(*opts.fusor, pool, opts.shuffle_seed, opts.parse_retries, opts.fusion_template,
                        opts.fusor_params, opts.cache);
        }
    }
    throw ConfigError("aggregate: unhandled method");
}

} // namespace fusion
