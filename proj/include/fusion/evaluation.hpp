#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fusion/aggregation.hpp"
#include "fusion/backend.hpp"
#include "fusion/errors.hpp"
#include "fusion/store.hpp"
#include "fusion/templates.hpp"
#include "fusion/util.hpp"

namespace fusion {

enum class GameOrder { ab, ba };
enum class GameResult { first_wins, second_wins, tie };

inline std::string to_string(GameOrder o) { return o == GameOrder::ab ? "ab" : "ba"; }
inline std::string to_string(GameResult r) {
    switch (r) {
        case GameResult::first_wins: return "first_wins";
        case GameResult::second_wins: return "second_wins";
        case GameResult::tie: return "tie";
    }
    return "tie";
}

inline GameOrder game_order_from_string(const std::string& s) {
    if (s == "ab") return GameOrder::ab;
    if (s == "ba") return GameOrder::ba;
    throw ConfigError("unknown game order: " + s);
}

inline GameResult game_result_from_string(const std::string& s) {
    if (s == "first_wins") return GameResult::first_wins;
    if (s == "second_wins") return GameResult::second_wins;
    if (s == "tie") return GameResult::tie;
    throw ConfigError("unknown game result: " + s);
}

/// One judged game. result is always expressed relative to the original
/// (response_a, response_b) pair, whatever order the judge saw.
struct Verdict {
    std::string prompt_id;
    GameOrder order = GameOrder::ab;
    GameResult result = GameResult::tie;
    std::string judge_raw;
};

inline nlohmann::json to_json(const Verdict& v) {
    return {{"prompt_id", v.prompt_id},
            {"order", to_string(v.order)},
            {"result", to_string(v.result)},
            {"judge_raw", v.judge_raw}};
}

inline Verdict verdict_from_json(const nlohmann::json& j) {
    Verdict v;
    v.prompt_id = j.at("prompt_id").get<std::string>();
    v.order = game_order_from_string(j.at("order").get<std::string>());
    v.result = game_result_from_string(j.at("result").get<std::string>());
    v.judge_raw = j.value("judge_raw", std::string{});
    return v;
}

/// Judges (response_a, response_b) twice, once per presentation order, to
/// counteract judge position bias. Each game's verdict is the [[A]]/[[B]]/
/// [[TIE]] token in the reply, normalized to the original pair.
inline std::pair<Verdict, Verdict> pairwise_judge(Backend& judge, const std::string& prompt_id,
                                                  const std::string& prompt, const std::string& response_a,
                                                  const std::string& response_b,
                                                  std::string_view tmpl = templates::kPairwiseJudge,
                                                  int parse_retries = 2, const GenParams& params = {},
                                                  ResponseCache* cache = nullptr) {
    if (response_a.empty() || response_b.empty())
        throw ConfigError("pairwise_judge: both responses must be non-empty");

    auto play = [&](GameOrder order) {
        const std::string& first = order == GameOrder::ab ? response_a : response_b;
        const std::string& second = order == GameOrder::ab ? response_b : response_a;
        auto rendered =
            render_template(tmpl, {{"prompt", prompt}, {"response_a", first}, {"response_b", second}});
        auto request = make_gen_request(rendered, params);
        std::string last_error;
        for (int attempt = 0; attempt <= parse_retries; ++attempt) {
            auto response = cached_chat(judge, request, cache, attempt);
            std::string token;
            try {
                token = extract_double_bracket(response.text);
            } catch (const ParseError& e) {
                last_error = e.what();
                continue;
            }
            std::transform(token.begin(), token.end(), token.begin(),
                           [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
            Verdict v;
            v.prompt_id = prompt_id;
            v.order = order;
            v.judge_raw = response.text;
            if (token == "A")
                v.result = order == GameOrder::ab ? GameResult::first_wins : GameResult::second_wins;
            else if (token == "B")
                v.result = order == GameOrder::ab ? GameResult::second_wins : GameResult::first_wins;
            else if (token == "TIE")
                v.result = GameResult::tie;
            else {
                last_error = "unexpected verdict token '" + token + "'";
                continue;
            }
            return v;
        }
        throw ParseError("judge produced no A/B/TIE verdict after " + std::to_string(parse_retries + 1) +
                         " attempts; last error: " + last_error);
    };

    return {play(GameOrder::ab), play(GameOrder::ba)};
}

/// Win rate of the first system with ties credited half a win, plus the
/// binomial standard error sqrt(p(1-p)/n).
struct WinRateSummary {
    std::size_t games = 0;
    std::size_t wins = 0;
    std::size_t ties = 0;
    std::size_t losses = 0;
    double win_rate = 0.0;
    double std_err = 0.0;
};

inline nlohmann::json to_json(const WinRateSummary& s) {
    return {{"games", s.games},   {"wins", s.wins},         {"ties", s.ties},
            {"losses", s.losses}, {"win_rate", s.win_rate}, {"std_err", s.std_err}};
}

inline WinRateSummary compute_win_rate(const std::vector<Verdict>& verdicts) {
    if (verdicts.empty()) throw EmptySetError("compute_win_rate: no verdicts");
    WinRateSummary s;
    s.games = verdicts.size();
    for (const auto& v : verdicts) {
        switch (v.result) {
            case GameResult::first_wins: ++s.wins; break;
            case GameResult::second_wins: ++s.losses; break;
            case GameResult::tie: ++s.ties; break;
        }
    }
    s.win_rate = (static_cast<double>(s.wins) + 0.5 * static_cast<double>(s.ties)) / static_cast<double>(s.games);
    s.std_err = std::sqrt(s.win_rate * (1.0 - s.win_rate) / static_cast<double>(s.games));
    return s;
}

/// The same games from the second system's perspective.
inline std::vector<Verdict> swap_perspective(std::vector<Verdict> verdicts) {
    for (auto& v : verdicts) {
        v.order = v.order == GameOrder::ab ? GameOrder::ba : GameOrder::ab;
        if (v.result == GameResult::first_wins)
            v.result = GameResult::second_wins;
        else if (v.result == GameResult::second_wins)
            v.result = GameResult::first_wins;
    }
    return verdicts;
}

inline std::string win_rate_table(const WinRateSummary& s) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%8s %6s %6s %8s %9s %8s\n%8zu %6zu %6zu %8zu %9.4f %8.4f\n", "games", "wins",
                  "ties", "losses", "win_rate", "std_err", s.games, s.wins, s.ties, s.losses, s.win_rate, s.std_err);
    return buf;
}

/// Returns the trimmed text after the last line that begins with the answer
/// marker. Lines are trimmed before matching so indented answers count.
inline std::string extract_final_answer(const std::string& text, std::string_view marker = "Answer:") {
    std::optional<std::string> answer;
    for (auto line : split_lines(text)) {
        auto trimmed = trim_view(line);
        if (starts_with(trimmed, marker)) answer = trim(trimmed.substr(marker.size()));
    }
    if (!answer) throw NoAnswerError("no line begins with marker '" + std::string(marker) + "'");
    return *answer;
}

/// Numeric-aware answer comparison: thousands separators (commas) and inner
/// spaces are stripped; values comparable as integers compare numerically.
inline bool answers_match(const std::string& a, const std::string& b) {
    auto normalize = [](const std::string& s) {
        std::string out;
        for (char c : trim(s))
            if (c != ',' && c != ' ') out.push_back(c);
        if (!out.empty() && out.back() == '.') out.pop_back();
        return out;
    };
    auto parse_int = [](const std::string& s) -> std::optional<long long> {
        if (s.empty()) return std::nullopt;
        std::size_t pos = 0;
        try {
            long long v = std::stoll(s, &pos);
            if (pos == s.size()) return v;
        } catch (const std::exception&) {
        }
        return std::nullopt;
    };
    auto na = normalize(a);
    auto nb = normalize(b);
    auto ia = parse_int(na);
    auto ib = parse_int(nb);
    if (ia && ib) return *ia == *ib;
    return na == nb;
}

} // namespace fusion
