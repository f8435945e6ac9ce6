#include <catch2/catch.hpp>

#include <random>

#include "fusion/evaluation.hpp"
#include "test_util.hpp"

using namespace fusion;
using testutil::scripted_mock;
using testutil::TempDir;

namespace {

// The default judge template presents the first-shown response under
// "Response A"; matching on that section tells the mock which order it sees.
std::string order_rule(const std::string& first_text, const std::string& verdict) {
    return nlohmann::json{{"match", {{"user_contains", "Response A\n\n" + first_text}}},
                          {"respond", {{"text", "thoughts... [[" + verdict + "]]"}}}}
        .dump();
}

} // namespace

TEST_CASE("consistent judge verdicts normalize to the same winner") {
    TempDir dir;
    // order ab shows "AAAA" first (judge says A); order ba shows "BBBB" first (judge says B)
    auto cfg = scripted_mock(dir, "j", {order_rule("AAAA", "A"), order_rule("BBBB", "B")});
    MockBackend judge(cfg);
    auto [first, second] = pairwise_judge(judge, "p", "q", "AAAA", "BBBB");
    CHECK(first.order == GameOrder::ab);
    CHECK(second.order == GameOrder::ba);
    CHECK(first.result == GameResult::first_wins);
    CHECK(second.result == GameResult::first_wins);
}

TEST_CASE("an order-driven judge produces one win per side") {
    TempDir dir;
    auto cfg = scripted_mock(dir, "j", {R"({"match": {"any": true}, "respond": {"text": "[[A]]"}})"});
    MockBackend judge(cfg);
    auto [first, second] = pairwise_judge(judge, "p", "q", "AAAA", "BBBB");
    CHECK(first.result == GameResult::first_wins);
    CHECK(second.result == GameResult::second_wins);
}

TEST_CASE("ties pass through unchanged") {
    TempDir dir;
    auto cfg = scripted_mock(dir, "j", {R"({"match": {"any": true}, "respond": {"text": "[[TIE]]"}})"});
    MockBackend judge(cfg);
    auto [first, second] = pairwise_judge(judge, "p", "q", "AAAA", "BBBB");
    CHECK(first.result == GameResult::tie);
    CHECK(second.result == GameResult::tie);
}

TEST_CASE("judge verdicts are parsed case-insensitively with retries") {
    TempDir dir;
    SECTION("lowercase token") {
        auto cfg = scripted_mock(dir, "j", {R"({"match": {"any": true}, "respond": {"text": "[[ b ]]"}})"});
        MockBackend judge(cfg);
        auto [first, second] = pairwise_judge(judge, "p", "q", "AAAA", "BBBB");
        CHECK(first.result == GameResult::second_wins);
    }
    SECTION("garbage then a valid verdict") {
        auto cfg = scripted_mock(
            dir, "j",
            {R"({"match": {"any": true}, "respond": {"sequence": [{"text": "no verdict"}, {"text": "[[A]]"}, {"text": "no verdict"}, {"text": "[[A]]"}]}})"});
        MockBackend judge(cfg);
        auto [first, second] = pairwise_judge(judge, "p", "q", "AAAA", "BBBB", templates::kPairwiseJudge, 2);
        CHECK(first.result == GameResult::first_wins);
        CHECK(judge.attempts() == 4);
    }
    SECTION("unknown token exhausts retries") {
        auto cfg = scripted_mock(dir, "j", {R"({"match": {"any": true}, "respond": {"text": "[[MAYBE]]"}})"});
        MockBackend judge(cfg);
        CHECK_THROWS_AS(pairwise_judge(judge, "p", "q", "AAAA", "BBBB"), ParseError);
    }
    SECTION("empty responses are rejected up front") {
        auto cfg = scripted_mock(dir, "j", {R"({"match": {"any": true}, "respond": {"text": "[[A]]"}})"});
        MockBackend judge(cfg);
        CHECK_THROWS_AS(pairwise_judge(judge, "p", "q", "", "BBBB"), ConfigError);
    }
}

namespace {

std::vector<Verdict> scripted_verdicts(std::size_t wins, std::size_t ties, std::size_t losses) {
    std::vector<Verdict> verdicts;
    auto push = [&](GameResult result, std::size_t count) {
        for (std::size_t i = 0; i < count; ++i) {
            Verdict v;
            v.prompt_id = "p" + std::to_string(verdicts.size());
            v.order = verdicts.size() % 2 == 0 ? GameOrder::ab : GameOrder::ba;
            v.result = result;
            verdicts.push_back(v);
        }
    };
    push(GameResult::first_wins, wins);
    push(GameResult::tie, ties);
    push(GameResult::second_wins, losses);
    return verdicts;
}

} // namespace

TEST_CASE("win rate arithmetic") {
    SECTION("all wins") {
        auto summary = compute_win_rate(scripted_verdicts(10, 0, 0));
        CHECK(summary.win_rate == Approx(1.0));
        CHECK(summary.std_err == Approx(0.0));
    }
    SECTION("6 wins, 2 ties, 2 losses over 10 games") {
        auto summary = compute_win_rate(scripted_verdicts(6, 2, 2));
        CHECK(summary.games == 10);
        CHECK(summary.wins == 6);
        CHECK(summary.ties == 2);
        CHECK(summary.losses == 2);
        // direct formula evaluation: (6 + 0.5*2)/10 and sqrt(0.7*0.3/10)
        CHECK(summary.win_rate == Approx(0.7).margin(1e-9));
        CHECK(summary.std_err == Approx(0.144914).margin(1e-6));
    }
    SECTION("no games") { CHECK_THROWS_AS(compute_win_rate({}), EmptySetError); }
}

TEST_CASE("win rates are antisymmetric under system swap") {
    std::mt19937_64 rng(2718);
    std::uniform_int_distribution<std::size_t> count(0, 20);
    for (int trial = 0; trial < 100; ++trial) {
        auto wins = count(rng);
        auto ties = count(rng);
        auto losses = count(rng);
        if (wins + ties + losses == 0) wins = 1;
        auto verdicts = scripted_verdicts(wins, ties, losses);
        auto forward = compute_win_rate(verdicts);
        auto swapped = compute_win_rate(swap_perspective(verdicts));
        CHECK(forward.win_rate + swapped.win_rate == Approx(1.0).margin(1e-12));
        CHECK(swapped.wins == forward.losses);
        CHECK(swapped.losses == forward.wins);
        CHECK(swapped.ties == forward.ties);
        // std_err vanishes exactly at the extremes and only there
        CHECK((forward.std_err == 0.0) == (forward.win_rate == 0.0 || forward.win_rate == 1.0));
    }
}

TEST_CASE("swap_perspective flips orders and results") {
    Verdict v;
    v.order = GameOrder::ab;
    v.result = GameResult::first_wins;
    auto flipped = swap_perspective({v});
    CHECK(flipped[0].order == GameOrder::ba);
    CHECK(flipped[0].result == GameResult::second_wins);
}

TEST_CASE("final answers come from the last marker line") {
    CHECK(extract_final_answer("step 1: reason\nstep 2: more\nAnswer: 42") == "42");
    CHECK(extract_final_answer("Answer: 3\nmore thinking\nAnswer: 5") == "5");
    CHECK(extract_final_answer("   Answer: indented ") == "indented");
    CHECK_THROWS_AS(extract_final_answer("the answer is forty-two"), NoAnswerError);
    SECTION("localized marker") {
        CHECK(extract_final_answer("Denkschritt\nAntwort: 7", "Antwort:") == "7");
        CHECK_THROWS_AS(extract_final_answer("Answer: 7", "Antwort:"), NoAnswerError);
    }
}

TEST_CASE("numeric answer comparison strips thousands separators") {
    CHECK(answers_match("1,234", "1234"));
    CHECK(answers_match("1 234 567", "1234567"));
    CHECK(answers_match("42.", "42"));
    CHECK(answers_match(" 42 ", "42"));
    CHECK_FALSE(answers_match("42", "43"));
    CHECK(answers_match("abc", "abc"));
    CHECK_FALSE(answers_match("abc", "abd"));
}

TEST_CASE("verdicts and summaries serialize round trip") {
    Verdict v;
    v.prompt_id = "p1";
    v.order = GameOrder::ba;
    v.result = GameResult::second_wins;
    v.judge_raw = "[[A]]";
    auto back = verdict_from_json(to_json(v));
    CHECK(back.prompt_id == "p1");
    CHECK(back.order == GameOrder::ba);
    CHECK(back.result == GameResult::second_wins);
    CHECK(back.judge_raw == "[[A]]");

    auto summary = compute_win_rate(scripted_verdicts(6, 2, 2));
    auto j = to_json(summary);
    CHECK(j.at("games") == 10);
    CHECK(j.at("win_rate").get<double>() == Approx(0.7));

    auto table = win_rate_table(summary);
    CHECK(table.find("win_rate") != std::string::npos);
    CHECK(table.find("0.7000") != std::string::npos);
    CHECK(table.find("0.1449") != std::string::npos);
}
