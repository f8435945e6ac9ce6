#include <catch2/catch.hpp>

#include <thread>

#include "fusion/backend.hpp"
#include "fusion/concurrency.hpp"
#include "test_util.hpp"

using namespace fusion;
using testutil::scripted_mock;
using testutil::TempDir;

namespace {

ChatRequest simple_request(const std::string& user = "hi") {
    ChatRequest r;
    r.user = user;
    return r;
}

} // namespace

TEST_CASE("mock backend returns scripted text") {
    TempDir dir;
    auto cfg = scripted_mock(dir, "m", {R"({"match": {"any": true}, "respond": {"text": "hello"}})"});
    MockBackend backend(cfg);
    auto response = backend.chat_complete(simple_request());
    CHECK(response.text == "hello");
    CHECK(response.finish_reason == FinishReason::stop);
    CHECK(response.backend_id == "m");
}

TEST_CASE("mock scripted to fail twice succeeds on the third attempt") {
    TempDir dir;
    auto cfg = scripted_mock(
        dir, "m",
        {R"({"match": {"any": true}, "respond": {"sequence": [{"error": "http_500"}, {"error": "timeout"}, {"text": "ok"}]}})"},
        /*max_retries=*/3);
    MockBackend backend(cfg);
    auto response = backend.chat_complete(simple_request());
    CHECK(response.text == "ok");
    CHECK(backend.attempts() == 3);
}

TEST_CASE("retry budget exhaustion raises TransportError") {
    TempDir dir;
    auto cfg = scripted_mock(dir, "m", {R"({"match": {"any": true}, "respond": {"error": "http_503"}})"},
                             /*max_retries=*/1);
    MockBackend backend(cfg);
    CHECK_THROWS_AS(backend.chat_complete(simple_request()), TransportError);
    CHECK(backend.attempts() == 2); // initial attempt + one retry
}

TEST_CASE("attempts observed by the mock equal min(failures, max_retries) + 1") {
    for (int failures = 0; failures <= 5; ++failures) {
        TempDir dir;
        nlohmann::json seq = nlohmann::json::array();
        for (int i = 0; i < failures; ++i) seq.push_back({{"error", "http_500"}});
        seq.push_back({{"text", "done"}});
        auto cfg = scripted_mock(dir, "m",
                                 {nlohmann::json{{"match", {{"any", true}}}, {"respond", {{"sequence", seq}}}}.dump()},
                                 /*max_retries=*/3);
        MockBackend backend(cfg);
        if (failures <= 3) {
            CHECK(backend.chat_complete(simple_request()).text == "done");
            CHECK(backend.attempts() == static_cast<std::uint64_t>(failures + 1));
        } else {
            CHECK_THROWS_AS(backend.chat_complete(simple_request()), TransportError);
            CHECK(backend.attempts() == 4);
        }
    }
}

TEST_CASE("auth and protocol failures are not retried") {
    TempDir dir;
    SECTION("401") {
        auto cfg = scripted_mock(dir, "m", {R"({"match": {"any": true}, "respond": {"error": "http_401"}})"});
        MockBackend backend(cfg);
        CHECK_THROWS_AS(backend.chat_complete(simple_request()), AuthError);
        CHECK(backend.attempts() == 1);
    }
    SECTION("400") {
        auto cfg = scripted_mock(dir, "m", {R"({"match": {"any": true}, "respond": {"error": "http_400"}})"});
        MockBackend backend(cfg);
        CHECK_THROWS_AS(backend.chat_complete(simple_request()), ProtocolError);
        CHECK(backend.attempts() == 1);
    }
}

TEST_CASE("identical requests yield identical mock responses") {
    TempDir dir;
    auto cfg = scripted_mock(dir, "m", {R"({"match": {"any": true}, "respond": {"text_template": "s{seed}:{user}"}})"});
    MockBackend backend(cfg);
    auto request = simple_request("payload");
    request.seed = 42;
    auto first = backend.chat_complete(request);
    auto second = backend.chat_complete(request);
    CHECK(first.text == "s42:payload");
    CHECK(first.text == second.text);
    CHECK(first.finish_reason == second.finish_reason);
}

TEST_CASE("rules are matched in file order with fingerprint support") {
    TempDir dir;
    auto probe = simple_request("specific");
    probe.seed = 7;
    BackendConfig pre;
    pre.id = "m";
    pre.kind = BackendKind::mock;
    pre.model_name = "m-model";
    auto fp = chat_fingerprint(pre, probe);
    auto cfg = scripted_mock(dir, "m",
                             {
                                 R"({"match": {"fingerprint": ")" + fp + R"("}, "respond": {"text": "exact"}})",
                                 R"({"match": {"user_contains": "spec"}, "respond": {"text": "substr"}})",
                                 R"({"match": {"any": true}, "respond": {"text": "fallback"}})",
                             });
    MockBackend backend(cfg);
    CHECK(backend.chat_complete(probe).text == "exact");
    CHECK(backend.chat_complete(simple_request("specifically other")).text == "substr");
    CHECK(backend.chat_complete(simple_request("nothing")).text == "fallback");
}

TEST_CASE("reward scoring follows the scripted score table") {
    TempDir dir;
    auto cfg = scripted_mock(dir, "rm",
                             {
                                 R"({"match": {"prompt_equals": "p", "candidate_equals": "c1"}, "respond": {"score": 0.2}})",
                                 R"({"match": {"prompt_equals": "p", "candidate_equals": "c2"}, "respond": {"score": 0.9}})",
                             });
    MockBackend backend(cfg);
    CHECK(backend.score_reward("p", "c1") == Approx(0.2));
    CHECK(backend.score_reward("p", "c2") == Approx(0.9));
}

TEST_CASE("non-finite or missing scores raise ProtocolError") {
    TempDir dir;
    SECTION("NaN") {
        auto cfg = scripted_mock(dir, "rm", {R"({"match": {"any": true}, "respond": {"score": "nan"}})"});
        MockBackend backend(cfg);
        CHECK_THROWS_AS(backend.score_reward("p", "c"), ProtocolError);
    }
    SECTION("infinity") {
        auto cfg = scripted_mock(dir, "rm", {R"({"match": {"any": true}, "respond": {"score": "inf"}})"});
        MockBackend backend(cfg);
        CHECK_THROWS_AS(backend.score_reward("p", "c"), ProtocolError);
    }
    SECTION("missing field") {
        auto cfg = scripted_mock(dir, "rm", {R"({"match": {"any": true}, "respond": {"text": "oops"}})"});
        MockBackend backend(cfg);
        CHECK_THROWS_AS(backend.score_reward("p", "c"), ProtocolError);
    }
}

TEST_CASE("config invariants are enforced") {
    BackendConfig c;
    c.id = "x";
    c.model_name = "m";
    SECTION("mock requires script path") {
        c.kind = BackendKind::mock;
        CHECK_THROWS_AS(c.validate(), ConfigError);
    }
    SECTION("non-mock must not set script path") {
        c.kind = BackendKind::chat;
        c.base_url = "http://h";
        c.mock_script_path = "s.jsonl";
        CHECK_THROWS_AS(c.validate(), ConfigError);
    }
    SECTION("max_in_flight must be positive") {
        c.kind = BackendKind::chat;
        c.base_url = "http://h";
        c.max_in_flight = 0;
        CHECK_THROWS_AS(c.validate(), ConfigError);
    }
}

TEST_CASE("chat request invariants are enforced") {
    ChatRequest r;
    SECTION("empty user") { CHECK_THROWS_AS(r.validate(), ConfigError); }
    SECTION("temperature above 2") {
        r.user = "x";
        r.temperature = 2.5;
        CHECK_THROWS_AS(r.validate(), ConfigError);
    }
    SECTION("top_p outside (0,1]") {
        r.user = "x";
        r.top_p = 0.0;
        CHECK_THROWS_AS(r.validate(), ConfigError);
    }
}

TEST_CASE("empty completion with finish_reason stop violates the response contract") {
    TempDir dir;
    auto cfg = scripted_mock(dir, "m", {R"({"match": {"any": true}, "respond": {"text": ""}})"});
    MockBackend backend(cfg);
    CHECK_THROWS_AS(backend.chat_complete(simple_request()), ProtocolError);
}

TEST_CASE("admission gate caps concurrency at max_in_flight") {
    AdmissionGate gate(3);
    std::vector<std::thread> threads;
    for (int i = 0; i < 12; ++i)
        threads.emplace_back([&] {
            AdmissionGate::Ticket ticket(gate);
            std::this_thread::sleep_for(std::chrono::milliseconds(5));
        });
    for (auto& t : threads) t.join();
    CHECK(gate.peak() <= 3);
    CHECK(gate.peak() >= 1);
}

TEST_CASE("parallel_for propagates the first worker exception") {
    CHECK_THROWS_AS(parallel_for(8, 4,
                                 [](std::size_t i) {
                                     if (i == 3) throw ProtocolError("boom");
                                 }),
                    ProtocolError);
}
