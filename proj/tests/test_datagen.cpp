#include <catch2/catch.hpp>

#include "fusion/datagen.hpp"
#include "test_util.hpp"

using namespace fusion;
using testutil::read_file;
using testutil::scripted_mock;
using testutil::TempDir;
using testutil::write_file;

namespace {

/// Two mock teachers, a scripted fusor and a scripted reward model over a
/// three-prompt corpus, everything rooted in dir.
RunConfig e2e_config(const TempDir& dir) {
    RunConfig cfg;
    cfg.backends.push_back(scripted_mock(dir, "t0", {R"({"match": {"any": true}, "respond": {"text_template": "t0 answer to: {user}"}})"}));
    cfg.backends.push_back(scripted_mock(dir, "t1", {R"({"match": {"any": true}, "respond": {"text_template": "t1 answer to: {user}"}})"}));
    cfg.backends.push_back(scripted_mock(
        dir, "fusor", {R"({"match": {"any": true}, "respond": {"text": "Comparison: blended\nAnswer: [[ the fused completion ]]"}})"}));
    cfg.backends.push_back(scripted_mock(dir, "rm",
                                         {
                                             R"({"match": {"candidate_contains": "t0"}, "respond": {"score": 0.9}})",
                                             R"({"match": {"any": true}, "respond": {"score": 0.2}})",
                                         }));
    cfg.teacher_ids = {"t0", "t1"};
    cfg.fusor_id = "fusor";
    cfg.reward_id = "rm";
    cfg.sampling_mode = SamplingMode::multi_teacher;
    cfg.multi_teacher_temperature = 0.3;
    cfg.shuffle_seed = 11;

    std::string corpus;
    for (int i = 1; i <= 3; ++i)
        corpus += nlohmann::json{{"prompt_id", "p" + std::to_string(i)},
                                 {"language", "en"},
                                 {"prompt", "question number " + std::to_string(i)}}
                      .dump() +
                  "\n";
    write_file(dir / "corpus.jsonl", corpus);
    cfg.paths.corpus = (dir / "corpus.jsonl").string();
    cfg.paths.cache = (dir / "cache").string();
    return cfg;
}

} // namespace

TEST_CASE("fusion datagen emits one record per prompt with provenance") {
    TempDir dir;
    auto cfg = e2e_config(dir);
    Backends backends(cfg.backends);
    ResponseCache cache(cfg.paths.cache);

    auto manifest = generate_sft_dataset(cfg.paths.corpus, Method::fusion, cfg, backends, &cache, dir / "out_f");
    CHECK(manifest.corpus_lines == 3);
    CHECK(manifest.records == 3);
    CHECK(manifest.failures == 0);
    CHECK(manifest.http_requests == 0);
    CHECK(manifest.method == "fusion");
    CHECK_FALSE(manifest.config_hash.empty());

    auto records = read_jsonl(dir / "out_f" / "records.jsonl");
    REQUIRE(records.size() == 3);
    for (int i = 0; i < 3; ++i) {
        const auto& r = records[i];
        CHECK(r.at("prompt_id") == "p" + std::to_string(i + 1)); // corpus order
        CHECK(r.at("completion") == "the fused completion");
        CHECK(r.at("method") == "fusion");
        const auto& prov = r.at("provenance");
        CHECK(prov.at("teacher_ids") == nlohmann::json({"t0", "t1"}));
        CHECK(prov.at("permutation").size() == 2);
        CHECK(prov.at("fusor_id") == "fusor");
    }

    auto pools = read_jsonl(dir / "out_f" / "pools.jsonl");
    REQUIRE(pools.size() == 3);
    CHECK(pools[0].at("candidates").size() == 2);
}

TEST_CASE("methods consume byte-identical pools through the shared cache") {
    TempDir dir;
    auto cfg = e2e_config(dir);
    Backends backends(cfg.backends);
    ResponseCache cache(cfg.paths.cache);

    generate_sft_dataset(cfg.paths.corpus, Method::fusion, cfg, backends, &cache, dir / "out_fusion");
    auto teacher_attempts = backends.at("t0").attempts() + backends.at("t1").attempts();

    auto manifest = generate_sft_dataset(cfg.paths.corpus, Method::bon_rm, cfg, backends, &cache, dir / "out_bon");
    CHECK(manifest.records == 3);

    // pools are served from the cache: not a single extra teacher call
    CHECK(backends.at("t0").attempts() + backends.at("t1").attempts() == teacher_attempts);
    CHECK(read_file(dir / "out_fusion" / "pools.jsonl") == read_file(dir / "out_bon" / "pools.jsonl"));

    auto records = read_jsonl(dir / "out_bon" / "records.jsonl");
    REQUIRE(records.size() == 3);
    for (const auto& r : records) {
        CHECK(r.at("method") == "bon_rm");
        const auto& prov = r.at("provenance");
        CHECK(prov.at("selected_index") == 0); // candidate from t0 scores 0.9
        CHECK(prov.at("scores") == nlohmann::json({0.9, 0.2}));
        CHECK(prov.at("scorer_id") == "rm");
        CHECK(r.at("completion").get<std::string>().find("t0 answer") == 0);
    }
}

TEST_CASE("a warm cache makes reruns free and byte-stable") {
    TempDir dir;
    auto cfg = e2e_config(dir);
    Backends backends(cfg.backends);
    ResponseCache cache(cfg.paths.cache);

    auto first = generate_sft_dataset(cfg.paths.corpus, Method::fusion, cfg, backends, &cache, dir / "run1");
    CHECK(first.model_attempts > 0);

    auto second = generate_sft_dataset(cfg.paths.corpus, Method::fusion, cfg, backends, &cache, dir / "run2");
    CHECK(second.model_attempts == 0);
    CHECK(second.cache_computes == 0);
    CHECK(read_file(dir / "run1" / "records.jsonl") == read_file(dir / "run2" / "records.jsonl"));
    CHECK(read_file(dir / "run1" / "pools.jsonl") == read_file(dir / "run2" / "pools.jsonl"));
}

TEST_CASE("corpus lines without the required fields are counted as failures") {
    TempDir dir;
    auto cfg = e2e_config(dir);
    std::string corpus = nlohmann::json{{"prompt_id", "ok1"}, {"language", "en"}, {"prompt", "fine"}}.dump() + "\n";
    corpus += R"({"prompt_id": "broken", "language": "en"})"
              "\n"; // no prompt field
    corpus += "this is not json\n";
    corpus += nlohmann::json{{"prompt_id", "ok2"}, {"language", "en"}, {"prompt", "also fine"}}.dump() + "\n";
    write_file(dir / "corpus.jsonl", corpus);
    cfg.paths.corpus = (dir / "corpus.jsonl").string();

    Backends backends(cfg.backends);
    ResponseCache cache(cfg.paths.cache);
    std::vector<std::string> logged;
    auto manifest = generate_sft_dataset(cfg.paths.corpus, Method::fusion, cfg, backends, &cache, dir / "out",
                                         [&](const std::string& msg) { logged.push_back(msg); });

    CHECK(manifest.corpus_lines == 4);
    CHECK(manifest.records == 2);
    CHECK(manifest.failures == 2);
    CHECK(manifest.records + manifest.failures == manifest.corpus_lines);
    CHECK(logged.size() == 2);

    auto records = read_jsonl(dir / "out" / "records.jsonl");
    REQUIRE(records.size() == 2);
    CHECK(records[0].at("prompt_id") == "ok1");
    CHECK(records[1].at("prompt_id") == "ok2");
}

TEST_CASE("aggregation failures skip the prompt but keep its pool") {
    TempDir dir;
    auto cfg = e2e_config(dir);
    // fusor never produces a bracketed answer => every fusion fails
    cfg.backends[2] = scripted_mock(dir, "fusor", {R"({"match": {"any": true}, "respond": {"text": "no brackets"}})"});
    Backends backends(cfg.backends);
    ResponseCache cache(cfg.paths.cache);

    auto manifest = generate_sft_dataset(cfg.paths.corpus, Method::fusion, cfg, backends, &cache, dir / "out");
    CHECK(manifest.records == 0);
    CHECK(manifest.failures == 3);
    CHECK(read_jsonl(dir / "out" / "pools.jsonl").size() == 3);
}

TEST_CASE("single-model datagen runs through the same pipeline") {
    TempDir dir;
    auto cfg = e2e_config(dir);
    cfg.sampling_mode = SamplingMode::single_model;
    cfg.model_id = "t0";
    cfg.sampling.n = 4;
    cfg.sampling.seed = 100;
    cfg.backends[0] = scripted_mock(dir, "t0", {R"({"match": {"any": true}, "respond": {"text_template": "sample {seed}"}})"});

    Backends backends(cfg.backends);
    ResponseCache cache(cfg.paths.cache);
    auto manifest = generate_sft_dataset(cfg.paths.corpus, Method::bon_rm, cfg, backends, &cache, dir / "out");
    CHECK(manifest.records == 3);

    auto pools = read_jsonl(dir / "out" / "pools.jsonl");
    REQUIRE(pools[0].at("candidates").size() == 4);
    CHECK(pools[0]["candidates"][0]["text"] == "sample 100");
    CHECK(pools[0]["candidates"][3]["text"] == "sample 103");
}

TEST_CASE("datagen without required backends is a config error") {
    TempDir dir;
    auto cfg = e2e_config(dir);
    cfg.fusor_id.clear();
    Backends backends(cfg.backends);
    CHECK_THROWS_AS(generate_sft_dataset(cfg.paths.corpus, Method::fusion, cfg, backends, nullptr, dir / "out"),
                    ConfigError);
}
