// Command-line front end: sample candidate pools, aggregate them by
// selection or synthesis, attribute fused outputs to their sources, judge
// system pairs, and produce SFT datasets. Every command is a pure function
// of (config file, input files, cache, env secrets); with mock backends the
// outputs are byte-reproducible.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fusion/fusion.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitDataFailure = 1;
constexpr int kExitUsage = 2;

struct CommonFlags {
    std::string config_path;
    std::string method;
    std::optional<int> n;
    std::optional<double> temperature;
    std::optional<std::int64_t> seed;
    std::optional<std::size_t> min_block;
    std::string cache_dir;
    std::string out;
    std::string corpus;
};

fusion::RunConfig load_config(const CommonFlags& flags) {
    if (flags.config_path.empty()) throw fusion::ConfigError("--config is required for this command");
    auto cfg = fusion::load_run_config(flags.config_path);
    if (!flags.method.empty()) cfg.method = fusion::method_from_string(flags.method);
    if (flags.n) cfg.sampling.n = *flags.n;
    if (flags.temperature) {
        cfg.sampling.temperature = *flags.temperature;
        cfg.multi_teacher_temperature = *flags.temperature;
    }
    if (flags.seed) {
        cfg.sampling.seed = *flags.seed;
        cfg.shuffle_seed = static_cast<std::uint64_t>(*flags.seed);
    }
    if (flags.min_block) cfg.min_block = *flags.min_block;
    if (!flags.cache_dir.empty()) cfg.paths.cache = flags.cache_dir;
    if (!flags.out.empty()) cfg.paths.out = flags.out;
    if (!flags.corpus.empty()) cfg.paths.corpus = flags.corpus;
    cfg.validate();
    return cfg;
}

std::unique_ptr<fusion::ResponseCache> open_cache(const fusion::RunConfig& cfg) {
    std::string root = cfg.paths.cache;
    if (root.empty()) {
        if (const char* env = std::getenv("FUSION_CACHE_DIR")) root = env;
    }
    if (root.empty()) return nullptr;
    return std::make_unique<fusion::ResponseCache>(root);
}

std::string sanitize_filename(const std::string& name) {
    std::string out;
    for (char c : name) out.push_back(std::isalnum(static_cast<unsigned char>(c)) ? c : '_');
    return out.empty() ? "item" : out;
}

struct CorpusRow {
    std::string prompt_id, language, prompt;
};

std::vector<CorpusRow> read_corpus(const std::string& path, std::size_t& bad_lines) {
    std::vector<CorpusRow> rows;
    fusion::for_each_jsonl_line(path, [&](std::size_t line_no, const std::string& line) {
        try {
            auto j = nlohmann::json::parse(line);
            CorpusRow row{j.at("prompt_id").get<std::string>(), j.at("language").get<std::string>(),
                          j.at("prompt").get<std::string>()};
            if (row.prompt.empty()) throw fusion::ConfigError("empty prompt");
            rows.push_back(std::move(row));
        } catch (const std::exception& e) {
            ++bad_lines;
            std::cerr << "warning: corpus line " << line_no << " skipped: " << e.what() << "\n";
        }
    });
    return rows;
}

int cmd_sample(const CommonFlags& flags) {
    auto cfg = load_config(flags);
    cfg.require_sampling_backends();
    if (cfg.paths.corpus.empty()) throw fusion::ConfigError("no corpus path (set paths.corpus or --corpus)");
    if (cfg.paths.out.empty()) throw fusion::ConfigError("no output path (set paths.out or --out)");

    std::size_t failures = 0;
    auto rows = read_corpus(cfg.paths.corpus, failures);
    auto cache = open_cache(cfg);
    fusion::Backends backends(cfg.backends);

    std::vector<std::optional<nlohmann::json>> slots(rows.size());
    fusion::parallel_for(rows.size(), static_cast<std::size_t>(cfg.max_concurrent_prompts), [&](std::size_t i) {
        try {
            auto pool = fusion::build_pool(cfg, backends, cache.get(), rows[i].prompt_id, rows[i].prompt,
                                           rows[i].language);
            slots[i] = fusion::to_json(pool);
        } catch (const fusion::PoolError& e) {
            std::cerr << "warning: " << e.what() << "\n";
        }
    });

    std::vector<nlohmann::json> pools;
    for (auto& s : slots) {
        if (s)
            pools.push_back(std::move(*s));
        else
            ++failures;
    }
    fusion::write_jsonl(cfg.paths.out, pools);
    std::cout << "wrote " << pools.size() << " pools to " << cfg.paths.out << " (" << failures << " failures)\n";
    return failures == 0 ? kExitOk : kExitDataFailure;
}

int cmd_aggregate(const CommonFlags& flags, const std::string& pools_path) {
    auto cfg = load_config(flags);
    cfg.require_method_backends(cfg.method);
    if (pools_path.empty()) throw fusion::ConfigError("--pools is required");
    if (cfg.paths.out.empty()) throw fusion::ConfigError("no output path (set paths.out or --out)");

    auto pool_lines = fusion::read_jsonl(pools_path);
    auto cache = open_cache(cfg);
    fusion::Backends backends(cfg.backends);
    auto opts = fusion::make_aggregate_options(cfg, backends, cache.get());

    std::size_t failures = 0;
    std::vector<std::optional<nlohmann::json>> slots(pool_lines.size());
    std::mutex log_mu;
    fusion::parallel_for(pool_lines.size(), static_cast<std::size_t>(cfg.max_concurrent_prompts),
                         [&](std::size_t i) {
                             auto pool = fusion::pool_from_json(pool_lines[i]);
                             try {
                                 slots[i] = fusion::to_json(fusion::aggregate(cfg.method, pool, opts));
                             } catch (const fusion::Error& e) {
                                 std::lock_guard lock(log_mu);
                                 std::cerr << "warning: aggregation failed for '" << pool.prompt_id
                                           << "': " << e.what() << "\n";
                             }
                         });

    std::vector<nlohmann::json> outcomes;
    for (auto& s : slots) {
        if (s)
            outcomes.push_back(std::move(*s));
        else
            ++failures;
    }
    fusion::write_jsonl(cfg.paths.out, outcomes);
    std::cout << "wrote " << outcomes.size() << " outcomes to " << cfg.paths.out << " (" << failures
              << " failures)\n";
    return failures == 0 ? kExitOk : kExitDataFailure;
}

int cmd_attribute(const CommonFlags& flags, const std::string& pools_path, const std::string& outcomes_path,
                  const std::string& html_dir, bool keep_labels) {
    if (pools_path.empty() || outcomes_path.empty())
        throw fusion::ConfigError("--pools and --outcomes are required");
    std::size_t min_block = flags.min_block.value_or(1);
    std::string out_path = flags.out;
    if (out_path.empty()) throw fusion::ConfigError("--out is required");

    std::map<std::string, fusion::CandidatePool> pools;
    for (const auto& j : fusion::read_jsonl(pools_path)) {
        auto pool = fusion::pool_from_json(j);
        if (!pools.emplace(pool.prompt_id, pool).second)
            throw fusion::MismatchError("duplicate prompt_id in pools: " + pool.prompt_id);
    }

    std::vector<nlohmann::json> reports;
    std::size_t skipped = 0;
    for (const auto& j : fusion::read_jsonl(outcomes_path)) {
        auto outcome = fusion::outcome_from_json(j);
        if (outcome.method != fusion::Method::fusion) {
            ++skipped;
            continue;
        }
        auto it = pools.find(outcome.prompt_id);
        if (it == pools.end())
            throw fusion::MismatchError("no pool for outcome prompt_id '" + outcome.prompt_id + "'");
        fusion::CandidatePool consumed = it->second;
        consumed.candidates = it->second.successful();
        auto report = fusion::attribute_outcome(outcome, consumed, min_block, /*keep_char_labels=*/true);

        // conservation is structural; a violation is a library bug
        if (report.attributed_total() != report.fused_length) {
            std::fprintf(stderr, "fatal: attribution conservation violated for '%s' (%zu != %zu)\n",
                         outcome.prompt_id.c_str(), report.attributed_total(), report.fused_length);
            std::abort();
        }

        if (!html_dir.empty()) {
            std::filesystem::create_directories(html_dir);
            auto html = fusion::attribution_html(outcome.output, report, outcome.prompt_id);
            std::ofstream out(std::filesystem::path(html_dir) / (sanitize_filename(outcome.prompt_id) + ".html"),
                              std::ios::binary | std::ios::trunc);
            out << html;
        }
        if (!keep_labels) report.char_labels.clear();
        reports.push_back(fusion::to_json(report));
    }
    fusion::write_jsonl(out_path, reports);
    std::cout << "wrote " << reports.size() << " reports to " << out_path;
    if (skipped) std::cout << " (skipped " << skipped << " non-fusion outcomes)";
    std::cout << "\n";
    return kExitOk;
}

struct ResponseLine {
    std::string prompt;
    std::string text;
};

std::map<std::string, ResponseLine> read_responses(const std::string& path) {
    std::map<std::string, ResponseLine> out;
    for (const auto& j : fusion::read_jsonl(path)) {
        std::string id = j.at("prompt_id").get<std::string>();
        ResponseLine line;
        line.prompt = j.value("prompt", std::string{});
        for (const char* key : {"text", "completion", "output"}) {
            if (j.contains(key)) {
                line.text = j[key].get<std::string>();
                break;
            }
        }
        if (line.text.empty()) throw fusion::MismatchError(path + ": no text/completion/output for '" + id + "'");
        if (!out.emplace(id, std::move(line)).second)
            throw fusion::MismatchError(path + ": duplicate prompt_id '" + id + "'");
    }
    return out;
}

int cmd_judge(const CommonFlags& flags, const std::string& a_path, const std::string& b_path) {
    auto cfg = load_config(flags);
    if (cfg.judge_id.empty()) throw fusion::ConfigError("judge command requires judge_id in the config");
    if (a_path.empty() || b_path.empty()) throw fusion::ConfigError("--a and --b are required");
    if (cfg.paths.out.empty()) throw fusion::ConfigError("no output path (set paths.out or --out)");

    auto a = read_responses(a_path);
    auto b = read_responses(b_path);
    if (a.size() != b.size())
        throw fusion::MismatchError("response files disagree: " + std::to_string(a.size()) + " vs " +
                                    std::to_string(b.size()) + " prompts");
    std::vector<std::string> ids;
    for (const auto& [id, line] : a) {
        if (!b.count(id)) throw fusion::MismatchError("prompt_id '" + id + "' present in --a but not --b");
        ids.push_back(id);
    }

    auto cache = open_cache(cfg);
    fusion::Backends backends(cfg.backends);
    auto& judge = backends.at(cfg.judge_id);

    std::vector<std::optional<std::pair<fusion::Verdict, fusion::Verdict>>> slots(ids.size());
    fusion::parallel_for(ids.size(), static_cast<std::size_t>(cfg.max_concurrent_prompts), [&](std::size_t i) {
        const auto& id = ids[i];
        const auto& ra = a.at(id);
        const auto& rb = b.at(id);
        std::string prompt = !ra.prompt.empty() ? ra.prompt : rb.prompt;
        if (prompt.empty()) throw fusion::MismatchError("no prompt text for '" + id + "' in either file");
        slots[i] = fusion::pairwise_judge(judge, id, prompt, ra.text, rb.text, cfg.judge_template, cfg.retries,
                                          cfg.judge_params, cache.get());
    });

    std::vector<nlohmann::json> verdicts;
    for (const auto& s : slots) {
        verdicts.push_back(fusion::to_json(s->first));
        verdicts.push_back(fusion::to_json(s->second));
    }
    fusion::write_jsonl(cfg.paths.out, verdicts);
    std::cout << "wrote " << verdicts.size() << " verdicts to " << cfg.paths.out << "\n";
    return kExitOk;
}

int cmd_winrate(const std::string& verdicts_path, const std::string& out_path) {
    if (verdicts_path.empty()) throw fusion::ConfigError("--verdicts is required");
    std::vector<fusion::Verdict> verdicts;
    for (const auto& j : fusion::read_jsonl(verdicts_path)) verdicts.push_back(fusion::verdict_from_json(j));
    if (verdicts.empty()) {
        std::cerr << "no verdicts in " << verdicts_path << "\n";
        return kExitDataFailure;
    }
    auto summary = fusion::compute_win_rate(verdicts);
    std::cout << fusion::win_rate_table(summary);
    if (!out_path.empty()) {
        std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
        if (!out) throw fusion::IoError("cannot write " + out_path);
        out << fusion::to_json(summary).dump(2) << '\n';
    }
    return kExitOk;
}

int cmd_datagen(const CommonFlags& flags) {
    auto cfg = load_config(flags);
    if (cfg.paths.corpus.empty()) throw fusion::ConfigError("no corpus path (set paths.corpus or --corpus)");
    if (cfg.paths.out.empty()) throw fusion::ConfigError("no output directory (set paths.out or --out)");

    auto cache = open_cache(cfg);
    fusion::Backends backends(cfg.backends);
    auto manifest = fusion::generate_sft_dataset(cfg.paths.corpus, cfg.method, cfg, backends, cache.get(),
                                                 cfg.paths.out,
                                                 [](const std::string& msg) { std::cerr << "warning: " << msg << "\n"; });
    std::cout << "wrote " << manifest.records << " records to " << cfg.paths.out << " (" << manifest.failures
              << " failures, " << manifest.model_attempts << " model calls)\n";
    return kExitOk;
}

int cmd_positions(const std::string& outcomes_path, const std::string& reports_path, const std::string& out_path) {
    if (outcomes_path.empty() || reports_path.empty())
        throw fusion::ConfigError("--outcomes and --reports are required");

    std::vector<fusion::AggregationOutcome> outcomes;
    std::vector<fusion::AttributionReport> reports;
    auto outcome_lines = fusion::read_jsonl(outcomes_path);
    auto report_lines = fusion::read_jsonl(reports_path);
    if (outcome_lines.size() != report_lines.size())
        throw fusion::MismatchError("outcomes and reports differ in length: " +
                                    std::to_string(outcome_lines.size()) + " vs " +
                                    std::to_string(report_lines.size()));
    for (std::size_t i = 0; i < outcome_lines.size(); ++i) {
        auto outcome = fusion::outcome_from_json(outcome_lines[i]);
        if (outcome.method != fusion::Method::fusion) continue; // fusion-only analysis
        auto report = fusion::report_from_json(report_lines[i]);
        if (report.prompt_id != outcome.prompt_id)
            throw fusion::MismatchError("line " + std::to_string(i + 1) + ": outcome '" + outcome.prompt_id +
                                        "' does not match report '" + report.prompt_id + "'");
        outcomes.push_back(std::move(outcome));
        reports.push_back(std::move(report));
    }
    if (outcomes.empty()) {
        std::cerr << "no fusion outcomes to analyze\n";
        return kExitDataFailure;
    }

    auto shares = fusion::position_bias_summary(outcomes, reports);
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [pos, share] : shares) {
        j[std::to_string(pos)] = share;
        std::printf("position %zu: %.4f\n", pos, share);
    }
    if (!out_path.empty()) {
        std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
        if (!out) throw fusion::IoError("cannot write " + out_path);
        out << j.dump(2) << '\n';
    }
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Best-of-N / fusion aggregation toolkit"};
    app.require_subcommand(1);

    CommonFlags flags;
    std::string pools_path, outcomes_path, reports_path, verdicts_path, a_path, b_path, html_dir, summary_out;
    bool keep_labels = false;

    auto add_common = [&](CLI::App* cmd, bool with_method = true) {
        cmd->add_option("--config", flags.config_path, "run configuration JSON file");
        if (with_method) cmd->add_option("--method", flags.method, "bon-rm | bon-gen | fusion");
        cmd->add_option("--n", flags.n, "samples per prompt (single-model sampling)");
        cmd->add_option("--temperature", flags.temperature, "sampling temperature override");
        cmd->add_option("--seed", flags.seed, "base sampling seed / shuffle seed override");
        cmd->add_option("--min-block", flags.min_block, "minimum attribution block length");
        cmd->add_option("--cache-dir", flags.cache_dir, "response cache directory");
        cmd->add_option("--out", flags.out, "output path");
        cmd->add_option("--corpus", flags.corpus, "prompt corpus JSONL");
    };

    auto* sample = app.add_subcommand("sample", "build candidate pools for a prompt corpus");
    add_common(sample, false);

    auto* aggregate = app.add_subcommand("aggregate", "aggregate pools into outcomes");
    add_common(aggregate);
    aggregate->add_option("--pools", pools_path, "pools JSONL from the sample command");

    auto* attribute = app.add_subcommand("attribute", "attribute fused outputs to pool candidates");
    add_common(attribute, false);
    attribute->add_option("--pools", pools_path, "pools JSONL");
    attribute->add_option("--outcomes", outcomes_path, "outcomes JSONL");
    attribute->add_option("--html", html_dir, "directory for per-sample colored HTML");
    attribute->add_flag("--char-labels", keep_labels, "keep per-character labels in the reports");

    auto* judge = app.add_subcommand("judge", "pairwise-judge two response files");
    add_common(judge, false);
    judge->add_option("--a", a_path, "first system responses JSONL");
    judge->add_option("--b", b_path, "second system responses JSONL");

    auto* winrate = app.add_subcommand("winrate", "win rate with standard error over verdicts");
    winrate->add_option("--verdicts", verdicts_path, "verdicts JSONL from the judge command");
    winrate->add_option("--out", summary_out, "summary JSON output path");

    auto* datagen = app.add_subcommand("datagen", "produce an SFT dataset from a corpus");
    add_common(datagen);

    auto* positions = app.add_subcommand("positions", "mean contribution share per presentation position");
    positions->add_option("--outcomes", outcomes_path, "fusion outcomes JSONL");
    positions->add_option("--reports", reports_path, "attribution reports JSONL");
    positions->add_option("--out", summary_out, "summary JSON output path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (sample->parsed()) return cmd_sample(flags);
        if (aggregate->parsed()) return cmd_aggregate(flags, pools_path);
        if (attribute->parsed()) return cmd_attribute(flags, pools_path, outcomes_path, html_dir, keep_labels);
        if (judge->parsed()) return cmd_judge(flags, a_path, b_path);
        if (winrate->parsed()) return cmd_winrate(verdicts_path, summary_out);
        if (datagen->parsed()) return cmd_datagen(flags);
        if (positions->parsed()) return cmd_positions(outcomes_path, reports_path, summary_out);
    } catch (const fusion::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const fusion::MismatchError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const fusion::IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const fusion::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitDataFailure;
    }
    return kExitUsage;
}
