#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fusion/aggregation.hpp"
#include "fusion/errors.hpp"
#include "fusion/sampling.hpp"
#include "fusion/util.hpp"

namespace fusion {

/// A maximal run of characters shared verbatim between the fused text and
/// one teacher text. Offsets and lengths count Unicode scalar values.
struct MatchBlock {
    std::size_t fused_start = 0;
    std::size_t teacher_start = 0;
    std::size_t length = 0;

    friend bool operator==(const MatchBlock&, const MatchBlock&) = default;
};

inline constexpr std::string_view kMultipleLabel = "multiple";
inline constexpr std::string_view kUnmatchedLabel = "unmatched";

namespace detail {

struct Range {
    std::size_t alo, ahi, blo, bhi;
};

/// Longest common contiguous run within a window of both strings.
/// Ties resolve to the smallest fused start, then the smallest teacher
/// start; no junk or frequency heuristics, so results depend only on the
/// two strings.
inline MatchBlock find_longest_match(const std::u32string& a,
                                     const std::unordered_map<char32_t, std::vector<std::size_t>>& b_positions,
                                     const Range& r) {
    std::size_t besti = r.alo, bestj = r.blo, bestk = 0;
    std::unordered_map<std::size_t, std::size_t> j2len;
    std::unordered_map<std::size_t, std::size_t> next;
    for (std::size_t i = r.alo; i < r.ahi; ++i) {
        next.clear();
        auto it = b_positions.find(a[i]);
        if (it != b_positions.end()) {
            for (std::size_t j : it->second) {
                if (j < r.blo) continue;
                if (j >= r.bhi) break;
                std::size_t k = 1;
                if (j > r.blo) {
                    auto prev = j2len.find(j - 1);
                    if (prev != j2len.end()) k = prev->second + 1;
                }
                next[j] = k;
                if (k > bestk) {
                    besti = i - k + 1;
                    bestj = j - k + 1;
                    bestk = k;
                }
            }
        }
        std::swap(j2len, next);
    }
    return {besti, bestj, bestk};
}

} // namespace detail

/// Decomposes the (fused, teacher) pair into matching blocks: the longest
/// common run is taken, then the prefixes and suffixes are decomposed
/// recursively. Runs shorter than min_block terminate the recursion.
/// Returned blocks are non-overlapping in the fused string and sorted by
/// fused_start.
inline std::vector<MatchBlock> matching_blocks(const std::u32string& fused, const std::u32string& teacher,
                                               std::size_t min_block = 1) {
    if (min_block < 1) throw ConfigError("matching_blocks: min_block must be >= 1");
    std::vector<MatchBlock> blocks;
    if (fused.empty() || teacher.empty()) return blocks;

    std::unordered_map<char32_t, std::vector<std::size_t>> teacher_positions;
    for (std::size_t j = 0; j < teacher.size(); ++j) teacher_positions[teacher[j]].push_back(j);

    std::vector<detail::Range> pending{{0, fused.size(), 0, teacher.size()}};
    while (!pending.empty()) {
        auto range = pending.back();
        pending.pop_back();
        if (range.alo >= range.ahi || range.blo >= range.bhi) continue;
        auto block = detail::find_longest_match(fused, teacher_positions, range);
        if (block.length < min_block) continue;
        blocks.push_back(block);
        pending.push_back({range.alo, block.fused_start, range.blo, block.teacher_start});
        pending.push_back({block.fused_start + block.length, range.ahi, block.teacher_start + block.length,
                           range.bhi});
    }
    std::sort(blocks.begin(), blocks.end(),
              [](const MatchBlock& x, const MatchBlock& y) { return x.fused_start < y.fused_start; });
    return blocks;
}

inline std::vector<MatchBlock> matching_blocks(std::string_view fused, std::string_view teacher,
                                               std::size_t min_block = 1) {
    return matching_blocks(decode_utf8(fused).chars, decode_utf8(teacher).chars, min_block);
}

/// Character-level ownership of a fused text: every character goes to the
/// unique teacher with the longest covering block, to "multiple" on a
/// cross-teacher length tie, or to "unmatched" when no block covers it.
struct AttributionReport {
    std::string prompt_id;
    std::size_t fused_length = 0;
    std::map<std::string, std::size_t> per_teacher_chars;
    std::size_t multiple_chars = 0;
    std::size_t unmatched_chars = 0;
    std::vector<std::string> char_labels;            // one per fused character, when requested
    std::vector<std::string> pool_keys;              // key of each pool candidate (set by attribute_outcome)
    std::map<std::size_t, double> position_shares;   // 1-based presentation position -> share (fusion outcomes)

    std::size_t attributed_total() const {
        std::size_t sum = multiple_chars + unmatched_chars;
        for (const auto& [key, count] : per_teacher_chars) sum += count;
        return sum;
    }
};

inline nlohmann::json to_json(const AttributionReport& r) {
    nlohmann::json per_teacher = nlohmann::json::object();
    for (const auto& [key, count] : r.per_teacher_chars) per_teacher[key] = count;
    nlohmann::json j{{"prompt_id", r.prompt_id},
                     {"fused_length", r.fused_length},
                     {"per_teacher_chars", per_teacher},
                     {"multiple_chars", r.multiple_chars},
                     {"unmatched_chars", r.unmatched_chars}};
    if (!r.pool_keys.empty()) j["pool_keys"] = r.pool_keys;
    if (!r.position_shares.empty()) {
        nlohmann::json shares = nlohmann::json::object();
        for (const auto& [pos, share] : r.position_shares) shares[std::to_string(pos)] = share;
        j["position_shares"] = shares;
    }
    if (!r.char_labels.empty()) j["char_labels"] = r.char_labels;
    return j;
}

inline AttributionReport report_from_json(const nlohmann::json& j) {
    AttributionReport r;
    r.prompt_id = j.value("prompt_id", std::string{});
    r.fused_length = j.at("fused_length").get<std::size_t>();
    for (const auto& [key, count] : j.at("per_teacher_chars").items())
        r.per_teacher_chars[key] = count.get<std::size_t>();
    r.multiple_chars = j.at("multiple_chars").get<std::size_t>();
    r.unmatched_chars = j.at("unmatched_chars").get<std::size_t>();
    if (j.contains("pool_keys")) r.pool_keys = j["pool_keys"].get<std::vector<std::string>>();
    if (j.contains("position_shares"))
        for (const auto& [pos, share] : j["position_shares"].items())
            r.position_shares[std::stoul(pos)] = share.get<double>();
    if (j.contains("char_labels")) r.char_labels = j["char_labels"].get<std::vector<std::string>>();
    return r;
}

/// Attributes each fused character across teacher texts. Teachers are
/// (key, text) pairs with distinct keys; keys must not collide with the
/// reserved "multiple"/"unmatched" labels.
inline AttributionReport attribute(std::string_view fused,
                                   const std::vector<std::pair<std::string, std::string>>& teachers,
                                   std::size_t min_block = 1, bool keep_char_labels = true) {
    for (std::size_t i = 0; i < teachers.size(); ++i) {
        if (teachers[i].first == kMultipleLabel || teachers[i].first == kUnmatchedLabel)
            throw ConfigError("attribute: teacher key collides with reserved label: " + teachers[i].first);
        for (std::size_t j = i + 1; j < teachers.size(); ++j)
            if (teachers[i].first == teachers[j].first)
                throw ConfigError("attribute: duplicate teacher key: " + teachers[i].first);
    }

    auto decoded = decode_utf8(fused);
    const std::size_t n = decoded.chars.size();

    constexpr std::size_t kNone = static_cast<std::size_t>(-1);
    constexpr std::size_t kTie = static_cast<std::size_t>(-2);
    std::vector<std::size_t> best_len(n, 0);
    std::vector<std::size_t> owner(n, kNone);

    for (std::size_t t = 0; t < teachers.size(); ++t) {
        auto teacher_chars = decode_utf8(teachers[t].second).chars;
        for (const auto& block : matching_blocks(decoded.chars, teacher_chars, min_block)) {
            for (std::size_t pos = block.fused_start; pos < block.fused_start + block.length; ++pos) {
                if (block.length > best_len[pos]) {
                    best_len[pos] = block.length;
                    owner[pos] = t;
                } else if (block.length == best_len[pos] && owner[pos] != t) {
                    owner[pos] = kTie;
                }
            }
        }
    }

    AttributionReport report;
    report.fused_length = n;
    for (const auto& [key, text] : teachers) report.per_teacher_chars[key] = 0;
    if (keep_char_labels) report.char_labels.reserve(n);
    for (std::size_t pos = 0; pos < n; ++pos) {
        std::string label;
        if (best_len[pos] == 0) {
            ++report.unmatched_chars;
            label = kUnmatchedLabel;
        } else if (owner[pos] == kTie) {
            ++report.multiple_chars;
            label = kMultipleLabel;
        } else {
            ++report.per_teacher_chars[teachers[owner[pos]].first];
            label = teachers[owner[pos]].first;
        }
        if (keep_char_labels) report.char_labels.push_back(std::move(label));
    }
    return report;
}

inline AttributionReport attribute(std::string_view fused, const std::map<std::string, std::string>& teachers,
                                   std::size_t min_block = 1, bool keep_char_labels = true) {
    std::vector<std::pair<std::string, std::string>> ordered(teachers.begin(), teachers.end());
    return attribute(fused, ordered, min_block, keep_char_labels);
}

/// Key that identifies one pool candidate in attribution reports: the
/// teacher id when unique within the pool, otherwise teacher_id#sample_index.
inline std::vector<std::string> pool_candidate_keys(const CandidatePool& pool) {
    std::map<std::string, int> teacher_counts;
    for (const auto& c : pool.candidates) ++teacher_counts[c.teacher_id];
    std::vector<std::string> keys;
    keys.reserve(pool.candidates.size());
    for (const auto& c : pool.candidates) {
        if (teacher_counts[c.teacher_id] > 1)
            keys.push_back(c.teacher_id + "#" + std::to_string(c.sample_index));
        else
            keys.push_back(c.teacher_id);
    }
    return keys;
}

/// Attribution of a fusion outcome against the pool it was fused from.
/// The pool must be the aggregation view (failures already filtered) so
/// permutation indices line up. Fills pool_keys and, when the outcome has a
/// permutation, the per-position contribution shares.
inline AttributionReport attribute_outcome(const AggregationOutcome& outcome, const CandidatePool& pool,
                                           std::size_t min_block = 1, bool keep_char_labels = true) {
    auto keys = pool_candidate_keys(pool);
    std::vector<std::pair<std::string, std::string>> teachers;
    teachers.reserve(pool.candidates.size());
    for (std::size_t i = 0; i < pool.candidates.size(); ++i) teachers.emplace_back(keys[i], pool.candidates[i].text);

    auto report = attribute(outcome.output, teachers, min_block, keep_char_labels);
    report.prompt_id = outcome.prompt_id;
    report.pool_keys = keys;

    if (outcome.permutation) {
        const auto& perm = *outcome.permutation;
        if (perm.size() != pool.candidates.size())
            throw MismatchError("attribute_outcome: permutation size " + std::to_string(perm.size()) +
                                " does not match pool size " + std::to_string(pool.candidates.size()) +
                                " for '" + outcome.prompt_id + "'");
        for (std::size_t k = 0; k < perm.size(); ++k) {
            double share = 0.0;
            if (report.fused_length > 0)
                share = static_cast<double>(report.per_teacher_chars.at(keys.at(perm[k]))) /
                        static_cast<double>(report.fused_length);
            report.position_shares[k + 1] = share;
        }
    }
    return report;
}

/// Splits on whitespace and gives each word the label covering the majority
/// of its characters; ties take the label of the word's first character.
inline std::vector<std::pair<std::string, std::string>> word_rollup(std::string_view fused,
                                                                    const std::vector<std::string>& char_labels) {
    auto decoded = decode_utf8(fused);
    if (char_labels.size() != decoded.chars.size())
        throw MismatchError("word_rollup: " + std::to_string(char_labels.size()) + " labels for " +
                            std::to_string(decoded.chars.size()) + " characters");

    auto is_space = [](char32_t c) {
        return c == U' ' || c == U'\t' || c == U'\n' || c == U'\r' || c == U'\f' || c == U'\v';
    };

    std::vector<std::pair<std::string, std::string>> words;
    std::size_t i = 0;
    const std::size_t n = decoded.chars.size();
    while (i < n) {
        if (is_space(decoded.chars[i])) {
            ++i;
            continue;
        }
        std::size_t start = i;
        std::map<std::string, std::size_t> counts;
        while (i < n && !is_space(decoded.chars[i])) {
            ++counts[char_labels[i]];
            ++i;
        }
        std::size_t max_count = 0;
        for (const auto& [label, count] : counts) max_count = std::max(max_count, count);
        std::vector<std::string> leaders;
        for (const auto& [label, count] : counts)
            if (count == max_count) leaders.push_back(label);
        std::string label = leaders.size() == 1 ? leaders.front() : char_labels[start];
        std::string word(fused.substr(decoded.byte_offsets[start], decoded.byte_offsets[i] - decoded.byte_offsets[start]));
        words.emplace_back(std::move(word), std::move(label));
    }
    return words;
}

/// Mean contribution share per presentation position over a set of fusion
/// outcomes. Shares are chars attributed to the candidate shown at that
/// position divided by fused length; "multiple" and "unmatched" counts never
/// enter the numerator.
inline std::map<std::size_t, double> position_bias_summary(const std::vector<AggregationOutcome>& outcomes,
                                                           const std::vector<AttributionReport>& reports) {
    if (outcomes.empty()) throw MismatchError("position_bias_summary: no outcomes");
    if (outcomes.size() != reports.size())
        throw MismatchError("position_bias_summary: " + std::to_string(outcomes.size()) + " outcomes vs " +
                            std::to_string(reports.size()) + " reports");

    std::map<std::size_t, double> sums;
    std::map<std::size_t, std::size_t> counts;
    for (std::size_t s = 0; s < outcomes.size(); ++s) {
        const auto& outcome = outcomes[s];
        const auto& report = reports[s];
        if (outcome.method != Method::fusion || !outcome.permutation)
            throw MismatchError("position_bias_summary: outcome '" + outcome.prompt_id +
                                "' is not a fusion outcome with a permutation");
        const auto& perm = *outcome.permutation;
        for (std::size_t k = 0; k < perm.size(); ++k) {
            std::string key =
                report.pool_keys.empty() ? std::to_string(perm[k]) : report.pool_keys.at(perm[k]);
            auto it = report.per_teacher_chars.find(key);
            if (it == report.per_teacher_chars.end())
                throw MismatchError("position_bias_summary: report for '" + outcome.prompt_id +
                                    "' has no counts for candidate key '" + key + "'");
            double share = report.fused_length > 0
                               ? static_cast<double>(it->second) / static_cast<double>(report.fused_length)
                               : 0.0;
            sums[k + 1] += share;
            counts[k + 1] += 1;
        }
    }
    std::map<std::size_t, double> means;
    for (const auto& [pos, total] : sums) means[pos] = total / static_cast<double>(counts[pos]);
    return means;
}

/// Word-level HTML rendering of an attribution, one color per teacher.
/// Colors are assigned by sorted teacher key, so a fixed teacher set always
/// renders identically.
inline std::string attribution_html(std::string_view fused, const AttributionReport& report,
                                    const std::string& title = {}) {
    static const std::vector<std::string> palette = {"#2d4cb9", "#ca492d", "#2b7a39", "#9b60aa", "#b8860b",
                                                     "#0f7f7f", "#b03060", "#556b2f", "#4682b4", "#8b4513"};
    std::map<std::string, std::string> colors;
    std::size_t next_color = 0;
    for (const auto& [key, count] : report.per_teacher_chars)
        colors[key] = palette[next_color++ % palette.size()];
    colors[std::string(kMultipleLabel)] = "#8a8a8a";
    colors[std::string(kUnmatchedLabel)] = "#c4c4c4";

    auto escape = [](std::string_view s) {
        std::string out;
        out.reserve(s.size());
        for (char c : s) {
            switch (c) {
                case '&': out += "&amp;"; break;
                case '<': out += "&lt;"; break;
                case '>': out += "&gt;"; break;
                default: out.push_back(c);
            }
        }
        return out;
    };

    std::string html = "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>" + escape(title) +
                       "</title></head>\n<body>\n";
    if (!title.empty()) html += "<h3>" + escape(title) + "</h3>\n";
    html += "<p>";
    for (const auto& [key, color] : colors)
        html += "<span style=\"color:" + color + "\">&#9632; " + escape(key) + "</span>&nbsp;&nbsp;";
    html += "</p>\n<div style=\"white-space:pre-wrap;font-family:sans-serif\">";

    auto decoded = decode_utf8(fused);
    auto words = word_rollup(fused, report.char_labels);
    // walk the original text, wrapping each word in its color span
    std::size_t char_pos = 0;
    std::size_t word_idx = 0;
    auto is_space = [](char32_t c) {
        return c == U' ' || c == U'\t' || c == U'\n' || c == U'\r' || c == U'\f' || c == U'\v';
    };
    while (char_pos < decoded.chars.size()) {
        std::size_t start = char_pos;
        bool space_run = is_space(decoded.chars[char_pos]);
        while (char_pos < decoded.chars.size() && is_space(decoded.chars[char_pos]) == space_run) ++char_pos;
        std::string_view slice =
            fused.substr(decoded.byte_offsets[start], decoded.byte_offsets[char_pos] - decoded.byte_offsets[start]);
        if (space_run) {
            html += escape(slice);
        } else {
            const auto& label = words[word_idx++].second;
            html += "<span style=\"color:" + colors.at(label) + "\">" + escape(slice) + "</span>";
        }
    }
    html += "</div>\n</body></html>\n";
    return html;
}

} // namespace fusion
