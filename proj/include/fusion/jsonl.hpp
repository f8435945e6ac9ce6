#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fusion/errors.hpp"
#include "fusion/util.hpp"

namespace fusion {

/// Reads a JSONL file strictly; any unparsable non-blank line is an error.
inline std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<nlohmann::json> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim_view(line).empty()) continue;
        try {
            out.push_back(nlohmann::json::parse(line));
        } catch (const nlohmann::json::exception& e) {
            throw IoError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

/// Visits raw lines so callers can decide per-line how to handle bad input.
inline void for_each_jsonl_line(const std::filesystem::path& path,
                                const std::function<void(std::size_t, const std::string&)>& fn) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim_view(line).empty()) continue;
        fn(line_no, line);
    }
}

inline void write_jsonl(const std::filesystem::path& path, const std::vector<nlohmann::json>& records) {
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    for (const auto& r : records) out << r.dump() << '\n';
    if (!out.flush()) throw IoError("short write to " + path.string());
}

} // namespace fusion
