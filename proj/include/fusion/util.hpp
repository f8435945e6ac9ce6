#pragma once

#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace fusion {

inline std::string_view trim_view(std::string_view s) {
    const char* ws = " \t\r\n\f\v";
    auto b = s.find_first_not_of(ws);
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(ws);
    return s.substr(b, e - b + 1);
}

inline std::string trim(std::string_view s) { return std::string(trim_view(s)); }

inline bool starts_with(std::string_view s, std::string_view prefix) {
    return s.size() >= prefix.size() && s.compare(0, prefix.size(), prefix) == 0;
}

inline void replace_all(std::string& s, std::string_view from, std::string_view to) {
    if (from.empty()) return;
    std::size_t pos = 0;
    while ((pos = s.find(from, pos)) != std::string::npos) {
        s.replace(pos, from.size(), to);
        pos += to.size();
    }
}

inline std::vector<std::string_view> split_lines(std::string_view text) {
    std::vector<std::string_view> lines;
    std::size_t start = 0;
    while (start <= text.size()) {
        auto nl = text.find('\n', start);
        if (nl == std::string_view::npos) {
            lines.push_back(text.substr(start));
            break;
        }
        lines.push_back(text.substr(start, nl - start));
        start = nl + 1;
    }
    return lines;
}

/// Decoded text: Unicode scalar values plus the byte offset where each starts.
/// Invalid UTF-8 bytes are decoded one byte at a time as their Latin-1 value,
/// so every input has a well-defined, stable character count.
struct DecodedText {
    std::u32string chars;
    std::vector<std::size_t> byte_offsets; // offsets.size() == chars.size() + 1 (sentinel = total bytes)
};

inline DecodedText decode_utf8(std::string_view s) {
    DecodedText out;
    std::size_t i = 0;
    const auto n = s.size();
    auto byte = [&](std::size_t k) { return static_cast<unsigned char>(s[k]); };
    while (i < n) {
        out.byte_offsets.push_back(i);
        unsigned char c = byte(i);
        char32_t cp = 0;
        std::size_t len = 1;
        if (c < 0x80) {
            cp = c;
        } else if ((c >> 5) == 0x6 && i + 1 < n && (byte(i + 1) & 0xC0) == 0x80) {
            cp = ((c & 0x1F) << 6) | (byte(i + 1) & 0x3F);
            len = 2;
        } else if ((c >> 4) == 0xE && i + 2 < n && (byte(i + 1) & 0xC0) == 0x80 && (byte(i + 2) & 0xC0) == 0x80) {
            cp = ((c & 0x0F) << 12) | ((byte(i + 1) & 0x3F) << 6) | (byte(i + 2) & 0x3F);
            len = 3;
        } else if ((c >> 3) == 0x1E && i + 3 < n && (byte(i + 1) & 0xC0) == 0x80 && (byte(i + 2) & 0xC0) == 0x80 &&
                   (byte(i + 3) & 0xC0) == 0x80) {
            cp = ((c & 0x07) << 18) | ((byte(i + 1) & 0x3F) << 12) | ((byte(i + 2) & 0x3F) << 6) | (byte(i + 3) & 0x3F);
            len = 4;
        } else {
            cp = c; // invalid lead or truncated sequence
        }
        out.chars.push_back(cp);
        i += len;
    }
    out.byte_offsets.push_back(n);
    return out;
}

/// Number of Unicode scalar values in a UTF-8 string.
inline std::size_t utf8_length(std::string_view s) { return decode_utf8(s).chars.size(); }

/// Fisher-Yates shuffle driven by mt19937_64 with an explicit bounded draw,
/// so results are identical across standard libraries and platforms.
inline std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    for (std::size_t i = n; i > 1; --i) {
        auto j = static_cast<std::size_t>(rng() % i);
        std::swap(idx[i - 1], idx[j]);
    }
    return idx;
}

} // namespace fusion
