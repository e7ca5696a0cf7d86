#pragma once

// Line-oriented "key = value" reader shared by the config and experiment parsers.

#include <charconv>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "mata/errors.hpp"

namespace mata::detail {

struct KvEntry {
    std::string key;
    std::string value;
    std::size_t line = 0;
};

inline std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

/// '#' starts a comment. Blank lines are skipped. Duplicate keys are an error.
inline std::vector<KvEntry> parse_kv(std::string_view text, const std::string& source) {
    std::vector<KvEntry> out;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const auto nl = text.find('\n', pos);
        std::string_view line =
            text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) {
            line = line.substr(0, hash);
        }
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ParseError(source, line_no, "", "expected 'key = value'");
        }
        KvEntry e{std::string(trim(line.substr(0, eq))), std::string(trim(line.substr(eq + 1))),
                  line_no};
        if (e.key.empty()) throw ParseError(source, line_no, "", "empty key");
        for (const auto& prev : out) {
            if (prev.key == e.key) {
                throw ParseError(source, line_no, e.key,
                                 "duplicate key (first set on line " + std::to_string(prev.line) +
                                     ")");
            }
        }
        out.push_back(std::move(e));
    }
    return out;
}

inline std::size_t parse_count(const KvEntry& e, const std::string& source) {
    std::size_t v = 0;
    const char* end = e.value.data() + e.value.size();
    auto [p, ec] = std::from_chars(e.value.data(), end, v);
    if (ec != std::errc() || p != end || e.value.empty()) {
        throw ParseError(source, e.line, e.key, "expected a non-negative integer, got '" + e.value + "'");
    }
    return v;
}

inline double parse_double(const KvEntry& e, const std::string& source) {
    double v = 0.0;
    const char* end = e.value.data() + e.value.size();
    auto [p, ec] = std::from_chars(e.value.data(), end, v);
    if (ec != std::errc() || p != end || e.value.empty()) {
        throw ParseError(source, e.line, e.key, "expected a number, got '" + e.value + "'");
    }
    return v;
}

inline bool parse_bool(const KvEntry& e, const std::string& source) {
    if (e.value == "true" || e.value == "1" || e.value == "yes") return true;
    if (e.value == "false" || e.value == "0" || e.value == "no") return false;
    throw ParseError(source, e.line, e.key, "expected true or false, got '" + e.value + "'");
}

/// Whitespace- or comma-separated list of non-negative integers; may be empty.
inline std::vector<std::size_t> parse_count_list(const KvEntry& e, const std::string& source) {
    std::vector<std::size_t> out;
    std::string_view rest = e.value;
    while (true) {
        const auto start = rest.find_first_not_of(" \t,");
        if (start == std::string_view::npos) break;
        rest = rest.substr(start);
        const auto stop = rest.find_first_of(" \t,");
        const std::string_view tok = rest.substr(0, stop);
        std::size_t v = 0;
        auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
        if (ec != std::errc() || p != tok.data() + tok.size()) {
            throw ParseError(source, e.line, e.key, "bad token id '" + std::string(tok) + "'");
        }
        out.push_back(v);
        if (stop == std::string_view::npos) break;
        rest = rest.substr(stop);
    }
    return out;
}

}  // namespace mata::detail
