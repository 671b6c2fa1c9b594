#pragma once

#include <charconv>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "spatreg/error.hpp"

namespace spatreg {

/// Rectangular delimited-text table: a header row plus string cells.
struct text_table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column_index(std::string_view name) const {
        for (std::size_t j = 0; j < header.size(); ++j)
            if (header[j] == name) return j;
        throw data_error("column not found: '" + std::string(name) + "'");
    }

    bool has_column(std::string_view name) const {
        for (const auto& h : header)
            if (h == name) return true;
        return false;
    }
};

namespace detail {

inline std::vector<std::string> split_record(std::string_view line, char delim) {
    std::vector<std::string> out;
    std::string cell;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cell += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cell += c;
            }
        } else if (c == '"' && cell.empty()) {
            quoted = true;
        } else if (c == delim) {
            out.push_back(std::move(cell));
            cell.clear();
        } else {
            cell += c;
        }
    }
    out.push_back(std::move(cell));
    return out;
}

} // namespace detail

/// Parses delimited text with a mandatory header row into a rectangular table.
inline text_table parse_table(std::string_view content, char delim = ',') {
    text_table tab;
    std::size_t pos = 0;
    // Strip a UTF-8 BOM if present.
    if (content.size() >= 3 && content.substr(0, 3) == "\xEF\xBB\xBF") pos = 3;
    bool saw_header = false;
    std::size_t lineno = 0;
    while (pos <= content.size()) {
        const std::size_t nl = content.find('\n', pos);
        std::string_view line = (nl == std::string_view::npos)
                                    ? content.substr(pos)
                                    : content.substr(pos, nl - pos);
        pos = (nl == std::string_view::npos) ? content.size() + 1 : nl + 1;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        ++lineno;
        if (line.empty() && pos > content.size()) break; // trailing newline
        if (!saw_header) {
            tab.header = detail::split_record(line, delim);
            if (tab.header.size() == 1 && tab.header[0].empty())
                throw data_error("empty table: header row missing");
            saw_header = true;
            continue;
        }
        if (line.empty()) continue;
        auto cells = detail::split_record(line, delim);
        if (cells.size() != tab.header.size())
            throw data_error("row " + std::to_string(lineno) + " has " +
                             std::to_string(cells.size()) + " cells, expected " +
                             std::to_string(tab.header.size()));
        tab.rows.push_back(std::move(cells));
    }
    if (!saw_header) throw data_error("empty table: no content");
    return tab;
}

/// Strict, locale-independent numeric parse. Returns nullopt on any non-numeric content.
inline std::optional<double> parse_number(std::string_view cell) {
    std::size_t b = 0, e = cell.size();
    while (b < e && (cell[b] == ' ' || cell[b] == '\t')) ++b;
    while (e > b && (cell[e - 1] == ' ' || cell[e - 1] == '\t')) --e;
    if (b == e) return std::nullopt;
    if (cell[b] == '+') ++b; // from_chars rejects a leading '+'
    double v = 0.0;
    const auto res = std::from_chars(cell.data() + b, cell.data() + e, v);
    if (res.ec != std::errc{} || res.ptr != cell.data() + e) return std::nullopt;
    return v;
}

inline bool cell_is_missing(std::string_view cell) {
    std::size_t b = 0, e = cell.size();
    while (b < e && (cell[b] == ' ' || cell[b] == '\t')) ++b;
    while (e > b && (cell[e - 1] == ' ' || cell[e - 1] == '\t')) --e;
    return b == e;
}

/// Shortest representation that round-trips exactly through parse_number.
inline std::string format_number(double v) {
    char buf[40];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline std::string quote_field(std::string_view s, char delim) {
    bool needs = false;
    for (const char c : s)
        if (c == delim || c == '"' || c == '\n' || c == '\r') { needs = true; break; }
    if (!needs) return std::string(s);
    std::string out = "\"";
    for (const char c : s) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    out += '"';
    return out;
}

} // namespace spatreg
