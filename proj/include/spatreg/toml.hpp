#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "spatreg/error.hpp"
#include "spatreg/table.hpp"

namespace spatreg {

/// Value in a TOML-style configuration: string, number, boolean, or a flat array.
struct toml_value {
    enum class kind { string, number, boolean, array };
    kind type = kind::string;
    std::string str;
    double num = 0.0;
    bool flag = false;
    std::vector<toml_value> items;
};

/// Minimal TOML-subset document: [section] headers (dotted names allowed) and
/// key = value lines with strings, numbers, booleans, and flat arrays.
class toml_doc {
public:
    static toml_doc parse(std::string_view content) {
        toml_doc doc;
        std::string prefix;
        std::size_t pos = 0, lineno = 0;
        while (pos <= content.size()) {
            const std::size_t nl = content.find('\n', pos);
            std::string_view line = nl == std::string_view::npos ? content.substr(pos)
                                                                 : content.substr(pos, nl - pos);
            pos = nl == std::string_view::npos ? content.size() + 1 : nl + 1;
            ++lineno;
            const std::string stripped = strip_comment(line);
            const std::string t = trim(stripped);
            if (t.empty()) continue;
            if (t.front() == '[') {
                if (t.back() != ']') throw config_error("config line " + std::to_string(lineno) +
                                                        ": unterminated section header");
                prefix = trim(t.substr(1, t.size() - 2));
                if (prefix.empty()) throw config_error("config line " + std::to_string(lineno) +
                                                       ": empty section name");
                continue;
            }
            const std::size_t eq = t.find('=');
            if (eq == std::string::npos)
                throw config_error("config line " + std::to_string(lineno) + ": expected key = value");
            const std::string key = trim(t.substr(0, eq));
            const std::string raw = trim(t.substr(eq + 1));
            if (key.empty() || raw.empty())
                throw config_error("config line " + std::to_string(lineno) + ": empty key or value");
            const std::string full = prefix.empty() ? key : prefix + "." + key;
            if (doc.values_.count(full))
                throw config_error("config line " + std::to_string(lineno) + ": duplicate key '" +
                                   full + "'");
            doc.values_[full] = parse_value(raw, lineno);
        }
        return doc;
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    const toml_value& at(const std::string& key) const {
        const auto it = values_.find(key);
        if (it == values_.end()) throw config_error("config: missing key '" + key + "'");
        return it->second;
    }

    std::string get_string(const std::string& key) const {
        const auto& v = at(key);
        if (v.type != toml_value::kind::string)
            throw config_error("config: key '" + key + "' must be a string");
        return v.str;
    }
    std::string get_string_or(const std::string& key, const std::string& fallback) const {
        return has(key) ? get_string(key) : fallback;
    }

    double get_number(const std::string& key) const {
        const auto& v = at(key);
        if (v.type != toml_value::kind::number)
            throw config_error("config: key '" + key + "' must be a number");
        return v.num;
    }
    double get_number_or(const std::string& key, double fallback) const {
        return has(key) ? get_number(key) : fallback;
    }

    bool get_bool(const std::string& key) const {
        const auto& v = at(key);
        if (v.type != toml_value::kind::boolean)
            throw config_error("config: key '" + key + "' must be true or false");
        return v.flag;
    }
    bool get_bool_or(const std::string& key, bool fallback) const {
        return has(key) ? get_bool(key) : fallback;
    }

    std::vector<std::string> get_string_array(const std::string& key) const {
        const auto& v = at(key);
        std::vector<std::string> out;
        if (v.type == toml_value::kind::string) {
            out.push_back(v.str);
            return out;
        }
        if (v.type != toml_value::kind::array)
            throw config_error("config: key '" + key + "' must be an array of strings");
        for (const auto& item : v.items) {
            if (item.type != toml_value::kind::string)
                throw config_error("config: key '" + key + "' must contain only strings");
            out.push_back(item.str);
        }
        return out;
    }

    /// All stored dotted keys, sorted (std::map order).
    std::vector<std::string> keys() const {
        std::vector<std::string> out;
        for (const auto& [k, v] : values_) out.push_back(k);
        return out;
    }

    std::vector<std::string> keys_with_prefix(const std::string& prefix) const {
        std::vector<std::string> out;
        for (const auto& [k, v] : values_)
            if (k.rfind(prefix, 0) == 0) out.push_back(k);
        return out;
    }

private:
    static std::string trim(std::string_view s) {
        std::size_t b = 0, e = s.size();
        while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
        while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
        return std::string(s.substr(b, e - b));
    }

    static std::string strip_comment(std::string_view line) {
        bool in_quotes = false;
        for (std::size_t i = 0; i < line.size(); ++i) {
            if (line[i] == '"') in_quotes = !in_quotes;
            else if (line[i] == '#' && !in_quotes) return std::string(line.substr(0, i));
        }
        return std::string(line);
    }

    static toml_value parse_value(const std::string& raw, std::size_t lineno) {
        toml_value v;
        if (raw.front() == '"') {
            if (raw.size() < 2 || raw.back() != '"')
                throw config_error("config line " + std::to_string(lineno) + ": unterminated string");
            v.type = toml_value::kind::string;
            v.str = raw.substr(1, raw.size() - 2);
            return v;
        }
        if (raw.front() == '[') {
            if (raw.back() != ']')
                throw config_error("config line " + std::to_string(lineno) + ": unterminated array");
            v.type = toml_value::kind::array;
            const std::string inner = trim(raw.substr(1, raw.size() - 2));
            if (inner.empty()) return v;
            std::size_t start = 0;
            bool in_quotes = false;
            for (std::size_t i = 0; i <= inner.size(); ++i) {
                if (i < inner.size() && inner[i] == '"') in_quotes = !in_quotes;
                if (i == inner.size() || (inner[i] == ',' && !in_quotes)) {
                    const std::string piece = trim(inner.substr(start, i - start));
                    if (piece.empty())
                        throw config_error("config line " + std::to_string(lineno) +
                                           ": empty array element");
                    v.items.push_back(parse_value(piece, lineno));
                    start = i + 1;
                }
            }
            return v;
        }
        if (raw == "true" || raw == "false") {
            v.type = toml_value::kind::boolean;
            v.flag = raw == "true";
            return v;
        }
        const auto num = parse_number(raw);
        if (!num)
            throw config_error("config line " + std::to_string(lineno) + ": cannot parse value '" +
                               raw + "'");
        v.type = toml_value::kind::number;
        v.num = *num;
        return v;
    }

    std::map<std::string, toml_value> values_;
};

} // namespace spatreg
