#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "tsa/errors.hpp"

namespace tsa::csv {

inline std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(field);
            field.clear();
        } else if (c != '\r') {
            field.push_back(c);
        }
    }
    fields.push_back(field);
    return fields;
}

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

/// Reads a comma-separated file, verifying the exact header. Blank lines and
/// lines starting with '#' are skipped.
inline Table read_table(const std::filesystem::path& path, const std::string& expected_header) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path.string());
    Table table;
    std::string line;
    std::size_t line_no = 0;
    bool saw_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        if (!saw_header) {
            if (line != expected_header) {
                throw ConfigError(path.string() + ": expected header '" + expected_header +
                                  "', got '" + line + "'");
            }
            table.header = split_line(line);
            saw_header = true;
            continue;
        }
        auto fields = split_line(line);
        if (fields.size() != table.header.size()) {
            throw ConfigError(path.string() + ":" + std::to_string(line_no) +
                              ": wrong field count");
        }
        table.rows.push_back(std::move(fields));
    }
    if (!saw_header) throw ConfigError(path.string() + ": empty file");
    return table;
}

inline double parse_double(const std::string& s, const std::string& context) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError(context + ": cannot parse number '" + s + "'");
    }
}

inline std::int64_t parse_int(const std::string& s, const std::string& context) {
    try {
        std::size_t pos = 0;
        const std::int64_t v = std::stoll(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError(context + ": cannot parse integer '" + s + "'");
    }
}

/// Round-trip-safe decimal rendering of a double.
inline std::string format_double(double v, int precision = 17) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*g", precision, v);
    return buf;
}

/// Writes content via a temp file in the same directory, then renames.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ConfigError("cannot write " + tmp.string());
        out << content;
        if (!out) throw ConfigError("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace tsa::csv
