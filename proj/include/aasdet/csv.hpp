#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "common.hpp"

namespace aas::csv {

/// Minimal comma-separated reader: no quoting, CR stripped, blank lines skipped.
struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    [[nodiscard]] std::size_t column(const std::string& name, std::string_view module) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return i;
        throw Error(module, "missing CSV column '" + name + "'");
    }
};

inline std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    out.push_back(cur);
    return out;
}

inline Table read(const std::filesystem::path& path, std::string_view module) {
    std::ifstream in(path);
    if (!in) throw Error(module, "cannot open '" + path.string() + "'");
    Table t;
    std::string line;
    bool first = true;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (first && line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        auto fields = split_line(line);
        if (first) {
            t.header = std::move(fields);
            first = false;
            continue;
        }
        if (fields.size() != t.header.size())
            throw Error(module, path.filename().string() + ":" + std::to_string(lineno) + ": expected " +
                                    std::to_string(t.header.size()) + " fields, got " +
                                    std::to_string(fields.size()));
        t.rows.push_back(std::move(fields));
    }
    if (first) throw Error(module, "empty CSV '" + path.string() + "'");
    return t;
}

}  // namespace aas::csv
