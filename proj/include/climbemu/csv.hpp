#pragma once

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <unordered_map>
#include <vector>

#include "climbemu/error.hpp"

namespace climbemu::csv {

/// Shortest decimal representation that parses back to the same double.
inline std::string format(double v)
{
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc{})
        throw Error("cannot format number");
    return std::string(buf, end);
}

inline std::string_view trim(std::string_view s)
{
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t'))
        s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
        s.remove_suffix(1);
    return s;
}

inline std::vector<std::string_view> split(std::string_view line, char sep = ',')
{
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        const auto pos = line.find(sep, start);
        if (pos == std::string_view::npos) {
            out.push_back(trim(line.substr(start)));
            return out;
        }
        out.push_back(trim(line.substr(start, pos - start)));
        start = pos + 1;
    }
}

inline double parse_double(std::string_view field, std::size_t line_no)
{
    double v = 0.0;
    const auto* first = field.data();
    const auto* last = field.data() + field.size();
    if (!field.empty() && *first == '+')
        ++first;
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc{} || ptr != last)
        throw DataError("line " + std::to_string(line_no) + ": cannot parse number '" + std::string(field) + "'");
    return v;
}

/// A parsed CSV file: header names and raw rows (fields as strings).
struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<std::size_t> line_numbers;

    std::size_t column(std::string_view name) const
    {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name)
                return i;
        throw DataError("missing column '" + std::string(name) + "'");
    }
};

inline Table read(std::istream& in)
{
    Table t;
    std::string line;
    std::size_t line_no = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (line_no == 1 && line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF)
            line.erase(0, 3); // UTF-8 BOM
        if (trim(line).empty())
            continue;
        auto fields = split(line);
        if (!have_header) {
            for (auto f : fields)
                t.header.emplace_back(f);
            have_header = true;
            continue;
        }
        if (fields.size() != t.header.size())
            throw DataError("line " + std::to_string(line_no) + ": expected " + std::to_string(t.header.size()) +
                            " fields, found " + std::to_string(fields.size()));
        std::vector<std::string> row;
        row.reserve(fields.size());
        for (auto f : fields)
            row.emplace_back(f);
        t.rows.push_back(std::move(row));
        t.line_numbers.push_back(line_no);
    }
    if (!have_header)
        throw DataError("empty CSV: header row required");
    return t;
}

inline Table read_file(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw DataError("cannot open '" + path.string() + "'");
    return read(in);
}

/// Writes via a temporary sibling file and renames it over `path`.
inline void write_atomically(const std::filesystem::path& path, const std::function<void(std::ostream&)>& writer)
{
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw Error("cannot write '" + tmp.string() + "'");
        writer(out);
        out.flush();
        if (!out)
            throw Error("write failed for '" + tmp.string() + "'");
    }
    std::filesystem::rename(tmp, path);
}

inline void write_atomically(const std::filesystem::path& path, const std::string& content)
{
    write_atomically(path, [&](std::ostream& out) { out << content; });
}

} // namespace climbemu::csv
