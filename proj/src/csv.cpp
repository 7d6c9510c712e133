#include "cestrade/csv.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "cestrade/error.hpp"

namespace cestrade::csv {

namespace {

std::string trim(std::string_view s)
{
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split(const std::string& line)
{
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        fields.push_back(trim(std::string_view(line).substr(start, comma - start)));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return fields;
}

}  // namespace

int Table::column(std::string_view name) const
{
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (header[i] == name) return static_cast<int>(i);
    }
    return -1;
}

int Table::require_column(std::string_view name, const std::string& source) const
{
    const int idx = column(name);
    if (idx < 0) {
        throw Error(ErrorKind::ParseError, source + ": missing column '" + std::string(name) + "'");
    }
    return idx;
}

Table read(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::ParseError, "cannot open " + path);

    Table table;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line_no == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) {
            line.erase(0, 3);
        }
        if (trim(line).empty() || trim(line).front() == '#') continue;
        auto fields = split(line);
        if (table.header.empty()) {
            table.header = std::move(fields);
            continue;
        }
        if (fields.size() != table.header.size()) {
            throw Error(ErrorKind::ParseError,
                        path + ":" + std::to_string(line_no) + ": expected " +
                            std::to_string(table.header.size()) + " fields, got " +
                            std::to_string(fields.size()));
        }
        table.rows.push_back(std::move(fields));
        table.line_numbers.push_back(line_no);
    }
    if (table.header.empty()) throw Error(ErrorKind::ParseError, path + ": missing header");
    return table;
}

double to_double(const std::string& field, const std::string& where)
{
    double value = 0.0;
    const char* end = field.data() + field.size();
    auto [ptr, ec] = std::from_chars(field.data(), end, value);
    if (ec != std::errc() || ptr != end) {
        throw Error(ErrorKind::ParseError, where + ": not a number '" + field + "'");
    }
    return value;
}

int to_int(const std::string& field, const std::string& where)
{
    int value = 0;
    const char* end = field.data() + field.size();
    auto [ptr, ec] = std::from_chars(field.data(), end, value);
    if (ec != std::errc() || ptr != end) {
        throw Error(ErrorKind::ParseError, where + ": not an integer '" + field + "'");
    }
    return value;
}

}  // namespace cestrade::csv
