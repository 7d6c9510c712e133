#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace cestrade::csv {

/// Comma-separated table with a required header row.
struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<int> line_numbers;  // source line of each row, for diagnostics

    /// Index of a header column, or -1.
    int column(std::string_view name) const;
    /// Index of a header column; throws ParseError when absent.
    int require_column(std::string_view name, const std::string& source) const;
};

Table read(const std::string& path);

double to_double(const std::string& field, const std::string& where);
int to_int(const std::string& field, const std::string& where);

}  // namespace cestrade::csv
