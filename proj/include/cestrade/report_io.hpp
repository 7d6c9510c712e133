#pragma once

#include <string>
#include <vector>

#include "cestrade/scenarios.hpp"

namespace cestrade {

/// Shortest text that reads back to the same double.
std::string format_number(double value);

/// Machine-readable result: summary, series, audits and certificates.
std::string result_json(const ModeResult& result);

/// Writes result.json plus the CSV tables of one mode into `dir` and returns
/// the file names written, relative to `dir`. The baseline writes no storage table.
std::vector<std::string> write_mode_outputs(const ModeResult& result, const std::string& dir);

/// What `compare` needs from a result.json written earlier.
struct StoredResult {
    std::string scenario;
    int horizon = 0;
    double dt_h = 0.0;
    int participants = 0;
    int nonparticipants = 0;
    ModeSummary summary;
};

/// Throws ParseError.
StoredResult read_result_json(const std::string& path);

std::string comparison_json(const ComparisonReport& report);

/// comparison.json, comparison.csv and voltage_stats.csv.
std::vector<std::string> write_comparison(const ComparisonReport& report, const std::string& dir);

/// Per-season mode outputs under `dir/<season>/<mode>/`, plus season_bars.csv and
/// voltage_distribution.csv at the top.
std::vector<std::string> write_sweep(const SeasonalSweep& sweep, const std::string& dir);

}  // namespace cestrade
