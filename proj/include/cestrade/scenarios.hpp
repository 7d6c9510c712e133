#pragma once

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

#include "cestrade/config.hpp"
#include "cestrade/leader.hpp"

namespace cestrade {

enum class Mode { Baseline, Game, GameNoVolt, Centralized };

std::string to_string(Mode mode);
/// Throws InvalidParameter for an unknown name.
Mode parse_mode(const std::string& name);

/// Per-bus voltage summary over the horizon, exact sweep, p.u.
struct BusVoltageStats {
    int bus = 0;
    double min = 0.0;
    double q1 = 0.0;
    double median = 0.0;
    double q3 = 0.0;
    double max = 0.0;
};

/// Outcome of one operating mode. Storage series are empty in the baseline and
/// the storage price is empty outside the game modes.
struct ModeResult {
    Mode mode = Mode::Baseline;
    std::string scenario;
    int horizon = 0;
    double dt_h = 0.0;
    std::uint64_t seed = 0;

    Eigen::VectorXd grid_energy;  // E(t), kWh
    Eigen::VectorXd grid_price;   // lambda_g(t)
    Eigen::MatrixXd trades;       // y, M x H
    Eigen::MatrixXd grid_trades;  // e_p, M x H
    std::vector<std::string> participant_ids;
    std::vector<std::string> nonparticipant_ids;
    Eigen::VectorXd participant_costs;     // per user, summed over the horizon
    Eigen::VectorXd nonparticipant_costs;

    bool has_storage = false;
    Eigen::VectorXd storage_price;  // lambda_s, game modes only
    Eigen::VectorXd provider_grid;  // e_g
    Eigen::VectorXd storage_flow;   // e_s
    Eigen::VectorXd charge_level;   // b(t)
    std::optional<double> revenue;  // provider cash flow, absent in the baseline
    double community_cost = 0.0;    // sum_t lambda_g E
    double accounting_residual = 0.0;

    Eigen::MatrixXd voltage;  // exact sweep magnitudes, N x H
    double sweep_residual = 0.0;
    std::vector<VoltageViolation> voltage_violations;
    std::vector<ThermalViolation> thermal_violations;
    std::vector<BusVoltageStats> voltage_stats;

    std::optional<EquilibriumResult> equilibrium;  // game modes
    std::optional<KktResidual> kkt;                // modes that solve a QP
    double max_complementarity = 0.0;              // max c * d
    std::vector<std::string> audit_failures;       // natural-unit constraint audit

    double peak_demand() const { return grid_energy.maxCoeff(); }
    double participant_total() const { return participant_costs.sum(); }
    double nonparticipant_total() const { return nonparticipant_costs.sum(); }
    double participant_average() const;
    double nonparticipant_average() const;
};

struct RunOptions {
    bool verify = true;   // certificates for the game modes
    int probes = 1000;
    std::uint64_t seed = 0;
};

RunOptions run_options(const ScenarioConfig& config);

/// Leader inputs for the game modes, with feeder data attached.
LeaderInputs leader_inputs(const ScenarioData& data);

/// No storage: every participant trades its whole surplus with the grid.
ModeResult run_baseline(const ScenarioData& data);

/// Stackelberg game with or without the voltage rows.
ModeResult run_decentralized(const ScenarioData& data, bool voltage_constraints, const RunOptions& options);

/// Community-cost minimization over the storage schedule with the same storage,
/// voltage, transformer and floor rows as the leader.
ModeResult run_centralized(const ScenarioData& data, const RunOptions& options);

ModeResult run_mode(const ScenarioData& data, Mode mode, const RunOptions& options);

/// Runs the modes on up to `jobs` threads; results come back in the order given.
std::vector<ModeResult> run_modes(const ScenarioData& data, const std::vector<Mode>& modes,
                                  const RunOptions& options, int jobs = 1);

/// Sum of user costs minus provider revenue, less sum_t lambda_g E.
double accounting_residual(const ModeResult& result);

std::vector<BusVoltageStats> voltage_stats(const Eigen::MatrixXd& magnitudes);

struct ModeSummary {
    Mode mode = Mode::Baseline;
    double peak_demand = 0.0;
    double participant_total = 0.0;
    double participant_average = 0.0;
    double nonparticipant_total = 0.0;
    double nonparticipant_average = 0.0;
    std::optional<double> revenue;
    double community_cost = 0.0;
    double voltage_min = 0.0;
    double voltage_max = 0.0;
    int voltage_violations = 0;
    int thermal_violations = 0;
    std::vector<BusVoltageStats> voltage_stats;
};

struct ModeDelta {
    Mode mode = Mode::Baseline;
    double peak_demand_pct = 0.0;
    double participant_average_pct = 0.0;
    double nonparticipant_average_pct = 0.0;
    double community_cost_pct = 0.0;
};

struct ComparisonReport {
    std::string scenario;
    int horizon = 0;
    Mode reference = Mode::Baseline;  // deltas are relative to this mode
    std::vector<ModeSummary> modes;
    std::vector<ModeDelta> deltas;
};

ModeSummary summarize(const ModeResult& result);

/// Percent change from `before` to `after`; 0 when both are 0.
double percent_change(double before, double after);

/// Needs at least two results on the same horizon and dt. The baseline is the
/// reference when present, otherwise the first result. Throws IncompatibleResults.
ComparisonReport compare(const std::vector<ModeResult>& results);
ComparisonReport compare(const std::vector<ModeSummary>& summaries, const std::string& scenario, int horizon);

struct SeasonReport {
    std::string season;
    std::vector<ModeResult> results;
    ComparisonReport comparison;
};

/// Normalized per-season bars: each metric divided by its largest magnitude across seasons.
struct SeasonBars {
    std::vector<std::string> seasons;
    Eigen::VectorXd revenue;
    Eigen::VectorXd participant_cost;
    Eigen::VectorXd nonparticipant_cost;
    Eigen::VectorXd participant_cost_baseline;
    Eigen::VectorXd nonparticipant_cost_baseline;
};

struct SeasonalSweep {
    std::vector<SeasonReport> seasons;
    SeasonBars bars;
};

/// Storage used across seasons: 950 kWh capacity, 300 kW rates.
StorageParams seasonal_storage(const StorageParams& base);

/// Runs every mode for each season config after applying the seasonal storage.
SeasonalSweep seasonal_sweep(const std::vector<std::pair<std::string, ScenarioConfig>>& seasons,
                             const std::vector<Mode>& modes, int jobs = 1);

SeasonBars season_bars(const std::vector<SeasonReport>& seasons);

}  // namespace cestrade
