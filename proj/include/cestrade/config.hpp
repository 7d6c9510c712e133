#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

#include "cestrade/feeder.hpp"
#include "cestrade/profiles.hpp"
#include "cestrade/storage.hpp"

namespace cestrade {

/// Two-step time-of-use reference signal and the grid price calibration built on it.
struct PriceSettings {
    double tou_peak = 39.22;     // currency per kWh
    double tou_offpeak = 18.5;
    int peak_first = 85;         // 1-based interval, inclusive
    int peak_last = 276;
    double phi_ratio = 2.12;     // phi_peak / phi_offpeak
    double phi_offpeak = 0.0;    // 0 -> calibrate from the baseline grid load
    double price_floor = 18.5;
};

/// Where the household series come from.
struct ProfileSource {
    bool synthetic = true;
    SynthParams synth;
    std::string profile_file;   // long-format CSV, when not synthetic
    std::string user_map_file;
};

struct SolverSettings {
    double qp_tol = 1e-8;
    int probes = 1000;
    bool verify = true;
    double split_penalty_scale = 1e-6;
};

struct ScenarioConfig {
    std::string name = "scenario";
    std::string path;  // file the config was read from, empty when built in code
    int horizon = 288;
    double dt_h = 5.0 / 60.0;
    std::uint64_t seed = 0;

    PriceSettings prices;
    StorageParams storage;
    int ces_bus = 7;
    double transformer_kva = 185.0;
    double voltage_margin = 0.0;  // p.u. tightening of the voltage rows

    std::string feeder_file;  // edge list; relative paths resolve against the config file
    FeederSpec feeder;        // bases and limits; edges filled when the file is read
    ProfileSource profiles;
    SolverSettings solver;

    /// Transformer energy limit per interval, kWh.
    double transformer_energy() const { return transformer_kva * dt_h; }
};

/// Reads the key/value file with [sections]. Throws ParseError.
ScenarioConfig load_config(const std::string& path);

/// Text form accepted by load_config.
std::string to_ini(const ScenarioConfig& config);

/// Every broken invariant of the config itself, one message each.
std::vector<std::string> config_issues(const ScenarioConfig& config);

/// Paths named in the config, resolved against its directory.
std::string resolve_path(const ScenarioConfig& config, const std::string& file);
std::vector<std::string> input_files(const ScenarioConfig& config);

/// Everything a mode needs, built and validated once.
struct ScenarioData {
    ScenarioConfig config;
    FeederModel feeder;
    ProfileSet profiles;
    SurplusSet surplus;
    Eigen::VectorXd nonparticipant_energy;  // E_N, kWh per interval
    BusInjectionSeries base;                // per-unit, users only
    Eigen::VectorXd baseline_energy;        // E_N - sum s, kWh per interval
    Eigen::VectorXd phi;
    Eigen::VectorXd delta;
};

/// Constant delta equal to the horizon average of the TOU signal.
double average_tou(const PriceSettings& prices, int horizon);

/// phi_offpeak making the predicted price spread (max peak price minus min
/// off-peak price, at the baseline load) equal to the TOU spread.
/// Throws InvalidParameter when the baseline load cannot produce a positive spread.
double calibrate_phi_offpeak(const PriceSettings& prices, const Eigen::VectorXd& baseline_energy);

/// Builds feeder, profiles and prices. Throws the first library error met.
ScenarioData prepare(const ScenarioConfig& config);

/// As prepare, but collects one diagnostic per failing stage instead of throwing.
struct Diagnostic {
    std::string stage;
    std::string kind;
    std::string message;
};
std::vector<Diagnostic> diagnose(const ScenarioConfig& config);

}  // namespace cestrade
