#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cestrade/feeder.hpp"

namespace cestrade {

/// Energy series of one household, per interval. Demand and PV in kWh,
/// reactive demand in kvar.
struct UserProfile {
    std::string user_id;
    int bus = 0;
    bool participating = false;
    Eigen::VectorXd demand;
    Eigen::VectorXd pv;
    Eigen::VectorXd reactive;
};

struct ProfileSet {
    int horizon = 0;
    std::vector<UserProfile> users;

    std::vector<std::size_t> participants() const;
    std::vector<std::size_t> nonparticipants() const;
    /// E_N(t): total demand of the non-participating users.
    Eigen::VectorXd nonparticipant_demand() const;
};

/// Throws on the first broken invariant. `bus_count` <= 0 skips the bus check.
void validate_profiles(const ProfileSet& set, int bus_count);

/// Long-format profile CSV (`t,user_id,demand_kwh,pv_kwh[,q_kvar]`, t = 1..H)
/// plus the user map (`user_id,bus_id,participating`).
ProfileSet load_profiles(const std::string& profile_path, const std::string& user_map_path,
                         int horizon, int bus_count);

void write_profiles_csv(const ProfileSet& set, const std::string& path);
void write_user_map_csv(const ProfileSet& set, const std::string& path);

/// s_p(t) = g_p(t) - d_p(t) for participants, row p = participants()[p].
struct SurplusSet {
    Eigen::MatrixXd s;                    // M x H
    std::vector<std::size_t> user_index;  // row -> index into ProfileSet::users

    Eigen::Index participant_count() const { return s.rows(); }
    /// Zero surplus counts as surplus.
    bool in_surplus(Eigen::Index p, Eigen::Index t) const { return s(p, t) >= 0.0; }
    std::vector<Eigen::Index> surplus_users(Eigen::Index t) const;
    std::vector<Eigen::Index> deficit_users(Eigen::Index t) const;
    Eigen::VectorXd total() const { return s.colwise().sum().transpose(); }
};

SurplusSet surplus(const ProfileSet& set);

/// Per-bus active power in kW (consumption positive) and reactive power in kvar,
/// users only: P_i = (sum of non-participant demand - sum of participant surplus) / dt.
BusInjectionSeries bus_power_kw(const ProfileSet& set, int bus_count, double dt_h);

/// Per-unit bus injections without storage.
BusInjectionSeries aggregate_by_bus(const ProfileSet& set, const FeederModel& model, double dt_h);

/// Per-unit bus injections with the storage flow e_s (kWh per interval) at `ces_bus`.
BusInjectionSeries aggregate_by_bus(const ProfileSet& set, const FeederModel& model, double dt_h,
                                    int ces_bus, const Eigen::VectorXd& storage_flow);

// -----------------------------------------------------------------------------
// Synthetic profiles
// -----------------------------------------------------------------------------

struct BusAllocation {
    int bus = 0;
    int participants = 0;
    int nonparticipants = 0;
};

/// Shape parameters for the seeded generator. Powers in kW, clock times in hours.
/// The defaults are illustrative magnitudes, not measurements.
struct SynthParams {
    std::uint64_t seed = 0;
    int horizon = 288;
    double dt_h = 5.0 / 60.0;
    std::vector<BusAllocation> allocation;  // empty -> default_allocation()

    double base_kw = 0.35;
    double morning_kw = 0.9;
    double morning_peak_h = 7.5;
    double morning_width_h = 1.2;
    double evening_kw = 2.2;
    double evening_peak_h = 19.0;
    double evening_width_h = 2.0;
    double nonparticipant_scale = 1.6;

    double pv_kw = 3.2;
    double pv_start_h = 6.5;
    double pv_end_h = 18.5;

    double user_spread = 0.25;  // relative spread of per-user scale factors
    double jitter = 0.08;       // relative per-interval noise
    double reactive_ratio = 0.0;  // q = ratio * demand power
};

/// The 55-user allocation of the reference feeder: 50 participants on buses
/// 1, 2, 4, 5, 7 and 5 non-participants on bus 6.
std::vector<BusAllocation> default_allocation();

ProfileSet synthesize_profiles(const SynthParams& params);

}  // namespace cestrade
