#include "cestrade/storage.hpp"

#include <cmath>

namespace cestrade {

void validate(const StorageParams& p)
{
    auto fail = [](const std::string& what) { throw Error(ErrorKind::InvalidParameter, "storage: " + what); };
    if (!(p.eta_charge > 0.0 && p.eta_charge <= 1.0)) fail("need 0 < eta_charge <= 1");
    if (!(p.eta_discharge >= 1.0)) fail("need eta_discharge >= 1");
    if (!(p.b_min <= p.b0 && p.b0 <= p.b_max)) fail("need b_min <= b0 <= b_max");
    if (!(p.theta >= 0.0)) fail("need theta >= 0");
    if (!(p.charge_rate_max > 0.0) || !(p.discharge_rate_max > 0.0)) fail("rates must be positive");
    if (!(p.dt_h > 0.0)) fail("dt must be positive");
}

StorageTrajectory soc_trajectory(const StorageParams& params, const Eigen::VectorXd& flow)
{
    return {flow, soc_series(params.b0, params.eta_charge, params.eta_discharge, flow)};
}

std::string to_string(StorageViolation::Kind kind)
{
    switch (kind) {
    case StorageViolation::Kind::ChargeRate: return "charge_rate";
    case StorageViolation::Kind::DischargeRate: return "discharge_rate";
    case StorageViolation::Kind::CapacityLow: return "capacity_low";
    case StorageViolation::Kind::CapacityHigh: return "capacity_high";
    case StorageViolation::Kind::Cyclical: return "cyclical";
    }
    return "unknown";
}

StorageReport check_storage_feasibility(const StorageTrajectory& traj, const StorageParams& params, double tol)
{
    using Kind = StorageViolation::Kind;
    StorageReport report;
    const Eigen::Index horizon = traj.flow.size();
    for (Eigen::Index t = 0; t < horizon; ++t) {
        const int step = static_cast<int>(t + 1);
        const double rate = traj.flow(t) / params.dt_h;
        if (rate > params.charge_rate_max + tol) {
            report.violations.push_back({Kind::ChargeRate, step, rate, params.charge_rate_max});
        }
        if (rate < -params.discharge_rate_max - tol) {
            report.violations.push_back({Kind::DischargeRate, step, rate, -params.discharge_rate_max});
        }
        const double b = traj.charge(t);
        if (b < params.b_min - tol) report.violations.push_back({Kind::CapacityLow, step, b, params.b_min});
        if (b > params.b_max + tol) report.violations.push_back({Kind::CapacityHigh, step, b, params.b_max});
    }
    const double end = horizon > 0 ? traj.charge(horizon - 1) : params.b0;
    if (std::abs(end - params.b0) > params.theta + tol) {
        report.violations.push_back({Kind::Cyclical, static_cast<int>(horizon), end - params.b0, params.theta});
    }
    return report;
}

}  // namespace cestrade
