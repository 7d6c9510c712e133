#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

#include "cestrade/error.hpp"

namespace cestrade {

/// Community storage parameters. Energies in kWh, rates in kW, dt in hours.
struct StorageParams {
    double b_max = 700.0;
    double b_min = 35.0;
    double charge_rate_max = 150.0;     // gamma_ch
    double discharge_rate_max = 150.0;  // gamma_dis
    double eta_charge = 0.98;
    double eta_discharge = 1.02;
    double b0 = 367.5;
    double theta = 1e-3;  // allowed end-of-day SoC mismatch
    double dt_h = 5.0 / 60.0;

    /// Initial charge halfway between the capacity limits.
    static double default_initial(double b_min, double b_max) { return b_min + 0.5 * (b_max - b_min); }
};

/// Throws InvalidParameter on the first broken invariant.
void validate(const StorageParams& params);

/// e_s(t) = e_g(t) + sum_p y_p(t).
template <typename Scalar, typename Derived>
Scalar net_storage_flow(Scalar provider_grid, const Eigen::MatrixBase<Derived>& trades)
{
    return provider_grid + trades.sum();
}

struct StorageTrajectory {
    Eigen::VectorXd flow;    // e_s(t), charge positive
    Eigen::VectorXd charge;  // b(t) at the end of each interval
};

/// SoC recursion with eta_c on charging intervals and eta_d on discharging ones.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1>
soc_series(typename Derived::Scalar b0, typename Derived::Scalar eta_charge,
           typename Derived::Scalar eta_discharge, const Eigen::MatrixBase<Derived>& flow)
{
    Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> b(flow.size());
    auto level = b0;
    for (Eigen::Index t = 0; t < flow.size(); ++t) {
        level += (flow(t) >= 0 ? eta_charge : eta_discharge) * flow(t);
        b(t) = level;
    }
    return b;
}

StorageTrajectory soc_trajectory(const StorageParams& params, const Eigen::VectorXd& flow);

struct StorageViolation {
    enum class Kind { ChargeRate, DischargeRate, CapacityLow, CapacityHigh, Cyclical };
    Kind kind;
    int t = 0;  // 1..H, or H for the cyclical check
    double value = 0.0;
    double limit = 0.0;
};

std::string to_string(StorageViolation::Kind kind);

struct StorageReport {
    std::vector<StorageViolation> violations;
    bool feasible() const { return violations.empty(); }
};

/// Rate, capacity and cyclical checks, each with slack `tol` in natural units
/// (kW for rates, kWh for charge levels).
StorageReport check_storage_feasibility(const StorageTrajectory& trajectory, const StorageParams& params,
                                        double tol = 1e-9);

}  // namespace cestrade
