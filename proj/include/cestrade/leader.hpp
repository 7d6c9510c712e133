#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cestrade/feeder.hpp"
#include "cestrade/followers.hpp"
#include "cestrade/qp.hpp"
#include "cestrade/storage.hpp"

namespace cestrade {

/// Per-interval revenue W_s(t) = mu1 lambda_s^2 + mu2 lambda_s + mu3 e_g^2 + mu4 e_g
/// once the followers' equilibrium is substituted.
template <typename Scalar>
struct MuCoefficients {
    Scalar mu1, mu2, mu3, mu4;

    Scalar operator()(Scalar lambda_s, Scalar e_g) const
    {
        return (mu1 * lambda_s + mu2) * lambda_s + (mu3 * e_g + mu4) * e_g;
    }
};

template <typename Scalar>
MuCoefficients<Scalar> mu_coefficients(Eigen::Index participants, Scalar phi, Scalar delta,
                                       Scalar nonparticipant_energy, Scalar total_surplus)
{
    const Scalar m = Scalar(participants);
    const Scalar a = Scalar(1) / (m + Scalar(1));
    return {-m * a / phi,
            -total_surplus + m * a * (delta / phi + nonparticipant_energy),
            -phi * a,
            -a * (delta + phi * nonparticipant_energy)};
}

enum class EpsilonCase { Surplus, Deficit, Mixed };

std::string to_string(EpsilonCase c);

struct EpsilonBounds {
    EpsilonCase tag;
    double lower;
    double upper;
};

/// Admissible equilibrium offsets keeping every follower inside its trade interval.
template <typename Derived>
EpsilonBounds epsilon_bounds(const Eigen::MatrixBase<Derived>& s)
{
    if (s.size() > 0 && (s.array() >= 0).all()) return {EpsilonCase::Surplus, -double(s.minCoeff()), 0.0};
    if (s.size() > 0 && (s.array() < 0).all()) return {EpsilonCase::Deficit, 0.0, -double(s.maxCoeff())};
    return {EpsilonCase::Mixed, 0.0, 0.0};
}

/// Feeder data needed for voltage rows and audits.
struct NetworkData {
    FeederModel feeder;
    SensitivityPair<double> sensitivity;
    BusInjectionSeries base;     // per-unit user injections, storage excluded
    int ces_bus = 0;
    double voltage_margin = 0.0; // p.u. tightening of both limits inside the optimization
};

NetworkData make_network(const FeederModel& feeder, const BusInjectionSeries& base, int ces_bus,
                         double voltage_margin = 0.0);

struct LeaderInputs {
    Eigen::VectorXd phi;                    // H
    Eigen::VectorXd delta;                  // H
    Eigen::VectorXd nonparticipant_energy;  // E_N, H
    Eigen::MatrixXd surplus;                // M x H
    double price_floor = 18.5;
    double import_max = 185.0 * 5.0 / 60.0;  // kWh per interval
    double export_max = 185.0 * 5.0 / 60.0;
    StorageParams storage;
    std::optional<NetworkData> network;

    Eigen::Index horizon() const { return phi.size(); }
    Eigen::Index participants() const { return surplus.rows(); }
};

enum class RowFamily {
    PriceFloor,
    TransformerImport,
    TransformerExport,
    ChargeRate,
    DischargeRate,
    CapacityLow,
    CapacityHigh,
    Cyclical,
    EpsilonLow,
    EpsilonHigh,
    EpsilonPin,
    Link,
    VoltageLow,
    VoltageHigh,
};

std::string to_string(RowFamily family);

struct RowTag {
    RowFamily family;
    int t = 0;    // 1..H
    int bus = 0;  // voltage rows only
};

/// Leader QP over x = [lambda_s(1..H), e_g(1..H), c(1..H), d(1..H)].
struct LeaderProblem {
    QpProblem qp;
    std::vector<RowTag> ineq_tags;
    std::vector<RowTag> eq_tags;
    std::vector<MuCoefficients<double>> mu;
    std::vector<EpsilonBounds> epsilon;
    double split_penalty = 0.0;
    Eigen::Index horizon = 0;
    bool voltage_constraints = false;

    Eigen::Index lambda(Eigen::Index t) const { return t; }
    Eigen::Index grid(Eigen::Index t) const { return horizon + t; }
    Eigen::Index charge(Eigen::Index t) const { return 2 * horizon + t; }
    Eigen::Index discharge(Eigen::Index t) const { return 3 * horizon + t; }
};

struct AssembleOptions {
    bool voltage_constraints = true;
    double split_penalty_scale = 1e-6;  // times mean |mu2|
    std::vector<RowFamily> omit;        // families left out, for infeasibility probing
};

/// Throws HorizonMismatch, CesBusMissing, InvalidParameter.
LeaderProblem assemble_leader_problem(const LeaderInputs& inputs, const AssembleOptions& options = {});

/// W_s = sum_t (-lambda_s sum_p y_p - lambda_g e_g).
template <typename DerivedL, typename DerivedY, typename DerivedG, typename DerivedE>
typename DerivedL::Scalar revenue(const Eigen::MatrixBase<DerivedL>& lambda_s, const Eigen::MatrixBase<DerivedY>& trades,
                                  const Eigen::MatrixBase<DerivedG>& lambda_g, const Eigen::MatrixBase<DerivedE>& e_g)
{
    if (lambda_s.size() != trades.cols() || lambda_g.size() != lambda_s.size() || e_g.size() != lambda_s.size()) {
        throw Error(ErrorKind::DimensionMismatch, "revenue series are not aligned");
    }
    typename DerivedL::Scalar total(0);
    for (Eigen::Index t = 0; t < lambda_s.size(); ++t) {
        total += -lambda_s(t) * trades.col(t).sum() - lambda_g(t) * e_g(t);
    }
    return total;
}

struct ConstraintAudit {
    std::vector<std::string> failures;
    double worst = 0.0;  // largest violation found, natural units

    bool passed() const { return failures.empty(); }
};

struct LeaderCertificate {
    int probes = 0;
    int face_probes = 0;
    int radial_probes = 0;
    double max_advantage = 0.0;          // penalized, regularized QP objective
    double max_revenue_advantage = 0.0;  // raw W_s
    double tolerance = 1e-6;
    bool passed() const { return max_advantage <= tolerance; }
};

struct StackelbergCertificate {
    LeaderCertificate leader;
    NashCertificate followers;  // worst interval
    int follower_t = 0;         // 1..H
    bool passed() const { return leader.passed() && followers.passed(); }
};

struct EquilibriumResult {
    bool voltage_constraints = false;
    QpStatus status = QpStatus::Optimal;
    Eigen::VectorXd lambda_s, e_g, epsilon, e_s, charge_level, c, d, lambda_g, grid_energy;
    Eigen::MatrixXd trades;       // y*, M x H
    Eigen::MatrixXd grid_trades;  // e*_p, M x H
    Eigen::VectorXd participant_costs;  // M, summed over the horizon
    double revenue = 0.0;
    double objective = 0.0;  // QP objective including the split penalty and ridge
    double penalty = 0.0;    // split penalty at the solution
    double max_complementarity = 0.0;
    KktResidual kkt;
    long qp_iterations = 0;
    ConstraintAudit audit;
    Eigen::MatrixXd vsq_linear;  // N x H when network data is present
    Eigen::MatrixXd vsq_exact;
    double sweep_residual = 0.0;
    std::vector<VoltageViolation> voltage_violations;  // exact sweep
    std::vector<ThermalViolation> thermal_violations;
    std::optional<StackelbergCertificate> certificate;
    Eigen::VectorXd x;      // raw QP solution
    Eigen::VectorXd ridge;  // curvature the solver added per coordinate
    double split_penalty_scale = 1e-6;
};

struct LeaderOptions {
    AssembleOptions assemble;
    QpOptions qp;
    bool verify = true;
    int probes = 1000;
    std::uint64_t seed = 0;
    NashScanOptions nash;
    double complementarity_tol = 1e-6;
    double audit_tol = 1e-6;
};

/// Solves the leader QP, reconstructs the followers' equilibrium and attaches audits
/// and certificates. Throws InfeasibleScenario (with the irreducible constraint
/// families), ComplementarityViolation, CertificateFailure.
EquilibriumResult solve_stackelberg(const LeaderInputs& inputs, const LeaderOptions& options = {});

/// Follower equilibrium, prices, revenue and storage trajectory for given leader decisions.
void reconstruct(const LeaderInputs& inputs, const Eigen::VectorXd& lambda_s, const Eigen::VectorXd& e_g,
                 EquilibriumResult& out);

/// Checks the equilibrium against every constraint family in natural units.
ConstraintAudit audit_equilibrium(const LeaderInputs& inputs, const EquilibriumResult& result,
                                  bool voltage_constraints, double tol = 1e-6);

/// Leader-side probes around rho* plus per-interval follower deviation scans.
StackelbergCertificate verify_stackelberg(const EquilibriumResult& result, const LeaderInputs& inputs,
                                          int probes = 1000, std::uint64_t seed = 0,
                                          const NashScanOptions& nash = {});

/// As verify_stackelberg, but throws CertificateFailure.
StackelbergCertificate require_stackelberg(const EquilibriumResult& result, const LeaderInputs& inputs,
                                           int probes = 1000, std::uint64_t seed = 0,
                                           const NashScanOptions& nash = {});

/// Market context of interval t at the given leader decisions.
MarketContext market_context(const LeaderInputs& inputs, Eigen::Index t, double lambda_s, double e_g);

}  // namespace cestrade
