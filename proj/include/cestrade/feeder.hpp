#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

#include "cestrade/error.hpp"

namespace cestrade {

// -----------------------------------------------------------------------------
// Radial feeder
// -----------------------------------------------------------------------------

/// One row of the feeder file: `from,to,r_ohm,x_ohm,s_kva`.
struct EdgeSpec {
    int from = 0;
    int to = 0;
    double r_ohm = 0.0;
    double x_ohm = 0.0;
    double s_kva = 0.0;
};

struct FeederSpec {
    std::vector<EdgeSpec> edges;
    double v0_pu = 1.0;
    double v_base_kv = 0.4;
    double s_base_kva = 100.0;
    double v_min_pu = 0.95;
    double v_max_pu = 1.05;
};

/// Line feeding `child` from `parent`. Impedances are kept in ohms and per-unit.
struct Line {
    int parent = 0;
    int child = 0;
    double r_ohm = 0.0;
    double x_ohm = 0.0;
    double s_kva = 0.0;
    double r_pu = 0.0;
    double x_pu = 0.0;
};

/// Validated radial network rooted at bus 0 (the transformer secondary).
///
/// Buses are numbered 0..N. Every per-bus matrix in the library has N rows and
/// row `k` belongs to bus `k + 1`. `lines[k]` is the unique line feeding bus
/// `k + 1`, so per-line series share the same row layout.
struct FeederModel {
    int bus_count = 0;
    std::vector<Line> lines;
    std::vector<int> parent;      // parent[j] for j = 0..N, parent[0] = -1
    std::vector<int> bfs_order;   // non-root buses, parents before children
    double v0_pu = 1.0;
    double v_base_kv = 0.4;
    double s_base_kva = 100.0;
    double v_min_pu = 0.95;
    double v_max_pu = 1.05;

    const Line& line_to(int bus) const { return lines[static_cast<std::size_t>(bus - 1)]; }
    /// Edges on the unique path from bus 0 to `bus`, as child ids.
    std::vector<int> path_to(int bus) const;
};

double impedance_base_ohm(double v_base_kv, double s_base_kva);

FeederModel build_feeder(const FeederSpec& spec);

/// Reads the edge list; bases and limits come from the caller.
FeederSpec load_feeder_csv(const std::string& path);

// -----------------------------------------------------------------------------
// Linearized branch flow
// -----------------------------------------------------------------------------

template <typename Scalar>
struct SensitivityPair {
    using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    Matrix R;
    Matrix X;
};

/// R_ij = -2 * (resistance shared by the root paths of i and j); X likewise.
template <typename Scalar = double>
SensitivityPair<Scalar> sensitivity_matrices(const FeederModel& model)
{
    const int n = model.bus_count;
    std::vector<Scalar> depth_r(static_cast<std::size_t>(n + 1), Scalar(0));
    std::vector<Scalar> depth_x(static_cast<std::size_t>(n + 1), Scalar(0));
    std::vector<int> depth(static_cast<std::size_t>(n + 1), 0);
    for (int bus : model.bfs_order) {
        const Line& line = model.line_to(bus);
        depth_r[bus] = depth_r[line.parent] + Scalar(line.r_pu);
        depth_x[bus] = depth_x[line.parent] + Scalar(line.x_pu);
        depth[bus] = depth[line.parent] + 1;
    }
    auto common_ancestor = [&](int a, int b) {
        while (depth[a] > depth[b]) a = model.parent[a];
        while (depth[b] > depth[a]) b = model.parent[b];
        while (a != b) {
            a = model.parent[a];
            b = model.parent[b];
        }
        return a;
    };

    SensitivityPair<Scalar> pair;
    pair.R.resize(n, n);
    pair.X.resize(n, n);
    for (int i = 1; i <= n; ++i) {
        for (int j = i; j <= n; ++j) {
            const int lca = common_ancestor(i, j);
            pair.R(i - 1, j - 1) = pair.R(j - 1, i - 1) = Scalar(-2) * depth_r[lca];
            pair.X(i - 1, j - 1) = pair.X(j - 1, i - 1) = Scalar(-2) * depth_x[lca];
        }
    }
    return pair;
}

/// Per-bus injections in per-unit, consumption positive. N x H.
struct BusInjectionSeries {
    Eigen::MatrixXd P;
    Eigen::MatrixXd Q;

    Eigen::Index horizon() const { return P.cols(); }
};

/// Squared voltages V(t) = R P(t) + X Q(t) + v0^2 for every column.
template <typename Scalar, typename DerivedP, typename DerivedQ>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>
linear_voltages(const SensitivityPair<Scalar>& pair,
                const Eigen::MatrixBase<DerivedP>& P,
                const Eigen::MatrixBase<DerivedQ>& Q,
                Scalar v0)
{
    if (P.rows() != pair.R.rows() || Q.rows() != pair.X.rows() || P.cols() != Q.cols()) {
        throw Error(ErrorKind::DimensionMismatch, "injection rows must match bus count");
    }
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> vsq = pair.R * P + pair.X * Q;
    vsq.array() += v0 * v0;
    return vsq;
}

inline Eigen::MatrixXd linear_voltages(const SensitivityPair<double>& pair,
                                       const BusInjectionSeries& inj, double v0)
{
    return linear_voltages(pair, inj.P, inj.Q, v0);
}

/// Lossless line flows (l_ij = 0): each line carries its subtree's injection.
struct LineFlows {
    Eigen::MatrixXd P;  // N x H, row k = line feeding bus k + 1
    Eigen::MatrixXd Q;
};

LineFlows lossless_flows(const FeederModel& model, const BusInjectionSeries& inj);

// -----------------------------------------------------------------------------
// Exact DistFlow (validation oracle)
// -----------------------------------------------------------------------------

struct SweepResult {
    Eigen::MatrixXd vsq;   // N x H squared magnitudes
    LineFlows flows;       // sending-end flows
    Eigen::MatrixXd loss;  // squared current l_ij, N x H
    double residual = 0.0; // worst DistFlow equation residual over all buses and steps
    int iterations = 0;    // worst case over time steps

    Eigen::MatrixXd magnitudes() const { return vsq.array().sqrt().matrix(); }
};

/// Forward/backward sweep from a flat start. Iterates until every DistFlow
/// equation holds to `tol`; throws NoConvergence otherwise.
SweepResult sweep_power_flow(const FeederModel& model, const BusInjectionSeries& inj,
                             double tol = 1e-12, int max_iter = 200);

/// Largest residual of the three DistFlow equations at a candidate solution.
double distflow_residual(const FeederModel& model, const BusInjectionSeries& inj,
                         const Eigen::MatrixXd& vsq, const LineFlows& flows,
                         const Eigen::MatrixXd& loss);

// -----------------------------------------------------------------------------
// Limit checks
// -----------------------------------------------------------------------------

struct VoltageViolation {
    int bus = 0;        // 1..N
    int t = 0;          // 1..H
    double value = 0.0; // magnitude, p.u.
    double limit = 0.0; // violated limit, p.u.
    bool over = false;
};

/// Every (bus, t) outside [v_min, v_max]. Works on squared magnitudes, reports magnitudes.
std::vector<VoltageViolation> check_voltage_limits(const Eigen::MatrixXd& vsq,
                                                   const FeederModel& model);

struct ThermalViolation {
    int from = 0;
    int to = 0;
    int t = 0;
    double value = 0.0;  // apparent power, p.u.
    double limit = 0.0;
};

/// Flags P^2 + Q^2 > S_max^2. Equality is compliant.
std::vector<ThermalViolation> check_thermal(const FeederModel& model, const LineFlows& flows);

}  // namespace cestrade
