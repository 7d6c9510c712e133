#pragma once

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include <string>
#include <vector>

#include "cestrade/error.hpp"

namespace cestrade {

using SparseRows = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// maximize  x' Q x + c' x
/// subject to  A x <= b,  C x = d,  lower <= x <= upper
///
/// Q must be symmetric negative semidefinite. Coordinates with zero curvature
/// receive a small ridge so the solver sees a strictly concave objective; the
/// ridge actually applied is reported in the solution.
struct QpProblem {
    Eigen::MatrixXd quadratic;
    Eigen::VectorXd linear;
    SparseRows ineq;
    Eigen::VectorXd ineq_rhs;
    SparseRows eq;
    Eigen::VectorXd eq_rhs;
    Eigen::VectorXd lower;  // empty or size n; -inf for free
    Eigen::VectorXd upper;  // empty or size n; +inf for free

    Eigen::Index size() const { return linear.size(); }
    double objective(const Eigen::VectorXd& x) const { return x.dot(quadratic * x) + linear.dot(x); }
    /// Throws DimensionMismatch / InvalidParameter on malformed input.
    void check() const;
};

enum class QpStatus { Optimal, Infeasible, Degenerate };

std::string to_string(QpStatus status);

struct QpOptions {
    double tol = 1e-8;
    long max_iter = 0;       // 0 -> 50 (n + m)
    double ridge = 1e-9;     // relative to the largest curvature magnitude
    int refinement_steps = 3;
    bool record_trace = false;
};

struct QpSolution {
    Eigen::VectorXd x;
    double objective = 0.0;              // of the problem as given
    double regularized_objective = 0.0;  // including the ridge
    Eigen::VectorXd ineq_multipliers;    // >= 0
    Eigen::VectorXd eq_multipliers;
    Eigen::VectorXd lower_multipliers;   // >= 0, zero where no bound
    Eigen::VectorXd upper_multipliers;
    Eigen::VectorXd ridge;               // per-coordinate curvature subtracted from Q
    QpStatus status = QpStatus::Optimal;
    long iterations = 0;
    std::vector<int> active_ineq;        // active inequality rows at exit
    std::string infeasible_constraint;   // set when Infeasible, e.g. "ineq 12"
    std::vector<double> objective_trace; // regularized objective after each primal step
};

/// Dual active-set method (Goldfarb-Idnani) with iterative refinement of the
/// final equality-constrained system. Throws IterationLimit or IllConditioned.
QpSolution solve_qp(const QpProblem& problem, const QpOptions& options = {});

struct KktResidual {
    double stationarity = 0.0;
    double primal = 0.0;
    double dual = 0.0;
    double complementarity = 0.0;

    double worst() const;
    bool certified(double tol) const { return worst() < tol; }
};

/// Absolute residuals of the regularized problem's KKT conditions at `sol`.
KktResidual kkt_residual(const QpProblem& problem, const QpSolution& sol);

/// Lagrangian dual bound minus primal value. Requires a strictly concave
/// (regularized) objective and a problem without box bounds.
double duality_gap(const QpProblem& problem, const QpSolution& sol);

}  // namespace cestrade
