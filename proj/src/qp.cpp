#include "cestrade/qp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace cestrade {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

enum class Origin { Eq, Ineq, Lower, Upper };

// Every constraint rewritten as n_i' x >= b_i (equalities as n_i' x = b_i).
struct ConstraintSet {
    SparseRows normals;
    Eigen::VectorXd rhs;
    Eigen::VectorXd row_norm;
    std::vector<Origin> origin;
    std::vector<int> source;
    int eq_count = 0;

    Eigen::Index size() const { return rhs.size(); }
};

ConstraintSet collect_constraints(const QpProblem& prob)
{
    const Eigen::Index n = prob.size();
    std::vector<Eigen::Triplet<double>> triplets;
    std::vector<double> rhs;
    ConstraintSet set;
    int row = 0;

    auto add_sparse = [&](const SparseRows& rows, const Eigen::VectorXd& b, double sign, Origin origin) {
        for (Eigen::Index i = 0; i < rows.rows(); ++i) {
            for (SparseRows::InnerIterator it(rows, i); it; ++it) {
                triplets.emplace_back(row, static_cast<int>(it.col()), sign * it.value());
            }
            rhs.push_back(sign * b(i));
            set.origin.push_back(origin);
            set.source.push_back(static_cast<int>(i));
            ++row;
        }
    };
    add_sparse(prob.eq, prob.eq_rhs, 1.0, Origin::Eq);
    set.eq_count = row;
    add_sparse(prob.ineq, prob.ineq_rhs, -1.0, Origin::Ineq);
    if (prob.lower.size() == n) {
        for (Eigen::Index j = 0; j < n; ++j) {
            if (!std::isfinite(prob.lower(j))) continue;
            triplets.emplace_back(row++, static_cast<int>(j), 1.0);
            rhs.push_back(prob.lower(j));
            set.origin.push_back(Origin::Lower);
            set.source.push_back(static_cast<int>(j));
        }
    }
    if (prob.upper.size() == n) {
        for (Eigen::Index j = 0; j < n; ++j) {
            if (!std::isfinite(prob.upper(j))) continue;
            triplets.emplace_back(row++, static_cast<int>(j), -1.0);
            rhs.push_back(-prob.upper(j));
            set.origin.push_back(Origin::Upper);
            set.source.push_back(static_cast<int>(j));
        }
    }
    set.normals.resize(row, n);
    set.normals.setFromTriplets(triplets.begin(), triplets.end());
    set.normals.makeCompressed();
    set.rhs = Eigen::Map<Eigen::VectorXd>(rhs.data(), static_cast<Eigen::Index>(rhs.size()));
    set.row_norm.resize(row);
    for (int i = 0; i < row; ++i) {
        set.row_norm(i) = std::max(set.normals.row(i).norm(), std::numeric_limits<double>::min());
    }
    return set;
}

std::string describe(const ConstraintSet& set, int index)
{
    switch (set.origin[index]) {
    case Origin::Eq: return "eq " + std::to_string(set.source[index]);
    case Origin::Ineq: return "ineq " + std::to_string(set.source[index]);
    case Origin::Lower: return "lower " + std::to_string(set.source[index]);
    case Origin::Upper: return "upper " + std::to_string(set.source[index]);
    }
    return "?";
}

// Plane rotation taking (a, b) to (h, 0).
struct Rotation {
    double c = 1.0;
    double s = 0.0;
    double h = 0.0;
};

Rotation make_rotation(double a, double b)
{
    if (b == 0.0) return {1.0, 0.0, a};
    const double h = std::hypot(a, b);
    return {a / h, b / h, h};
}

// Goldfarb-Idnani state: J' N_active = [R; 0] with J = L^-T Q.
class DualActiveSet {
public:
    DualActiveSet(const Eigen::MatrixXd& hessian, const Eigen::VectorXd& gradient, const ConstraintSet& cons)
        : G_(hessian), a_(gradient), cons_(cons), n_(hessian.rows())
    {
        Eigen::LLT<Eigen::MatrixXd> llt(G_);
        if (llt.info() != Eigen::Success) {
            throw Error(ErrorKind::IllConditioned, "quadratic term is not negative definite after regularization");
        }
        const Eigen::VectorXd pivots = llt.matrixLLT().diagonal();
        if (n_ > 0 && pivots.minCoeff() < 1e-12 * pivots.maxCoeff()) {
            throw Error(ErrorKind::IllConditioned, "Cholesky pivot below threshold");
        }
        J_ = llt.matrixU().solve(Eigen::MatrixXd::Identity(n_, n_));
        x_ = -J_ * (J_.transpose() * a_);
        R_ = Eigen::MatrixXd::Zero(n_, n_);
        sign_.assign(static_cast<std::size_t>(cons_.size()), 1.0);
        is_active_.assign(static_cast<std::size_t>(cons_.size()), false);
    }

    const Eigen::VectorXd& x() const { return x_; }
    const std::vector<int>& active() const { return active_; }
    const std::vector<double>& multipliers() const { return u_; }
    double sign(int i) const { return sign_[i]; }
    long iterations() const { return iterations_; }
    std::vector<double>& trace() { return trace_; }
    void enable_trace(bool on) { record_trace_ = on; }

    double slack(int i) const { return sign_[i] * (cons_.normals.row(i).dot(x_) - cons_.rhs(i)); }

    // Brings constraint p into the active set. Returns false if the problem is infeasible.
    bool enter(int p, long max_iter)
    {
        double s = slack(p);
        double up = 0.0;
        while (true) {
            if (++iterations_ > max_iter) {
                throw Error(ErrorKind::IterationLimit, "dual active-set exceeded " + std::to_string(max_iter) + " steps");
            }
            compute_d(p);
            const Eigen::Index q = static_cast<Eigen::Index>(active_.size());
            z_.noalias() = J_.rightCols(n_ - q) * d_.tail(n_ - q);
            r_ = R_.topLeftCorner(q, q).triangularView<Eigen::Upper>().solve(d_.head(q));

            double t1 = kInf;
            Eigen::Index drop = -1;
            for (Eigen::Index j = 0; j < q; ++j) {
                if (cons_.origin[active_[j]] == Origin::Eq || !(r_(j) > 0.0)) continue;
                const double ratio = u_[j] / r_(j);
                if (ratio < t1) {
                    t1 = ratio;
                    drop = j;
                }
            }
            const double zn = normal_dot(p, z_);
            double t2 = kInf;
            if (zn > kDependence * d_.squaredNorm()) t2 = -s / zn;

            if (!std::isfinite(t2) && std::abs(s) <= kDependentSlack * (1.0 + std::abs(cons_.rhs(p)))) {
                // Consistent with the active rows already; nothing to add.
                return true;
            }
            if (!std::isfinite(t1) && !std::isfinite(t2)) return false;
            if (!std::isfinite(t2)) {
                for (Eigen::Index j = 0; j < q; ++j) u_[j] -= t1 * r_(j);
                up += t1;
                remove(drop);
                continue;
            }
            const double t = std::min(t1, t2);
            x_ += t * z_;
            for (Eigen::Index j = 0; j < q; ++j) u_[j] -= t * r_(j);
            up += t;
            if (record_trace_) trace_.push_back(-(0.5 * x_.dot(G_ * x_) + a_.dot(x_)));
            if (t == t2) {
                append(p, up);
                return true;
            }
            remove(drop);
            s = slack(p);
        }
    }

    // Orients an equality so that it is entered from the violated side.
    void orient_equality(int p)
    {
        sign_[p] = 1.0;
        if (slack(p) > 0.0) sign_[p] = -1.0;
    }

    bool is_active(int i) const { return is_active_[i]; }

    // Newton correction of the active-set KKT system using the current factors.
    void refine()
    {
        const Eigen::Index q = static_cast<Eigen::Index>(active_.size());
        Eigen::VectorXd r_stat = G_ * x_ + a_;
        Eigen::VectorXd r_prim(q);
        for (Eigen::Index j = 0; j < q; ++j) {
            const int i = active_[j];
            for (SparseRows::InnerIterator it(cons_.normals, i); it; ++it) {
                r_stat(it.col()) -= u_[j] * sign_[i] * it.value();
            }
            r_prim(j) = slack(i);
        }
        const auto Rq = R_.topLeftCorner(q, q).triangularView<Eigen::Upper>();
        const Eigen::VectorXd jr = J_.transpose() * r_stat;
        Eigen::VectorXd rhs = jr.head(q) - Eigen::VectorXd(Rq.transpose().solve(r_prim));
        const Eigen::VectorXd du = Rq.solve(rhs);
        Eigen::VectorXd w = -jr;
        w.head(q) += R_.topLeftCorner(q, q).triangularView<Eigen::Upper>() * du;
        x_ += J_ * w;
        for (Eigen::Index j = 0; j < q; ++j) u_[j] += du(j);
    }

private:
    static constexpr double kDependence = 1e-14;
    static constexpr double kDependentSlack = 1e-11;

    double normal_dot(int p, const Eigen::VectorXd& v) const { return sign_[p] * cons_.normals.row(p).dot(v); }

    void compute_d(int p)
    {
        d_.setZero(n_);
        for (SparseRows::InnerIterator it(cons_.normals, p); it; ++it) {
            d_ += (sign_[p] * it.value()) * J_.row(it.col()).transpose();
        }
    }

    void append(int p, double up)
    {
        const Eigen::Index q = static_cast<Eigen::Index>(active_.size());
        for (Eigen::Index i = n_ - 1; i > q; --i) {
            const Rotation g = make_rotation(d_(i - 1), d_(i));
            if (g.s == 0.0) continue;
            d_(i - 1) = g.h;
            d_(i) = 0.0;
            rotate_columns(i - 1, i, g);
        }
        R_.col(q).head(q + 1) = d_.head(q + 1);
        active_.push_back(p);
        u_.push_back(up);
        is_active_[p] = true;
    }

    void remove(Eigen::Index l)
    {
        const Eigen::Index q = static_cast<Eigen::Index>(active_.size());
        is_active_[active_[l]] = false;
        for (Eigen::Index j = l; j + 1 < q; ++j) R_.col(j).head(j + 2) = R_.col(j + 1).head(j + 2);
        R_.col(q - 1).setZero();
        for (Eigen::Index j = l; j + 1 < q; ++j) {
            const Rotation g = make_rotation(R_(j, j), R_(j + 1, j));
            if (g.s == 0.0) continue;
            for (Eigen::Index k = j; k + 1 < q; ++k) {
                const double a = R_(j, k);
                const double b = R_(j + 1, k);
                R_(j, k) = g.c * a + g.s * b;
                R_(j + 1, k) = -g.s * a + g.c * b;
            }
            R_(j + 1, j) = 0.0;
            rotate_columns(j, j + 1, g);
        }
        active_.erase(active_.begin() + l);
        u_.erase(u_.begin() + l);
    }

    void rotate_columns(Eigen::Index i, Eigen::Index k, const Rotation& g)
    {
        double* ci = J_.col(i).data();
        double* ck = J_.col(k).data();
        for (Eigen::Index row = 0; row < n_; ++row) {
            const double a = ci[row];
            const double b = ck[row];
            ci[row] = g.c * a + g.s * b;
            ck[row] = -g.s * a + g.c * b;
        }
    }

    const Eigen::MatrixXd& G_;
    const Eigen::VectorXd& a_;
    const ConstraintSet& cons_;
    Eigen::Index n_;
    Eigen::MatrixXd J_;
    Eigen::MatrixXd R_;
    Eigen::VectorXd x_;
    Eigen::VectorXd d_, z_, r_;
    std::vector<int> active_;
    std::vector<double> u_;
    std::vector<double> sign_;
    std::vector<bool> is_active_;
    std::vector<double> trace_;
    bool record_trace_ = false;
    long iterations_ = 0;
};

}  // namespace

std::string to_string(QpStatus status)
{
    switch (status) {
    case QpStatus::Optimal: return "Optimal";
    case QpStatus::Infeasible: return "Infeasible";
    case QpStatus::Degenerate: return "Degenerate";
    }
    return "?";
}

void QpProblem::check() const
{
    const Eigen::Index n = size();
    if (quadratic.rows() != n || quadratic.cols() != n) {
        throw Error(ErrorKind::DimensionMismatch, "quadratic term must be n x n");
    }
    if (ineq.rows() != ineq_rhs.size() || (ineq.rows() > 0 && ineq.cols() != n)) {
        throw Error(ErrorKind::DimensionMismatch, "inequality system shape");
    }
    if (eq.rows() != eq_rhs.size() || (eq.rows() > 0 && eq.cols() != n)) {
        throw Error(ErrorKind::DimensionMismatch, "equality system shape");
    }
    if ((lower.size() != 0 && lower.size() != n) || (upper.size() != 0 && upper.size() != n)) {
        throw Error(ErrorKind::DimensionMismatch, "bound vectors shape");
    }
    const double scale = std::max(1.0, quadratic.cwiseAbs().maxCoeff());
    if (!quadratic.isApprox(quadratic.transpose(), 1e-12) &&
        (quadratic - quadratic.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
        throw Error(ErrorKind::InvalidParameter, "quadratic term must be symmetric");
    }
}

QpSolution solve_qp(const QpProblem& prob, const QpOptions& opt)
{
    prob.check();
    const Eigen::Index n = prob.size();
    const ConstraintSet cons = collect_constraints(prob);
    const Eigen::Index m = cons.size();

    QpSolution sol;
    const double curvature = n > 0 ? prob.quadratic.diagonal().cwiseAbs().maxCoeff() : 0.0;
    const double rho = opt.ridge * std::max(1.0, curvature);
    sol.ridge = Eigen::VectorXd::Zero(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (prob.quadratic(i, i) == 0.0) sol.ridge(i) = rho;
    }

    Eigen::MatrixXd G = -2.0 * prob.quadratic;
    G.diagonal() += 2.0 * sol.ridge;
    const Eigen::VectorXd a = -prob.linear;
    const long max_iter = opt.max_iter > 0 ? opt.max_iter : 50L * static_cast<long>(n + m);

    DualActiveSet solver(G, a, cons);
    solver.enable_trace(opt.record_trace);

    auto fail_infeasible = [&](int p) {
        sol.status = QpStatus::Infeasible;
        sol.infeasible_constraint = describe(cons, p);
        sol.x = solver.x();
        sol.iterations = solver.iterations();
        sol.objective = prob.objective(sol.x);
        return sol;
    };

    for (int p = 0; p < cons.eq_count; ++p) {
        solver.orient_equality(p);
        if (!solver.enter(p, max_iter)) return fail_infeasible(p);
    }

    // Normalized violation threshold for entering constraints.
    auto threshold = [&](int i) { return 1e-3 * opt.tol * (1.0 + std::abs(cons.rhs(i)) / cons.row_norm(i)); };

    for (int round = 0;; ++round) {
        while (true) {
            const Eigen::VectorXd s = cons.normals * solver.x() - cons.rhs;
            int enter = -1;
            double worst = 0.0;
            for (Eigen::Index i = cons.eq_count; i < m; ++i) {
                if (solver.is_active(static_cast<int>(i))) continue;
                const double v = -s(i) / cons.row_norm(i);
                if (v > threshold(static_cast<int>(i)) && v > worst) {
                    worst = v;
                    enter = static_cast<int>(i);
                }
            }
            if (enter < 0) break;
            if (!solver.enter(enter, max_iter)) return fail_infeasible(enter);
        }
        for (int k = 0; k < opt.refinement_steps; ++k) solver.refine();

        bool clean = true;
        const Eigen::VectorXd s = cons.normals * solver.x() - cons.rhs;
        for (Eigen::Index i = cons.eq_count; i < m; ++i) {
            if (!solver.is_active(static_cast<int>(i)) && -s(i) / cons.row_norm(i) > threshold(static_cast<int>(i))) {
                clean = false;
                break;
            }
        }
        if (clean || round >= 3) break;
    }

    sol.x = solver.x();
    sol.iterations = solver.iterations();
    sol.objective = prob.objective(sol.x);
    sol.regularized_objective = sol.objective - sol.x.dot(sol.ridge.cwiseProduct(sol.x));
    sol.objective_trace = std::move(solver.trace());
    sol.ineq_multipliers = Eigen::VectorXd::Zero(prob.ineq.rows());
    sol.eq_multipliers = Eigen::VectorXd::Zero(prob.eq.rows());
    sol.lower_multipliers = Eigen::VectorXd::Zero(n);
    sol.upper_multipliers = Eigen::VectorXd::Zero(n);

    const auto& active = solver.active();
    const auto& u = solver.multipliers();
    for (std::size_t j = 0; j < active.size(); ++j) {
        const int i = active[j];
        switch (cons.origin[i]) {
        case Origin::Eq: sol.eq_multipliers(cons.source[i]) = -solver.sign(i) * u[j]; break;
        case Origin::Ineq:
            sol.ineq_multipliers(cons.source[i]) = u[j];
            sol.active_ineq.push_back(cons.source[i]);
            break;
        case Origin::Lower: sol.lower_multipliers(cons.source[i]) = u[j]; break;
        case Origin::Upper: sol.upper_multipliers(cons.source[i]) = u[j]; break;
        }
    }
    std::sort(sol.active_ineq.begin(), sol.active_ineq.end());

    sol.status = kkt_residual(prob, sol).certified(opt.tol) ? QpStatus::Optimal : QpStatus::Degenerate;
    return sol;
}

double KktResidual::worst() const { return std::max({stationarity, primal, dual, complementarity}); }

KktResidual kkt_residual(const QpProblem& prob, const QpSolution& sol)
{
    const Eigen::Index n = prob.size();
    if (sol.x.size() != n) throw Error(ErrorKind::DimensionMismatch, "solution size");
    const Eigen::VectorXd ridge = sol.ridge.size() == n ? sol.ridge : Eigen::VectorXd::Zero(n);
    const auto mult = [&](const Eigen::VectorXd& v, Eigen::Index size) {
        return v.size() == size ? v : Eigen::VectorXd(Eigen::VectorXd::Zero(size));
    };
    const Eigen::VectorXd lam = mult(sol.ineq_multipliers, prob.ineq.rows());
    const Eigen::VectorXd nu = mult(sol.eq_multipliers, prob.eq.rows());
    const Eigen::VectorXd mlo = mult(sol.lower_multipliers, n);
    const Eigen::VectorXd mhi = mult(sol.upper_multipliers, n);

    KktResidual res;
    Eigen::VectorXd grad = 2.0 * (prob.quadratic * sol.x) - 2.0 * ridge.cwiseProduct(sol.x) + prob.linear;
    if (prob.ineq.rows() > 0) grad -= prob.ineq.transpose() * lam;
    if (prob.eq.rows() > 0) grad -= prob.eq.transpose() * nu;
    grad += mlo - mhi;
    res.stationarity = n > 0 ? grad.cwiseAbs().maxCoeff() : 0.0;

    if (prob.ineq.rows() > 0) {
        const Eigen::VectorXd slack = prob.ineq_rhs - prob.ineq * sol.x;
        res.primal = std::max(res.primal, (-slack).cwiseMax(0.0).maxCoeff());
        res.dual = std::max(res.dual, (-lam).cwiseMax(0.0).maxCoeff());
        res.complementarity = std::max(res.complementarity, lam.cwiseProduct(slack).cwiseAbs().maxCoeff());
    }
    if (prob.eq.rows() > 0) {
        res.primal = std::max(res.primal, (prob.eq * sol.x - prob.eq_rhs).cwiseAbs().maxCoeff());
    }
    for (Eigen::Index j = 0; j < n; ++j) {
        if (prob.lower.size() == n && std::isfinite(prob.lower(j))) {
            const double gap = sol.x(j) - prob.lower(j);
            res.primal = std::max(res.primal, -gap);
            res.complementarity = std::max(res.complementarity, std::abs(mlo(j) * gap));
        }
        if (prob.upper.size() == n && std::isfinite(prob.upper(j))) {
            const double gap = prob.upper(j) - sol.x(j);
            res.primal = std::max(res.primal, -gap);
            res.complementarity = std::max(res.complementarity, std::abs(mhi(j) * gap));
        }
        res.dual = std::max({res.dual, -mlo(j), -mhi(j)});
    }
    res.primal = std::max(res.primal, 0.0);
    return res;
}

double duality_gap(const QpProblem& prob, const QpSolution& sol)
{
    const Eigen::Index n = prob.size();
    const Eigen::MatrixXd Qr = prob.quadratic - Eigen::MatrixXd(sol.ridge.asDiagonal());
    Eigen::VectorXd w = prob.linear;
    double bound = 0.0;
    if (prob.ineq.rows() > 0) {
        w -= prob.ineq.transpose() * sol.ineq_multipliers;
        bound += sol.ineq_multipliers.dot(prob.ineq_rhs);
    }
    if (prob.eq.rows() > 0) {
        w -= prob.eq.transpose() * sol.eq_multipliers;
        bound += sol.eq_multipliers.dot(prob.eq_rhs);
    }
    for (Eigen::Index j = 0; j < n; ++j) {
        if (prob.lower.size() == n && std::isfinite(prob.lower(j))) {
            w(j) += sol.lower_multipliers(j);
            bound -= sol.lower_multipliers(j) * prob.lower(j);
        }
        if (prob.upper.size() == n && std::isfinite(prob.upper(j))) {
            w(j) -= sol.upper_multipliers(j);
            bound += sol.upper_multipliers(j) * prob.upper(j);
        }
    }
    // max_x x'Qr x + w'x = -w' Qr^-1 w / 4 for negative definite Qr
    const Eigen::VectorXd xs = Qr.ldlt().solve(w);
    bound += -0.25 * w.dot(xs);
    const double primal = sol.x.dot(Qr * sol.x) + prob.linear.dot(sol.x);
    return bound - primal;
}

}  // namespace cestrade
