#include "cestrade/leader.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace cestrade {

namespace {

constexpr double kFeasTol = 1e-12;

struct ProbeSpace {
    const QpProblem& qp;
    Eigen::VectorXd ridge;
    double floor = 0.0;  // violation already present at rho*

    // Objective the solver maximized: penalized revenue minus the ridge.
    double value(const Eigen::VectorXd& x) const { return qp.objective(x) - x.dot(ridge.cwiseProduct(x)); }

    double violation(const Eigen::VectorXd& x) const
    {
        double worst = 0.0;
        if (qp.ineq.rows() > 0) worst = std::max(worst, (qp.ineq * x - qp.ineq_rhs).maxCoeff());
        if (qp.eq.rows() > 0) worst = std::max(worst, (qp.eq * x - qp.eq_rhs).cwiseAbs().maxCoeff());
        worst = std::max(worst, (qp.lower - x).maxCoeff());
        worst = std::max(worst, (x - qp.upper).maxCoeff());
        return worst;
    }

    double tolerance(const Eigen::VectorXd& x) const
    {
        return std::max(2.0 * floor, kFeasTol * (1.0 + x.cwiseAbs().maxCoeff()));
    }
};

// Orthonormal basis of the directions that keep every active row at its bound.
Eigen::MatrixXd face_basis(const ProbeSpace& space, const Eigen::VectorXd& x)
{
    const QpProblem& qp = space.qp;
    const Eigen::Index n = x.size();
    std::vector<Eigen::VectorXd> rows;
    const double tol = 1e-7 * (1.0 + x.cwiseAbs().maxCoeff());
    if (qp.ineq.rows() > 0) {
        const Eigen::VectorXd slack = qp.ineq_rhs - qp.ineq * x;
        for (Eigen::Index i = 0; i < slack.size(); ++i) {
            if (slack(i) <= tol) rows.push_back(Eigen::VectorXd(qp.ineq.row(i).transpose()));
        }
    }
    for (Eigen::Index i = 0; i < qp.eq.rows(); ++i) rows.push_back(Eigen::VectorXd(qp.eq.row(i).transpose()));
    for (Eigen::Index j = 0; j < n; ++j) {
        if (std::abs(x(j) - qp.lower(j)) <= tol || std::abs(qp.upper(j) - x(j)) <= tol) {
            rows.push_back(Eigen::VectorXd::Unit(n, j));
        }
    }
    if (rows.empty()) return Eigen::MatrixXd::Identity(n, n);
    Eigen::MatrixXd a(n, static_cast<Eigen::Index>(rows.size()));
    for (std::size_t k = 0; k < rows.size(); ++k) a.col(static_cast<Eigen::Index>(k)) = rows[k];
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
    qr.setThreshold(1e-10);
    const Eigen::Index rank = qr.rank();
    const Eigen::MatrixXd q = qr.householderQ();
    return q.rightCols(n - rank);
}

// Largest step along dir that keeps x feasible.
double max_step(const ProbeSpace& space, const Eigen::VectorXd& x, const Eigen::VectorXd& dir)
{
    const QpProblem& qp = space.qp;
    double step = std::numeric_limits<double>::infinity();
    if (qp.ineq.rows() > 0) {
        const Eigen::VectorXd slack = qp.ineq_rhs - qp.ineq * x;
        const Eigen::VectorXd rate = qp.ineq * dir;
        for (Eigen::Index i = 0; i < rate.size(); ++i) {
            if (rate(i) > 1e-12) step = std::min(step, std::max(slack(i), 0.0) / rate(i));
        }
    }
    for (Eigen::Index j = 0; j < x.size(); ++j) {
        if (dir(j) < -1e-12 && std::isfinite(qp.lower(j))) step = std::min(step, std::max(x(j) - qp.lower(j), 0.0) / -dir(j));
        if (dir(j) > 1e-12 && std::isfinite(qp.upper(j))) step = std::min(step, std::max(qp.upper(j) - x(j), 0.0) / dir(j));
    }
    return step;
}

// Leader decisions with the complementary charge split implied by the link rows.
Eigen::VectorXd complete(const LeaderProblem& lp, const Eigen::VectorXd& lambda_s, const Eigen::VectorXd& e_g)
{
    const Eigen::Index h = lp.horizon;
    Eigen::VectorXd x = Eigen::VectorXd::Zero(4 * h);
    x.head(h) = lambda_s;
    x.segment(h, h) = e_g;
    for (Eigen::Index r = 0; r < lp.qp.eq.rows(); ++r) {
        if (lp.eq_tags[static_cast<std::size_t>(r)].family != RowFamily::Link) continue;
        const Eigen::Index t = lp.eq_tags[static_cast<std::size_t>(r)].t - 1;
        // c - d = e_s, and e_s is what remains of the row once c and d are zero
        const double es = lp.qp.eq_rhs(r) - lp.qp.eq.row(r).dot(x);
        x(lp.charge(t)) = std::max(es, 0.0);
        x(lp.discharge(t)) = std::max(-es, 0.0);
    }
    return x;
}

double revenue_at(const LeaderProblem& lp, const Eigen::VectorXd& x)
{
    double total = 0.0;
    for (Eigen::Index t = 0; t < lp.horizon; ++t) total += lp.mu[static_cast<std::size_t>(t)](x(lp.lambda(t)), x(lp.grid(t)));
    return total;
}

}  // namespace

StackelbergCertificate verify_stackelberg(const EquilibriumResult& result, const LeaderInputs& inputs, int probes,
                                          std::uint64_t seed, const NashScanOptions& nash)
{
    StackelbergCertificate cert;
    const Eigen::Index h = inputs.horizon();

    // follower side, every interval
    for (Eigen::Index t = 0; t < h; ++t) {
        const MarketContext ctx = market_context(inputs, t, result.lambda_s(t), result.e_g(t));
        const NashCertificate c = scan_nash_deviations(result.trades.col(t), inputs.surplus.col(t), ctx, nash);
        if (t == 0 || c.max_advantage > cert.followers.max_advantage) {
            cert.followers = c;
            cert.follower_t = static_cast<int>(t + 1);
        }
    }

    // leader side
    AssembleOptions assemble;
    assemble.voltage_constraints = result.voltage_constraints;
    assemble.split_penalty_scale = result.split_penalty_scale;
    const LeaderProblem lp = assemble_leader_problem(inputs, assemble);
    ProbeSpace space{lp.qp, result.ridge.size() == lp.qp.size() ? result.ridge : Eigen::VectorXd::Zero(lp.qp.size())};
    const Eigen::VectorXd& xs = result.x;
    space.floor = space.violation(xs);
    const double base = space.value(xs);
    const double base_revenue = revenue_at(lp, xs);

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double scales[] = {1e-4, 1e-2, 1.0, 1e2};

    auto record = [&](const Eigen::VectorXd& x) {
        cert.leader.max_advantage = std::max(cert.leader.max_advantage, space.value(x) - base);
        cert.leader.max_revenue_advantage = std::max(cert.leader.max_revenue_advantage, revenue_at(lp, x) - base_revenue);
        ++cert.leader.probes;
    };

    const Eigen::MatrixXd face = face_basis(space, xs);
    const int face_count = face.cols() > 0 ? probes / 2 : 0;
    for (int k = 0; k < face_count; ++k) {
        Eigen::VectorXd z(face.cols());
        for (auto& v : z) v = normal(rng);
        Eigen::VectorXd dir = face * z;
        const double norm = dir.cwiseAbs().maxCoeff();
        if (!(norm > 0.0)) continue;
        dir /= norm;
        const double step = std::min(max_step(space, xs, dir), scales[k % 4]) * unit(rng);
        Eigen::VectorXd x = xs + step * dir;
        for (int shrink = 0; shrink < 60 && space.violation(x) > space.tolerance(x); ++shrink) {
            x = xs + (x - xs) * 0.5;
        }
        if (space.violation(x) > space.tolerance(x)) continue;
        record(x);
        ++cert.leader.face_probes;
    }

    // radial probes: perturb (lambda_s, e_g) and pull back toward rho* until feasible
    const Eigen::VectorXd lam = xs.head(h);
    const Eigen::VectorXd grid = xs.segment(h, h);
    const double lam_scale = std::max(1.0, lam.cwiseAbs().maxCoeff());
    const double grid_scale = std::max(1.0, grid.cwiseAbs().maxCoeff());
    const int radial_count = probes - cert.leader.probes;
    for (int k = 0; k < radial_count; ++k) {
        const double s = scales[k % 4];
        Eigen::VectorXd dl(h), dg(h);
        for (Eigen::Index t = 0; t < h; ++t) {
            dl(t) = s * lam_scale * normal(rng) * 1e-2;
            dg(t) = s * grid_scale * normal(rng) * 1e-2;
        }
        double alpha = 1.0;
        Eigen::VectorXd x = complete(lp, lam + dl, grid + dg);
        int halvings = 0;
        while (space.violation(x) > space.tolerance(x) && halvings < 60) {
            alpha *= 0.5;
            x = complete(lp, lam + alpha * dl, grid + alpha * dg);
            ++halvings;
        }
        if (space.violation(x) > space.tolerance(x)) continue;
        record(x);
        ++cert.leader.radial_probes;
    }
    return cert;
}

StackelbergCertificate require_stackelberg(const EquilibriumResult& result, const LeaderInputs& inputs, int probes,
                                           std::uint64_t seed, const NashScanOptions& nash)
{
    StackelbergCertificate cert = verify_stackelberg(result, inputs, probes, seed, nash);
    if (!cert.leader.passed()) {
        std::ostringstream msg;
        msg << "leader probe beats rho* by " << cert.leader.max_advantage;
        throw Error(ErrorKind::CertificateFailure, msg.str());
    }
    if (!cert.followers.passed()) {
        std::ostringstream msg;
        msg << "participant " << (cert.followers.user + 1) << " at t=" << cert.follower_t << " gains "
            << cert.followers.max_advantage << " by trading " << cert.followers.deviation;
        throw Error(ErrorKind::CertificateFailure, msg.str());
    }
    return cert;
}

}  // namespace cestrade
