#include "cestrade/leader.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace cestrade {

std::string to_string(EpsilonCase c)
{
    switch (c) {
    case EpsilonCase::Surplus: return "surplus";
    case EpsilonCase::Deficit: return "deficit";
    case EpsilonCase::Mixed: return "mixed";
    }
    return "?";
}

std::string to_string(RowFamily family)
{
    switch (family) {
    case RowFamily::PriceFloor: return "price_floor";
    case RowFamily::TransformerImport: return "transformer_import";
    case RowFamily::TransformerExport: return "transformer_export";
    case RowFamily::ChargeRate: return "charge_rate";
    case RowFamily::DischargeRate: return "discharge_rate";
    case RowFamily::CapacityLow: return "capacity_low";
    case RowFamily::CapacityHigh: return "capacity_high";
    case RowFamily::Cyclical: return "cyclical";
    case RowFamily::EpsilonLow: return "epsilon_low";
    case RowFamily::EpsilonHigh: return "epsilon_high";
    case RowFamily::EpsilonPin: return "epsilon_pin";
    case RowFamily::Link: return "link";
    case RowFamily::VoltageLow: return "voltage_low";
    case RowFamily::VoltageHigh: return "voltage_high";
    }
    return "?";
}

NetworkData make_network(const FeederModel& feeder, const BusInjectionSeries& base, int ces_bus,
                         double voltage_margin)
{
    if (ces_bus < 1 || ces_bus > feeder.bus_count) {
        throw Error(ErrorKind::CesBusMissing, "storage bus " + std::to_string(ces_bus) + " not in feeder");
    }
    if (base.P.rows() != feeder.bus_count || base.Q.rows() != feeder.bus_count) {
        throw Error(ErrorKind::DimensionMismatch, "injection rows must match bus count");
    }
    return {feeder, sensitivity_matrices(feeder), base, ces_bus, voltage_margin};
}

MarketContext market_context(const LeaderInputs& inputs, Eigen::Index t, double lambda_s, double e_g)
{
    MarketContext ctx;
    ctx.phi = inputs.phi(t);
    ctx.delta = inputs.delta(t);
    ctx.nonparticipant_energy = inputs.nonparticipant_energy(t);
    ctx.provider_grid = e_g;
    ctx.storage_price = lambda_s;
    ctx.participants = inputs.participants();
    return ctx;
}

namespace {

void check_inputs(const LeaderInputs& in)
{
    const Eigen::Index h = in.horizon();
    if (h == 0) throw Error(ErrorKind::HorizonMismatch, "empty horizon");
    if (in.delta.size() != h || in.nonparticipant_energy.size() != h || in.surplus.cols() != h) {
        throw Error(ErrorKind::HorizonMismatch, "price, demand and surplus series differ in length");
    }
    if (in.participants() < 1) throw Error(ErrorKind::InvalidParameter, "the game needs at least one participant");
    if (!(in.phi.array() > 0.0).all()) throw Error(ErrorKind::InvalidParameter, "phi must be positive");
    if (!(in.import_max >= 0.0) || !(in.export_max >= 0.0)) {
        throw Error(ErrorKind::InvalidParameter, "transformer limits must be nonnegative");
    }
    validate(in.storage);
    if (in.network) {
        const NetworkData& net = *in.network;
        if (net.ces_bus < 1 || net.ces_bus > net.feeder.bus_count) {
            throw Error(ErrorKind::CesBusMissing, "storage bus " + std::to_string(net.ces_bus) + " not in feeder");
        }
        if (net.base.P.cols() != h || net.base.Q.cols() != h) {
            throw Error(ErrorKind::HorizonMismatch, "bus injections differ in length from the horizon");
        }
    }
}

// Affine maps of interval t in (lambda_s, e_g): value = kl * lambda_s + kg * e_g + k0.
struct Affine {
    double kl = 0.0;
    double kg = 0.0;
    double k0 = 0.0;
};

struct IntervalMaps {
    Affine epsilon;
    Affine grid_total;  // E(t)
    Affine storage;     // e_s(t)
};

IntervalMaps interval_maps(const LeaderInputs& in, Eigen::Index t)
{
    const double m = double(in.participants());
    const double a = 1.0 / (m + 1.0);
    const double phi = in.phi(t);
    const double delta = in.delta(t);
    const double en = in.nonparticipant_energy(t);
    const double s = in.surplus.col(t).sum();
    IntervalMaps out;
    out.epsilon = {a / phi, -a, -a * (delta / phi + en)};
    out.grid_total = {m * a / phi, a, a * (en - m * delta / phi)};
    out.storage = {m * a / phi, a, s - m * a * (delta / phi + en)};
    return out;
}

class RowBuilder {
public:
    explicit RowBuilder(Eigen::Index n) : n_(n) {}

    void add(std::vector<std::pair<Eigen::Index, double>> coeffs, double rhs, RowTag tag)
    {
        for (const auto& [col, v] : coeffs) {
            if (v != 0.0) triplets_.emplace_back(static_cast<int>(rows_), static_cast<int>(col), v);
        }
        rhs_.push_back(rhs);
        tags_.push_back(tag);
        ++rows_;
    }

    SparseRows matrix() const
    {
        SparseRows m(rows_, n_);
        m.setFromTriplets(triplets_.begin(), triplets_.end());
        m.makeCompressed();
        return m;
    }
    Eigen::VectorXd rhs() const { return Eigen::Map<const Eigen::VectorXd>(rhs_.data(), rows_); }
    const std::vector<RowTag>& tags() const { return tags_; }

private:
    Eigen::Index n_;
    Eigen::Index rows_ = 0;
    std::vector<Eigen::Triplet<double>> triplets_;
    std::vector<double> rhs_;
    std::vector<RowTag> tags_;
};

}  // namespace

LeaderProblem assemble_leader_problem(const LeaderInputs& in, const AssembleOptions& options)
{
    check_inputs(in);
    const Eigen::Index h = in.horizon();
    const Eigen::Index n = 4 * h;
    const Eigen::Index m = in.participants();
    const StorageParams& st = in.storage;
    auto keep = [&](RowFamily f) { return std::find(options.omit.begin(), options.omit.end(), f) == options.omit.end(); };

    LeaderProblem lp;
    lp.horizon = h;
    lp.voltage_constraints = options.voltage_constraints;
    if (options.voltage_constraints && !in.network) {
        throw Error(ErrorKind::CesBusMissing, "voltage rows need feeder data and a storage bus");
    }

    QpProblem& qp = lp.qp;
    qp.quadratic = Eigen::MatrixXd::Zero(n, n);
    qp.linear = Eigen::VectorXd::Zero(n);
    double mean_mu2 = 0.0;
    for (Eigen::Index t = 0; t < h; ++t) {
        const auto mu = mu_coefficients(m, in.phi(t), in.delta(t), in.nonparticipant_energy(t),
                                        in.surplus.col(t).sum());
        lp.mu.push_back(mu);
        lp.epsilon.push_back(epsilon_bounds(in.surplus.col(t)));
        qp.quadratic(lp.lambda(t), lp.lambda(t)) = mu.mu1;
        qp.quadratic(lp.grid(t), lp.grid(t)) = mu.mu3;
        qp.linear(lp.lambda(t)) = mu.mu2;
        qp.linear(lp.grid(t)) = mu.mu4;
        mean_mu2 += std::abs(mu.mu2) / double(h);
    }
    lp.split_penalty = options.split_penalty_scale * mean_mu2;
    for (Eigen::Index t = 0; t < h; ++t) {
        qp.linear(lp.charge(t)) = -lp.split_penalty;
        qp.linear(lp.discharge(t)) = -lp.split_penalty;
    }

    RowBuilder ineq(n);
    RowBuilder eq(n);
    for (Eigen::Index t = 0; t < h; ++t) {
        const IntervalMaps maps = interval_maps(in, t);
        const int step = static_cast<int>(t + 1);
        const Eigen::Index l = lp.lambda(t);
        const Eigen::Index g = lp.grid(t);
        const Affine& e = maps.grid_total;

        if (keep(RowFamily::PriceFloor)) {
            // phi E + delta >= lambda_min
            const double phi = in.phi(t);
            ineq.add({{l, -phi * e.kl}, {g, -phi * e.kg}}, phi * e.k0 + in.delta(t) - in.price_floor,
                     {RowFamily::PriceFloor, step});
        }
        if (keep(RowFamily::TransformerImport)) {
            ineq.add({{l, e.kl}, {g, e.kg}}, in.import_max - e.k0, {RowFamily::TransformerImport, step});
        }
        if (keep(RowFamily::TransformerExport)) {
            ineq.add({{l, -e.kl}, {g, -e.kg}}, in.export_max + e.k0, {RowFamily::TransformerExport, step});
        }
        if (keep(RowFamily::ChargeRate)) {
            ineq.add({{lp.charge(t), 1.0}}, st.charge_rate_max * st.dt_h, {RowFamily::ChargeRate, step});
        }
        if (keep(RowFamily::DischargeRate)) {
            ineq.add({{lp.discharge(t), 1.0}}, st.discharge_rate_max * st.dt_h, {RowFamily::DischargeRate, step});
        }

        // b(t) - b0 = sum_{k <= t} eta_c c_k - eta_d d_k
        std::vector<std::pair<Eigen::Index, double>> soc;
        for (Eigen::Index k = 0; k <= t; ++k) {
            soc.emplace_back(lp.charge(k), st.eta_charge);
            soc.emplace_back(lp.discharge(k), -st.eta_discharge);
        }
        auto negated = soc;
        for (auto& [col, v] : negated) v = -v;
        if (keep(RowFamily::CapacityHigh)) ineq.add(soc, st.b_max - st.b0, {RowFamily::CapacityHigh, step});
        if (keep(RowFamily::CapacityLow)) ineq.add(negated, st.b0 - st.b_min, {RowFamily::CapacityLow, step});
        if (t + 1 == h && keep(RowFamily::Cyclical)) {
            ineq.add(soc, st.theta, {RowFamily::Cyclical, step});
            ineq.add(negated, st.theta, {RowFamily::Cyclical, step});
        }

        // epsilon rows scaled by (M + 1) phi: lambda_s - phi e_g - (delta + phi E_N) = (M + 1) phi eps
        const double phi = in.phi(t);
        const double scale = double(m + 1) * phi;
        const double offset = in.delta(t) + phi * in.nonparticipant_energy(t);
        const EpsilonBounds& eb = lp.epsilon[static_cast<std::size_t>(t)];
        if (eb.tag == EpsilonCase::Mixed) {
            if (keep(RowFamily::EpsilonPin)) eq.add({{l, 1.0}, {g, -phi}}, offset, {RowFamily::EpsilonPin, step});
        } else {
            if (keep(RowFamily::EpsilonHigh)) {
                ineq.add({{l, 1.0}, {g, -phi}}, offset + scale * eb.upper, {RowFamily::EpsilonHigh, step});
            }
            if (keep(RowFamily::EpsilonLow)) {
                ineq.add({{l, -1.0}, {g, phi}}, -offset - scale * eb.lower, {RowFamily::EpsilonLow, step});
            }
        }

        // c - d - e_s = 0
        const Affine& es = maps.storage;
        eq.add({{lp.charge(t), 1.0}, {lp.discharge(t), -1.0}, {l, -es.kl}, {g, -es.kg}}, es.k0,
               {RowFamily::Link, step});

        if (options.voltage_constraints) {
            const NetworkData& net = *in.network;
            const FeederModel& fm = net.feeder;
            const int nb = fm.bus_count;
            const double lo = std::pow(fm.v_min_pu + net.voltage_margin, 2);
            const double hi = std::pow(fm.v_max_pu - net.voltage_margin, 2);
            const Eigen::VectorXd base = net.sensitivity.R * net.base.P.col(t) +
                                         net.sensitivity.X * net.base.Q.col(t) +
                                         Eigen::VectorXd::Constant(nb, fm.v0_pu * fm.v0_pu);
            const double to_pu = 1.0 / (st.dt_h * fm.s_base_kva);
            for (int i = 0; i < nb; ++i) {
                const double kappa = net.sensitivity.R(i, net.ces_bus - 1) * to_pu;
                if (keep(RowFamily::VoltageHigh)) {
                    ineq.add({{l, kappa * es.kl}, {g, kappa * es.kg}}, hi - base(i) - kappa * es.k0,
                             {RowFamily::VoltageHigh, step, i + 1});
                }
                if (keep(RowFamily::VoltageLow)) {
                    ineq.add({{l, -kappa * es.kl}, {g, -kappa * es.kg}}, base(i) - lo + kappa * es.k0,
                             {RowFamily::VoltageLow, step, i + 1});
                }
            }
        }
    }

    qp.ineq = ineq.matrix();
    qp.ineq_rhs = ineq.rhs();
    lp.ineq_tags = ineq.tags();
    qp.eq = eq.matrix();
    qp.eq_rhs = eq.rhs();
    lp.eq_tags = eq.tags();
    const double inf = std::numeric_limits<double>::infinity();
    qp.lower = Eigen::VectorXd::Constant(n, -inf);
    qp.upper = Eigen::VectorXd::Constant(n, inf);
    qp.lower.tail(2 * h).setZero();
    return lp;
}

void reconstruct(const LeaderInputs& in, const Eigen::VectorXd& lambda_s, const Eigen::VectorXd& e_g,
                 EquilibriumResult& out)
{
    const Eigen::Index h = in.horizon();
    const Eigen::Index m = in.participants();
    out.lambda_s = lambda_s;
    out.e_g = e_g;
    out.epsilon.resize(h);
    out.e_s.resize(h);
    out.lambda_g.resize(h);
    out.grid_energy.resize(h);
    out.trades.resize(m, h);
    out.grid_trades.resize(m, h);
    for (Eigen::Index t = 0; t < h; ++t) {
        const MarketContext ctx = market_context(in, t, lambda_s(t), e_g(t));
        const auto nash = nash_closed_form(in.surplus.col(t), ctx);
        out.epsilon(t) = nash.epsilon;
        out.trades.col(t) = nash.trades;
        out.grid_trades.col(t) = nash.trades - in.surplus.col(t);
        out.e_s(t) = net_storage_flow(e_g(t), nash.trades);
        out.grid_energy(t) = out.grid_trades.col(t).sum() + ctx.nonparticipant_energy + e_g(t);
        out.lambda_g(t) = grid_price(out.grid_energy(t), ctx);
    }
    const StorageParams& st = in.storage;
    out.charge_level = soc_series(st.b0, st.eta_charge, st.eta_discharge, out.e_s);
    out.revenue = revenue(out.lambda_s, out.trades, out.lambda_g, out.e_g);
    out.participant_costs = Eigen::VectorXd::Zero(m);
    for (Eigen::Index t = 0; t < h; ++t) {
        out.participant_costs +=
            out.lambda_g(t) * out.grid_trades.col(t) - out.lambda_s(t) * out.trades.col(t);
    }

    if (in.network) {
        const NetworkData& net = *in.network;
        BusInjectionSeries inj = net.base;
        inj.P.row(net.ces_bus - 1) += out.e_s.transpose() / (st.dt_h * net.feeder.s_base_kva);
        out.vsq_linear = linear_voltages(net.sensitivity, inj, net.feeder.v0_pu);
        const SweepResult sweep = sweep_power_flow(net.feeder, inj);
        out.vsq_exact = sweep.vsq;
        out.sweep_residual = sweep.residual;
        out.voltage_violations = check_voltage_limits(sweep.vsq, net.feeder);
        out.thermal_violations = check_thermal(net.feeder, sweep.flows);
    }
}

ConstraintAudit audit_equilibrium(const LeaderInputs& in, const EquilibriumResult& r, bool voltage_constraints,
                                  double tol)
{
    ConstraintAudit audit;
    const Eigen::Index h = in.horizon();
    const StorageParams& st = in.storage;
    auto check = [&](double violation, const std::string& what, Eigen::Index t) {
        audit.worst = std::max(audit.worst, violation);
        if (violation > tol) {
            std::ostringstream msg;
            msg << what << " at t=" << (t + 1) << " by " << violation;
            audit.failures.push_back(msg.str());
        }
    };
    for (Eigen::Index t = 0; t < h; ++t) {
        for (Eigen::Index p = 0; p < in.participants(); ++p) {
            const TradeBounds b = trade_bounds(in.surplus(p, t));
            const double y = r.trades(p, t);
            check(std::max(b.lower - y, y - b.upper), "trade interval of participant " + std::to_string(p + 1), t);
        }
        const double rate = r.e_s(t) / st.dt_h;
        check(rate - st.charge_rate_max, "charge rate", t);
        check(-rate - st.discharge_rate_max, "discharge rate", t);
        check(st.b_min - r.charge_level(t), "capacity low", t);
        check(r.charge_level(t) - st.b_max, "capacity high", t);
        check(in.price_floor - r.lambda_g(t), "price floor", t);
        check(r.grid_energy(t) - in.import_max, "transformer import", t);
        check(-r.grid_energy(t) - in.export_max, "transformer export", t);
        if (r.c.size() == h && r.d.size() == h) {
            check(r.c(t) * r.d(t), "complementarity", t);
            check(std::abs(r.c(t) - r.d(t) - r.e_s(t)), "storage split", t);
        }
        if (voltage_constraints && in.network && r.vsq_linear.cols() == h) {
            const FeederModel& fm = in.network->feeder;
            for (Eigen::Index i = 0; i < r.vsq_linear.rows(); ++i) {
                const double v = std::sqrt(std::max(r.vsq_linear(i, t), 0.0));
                check(std::max(fm.v_min_pu - v, v - fm.v_max_pu), "voltage at bus " + std::to_string(i + 1), t);
            }
        }
    }
    if (h > 0) check(std::abs(r.charge_level(h - 1) - st.b0) - st.theta, "cyclical", h - 1);
    return audit;
}

namespace {

std::vector<RowFamily> families_present(const LeaderProblem& lp)
{
    std::vector<RowFamily> out;
    for (const auto* tags : {&lp.ineq_tags, &lp.eq_tags}) {
        for (const RowTag& tag : *tags) {
            if (tag.family == RowFamily::Link) continue;
            if (std::find(out.begin(), out.end(), tag.family) == out.end()) out.push_back(tag.family);
        }
    }
    return out;
}

// Deletion filter over constraint families: whatever survives is an irreducible infeasible set.
std::vector<RowFamily> irreducible_families(const LeaderInputs& in, const LeaderOptions& options,
                                            const LeaderProblem& full)
{
    std::vector<RowFamily> kept = families_present(full);
    std::vector<RowFamily> dropped = options.assemble.omit;
    for (RowFamily f : families_present(full)) {
        AssembleOptions trial = options.assemble;
        trial.omit = dropped;
        trial.omit.push_back(f);
        const LeaderProblem lp = assemble_leader_problem(in, trial);
        if (solve_qp(lp.qp, options.qp).status == QpStatus::Infeasible) {
            dropped.push_back(f);
            kept.erase(std::find(kept.begin(), kept.end(), f));
        }
    }
    return kept;
}

}  // namespace

EquilibriumResult solve_stackelberg(const LeaderInputs& in, const LeaderOptions& options)
{
    const LeaderProblem lp = assemble_leader_problem(in, options.assemble);
    const QpSolution sol = solve_qp(lp.qp, options.qp);
    if (sol.status == QpStatus::Infeasible) {
        std::string families;
        for (RowFamily f : irreducible_families(in, options, lp)) families += (families.empty() ? "" : ", ") + to_string(f);
        throw Error(ErrorKind::InfeasibleScenario, "irreducible constraint families: " + families);
    }

    const Eigen::Index h = in.horizon();
    EquilibriumResult r;
    r.voltage_constraints = options.assemble.voltage_constraints;
    r.status = sol.status;
    r.x = sol.x;
    r.ridge = sol.ridge;
    r.split_penalty_scale = options.assemble.split_penalty_scale;
    r.c = sol.x.segment(2 * h, h);
    r.d = sol.x.segment(3 * h, h);
    reconstruct(in, sol.x.head(h), sol.x.segment(h, h), r);
    r.objective = sol.regularized_objective;
    r.penalty = lp.split_penalty * (r.c.sum() + r.d.sum());
    r.kkt = kkt_residual(lp.qp, sol);
    r.qp_iterations = sol.iterations;
    r.max_complementarity = (r.c.array() * r.d.array()).maxCoeff();
    r.audit = audit_equilibrium(in, r, r.voltage_constraints, options.audit_tol);

    if (!(r.max_complementarity < options.complementarity_tol)) {
        r.status = QpStatus::Degenerate;
        throw Error(ErrorKind::ComplementarityViolation,
                    "simultaneous charge and discharge, max c*d = " + std::to_string(r.max_complementarity));
    }
    if (options.verify) r.certificate = verify_stackelberg(r, in, options.probes, options.seed, options.nash);
    return r;
}

}  // namespace cestrade
