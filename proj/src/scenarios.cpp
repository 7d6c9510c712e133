#include "cestrade/scenarios.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <sstream>
#include <thread>

namespace cestrade {

std::string to_string(Mode mode)
{
    switch (mode) {
    case Mode::Baseline: return "baseline";
    case Mode::Game: return "game";
    case Mode::GameNoVolt: return "game-novolt";
    case Mode::Centralized: return "centralized";
    }
    return "unknown";
}

Mode parse_mode(const std::string& name)
{
    for (Mode m : {Mode::Baseline, Mode::Game, Mode::GameNoVolt, Mode::Centralized}) {
        if (to_string(m) == name) return m;
    }
    throw Error(ErrorKind::InvalidParameter, "unknown mode '" + name + "'");
}

double ModeResult::participant_average() const
{
    return participant_costs.size() > 0 ? participant_costs.mean() : 0.0;
}

double ModeResult::nonparticipant_average() const
{
    return nonparticipant_costs.size() > 0 ? nonparticipant_costs.mean() : 0.0;
}

RunOptions run_options(const ScenarioConfig& config)
{
    return {config.solver.verify, config.solver.probes, config.seed};
}

LeaderInputs leader_inputs(const ScenarioData& data)
{
    const ScenarioConfig& c = data.config;
    LeaderInputs in;
    in.phi = data.phi;
    in.delta = data.delta;
    in.nonparticipant_energy = data.nonparticipant_energy;
    in.surplus = data.surplus.s;
    in.price_floor = c.prices.price_floor;
    in.import_max = c.transformer_energy();
    in.export_max = c.transformer_energy();
    in.storage = c.storage;
    in.network = make_network(data.feeder, data.base, c.ces_bus, c.voltage_margin);
    return in;
}

namespace {

ModeResult skeleton(const ScenarioData& data, Mode mode)
{
    ModeResult r;
    r.mode = mode;
    r.scenario = data.config.name;
    r.horizon = data.config.horizon;
    r.dt_h = data.config.dt_h;
    r.seed = data.config.seed;
    for (std::size_t idx : data.surplus.user_index) r.participant_ids.push_back(data.profiles.users[idx].user_id);
    for (std::size_t idx : data.profiles.nonparticipants()) r.nonparticipant_ids.push_back(data.profiles.users[idx].user_id);
    return r;
}

// Costs that depend only on prices and the participants' grid trades.
void settle(const ScenarioData& data, ModeResult& r)
{
    const Eigen::Index h = r.horizon;
    r.participant_costs = Eigen::VectorXd::Zero(r.grid_trades.rows());
    if (r.storage_price.size() == h) {
        for (Eigen::Index t = 0; t < h; ++t) {
            r.participant_costs += r.grid_price(t) * r.grid_trades.col(t) - r.storage_price(t) * r.trades.col(t);
        }
    } else {
        r.participant_costs = r.grid_trades * r.grid_price;
    }
    const auto non = data.profiles.nonparticipants();
    r.nonparticipant_costs.resize(static_cast<Eigen::Index>(non.size()));
    for (std::size_t k = 0; k < non.size(); ++k) {
        r.nonparticipant_costs(static_cast<Eigen::Index>(k)) = data.profiles.users[non[k]].demand.dot(r.grid_price);
    }
    r.community_cost = r.grid_price.dot(r.grid_energy);
    r.accounting_residual = accounting_residual(r);
}

// Exact sweep with the storage flow injected at its bus.
void audit_voltages(const ScenarioData& data, ModeResult& r)
{
    BusInjectionSeries inj = data.base;
    if (r.has_storage) {
        inj.P.row(data.config.ces_bus - 1) +=
            r.storage_flow.transpose() / (data.config.dt_h * data.feeder.s_base_kva);
    }
    const SweepResult sweep = sweep_power_flow(data.feeder, inj);
    r.voltage = sweep.magnitudes();
    r.sweep_residual = sweep.residual;
    r.voltage_violations = check_voltage_limits(sweep.vsq, data.feeder);
    r.thermal_violations = check_thermal(data.feeder, sweep.flows);
    r.voltage_stats = voltage_stats(r.voltage);
}

double quantile(std::vector<double> v, double q)
{
    std::sort(v.begin(), v.end());
    const double pos = q * double(v.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - double(lo)) * (v[hi] - v[lo]);
}

}  // namespace

double accounting_residual(const ModeResult& r)
{
    const double users = r.participant_costs.sum() + r.nonparticipant_costs.sum();
    return users - r.revenue.value_or(0.0) - r.grid_price.dot(r.grid_energy);
}

std::vector<BusVoltageStats> voltage_stats(const Eigen::MatrixXd& magnitudes)
{
    std::vector<BusVoltageStats> out;
    for (Eigen::Index i = 0; i < magnitudes.rows(); ++i) {
        if (magnitudes.cols() == 0) break;
        std::vector<double> v(static_cast<std::size_t>(magnitudes.cols()));
        for (Eigen::Index t = 0; t < magnitudes.cols(); ++t) v[static_cast<std::size_t>(t)] = magnitudes(i, t);
        out.push_back({static_cast<int>(i + 1), quantile(v, 0.0), quantile(v, 0.25), quantile(v, 0.5),
                       quantile(v, 0.75), quantile(v, 1.0)});
    }
    return out;
}

ModeResult run_baseline(const ScenarioData& data)
{
    ModeResult r = skeleton(data, Mode::Baseline);
    const Eigen::Index h = r.horizon;
    const Eigen::Index m = data.surplus.participant_count();
    r.trades = Eigen::MatrixXd::Zero(m, h);
    r.grid_trades = -data.surplus.s;
    r.grid_energy = data.baseline_energy;
    r.grid_price = data.phi.cwiseProduct(r.grid_energy) + data.delta;
    settle(data, r);
    audit_voltages(data, r);
    return r;
}

ModeResult run_decentralized(const ScenarioData& data, bool voltage_constraints, const RunOptions& options)
{
    ModeResult r = skeleton(data, voltage_constraints ? Mode::Game : Mode::GameNoVolt);
    const LeaderInputs in = leader_inputs(data);
    LeaderOptions lo;
    lo.assemble.voltage_constraints = voltage_constraints;
    lo.assemble.split_penalty_scale = data.config.solver.split_penalty_scale;
    lo.qp.tol = data.config.solver.qp_tol;
    lo.verify = options.verify;
    lo.probes = options.probes;
    lo.seed = options.seed;
    EquilibriumResult eq = solve_stackelberg(in, lo);

    r.has_storage = true;
    r.trades = eq.trades;
    r.grid_trades = eq.grid_trades;
    r.grid_energy = eq.grid_energy;
    r.grid_price = eq.lambda_g;
    r.storage_price = eq.lambda_s;
    r.provider_grid = eq.e_g;
    r.storage_flow = eq.e_s;
    r.charge_level = eq.charge_level;
    r.revenue = eq.revenue;
    r.kkt = eq.kkt;
    r.max_complementarity = eq.max_complementarity;
    r.audit_failures = eq.audit.failures;
    settle(data, r);
    audit_voltages(data, r);
    r.equilibrium = std::move(eq);
    return r;
}

ModeResult run_centralized(const ScenarioData& data, const RunOptions& options)
{
    (void)options;
    ModeResult r = skeleton(data, Mode::Centralized);
    const ScenarioConfig& c = data.config;
    const StorageParams& st = c.storage;
    const Eigen::Index h = r.horizon;
    const Eigen::Index n = 3 * h;  // [e_s, c, d]
    auto es = [](Eigen::Index t) { return t; };
    auto ch = [h](Eigen::Index t) { return h + t; };
    auto dis = [h](Eigen::Index t) { return 2 * h + t; };

    // E(t) = e_s(t) + k(t): the participants' trades with the storage cancel out of the grid load
    const Eigen::VectorXd& k = data.baseline_energy;

    QpProblem qp;
    qp.quadratic = Eigen::MatrixXd::Zero(n, n);
    qp.linear = Eigen::VectorXd::Zero(n);
    const double penalty = c.solver.split_penalty_scale * data.delta.cwiseAbs().mean();
    for (Eigen::Index t = 0; t < h; ++t) {
        qp.quadratic(es(t), es(t)) = -data.phi(t);
        qp.linear(es(t)) = -(2.0 * data.phi(t) * k(t) + data.delta(t));
        qp.linear(ch(t)) = -penalty;
        qp.linear(dis(t)) = -penalty;
    }

    std::vector<Eigen::Triplet<double>> a, e;
    std::vector<double> b, f;
    auto row = [&](std::initializer_list<std::pair<Eigen::Index, double>> coeffs, double rhs) {
        const int i = static_cast<int>(b.size());
        for (const auto& [col, v] : coeffs) a.emplace_back(i, static_cast<int>(col), v);
        b.push_back(rhs);
    };
    const LeaderInputs in = leader_inputs(data);
    const NetworkData& net = *in.network;
    const double lo_v = std::pow(data.feeder.v_min_pu + c.voltage_margin, 2);
    const double hi_v = std::pow(data.feeder.v_max_pu - c.voltage_margin, 2);
    const double to_pu = 1.0 / (st.dt_h * data.feeder.s_base_kva);
    const double emax = c.transformer_energy();
    for (Eigen::Index t = 0; t < h; ++t) {
        row({{es(t), -data.phi(t)}}, data.phi(t) * k(t) + data.delta(t) - c.prices.price_floor);
        row({{es(t), 1.0}}, emax - k(t));
        row({{es(t), -1.0}}, emax + k(t));
        row({{ch(t), 1.0}}, st.charge_rate_max * st.dt_h);
        row({{dis(t), 1.0}}, st.discharge_rate_max * st.dt_h);
        const int hi_row = static_cast<int>(b.size());
        b.push_back(st.b_max - st.b0);
        b.push_back(st.b0 - st.b_min);
        for (Eigen::Index j = 0; j <= t; ++j) {
            a.emplace_back(hi_row, static_cast<int>(ch(j)), st.eta_charge);
            a.emplace_back(hi_row, static_cast<int>(dis(j)), -st.eta_discharge);
            a.emplace_back(hi_row + 1, static_cast<int>(ch(j)), -st.eta_charge);
            a.emplace_back(hi_row + 1, static_cast<int>(dis(j)), st.eta_discharge);
        }
        if (t + 1 == h) {
            const int cyc = static_cast<int>(b.size());
            b.push_back(st.theta);
            b.push_back(st.theta);
            for (Eigen::Index j = 0; j <= t; ++j) {
                a.emplace_back(cyc, static_cast<int>(ch(j)), st.eta_charge);
                a.emplace_back(cyc, static_cast<int>(dis(j)), -st.eta_discharge);
                a.emplace_back(cyc + 1, static_cast<int>(ch(j)), -st.eta_charge);
                a.emplace_back(cyc + 1, static_cast<int>(dis(j)), st.eta_discharge);
            }
        }
        const Eigen::VectorXd base = net.sensitivity.R * net.base.P.col(t) + net.sensitivity.X * net.base.Q.col(t) +
                                     Eigen::VectorXd::Constant(data.feeder.bus_count,
                                                               data.feeder.v0_pu * data.feeder.v0_pu);
        for (int i = 0; i < data.feeder.bus_count; ++i) {
            const double kappa = net.sensitivity.R(i, c.ces_bus - 1) * to_pu;
            row({{es(t), kappa}}, hi_v - base(i));
            row({{es(t), -kappa}}, base(i) - lo_v);
        }
        const int link = static_cast<int>(f.size());
        e.emplace_back(link, static_cast<int>(es(t)), 1.0);
        e.emplace_back(link, static_cast<int>(ch(t)), -1.0);
        e.emplace_back(link, static_cast<int>(dis(t)), 1.0);
        f.push_back(0.0);
    }
    qp.ineq.resize(static_cast<Eigen::Index>(b.size()), n);
    qp.ineq.setFromTriplets(a.begin(), a.end());
    qp.ineq_rhs = Eigen::Map<const Eigen::VectorXd>(b.data(), static_cast<Eigen::Index>(b.size()));
    qp.eq.resize(static_cast<Eigen::Index>(f.size()), n);
    qp.eq.setFromTriplets(e.begin(), e.end());
    qp.eq_rhs = Eigen::Map<const Eigen::VectorXd>(f.data(), static_cast<Eigen::Index>(f.size()));
    const double inf = std::numeric_limits<double>::infinity();
    qp.lower = Eigen::VectorXd::Constant(n, -inf);
    qp.upper = Eigen::VectorXd::Constant(n, inf);
    qp.lower.tail(2 * h).setZero();

    QpOptions qo;
    qo.tol = c.solver.qp_tol;
    const QpSolution sol = solve_qp(qp, qo);
    if (sol.status == QpStatus::Infeasible) {
        throw Error(ErrorKind::InfeasibleScenario, "centralized schedule infeasible at " + sol.infeasible_constraint);
    }
    r.kkt = kkt_residual(qp, sol);

    const Eigen::VectorXd cs = sol.x.segment(h, h);
    const Eigen::VectorXd ds = sol.x.segment(2 * h, h);
    r.has_storage = true;
    r.storage_flow = sol.x.head(h);
    r.max_complementarity = (cs.array() * ds.array()).maxCoeff();
    r.grid_energy = r.storage_flow + k;
    r.grid_price = data.phi.cwiseProduct(r.grid_energy) + data.delta;
    r.charge_level = soc_series(st.b0, st.eta_charge, st.eta_discharge, r.storage_flow);

    // The storage trades with participants first, proportionally to their feasible
    // trade, and the grid covers the rest.
    const Eigen::MatrixXd& s = data.surplus.s;
    const Eigen::Index m = s.rows();
    r.trades = Eigen::MatrixXd::Zero(m, h);
    r.provider_grid.resize(h);
    for (Eigen::Index t = 0; t < h; ++t) {
        const Eigen::VectorXd hi = s.col(t).cwiseMax(0.0);
        const Eigen::VectorXd lo = s.col(t).cwiseMin(0.0);
        const double flow = r.storage_flow(t);
        if (flow > 0.0 && hi.sum() > 0.0) r.trades.col(t) = std::min(1.0, flow / hi.sum()) * hi;
        if (flow < 0.0 && lo.sum() < 0.0) r.trades.col(t) = std::min(1.0, flow / lo.sum()) * lo;
        r.provider_grid(t) = flow - r.trades.col(t).sum();
    }
    r.grid_trades = r.trades - s;
    // no storage price here, so the provider's cash flow is its grid settlement alone
    r.revenue = -r.grid_price.dot(r.provider_grid);

    auto fail = [&](double violation, const std::string& what, Eigen::Index t) {
        if (violation > 1e-6) {
            std::ostringstream msg;
            msg << what << " at t=" << (t + 1) << " by " << violation;
            r.audit_failures.push_back(msg.str());
        }
    };
    for (Eigen::Index t = 0; t < h; ++t) {
        fail(c.prices.price_floor - r.grid_price(t), "price floor", t);
        fail(std::abs(r.grid_energy(t)) - emax, "transformer", t);
        fail(cs(t) * ds(t), "complementarity", t);
    }
    StorageTrajectory traj{r.storage_flow, r.charge_level};
    for (const auto& v : check_storage_feasibility(traj, st, 1e-6).violations) {
        fail(1.0, "storage " + to_string(v.kind), v.t - 1);
    }

    settle(data, r);
    audit_voltages(data, r);
    return r;
}

ModeResult run_mode(const ScenarioData& data, Mode mode, const RunOptions& options)
{
    switch (mode) {
    case Mode::Baseline: return run_baseline(data);
    case Mode::Game: return run_decentralized(data, true, options);
    case Mode::GameNoVolt: return run_decentralized(data, false, options);
    case Mode::Centralized: return run_centralized(data, options);
    }
    throw Error(ErrorKind::InvalidParameter, "unknown mode");
}

std::vector<ModeResult> run_modes(const ScenarioData& data, const std::vector<Mode>& modes,
                                  const RunOptions& options, int jobs)
{
    std::vector<ModeResult> results(modes.size());
    std::vector<std::exception_ptr> errors(modes.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < modes.size(); i = next++) {
            try {
                results[i] = run_mode(data, modes[i], options);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const std::size_t threads = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(jobs, 1)), 1, modes.size());
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t i = 0; i < threads; ++i) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    for (const auto& err : errors) {
        if (err) std::rethrow_exception(err);
    }
    return results;
}

ModeSummary summarize(const ModeResult& r)
{
    ModeSummary s;
    s.mode = r.mode;
    s.peak_demand = r.peak_demand();
    s.participant_total = r.participant_total();
    s.participant_average = r.participant_average();
    s.nonparticipant_total = r.nonparticipant_total();
    s.nonparticipant_average = r.nonparticipant_average();
    s.revenue = r.revenue;
    s.community_cost = r.community_cost;
    s.voltage_min = r.voltage.size() > 0 ? r.voltage.minCoeff() : 0.0;
    s.voltage_max = r.voltage.size() > 0 ? r.voltage.maxCoeff() : 0.0;
    s.voltage_violations = static_cast<int>(r.voltage_violations.size());
    s.thermal_violations = static_cast<int>(r.thermal_violations.size());
    s.voltage_stats = r.voltage_stats;
    return s;
}

double percent_change(double before, double after)
{
    if (before == 0.0) return after == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), after);
    return 100.0 * (after - before) / std::abs(before);
}

ComparisonReport compare(const std::vector<ModeSummary>& summaries, const std::string& scenario, int horizon)
{
    if (summaries.size() < 2) throw Error(ErrorKind::IncompatibleResults, "comparison needs at least two results");
    ComparisonReport report;
    report.scenario = scenario;
    report.horizon = horizon;
    report.modes = summaries;
    std::size_t ref = 0;
    for (std::size_t i = 0; i < summaries.size(); ++i) {
        if (summaries[i].mode == Mode::Baseline) {
            ref = i;
            break;
        }
    }
    report.reference = summaries[ref].mode;
    const ModeSummary& base = summaries[ref];
    for (const ModeSummary& s : summaries) {
        report.deltas.push_back({s.mode, percent_change(base.peak_demand, s.peak_demand),
                                 percent_change(base.participant_average, s.participant_average),
                                 percent_change(base.nonparticipant_average, s.nonparticipant_average),
                                 percent_change(base.community_cost, s.community_cost)});
    }
    return report;
}

ComparisonReport compare(const std::vector<ModeResult>& results)
{
    if (results.size() < 2) throw Error(ErrorKind::IncompatibleResults, "comparison needs at least two results");
    const ModeResult& first = results.front();
    std::vector<ModeSummary> summaries;
    for (const ModeResult& r : results) {
        if (r.horizon != first.horizon || r.dt_h != first.dt_h || r.trades.rows() != first.trades.rows() ||
            r.nonparticipant_costs.size() != first.nonparticipant_costs.size()) {
            throw Error(ErrorKind::IncompatibleResults,
                        to_string(r.mode) + " result does not share the horizon or user sets of " + to_string(first.mode));
        }
        summaries.push_back(summarize(r));
    }
    return compare(summaries, first.scenario, first.horizon);
}

StorageParams seasonal_storage(const StorageParams& base)
{
    StorageParams st = base;
    st.b_max = 950.0;
    st.b_min = 0.05 * st.b_max;
    st.charge_rate_max = 300.0;
    st.discharge_rate_max = 300.0;
    st.b0 = StorageParams::default_initial(st.b_min, st.b_max);
    return st;
}

SeasonBars season_bars(const std::vector<SeasonReport>& seasons)
{
    const Eigen::Index n = static_cast<Eigen::Index>(seasons.size());
    SeasonBars bars;
    bars.revenue = Eigen::VectorXd::Zero(n);
    bars.participant_cost = Eigen::VectorXd::Zero(n);
    bars.nonparticipant_cost = Eigen::VectorXd::Zero(n);
    bars.participant_cost_baseline = Eigen::VectorXd::Zero(n);
    bars.nonparticipant_cost_baseline = Eigen::VectorXd::Zero(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const SeasonReport& s = seasons[static_cast<std::size_t>(i)];
        bars.seasons.push_back(s.season);
        for (const ModeResult& r : s.results) {
            if (r.mode == Mode::Game) {
                bars.revenue(i) = r.revenue.value_or(0.0);
                bars.participant_cost(i) = r.participant_average();
                bars.nonparticipant_cost(i) = r.nonparticipant_average();
            } else if (r.mode == Mode::Baseline) {
                bars.participant_cost_baseline(i) = r.participant_average();
                bars.nonparticipant_cost_baseline(i) = r.nonparticipant_average();
            }
        }
    }
    auto normalize = [](Eigen::VectorXd& a, Eigen::VectorXd* b) {
        double scale = a.cwiseAbs().maxCoeff();
        if (b) scale = std::max(scale, b->cwiseAbs().maxCoeff());
        if (scale > 0.0) {
            a /= scale;
            if (b) *b /= scale;
        }
    };
    if (n > 0) {
        normalize(bars.revenue, nullptr);
        normalize(bars.participant_cost, &bars.participant_cost_baseline);
        normalize(bars.nonparticipant_cost, &bars.nonparticipant_cost_baseline);
    }
    return bars;
}

SeasonalSweep seasonal_sweep(const std::vector<std::pair<std::string, ScenarioConfig>>& seasons,
                             const std::vector<Mode>& modes, int jobs)
{
    SeasonalSweep sweep;
    for (const auto& [name, config] : seasons) {
        ScenarioConfig c = config;
        c.storage = seasonal_storage(c.storage);
        const ScenarioData data = prepare(c);
        SeasonReport report;
        report.season = name;
        report.results = run_modes(data, modes, run_options(c), jobs);
        if (report.results.size() >= 2) report.comparison = compare(report.results);
        sweep.seasons.push_back(std::move(report));
    }
    sweep.bars = season_bars(sweep.seasons);
    return sweep;
}

}  // namespace cestrade
