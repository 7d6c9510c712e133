#include <cestrade/config.hpp>
#include <cestrade/feeder.hpp>
#include <cestrade/followers.hpp>
#include <cestrade/leader.hpp>
#include <cestrade/report_io.hpp>
#include <cestrade/scenarios.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>

#include <unistd.h>

using namespace cestrade;
namespace fs = std::filesystem;

namespace {

const std::string data_dir = CESTRADE_DATA_DIR;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start)
{
    return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Verdict {
    bool pass = true;
    std::ostringstream detail;

    void require(bool ok, const std::string& what)
    {
        if (!ok) {
            pass = false;
            detail << " [failed: " << what << "]";
        }
    }
};

int failures = 0;

void report(int id, const std::string& name, Verdict& v)
{
    std::cout << (v.pass ? "PASS" : "FAIL") << " " << id << " " << name << ":" << v.detail.str() << std::endl;
    if (!v.pass) ++failures;
}

// ---------------------------------------------------------------------------
// 1. follower equilibrium

// Damped simultaneous best responses. Undamped, the joint map has spectral
// radius (M - 1) / 2; a step of 2 / (M + 1) contracts every mode.
Eigen::VectorXd simultaneous_fixed_point(const Eigen::VectorXd& s, const MarketContext& ctx)
{
    const Eigen::Index m = s.size();
    const double step = 2.0 / double(m + 1);
    Eigen::VectorXd y = s;
    Eigen::VectorXd next(m);
    for (int it = 0; it < 200000; ++it) {
        for (Eigen::Index p = 0; p < m; ++p) next(p) = best_response(s(p), others_grid_energy(y, s, p, ctx), ctx);
        const double moved = (next - y).cwiseAbs().maxCoeff();
        y += step * (next - y);
        if (moved < 1e-14) break;
    }
    return y;
}

void criterion_nash()
{
    Verdict v;
    const auto start = Clock::now();
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst_gap = 0.0, worst_adv = 0.0;
    for (int k = 0; k < 200; ++k) {
        const Eigen::Index m = 1 + k % 10;
        MarketContext ctx;
        ctx.phi = 0.05 + 2.0 * u(rng);
        ctx.delta = 5.0 + 35.0 * u(rng);
        ctx.storage_price = 5.0 + 40.0 * u(rng);
        ctx.nonparticipant_energy = 0.1 + 10.0 * u(rng);
        ctx.provider_grid = 10.0 * (u(rng) - 0.5);
        ctx.participants = m;
        Eigen::VectorXd s(m);
        for (Eigen::Index p = 0; p < m; ++p) s(p) = 6.0 * (u(rng) - 0.5);

        const auto nash = nash_closed_form(s, ctx);
        worst_gap = std::max(worst_gap, (simultaneous_fixed_point(s, ctx) - nash.trades).cwiseAbs().maxCoeff());
        NashScanOptions scan;
        scan.resolution = 1000;
        scan.tolerance = 1e-8;
        worst_adv = std::max(worst_adv, scan_nash_deviations(nash.trades, s, ctx, scan).max_advantage);
    }
    const double elapsed = seconds_since(start);
    v.detail << " 200 instances, max |closed form - fixed point| " << worst_gap << ", max deviation gain "
             << worst_adv << ", " << elapsed << " s";
    v.require(worst_gap <= 1e-8, "fixed point");
    v.require(worst_adv <= 1e-8, "deviation scan");
    v.require(elapsed < 10.0, "runtime");
    report(1, "follower equilibrium vs best-response oracle", v);
}

// ---------------------------------------------------------------------------
// 2. leader QP vs lattice search

LeaderInputs lattice_instance(std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    LeaderInputs in;
    in.phi = Eigen::Vector2d(0.8 + 0.4 * u(rng), 1.5 + 0.5 * u(rng));
    in.delta = Eigen::Vector2d(18.5, 30.0);
    in.nonparticipant_energy = Eigen::Vector2d(1.0 + u(rng), 2.0 + u(rng));
    in.surplus.resize(2, 2);
    in.surplus << 2.0 + u(rng), -1.0 - u(rng), 1.0 + u(rng), -0.5 - u(rng);
    in.price_floor = 18.5;
    in.import_max = 20.0;
    in.export_max = 20.0;
    in.storage.dt_h = 1.0;
    in.storage.b_max = 10.0;
    in.storage.b_min = 0.5;
    in.storage.b0 = 5.0;
    in.storage.charge_rate_max = 4.0;
    in.storage.discharge_rate_max = 4.0;
    in.storage.theta = 0.5;
    return in;
}

struct LatticeBox {
    double lambda_lo, lambda_hi, grid_lo, grid_hi;
};

// Box holding every decision that keeps the followers inside their trade
// intervals and the storage inside its rate limits.
LatticeBox decision_box(const LeaderInputs& in, Eigen::Index t)
{
    const Eigen::VectorXd s = in.surplus.col(t);
    const double m = double(s.size());
    double eps_lo = -1e300, eps_hi = 1e300, sum_lo = 0.0, sum_hi = 0.0;
    for (Eigen::Index p = 0; p < s.size(); ++p) {
        const TradeBounds b = trade_bounds(s(p));
        eps_lo = std::max(eps_lo, b.lower - s(p));
        eps_hi = std::min(eps_hi, b.upper - s(p));
        sum_lo += b.lower;
        sum_hi += b.upper;
    }
    const StorageParams& st = in.storage;
    LatticeBox box;
    box.grid_lo = -st.discharge_rate_max * st.dt_h - sum_hi;
    box.grid_hi = st.charge_rate_max * st.dt_h - sum_lo;
    const double phi = in.phi(t), delta = in.delta(t), en = in.nonparticipant_energy(t);
    box.lambda_lo = delta + phi * ((m + 1) * eps_lo + en + box.grid_lo);
    box.lambda_hi = delta + phi * ((m + 1) * eps_hi + en + box.grid_hi);
    return box;
}

struct LatticeResult {
    double best = -1e300;
    double gap = 0.0;
    long feasible = 0;
    bool covers_solution = true;
};

// Exhaustive search over an n^2 lattice per interval (n^4 points for H = 2).
// Revenue is additive over intervals and the storage couples them only through
// the charge level, so per-interval tables are combined pairwise.
LatticeResult lattice_search(const LeaderInputs& in, int n, const EquilibriumResult& solved)
{
    const StorageParams& st = in.storage;
    const Eigen::Index m = in.participants();
    LatticeResult out;
    struct Node {
        double revenue, flow;
        bool ok;
    };
    std::vector<std::vector<Node>> table(2);
    for (Eigen::Index t = 0; t < 2; ++t) {
        const LatticeBox box = decision_box(in, t);
        const double hl = (box.lambda_hi - box.lambda_lo) / (n - 1);
        const double hg = (box.grid_hi - box.grid_lo) / (n - 1);
        if (solved.lambda_s(t) < box.lambda_lo - 1e-9 || solved.lambda_s(t) > box.lambda_hi + 1e-9 ||
            solved.e_g(t) < box.grid_lo - 1e-9 || solved.e_g(t) > box.grid_hi + 1e-9) {
            out.covers_solution = false;
        }
        auto& nodes = table[static_cast<std::size_t>(t)];
        nodes.resize(static_cast<std::size_t>(n * n));
        const Eigen::VectorXd s = in.surplus.col(t);
        auto evaluate = [&](double lambda, double grid, Node& node) {
            MarketContext ctx;
            ctx.phi = in.phi(t);
            ctx.delta = in.delta(t);
            ctx.nonparticipant_energy = in.nonparticipant_energy(t);
            ctx.provider_grid = grid;
            ctx.storage_price = lambda;
            ctx.participants = m;
            const auto nash = nash_closed_form(s, ctx);
            const double total = ctx.nonparticipant_energy + (nash.trades - s).sum() + grid;
            const double price = grid_price(total, ctx);
            node.revenue = -lambda * nash.trades.sum() - price * grid;
            node.flow = grid + nash.trades.sum();
            node.ok = price >= in.price_floor - 1e-12 && total <= in.import_max + 1e-12 &&
                      -total <= in.export_max + 1e-12 && node.flow <= st.charge_rate_max * st.dt_h + 1e-12 &&
                      -node.flow <= st.discharge_rate_max * st.dt_h + 1e-12;
            for (Eigen::Index p = 0; p < m; ++p) {
                const TradeBounds b = trade_bounds(s(p));
                node.ok = node.ok && nash.trades(p) >= b.lower - 1e-12 && nash.trades(p) <= b.upper + 1e-12;
            }
        };
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                evaluate(box.lambda_lo + i * hl, box.grid_lo + j * hg, nodes[static_cast<std::size_t>(i * n + j)]);

        // Largest partial derivatives over the box; the one-sided three-point
        // formula is exact for the quadratic revenue and the extremes sit on the edges.
        auto rev = [&](int i, int j) { return nodes[static_cast<std::size_t>(i * n + j)].revenue; };
        double dl = 0.0, dg = 0.0;
        for (int k = 0; k < n; ++k) {
            dl = std::max({dl, std::abs(-3 * rev(0, k) + 4 * rev(1, k) - rev(2, k)) / (2 * hl),
                           std::abs(3 * rev(n - 1, k) - 4 * rev(n - 2, k) + rev(n - 3, k)) / (2 * hl)});
            dg = std::max({dg, std::abs(-3 * rev(k, 0) + 4 * rev(k, 1) - rev(k, 2)) / (2 * hg),
                           std::abs(3 * rev(k, n - 1) - 4 * rev(k, n - 2) + rev(k, n - 3)) / (2 * hg)});
        }
        out.gap += 0.5 * (dl * hl + dg * hg);
    }
    auto level = [&](double b, double flow) { return b + (flow >= 0 ? st.eta_charge : st.eta_discharge) * flow; };
    for (const Node& a : table[0]) {
        if (!a.ok) continue;
        const double b1 = level(st.b0, a.flow);
        if (b1 < st.b_min - 1e-12 || b1 > st.b_max + 1e-12) continue;
        for (const Node& c : table[1]) {
            if (!c.ok) continue;
            const double b2 = level(b1, c.flow);
            if (b2 < st.b_min - 1e-12 || b2 > st.b_max + 1e-12 || std::abs(b2 - st.b0) > st.theta + 1e-12) continue;
            ++out.feasible;
            out.best = std::max(out.best, a.revenue + c.revenue);
        }
    }
    return out;
}

void criterion_lattice(std::vector<const EquilibriumResult*>& certified, std::vector<EquilibriumResult>& keep)
{
    Verdict v;
    const auto start = Clock::now();
    double worst_short = -1e300, worst_beat = -1e300, worst_kkt = 0.0, max_gap = 0.0;
    long min_feasible = -1;
    bool covered = true;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const LeaderInputs in = lattice_instance(seed);
        LeaderOptions opt;
        opt.assemble.voltage_constraints = false;
        opt.probes = 1000;
        opt.seed = seed;
        keep.push_back(solve_stackelberg(in, opt));
        const EquilibriumResult& r = keep.back();
        const LatticeResult lat = lattice_search(in, 51, r);
        worst_short = std::max(worst_short, lat.best - lat.gap - r.revenue);
        worst_beat = std::max(worst_beat, lat.best - r.revenue);
        worst_kkt = std::max(worst_kkt, r.kkt.worst());
        max_gap = std::max(max_gap, lat.gap);
        min_feasible = min_feasible < 0 ? lat.feasible : std::min(min_feasible, lat.feasible);
        covered = covered && lat.covers_solution;
        v.require(lat.feasible > 0, "no feasible lattice point for seed " + std::to_string(seed));
        v.require(r.revenue >= lat.best - lat.gap, "revenue below lattice bound for seed " + std::to_string(seed));
    }
    for (const auto& r : keep) certified.push_back(&r);
    const double elapsed = seconds_since(start);
    v.detail << " 20 instances on a 51^4 lattice, max (lattice best - gap - revenue) " << worst_short
             << ", max (lattice best - revenue) " << worst_beat << ", largest gap bound " << max_gap << ", fewest feasible points " << min_feasible
             << ", max KKT residual " << worst_kkt << ", " << elapsed << " s";
    v.require(covered, "solution outside the lattice box");
    v.require(worst_kkt < 1e-8, "KKT residual");
    v.require(elapsed < 60.0, "runtime");
    report(2, "leader QP vs lattice search", v);
}

// ---------------------------------------------------------------------------
// 4. power-flow fidelity

void criterion_power_flow()
{
    Verdict v;
    const ScenarioConfig config = load_config(data_dir + "/reference.cfg");
    FeederSpec spec = config.feeder;
    spec.edges = load_feeder_csv(resolve_path(config, config.feeder_file)).edges;
    const auto start = Clock::now();
    const FeederModel model = build_feeder(spec);
    const int n = model.bus_count;
    const int h = 288;
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    BusInjectionSeries inj{Eigen::MatrixXd::Zero(n, h), Eigen::MatrixXd::Zero(n, h)};
    const double limit_pu = 0.3 * config.transformer_kva / spec.s_base_kva;
    for (int t = 0; t < h; ++t) {
        Eigen::VectorXd w(n);
        if (t == h - 1) {
            w.setZero();
            w(4) = 1.0;  // everything on the long lateral
        } else {
            for (int i = 0; i < n; ++i) w(i) = -std::log(1.0 - u(rng));
        }
        w /= w.sum();
        const double load = (t == h - 1 ? 1.0 : u(rng)) * limit_pu;
        for (int i = 0; i < n; ++i) {
            const double pf = 0.9 + 0.1 * u(rng);
            inj.P(i, t) = load * w(i) * pf;
            inj.Q(i, t) = load * w(i) * std::sqrt(1.0 - pf * pf);
        }
    }
    const Eigen::MatrixXd lin = linear_voltages(sensitivity_matrices<double>(model), inj, spec.v0_pu).array().sqrt();
    const SweepResult sweep = sweep_power_flow(model, inj, 1e-13);
    const double elapsed = seconds_since(start);
    const double dev = (lin - sweep.magnitudes()).cwiseAbs().maxCoeff();
    const double residual = distflow_residual(model, inj, sweep.vsq, sweep.flows, sweep.loss);
    v.detail << " H = 288 at up to 30% of the transformer rating, max |linear - sweep| " << dev
             << " p.u., DistFlow residual " << residual << ", " << elapsed << " s";
    v.require(dev <= 0.01, "voltage deviation");
    v.require(residual < 1e-10, "sweep residual");
    v.require(elapsed < 5.0, "runtime");
    report(4, "linearized voltages vs exact sweep", v);
}

// ---------------------------------------------------------------------------
// scenario set shared by criteria 3, 5, 6, 7 and 8

struct ScenarioRun {
    std::vector<std::pair<std::string, std::vector<ModeResult>>> scenarios;
    SeasonalSweep seasons;
    double game_seconds = -1.0;
};

std::vector<Mode> all_modes() { return {Mode::Baseline, Mode::Game, Mode::GameNoVolt, Mode::Centralized}; }

ScenarioRun run_scenario_set(int jobs, bool time_game)
{
    ScenarioRun out;
    for (const char* name : {"toy", "reference"}) {
        const ScenarioData data = prepare(load_config(data_dir + "/" + name + ".cfg"));
        RunOptions opt = run_options(data.config);
        opt.probes = 1000;
        opt.verify = true;
        std::vector<ModeResult> results;
        if (time_game) {
            for (Mode mode : all_modes()) {
                const auto start = Clock::now();
                results.push_back(run_mode(data, mode, opt));
                if (mode == Mode::Game && std::string(name) == "reference") out.game_seconds = seconds_since(start);
            }
        } else {
            results = run_modes(data, all_modes(), opt, jobs);
        }
        out.scenarios.emplace_back(name, std::move(results));
    }
    std::vector<std::pair<std::string, ScenarioConfig>> seasons;
    for (const char* name : {"summer", "autumn", "winter", "spring"}) {
        ScenarioConfig c = load_config(data_dir + "/seasons/" + std::string(name) + ".cfg");
        c.solver.verify = true;
        c.solver.probes = 1000;
        seasons.emplace_back(name, c);
    }
    out.seasons = seasonal_sweep(seasons, {Mode::Game}, jobs);
    return out;
}

std::vector<const ModeResult*> every_result(const ScenarioRun& run)
{
    std::vector<const ModeResult*> out;
    for (const auto& [name, results] : run.scenarios)
        for (const auto& r : results) out.push_back(&r);
    for (const auto& s : run.seasons.seasons)
        for (const auto& r : s.results) out.push_back(&r);
    return out;
}

std::vector<std::string> write_run(const ScenarioRun& run, const fs::path& dir)
{
    std::vector<std::string> files;
    for (const auto& [name, results] : run.scenarios) {
        for (const auto& r : results) {
            const fs::path sub = dir / name / to_string(r.mode);
            for (const auto& f : write_mode_outputs(r, sub.string())) files.push_back((sub / f).string());
        }
        const fs::path sub = dir / name / "comparison";
        for (const auto& f : write_comparison(compare(results), sub.string())) files.push_back((sub / f).string());
    }
    for (const auto& f : write_sweep(run.seasons, (dir / "seasons").string())) files.push_back((dir / "seasons" / f).string());
    return files;
}

std::string slurp(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void criterion_certificates(const ScenarioRun& run, const std::vector<const EquilibriumResult*>& extra)
{
    Verdict v;
    std::vector<const EquilibriumResult*> all = extra;
    for (const ModeResult* r : every_result(run))
        if (r->equilibrium) all.push_back(&*r->equilibrium);
    double worst_leader = 0.0, worst_follower = 0.0;
    int min_probes = 1 << 30;
    int missing = 0;
    for (const EquilibriumResult* e : all) {
        if (!e->certificate) {
            ++missing;
            continue;
        }
        const auto& c = *e->certificate;
        worst_leader = std::max(worst_leader, c.leader.max_advantage);
        worst_follower = std::max(worst_follower, c.followers.max_advantage);
        min_probes = std::min(min_probes, c.leader.probes);
        v.require(c.leader.max_advantage <= 1e-6, "leader probe gained");
        v.require(c.followers.passed(), "follower scan");
    }
    v.detail << " " << all.size() << " equilibria, at least " << min_probes << " leader probes each, max leader gain "
             << worst_leader << ", max follower gain " << worst_follower;
    v.require(missing == 0, std::to_string(missing) + " without certificate");
    v.require(min_probes >= 1000, "probe count");
    report(3, "Stackelberg certificates", v);
}

void criterion_audits(const ScenarioRun& run, const std::vector<const EquilibriumResult*>& extra)
{
    Verdict v;
    int count = 0;
    double worst_cd = 0.0;
    for (const ModeResult* r : every_result(run)) {
        if (!r->has_storage) continue;
        ++count;
        worst_cd = std::max(worst_cd, r->max_complementarity);
        v.require(r->audit_failures.empty(), r->scenario + "/" + to_string(r->mode) + " audit");
        v.require(r->max_complementarity < 1e-6, r->scenario + "/" + to_string(r->mode) + " complementarity");
        v.require(std::abs(r->accounting_residual) <= 1e-6 * std::max(1.0, std::abs(r->community_cost)),
                  r->scenario + "/" + to_string(r->mode) + " accounting");
    }
    for (const EquilibriumResult* e : extra) {
        ++count;
        worst_cd = std::max(worst_cd, e->max_complementarity);
        v.require(e->audit.passed(), "lattice instance audit");
    }
    v.detail << " " << count << " accepted schedules audited at 1e-6, max c*d " << worst_cd;
    report(5, "constraint audits", v);
}

void criterion_directional(const ScenarioRun& run)
{
    Verdict v;
    const auto& results = run.scenarios[1].second;
    auto get = [&](Mode m) -> const ModeResult& {
        return *std::find_if(results.begin(), results.end(), [&](const ModeResult& r) { return r.mode == m; });
    };
    const ModeResult& base = get(Mode::Baseline);
    const ModeResult& game = get(Mode::Game);
    const ModeResult& novolt = get(Mode::GameNoVolt);
    const ModeResult& central = get(Mode::Centralized);
    v.detail << " baseline violations " << base.voltage_violations.size() << ", game violations "
             << game.voltage_violations.size() << ", peak " << base.peak_demand() << " -> " << game.peak_demand()
             << " kWh, revenue " << *game.revenue << " (voltage rows) vs " << *novolt.revenue
             << " (none), community cost " << central.community_cost << " (centralized) vs "
             << game.community_cost << " (game)";
    v.require(!base.voltage_violations.empty(), "baseline voltages within limits");
    v.require(game.voltage_violations.empty(), "game violates voltage limits");
    v.require(game.peak_demand() < base.peak_demand(), "peak not reduced");
    v.require(*game.revenue <= *novolt.revenue + 1e-6, "voltage rows raised revenue");
    v.require(central.community_cost <= game.community_cost + 1e-6, "centralized cost above game");
    report(6, "directional reproduction on reference", v);
}

void criterion_determinism(const ScenarioRun& first, const ScenarioRun& second, const fs::path& root)
{
    Verdict v;
    const auto a = write_run(first, root / "a");
    const auto b = write_run(second, root / "b");
    int differing = 0;
    v.require(a.size() == b.size(), "different file sets");
    for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) {
        const std::string ra = fs::relative(a[i], root / "a").string();
        const std::string rb = fs::relative(b[i], root / "b").string();
        if (ra != rb || slurp(a[i]) != slurp(b[i])) {
            ++differing;
            v.require(false, ra);
        }
    }
    v.detail << " " << a.size() << " JSON/CSV files from two runs (sequential and 2 threads), " << differing
             << " differ";
    report(7, "bitwise determinism", v);
}

void criterion_performance(const ScenarioRun& run)
{
    Verdict v;
    v.detail << " H = 288, 55 users, 7 buses, voltage rows and 1000-probe certificate: " << run.game_seconds << " s";
    v.require(run.game_seconds >= 0.0 && run.game_seconds < 300.0, "runtime");
    report(8, "full Stackelberg solve time", v);
}

// Runs a criterion, turning an escaped exception into a FAIL line.
void guarded(int id, const std::string& name, const std::function<void()>& body)
{
    try {
        body();
    } catch (const std::exception& e) {
        Verdict v;
        v.require(false, e.what());
        report(id, name, v);
    }
}

}  // namespace

int main()
{
    guarded(1, "follower equilibrium vs best-response oracle", criterion_nash);
    std::vector<EquilibriumResult> lattice_results;
    std::vector<const EquilibriumResult*> lattice_ptrs;
    guarded(2, "leader QP vs lattice search", [&] { criterion_lattice(lattice_ptrs, lattice_results); });
    guarded(4, "linearized voltages vs exact sweep", criterion_power_flow);

    std::optional<ScenarioRun> first, second;
    guarded(3, "scenario set", [&] { first = run_scenario_set(1, true); });
    if (first) {
        guarded(3, "Stackelberg certificates", [&] { criterion_certificates(*first, lattice_ptrs); });
        guarded(5, "constraint audits", [&] { criterion_audits(*first, lattice_ptrs); });
        guarded(6, "directional reproduction on reference", [&] { criterion_directional(*first); });
        guarded(8, "full Stackelberg solve time", [&] { criterion_performance(*first); });
        const fs::path root = fs::temp_directory_path() / ("cestrade-acceptance-" + std::to_string(::getpid()));
        guarded(7, "bitwise determinism", [&] {
            second = run_scenario_set(2, false);
            criterion_determinism(*first, *second, root);
        });
        fs::remove_all(root);
    }
    std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
    return failures == 0 ? 0 : 1;
}
