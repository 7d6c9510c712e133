#include "doctest.h"

#include <cestrade/config.hpp>
#include <cestrade/error.hpp>
#include <cestrade/report_io.hpp>
#include <cestrade/scenarios.hpp>

#include <algorithm>
#include <map>

using namespace cestrade;

namespace {

const std::string data_dir = CESTRADE_DATA_DIR;

const ScenarioData& toy()
{
    static const ScenarioData d = prepare(load_config(data_dir + "/toy.cfg"));
    return d;
}

const std::vector<ModeResult>& toy_results()
{
    static const std::vector<ModeResult> r = [] {
        RunOptions o = run_options(toy().config);
        o.probes = 100;
        return run_modes(toy(), {Mode::Baseline, Mode::Game, Mode::GameNoVolt, Mode::Centralized}, o, 2);
    }();
    return r;
}

const ModeResult& result(Mode m)
{
    for (const auto& r : toy_results())
        if (r.mode == m) return r;
    throw std::logic_error("mode missing");
}

}  // namespace

TEST_CASE("mode names")
{
    for (Mode m : {Mode::Baseline, Mode::Game, Mode::GameNoVolt, Mode::Centralized})
        CHECK(parse_mode(to_string(m)) == m);
    CHECK_THROWS_AS(parse_mode("stackelberg"), Error);
}

TEST_CASE("baseline conserves energy")
{
    const ModeResult& b = result(Mode::Baseline);
    const ScenarioData& d = toy();
    CHECK(b.grid_energy.sum() == doctest::Approx((d.nonparticipant_energy - d.surplus.total()).sum()).epsilon(1e-12));
    CHECK((b.trades.array() == 0.0).all());
    CHECK(b.grid_trades.isApprox(-d.surplus.s));
    CHECK_FALSE(b.has_storage);
    CHECK_FALSE(b.revenue.has_value());
    CHECK(b.storage_flow.size() == 0);
    const Eigen::VectorXd expected = d.phi.cwiseProduct(b.grid_energy) + d.delta;
    CHECK((b.grid_price - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("accounting closes in every mode")
{
    for (const auto& r : toy_results()) {
        INFO(to_string(r.mode));
        const double scale = 1.0 + std::abs(r.community_cost);
        CHECK(std::abs(accounting_residual(r)) < 1e-9 * scale);
        CHECK(std::abs(r.accounting_residual) < 1e-9 * scale);
        CHECK(r.audit_failures.empty());
        CHECK(r.sweep_residual < 1e-10);
        CHECK(r.max_complementarity < 1e-6);
    }
}

TEST_CASE("game modes carry certificates")
{
    for (Mode m : {Mode::Game, Mode::GameNoVolt}) {
        const ModeResult& r = result(m);
        INFO(to_string(m));
        REQUIRE(r.equilibrium.has_value());
        REQUIRE(r.kkt.has_value());
        REQUIRE(r.equilibrium->certificate.has_value());
        CHECK(r.equilibrium->certificate->passed());
        CHECK(r.kkt->certified(1e-6));
        CHECK(r.storage_price.size() == r.horizon);
    }
    CHECK_FALSE(result(Mode::Centralized).equilibrium.has_value());
}

TEST_CASE("storage stays inside its limits")
{
    const StorageParams& s = toy().config.storage;
    for (Mode m : {Mode::Game, Mode::GameNoVolt, Mode::Centralized}) {
        const ModeResult& r = result(m);
        INFO(to_string(m));
        REQUIRE(r.has_storage);
        CHECK(r.charge_level.minCoeff() >= s.b_min - 1e-6);
        CHECK(r.charge_level.maxCoeff() <= s.b_max + 1e-6);
        CHECK(std::abs(r.charge_level(r.horizon - 1) - s.b0) <= s.theta + 1e-6);
        const Eigen::VectorXd flow = r.provider_grid + r.trades.colwise().sum().transpose();
        CHECK((flow - r.storage_flow).cwiseAbs().maxCoeff() < 1e-9);
    }
}

TEST_CASE("directional relations between modes")
{
    const ModeResult& base = result(Mode::Baseline);
    const ModeResult& game = result(Mode::Game);
    const ModeResult& novolt = result(Mode::GameNoVolt);
    const ModeResult& central = result(Mode::Centralized);
    CHECK_FALSE(base.voltage_violations.empty());
    CHECK(game.voltage_violations.empty());
    CHECK(central.voltage_violations.empty());
    CHECK(game.peak_demand() < base.peak_demand());
    CHECK(*game.revenue <= *novolt.revenue + 1e-6);
    CHECK(central.community_cost <= game.community_cost + 1e-6);
}

TEST_CASE("comparison against itself is flat")
{
    const ModeResult& game = result(Mode::Game);
    const ComparisonReport rep = compare(std::vector<ModeResult>{game, game});
    REQUIRE(rep.deltas.size() == 2);
    for (const auto& d : rep.deltas) {
        CHECK(d.peak_demand_pct == 0.0);
        CHECK(d.participant_average_pct == 0.0);
        CHECK(d.nonparticipant_average_pct == 0.0);
        CHECK(d.community_cost_pct == 0.0);
    }
    const ComparisonReport full = compare(toy_results());
    CHECK(full.reference == Mode::Baseline);
    CHECK(full.modes.size() == 4);

    ModeResult other = game;
    other.horizon = 24;
    CHECK_THROWS_AS(compare(std::vector<ModeResult>{game, other}), Error);
    try {
        compare(std::vector<ModeResult>{game, other});
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::IncompatibleResults);
    }
    CHECK_THROWS_AS(compare(std::vector<ModeResult>{game}), Error);
}

TEST_CASE("percent change")
{
    CHECK(percent_change(0.0, 0.0) == 0.0);
    CHECK(percent_change(200.0, 150.0) == doctest::Approx(-25.0));
    CHECK(percent_change(-100.0, -50.0) == doctest::Approx(50.0));
}

TEST_CASE("voltage quartiles")
{
    Eigen::MatrixXd v(1, 5);
    v << 1.0, 0.98, 1.02, 0.99, 1.01;
    const auto s = voltage_stats(v);
    REQUIRE(s.size() == 1);
    CHECK(s[0].min == 0.98);
    CHECK(s[0].q1 == doctest::Approx(0.99));
    CHECK(s[0].median == doctest::Approx(1.0));
    CHECK(s[0].q3 == doctest::Approx(1.01));
    CHECK(s[0].max == 1.02);
}

TEST_CASE("runs are deterministic")
{
    RunOptions o = run_options(toy().config);
    o.probes = 50;
    const ModeResult a = run_mode(toy(), Mode::Game, o);
    const ModeResult b = run_mode(toy(), Mode::Game, o);
    CHECK(result_json(a) == result_json(b));
    const auto par = run_modes(toy(), {Mode::Game, Mode::Centralized}, o, 2);
    const auto seq = run_modes(toy(), {Mode::Game, Mode::Centralized}, o, 1);
    CHECK(result_json(par[0]) == result_json(seq[0]));
    CHECK(result_json(par[1]) == result_json(seq[1]));
}

TEST_CASE("identical seasons give identical reports")
{
    ScenarioConfig c = load_config(data_dir + "/toy.cfg");
    c.solver.verify = false;
    const auto sweep = seasonal_sweep({{"a", c}, {"b", c}}, {Mode::Baseline, Mode::Game});
    REQUIRE(sweep.seasons.size() == 2);
    CHECK(sweep.bars.revenue(0) == sweep.bars.revenue(1));
    CHECK(sweep.bars.revenue(0) == 1.0);
    CHECK(sweep.bars.participant_cost(0) == sweep.bars.participant_cost(1));
    const auto& ra = sweep.seasons[0].results[1];
    const auto& rb = sweep.seasons[1].results[1];
    CHECK(ra.grid_energy == rb.grid_energy);
    CHECK(*ra.revenue == *rb.revenue);
    CHECK(ra.community_cost == rb.community_cost);

    const StorageParams s = seasonal_storage(c.storage);
    CHECK(s.b_max == 950.0);
    CHECK(s.charge_rate_max == 300.0);
    CHECK(s.discharge_rate_max == 300.0);
    CHECK(s.b_min == doctest::Approx(47.5));
    CHECK(s.b0 == doctest::Approx(StorageParams::default_initial(47.5, 950.0)));
}

TEST_CASE("seasonal ordering")
{
    std::vector<std::pair<std::string, ScenarioConfig>> seasons;
    for (const char* name : {"summer", "autumn", "winter", "spring"}) {
        ScenarioConfig c = load_config(data_dir + "/seasons/" + std::string(name) + ".cfg");
        c.solver.verify = false;
        seasons.emplace_back(name, c);
    }
    const auto sweep = seasonal_sweep(seasons, {Mode::Game}, 2);
    std::map<std::string, std::pair<double, double>> by_season;
    for (const auto& s : sweep.seasons) {
        const ModeResult& r = s.results.front();
        by_season[s.season] = {*r.revenue, r.participant_average()};
        CHECK(r.voltage_violations.empty());
    }
    const auto min_cost = std::min_element(by_season.begin(), by_season.end(),
        [](const auto& a, const auto& b) { return a.second.second < b.second.second; });
    CHECK(min_cost->first == "summer");
    const auto max_rev = std::max_element(by_season.begin(), by_season.end(),
        [](const auto& a, const auto& b) { return a.second.first < b.second.first; });
    WARN_MESSAGE(max_rev->first == "winter", "provider revenue peaks in " << max_rev->first << ", not winter");
}
