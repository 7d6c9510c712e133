#include "doctest.h"

#include <cestrade/config.hpp>

#include <filesystem>
#include <fstream>

using namespace cestrade;

namespace {

const std::string data_dir = CESTRADE_DATA_DIR;

std::string write_temp(const std::string& name, const std::string& text)
{
    const auto path = std::filesystem::temp_directory_path() / name;
    std::ofstream(path) << text;
    return path.string();
}

}  // namespace

TEST_CASE("shipped scenario loads")
{
    const ScenarioConfig c = load_config(data_dir + "/reference.cfg");
    CHECK(c.horizon == 288);
    CHECK(c.dt_h == doctest::Approx(5.0 / 60.0));
    CHECK(c.ces_bus == 7);
    CHECK(c.storage.b_max == 700.0);
    CHECK(c.storage.b_min == 35.0);
    CHECK(c.storage.charge_rate_max == 150.0);
    CHECK(c.storage.eta_charge == 0.98);
    CHECK(c.storage.eta_discharge == 1.02);
    CHECK(c.storage.dt_h == c.dt_h);
    CHECK(c.prices.peak_first == 85);
    CHECK(c.prices.peak_last == 276);
    CHECK(c.prices.phi_ratio == 2.12);
    CHECK(c.prices.price_floor == 18.5);
    CHECK(c.transformer_energy() == doctest::Approx(185.0 * 5.0 / 60.0));
    CHECK(config_issues(c).empty());
    CHECK(diagnose(c).empty());
}

TEST_CASE("ini round trip")
{
    const ScenarioConfig a = load_config(data_dir + "/toy.cfg");
    const std::string path = write_temp("cestrade_roundtrip.cfg", to_ini(a));
    const ScenarioConfig b = load_config(path);
    CHECK(to_ini(a) == to_ini(b));
    CHECK(b.profiles.synth.allocation.size() == 7);
}

TEST_CASE("parse failures")
{
    CHECK_THROWS_AS(load_config(write_temp("cestrade_bad1.cfg", "[scenario]\nhorizon = twelve\n")), Error);
    CHECK_THROWS_AS(load_config(write_temp("cestrade_bad2.cfg", "[scenario]\nhorizn = 12\n")), Error);
    CHECK_THROWS_AS(load_config(write_temp("cestrade_bad3.cfg", "[scenery]\nhorizon = 12\n")), Error);
    CHECK_THROWS_AS(load_config(write_temp("cestrade_bad4.cfg", "[profiles]\nsource = maybe\n")), Error);
    CHECK_THROWS_AS(load_config(write_temp("cestrade_bad5.cfg", "[profiles]\nallocation = 1-2-3\n")), Error);
    try {
        load_config("/nonexistent/cestrade.cfg");
        FAIL("missing file loaded");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::ParseError);
    }
}

TEST_CASE("config invariants")
{
    ScenarioConfig c = load_config(data_dir + "/toy.cfg");
    c.horizon = 49;  // 24.5 h
    c.prices.peak_last = 46;
    CHECK_FALSE(config_issues(c).empty());
    c = load_config(data_dir + "/toy.cfg");
    c.prices.peak_last = 60;
    CHECK_FALSE(config_issues(c).empty());
    c = load_config(data_dir + "/toy.cfg");
    c.storage.eta_charge = 1.2;
    CHECK_FALSE(config_issues(c).empty());
    c = load_config(data_dir + "/toy.cfg");
    c.ces_bus = 9;
    const auto diags = diagnose(c);
    REQUIRE_FALSE(diags.empty());
    CHECK(diags.front().kind == "UnknownCesBus");
}

TEST_CASE("average tou price")
{
    PriceSettings p;
    // 192 peak intervals out of 288
    CHECK(average_tou(p, 288) == doctest::Approx((192 * 39.22 + 96 * 18.5) / 288.0));
    p.peak_first = 1;
    p.peak_last = 288;
    CHECK(average_tou(p, 288) == doctest::Approx(39.22));
}

TEST_CASE("phi calibration reproduces the tou spread")
{
    PriceSettings p;
    p.peak_first = 3;
    p.peak_last = 6;
    Eigen::VectorXd e(8);
    e << 4.0, 2.0, 5.0, 9.0, -3.0, 7.0, 1.0, 6.0;
    const double phi = calibrate_phi_offpeak(p, e);
    // brute force over the intervals
    double best_peak = -1e300, best_off = 1e300;
    const double delta = 30.0;
    for (int t = 0; t < 8; ++t) {
        const bool peak = t + 1 >= 3 && t + 1 <= 6;
        const double price = (peak ? p.phi_ratio * phi : phi) * e(t) + delta;
        if (peak) best_peak = std::max(best_peak, price);
        else best_off = std::min(best_off, price);
    }
    CHECK(best_peak - best_off == doctest::Approx(p.tou_peak - p.tou_offpeak).epsilon(1e-12));

    Eigen::VectorXd flat = Eigen::VectorXd::Constant(8, 1.0);
    p.phi_ratio = 0.5;
    CHECK_THROWS_AS(calibrate_phi_offpeak(p, flat), Error);
}

TEST_CASE("prepared prices follow the peak window")
{
    const ScenarioData d = prepare(load_config(data_dir + "/toy.cfg"));
    const auto& p = d.config.prices;
    CHECK(p.phi_offpeak > 0.0);
    for (int t = 1; t <= d.config.horizon; ++t) {
        const bool peak = t >= p.peak_first && t <= p.peak_last;
        CHECK(d.phi(t - 1) == doctest::Approx(peak ? p.phi_ratio * p.phi_offpeak : p.phi_offpeak));
        CHECK(d.delta(t - 1) == average_tou(p, d.config.horizon));
    }
    CHECK(d.surplus.participant_count() == 50);
    CHECK(d.profiles.nonparticipants().size() == 5);
    CHECK((d.baseline_energy - (d.nonparticipant_energy - d.surplus.total())).cwiseAbs().maxCoeff() == 0.0);
}
