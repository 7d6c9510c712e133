#include "doctest.h"

#include <cestrade/storage.hpp>

#include <random>

using namespace cestrade;

namespace {

bool has(const StorageReport& r, StorageViolation::Kind kind)
{
    for (const auto& v : r.violations) {
        if (v.kind == kind) return true;
    }
    return false;
}

}  // namespace

TEST_CASE("net storage flow")
{
    CHECK(net_storage_flow(0.0, Eigen::Vector2d::Zero()) == 0.0);
    CHECK(net_storage_flow(-3.0, Eigen::Vector2d(2.0, 3.0)) == 2.0);
}

TEST_CASE("state of charge recursion")
{
    CHECK(soc_series(100.0, 0.98, 1.02, Eigen::VectorXd::Constant(1, 10.0))(0) == doctest::Approx(109.8));
    CHECK(soc_series(100.0, 0.98, 1.02, Eigen::VectorXd::Constant(1, -10.0))(0) == doctest::Approx(89.8));
    const Eigen::VectorXd b = soc_series(100.0, 0.98, 1.02, Eigen::Vector2d(5.0, -5.0));
    CHECK(b(1) - 100.0 == doctest::Approx((0.98 - 1.02) * 5.0));

    StorageParams params;
    const StorageTrajectory zero = soc_trajectory(params, Eigen::VectorXd::Zero(4));
    CHECK((zero.charge.array() == params.b0).all());
    params.theta = 0.0;
    CHECK(check_storage_feasibility(zero, params).feasible());
}

TEST_CASE("recursion is reproducible and monotone in the efficiencies")
{
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(-10.0, 10.0);
    Eigen::VectorXd flow(50);
    for (auto& f : flow) f = u(rng);
    const Eigen::VectorXd b = soc_series(300.0, 0.95, 1.05, flow);
    CHECK((soc_series(300.0, 0.95, 1.05, flow).array() == b.array()).all());
    CHECK((soc_series(300.0, 0.99, 1.05, flow).array() >= b.array()).all());
    CHECK((soc_series(300.0, 0.95, 1.01, flow).array() >= b.array()).all());

    // the long-double instantiation tracks the double one
    const Eigen::Matrix<long double, Eigen::Dynamic, 1> wide =
        soc_series(300.0L, 0.95L, 1.05L, flow.cast<long double>());
    CHECK(std::abs(static_cast<double>(wide(49)) - b(49)) < 1e-10);
}

TEST_CASE("feasibility checks")
{
    StorageParams params;
    const double dt = params.dt_h;
    StorageTrajectory at_rate = soc_trajectory(params, Eigen::Vector2d(150.0 * dt, -150.0 * dt));
    const StorageReport ok = check_storage_feasibility(at_rate, params);
    CHECK_FALSE(has(ok, StorageViolation::Kind::ChargeRate));
    CHECK_FALSE(has(ok, StorageViolation::Kind::DischargeRate));

    StorageTrajectory over = soc_trajectory(params, Eigen::VectorXd::Constant(1, 151.0 * dt));
    CHECK(has(check_storage_feasibility(over, params), StorageViolation::Kind::ChargeRate));

    StorageTrajectory low;
    low.flow = Eigen::VectorXd::Zero(1);
    low.charge = Eigen::VectorXd::Constant(1, 0.04 * params.b_max);
    CHECK(has(check_storage_feasibility(low, params), StorageViolation::Kind::CapacityLow));
    CHECK(has(check_storage_feasibility(low, params), StorageViolation::Kind::Cyclical));

    StorageTrajectory back = soc_trajectory(params, Eigen::Vector2d(0.0, 0.0));
    params.theta = 0.0;
    CHECK(check_storage_feasibility(back, params).feasible());
    CHECK(to_string(StorageViolation::Kind::CapacityHigh) == "capacity_high");
}

TEST_CASE("parameter validation")
{
    StorageParams p;
    validate(p);
    CHECK(p.b0 == doctest::Approx(StorageParams::default_initial(35.0, 700.0)));
    p.eta_charge = 1.2;
    CHECK_THROWS_AS(validate(p), Error);
    p = StorageParams{};
    p.eta_discharge = 0.9;
    CHECK_THROWS_AS(validate(p), Error);
    p = StorageParams{};
    p.b0 = 800.0;
    CHECK_THROWS_AS(validate(p), Error);
}
