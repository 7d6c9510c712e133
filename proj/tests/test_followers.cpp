#include "doctest.h"

#include <cestrade/followers.hpp>

#include <random>

using namespace cestrade;

namespace {

MarketContext toy_context()
{
    MarketContext ctx;
    ctx.phi = 1.0;
    ctx.delta = 0.0;
    ctx.storage_price = 1.0;
    ctx.participants = 2;
    return ctx;
}

// Sequential best responses until nothing moves.
Eigen::VectorXd best_response_fixed_point(const Eigen::VectorXd& s, const MarketContext& ctx,
                                          Eigen::VectorXd y, double tol)
{
    for (int sweep = 0; sweep < 100000; ++sweep) {
        double moved = 0.0;
        for (Eigen::Index p = 0; p < y.size(); ++p) {
            const double next = best_response(s(p), others_grid_energy(y, s, p, ctx), ctx);
            moved = std::max(moved, std::abs(next - y(p)));
            y(p) = next;
        }
        if (moved < tol) break;
    }
    return y;
}

MarketContext random_context(std::mt19937_64& rng, Eigen::Index m)
{
    std::uniform_real_distribution<double> u(0.0, 1.0);
    MarketContext ctx;
    ctx.phi = 0.05 + u(rng);
    ctx.delta = 5.0 + 30.0 * u(rng);
    ctx.storage_price = 5.0 + 40.0 * u(rng);
    ctx.nonparticipant_energy = 5.0 * u(rng);
    ctx.provider_grid = 10.0 * (u(rng) - 0.5);
    ctx.participants = m;
    return ctx;
}

}  // namespace

TEST_CASE("grid price")
{
    MarketContext ctx;
    ctx.phi = 2.0;
    ctx.delta = 1.0;
    CHECK(grid_price(0.0, ctx) == 1.0);
    CHECK(grid_price(3.0, ctx) == 7.0);
}

TEST_CASE("user cost closed forms")
{
    MarketContext ctx = toy_context();
    ctx.delta = 2.0;
    ctx.storage_price = 3.0;
    CHECK(user_cost(2.5, 2.5, 4.0, ctx) == doctest::Approx(-3.0 * 2.5));
    CHECK(user_cost(0.0, 0.0, 4.0, ctx) == doctest::Approx(0.0));

    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-5.0, 5.0);
    for (int k = 0; k < 1000; ++k) {
        const MarketContext c = random_context(rng, 3);
        const double y = u(rng), s = u(rng), others = u(rng);
        const double direct = user_cost_direct(y, s, others, c);
        CHECK(std::abs(user_cost(y, s, others, c) - direct) <= 1e-12 * std::max(1.0, std::abs(direct)) * 100);
    }
}

TEST_CASE("best response is the minimiser")
{
    MarketContext ctx = toy_context();
    // K1 = 0: phi (2 s - E_-p) - delta + lambda_s = 0
    ctx.delta = 1.0;
    ctx.storage_price = 1.0;
    CHECK(best_response(1.0, 2.0, ctx) == doctest::Approx(0.0));

    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-5.0, 5.0);
    for (int k = 0; k < 200; ++k) {
        const MarketContext c = random_context(rng, 4);
        const double s = u(rng), others = u(rng);
        const double y = best_response(s, others, c);
        CHECK(user_cost(y, s, others, c) <= user_cost(y + 0.1, s, others, c));
        CHECK(user_cost(y, s, others, c) <= user_cost(y - 0.1, s, others, c));
    }
}

TEST_CASE("two-user instance")
{
    const Eigen::Vector2d s(2.0, 1.0);
    const MarketContext ctx = toy_context();
    const auto nash = nash_closed_form(s, ctx);
    CHECK(nash.epsilon == doctest::Approx(1.0 / 3.0));
    CHECK(nash.trades(0) == doctest::Approx(7.0 / 3.0));
    CHECK(nash.trades(1) == doctest::Approx(4.0 / 3.0));

    const Eigen::VectorXd fixed = best_response_fixed_point(s, ctx, Eigen::Vector2d::Zero(), 1e-14);
    CHECK((fixed - nash.trades).cwiseAbs().maxCoeff() < 1e-10);

    const NashCertificate cert = verify_nash(nash.trades, s, ctx);
    CHECK(cert.max_advantage < 1e-8);

    Eigen::VectorXd bad = nash.trades;
    bad(0) += 0.5;
    try {
        verify_nash(bad, s, ctx);
        FAIL("perturbed profile certified");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::CertificateFailure);
    }
}

TEST_CASE("zero offset when the storage price equals the intercept")
{
    MarketContext ctx = toy_context();
    ctx.delta = 4.0;
    ctx.storage_price = 4.0;
    const Eigen::Vector3d s(1.0, -2.0, 0.5);
    const auto nash = nash_closed_form(s, ctx);
    CHECK(nash.epsilon == 0.0);
    CHECK((nash.trades - s).norm() == 0.0);
}

TEST_CASE("single user equals direct minimisation")
{
    std::mt19937_64 rng(9);
    for (int k = 0; k < 50; ++k) {
        const MarketContext ctx = random_context(rng, 1);
        const Eigen::VectorXd s = Eigen::VectorXd::Constant(1, 1.7);
        const auto nash = nash_closed_form(s, ctx);
        const double others = ctx.nonparticipant_energy + ctx.provider_grid;
        // golden-section-free oracle: dense scan then vertex of the parabola through the best three points
        double best = nash.trades(0);
        double best_c = user_cost_direct(best, s(0), others, ctx);
        for (int i = -20000; i <= 20000; ++i) {
            const double y = nash.trades(0) + 1e-4 * i;
            const double c = user_cost_direct(y, s(0), others, ctx);
            if (c < best_c) {
                best_c = c;
                best = y;
            }
        }
        CHECK(best == doctest::Approx(nash.trades(0)));
    }
}

TEST_CASE("uniform offset and uniqueness across random starts")
{
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    for (int k = 0; k < 10; ++k) {
        const Eigen::Index m = 2 + k % 6;
        const MarketContext ctx = random_context(rng, m);
        Eigen::VectorXd s(m);
        for (Eigen::Index p = 0; p < m; ++p) s(p) = u(rng);
        const auto nash = nash_closed_form(s, ctx);
        const Eigen::VectorXd offset = nash.trades - s;
        CHECK(offset.maxCoeff() - offset.minCoeff() <= 1e-14 * (1.0 + std::abs(nash.epsilon)) * 10);

        for (int start = 0; start < 100; ++start) {
            Eigen::VectorXd y0(m);
            for (Eigen::Index p = 0; p < m; ++p) y0(p) = 10.0 * u(rng);
            const Eigen::VectorXd y = best_response_fixed_point(s, ctx, y0, 1e-13);
            CHECK((y - nash.trades).cwiseAbs().maxCoeff() < 1e-8);
        }
    }
}

TEST_CASE("simultaneous best responses reproduce the equilibrium")
{
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    for (int k = 0; k < 100; ++k) {
        const Eigen::Index m = 1 + k % 10;
        const MarketContext ctx = random_context(rng, m);
        Eigen::VectorXd s(m);
        for (Eigen::Index p = 0; p < m; ++p) s(p) = u(rng);
        const auto nash = nash_closed_form(s, ctx);
        for (Eigen::Index p = 0; p < m; ++p) {
            const double y = best_response(s(p), others_grid_energy(nash.trades, s, p, ctx), ctx);
            CHECK(std::abs(y - nash.trades(p)) < 1e-10);
        }
    }
}

TEST_CASE("scan options")
{
    const Eigen::Vector2d s(2.0, 1.0);
    NashScanOptions opts;
    opts.resolution = 50;
    CHECK_THROWS_AS(scan_nash_deviations(s, s, toy_context(), opts), Error);
    opts.resolution = 200;
    opts.use_trade_bounds = true;
    // y = s is feasible; within [0, s] the best response to everyone else sits at the bound
    const NashCertificate cert = scan_nash_deviations(s, s, toy_context(), opts);
    CHECK(cert.points_per_user == 200);
    CHECK(cert.max_advantage >= 0.0);
}
