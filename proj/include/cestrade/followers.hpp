#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>
#include <utility>
#include <vector>

#include "cestrade/error.hpp"

namespace cestrade {

// Follower side of the trading game at one interval. Energies are kWh per
// interval, prices currency per kWh, and `phi` currency per kWh^2.

template <typename Scalar>
struct MarketContextT {
    Scalar phi{1};
    Scalar delta{0};
    Scalar nonparticipant_energy{0};  // E_N(t)
    Scalar provider_grid{0};          // e_g(t)
    Scalar storage_price{0};          // lambda_s(t)
    Eigen::Index participants{1};     // M
};
using MarketContext = MarketContextT<double>;

/// lambda_g = phi * E + delta. No floor here; the floor is a leader constraint.
template <typename Scalar>
Scalar grid_price(Scalar total_energy, const MarketContextT<Scalar>& ctx)
{
    return ctx.phi * total_energy + ctx.delta;
}

/// Coefficients of C_p(y) = k2 y^2 + k1 y + k0 given the others' grid energy.
template <typename Scalar>
struct CostQuadratic {
    Scalar k2;
    Scalar k1;
    Scalar k0;

    Scalar operator()(Scalar y) const { return (k2 * y + k1) * y + k0; }
};

template <typename Scalar>
CostQuadratic<Scalar> cost_coefficients(Scalar surplus, Scalar others_grid, const MarketContextT<Scalar>& ctx)
{
    const Scalar k2 = ctx.phi;
    const Scalar k1 = -(ctx.phi * (Scalar(2) * surplus - others_grid) - ctx.delta + ctx.storage_price);
    // Constant collecting every y-free term of lambda_g * e_p - lambda_s * y.
    const Scalar k0 = ctx.phi * surplus * (surplus - others_grid) - ctx.delta * surplus;
    return {k2, k1, k0};
}

/// User cost from the quadratic form.
template <typename Scalar>
Scalar user_cost(Scalar y, Scalar surplus, Scalar others_grid, const MarketContextT<Scalar>& ctx)
{
    return cost_coefficients(surplus, others_grid, ctx)(y);
}

/// User cost straight from its definition: lambda_g * e_p - lambda_s * y with e_p = y - s.
template <typename Scalar>
Scalar user_cost_direct(Scalar y, Scalar surplus, Scalar others_grid, const MarketContextT<Scalar>& ctx)
{
    const Scalar own_grid = y - surplus;
    return grid_price(own_grid + others_grid, ctx) * own_grid - ctx.storage_price * y;
}

/// Unconstrained minimiser -k1 / (2 k2).
template <typename Scalar>
Scalar best_response(Scalar surplus, Scalar others_grid, const MarketContextT<Scalar>& ctx)
{
    const auto c = cost_coefficients(surplus, others_grid, ctx);
    return -c.k1 / (Scalar(2) * c.k2);
}

/// epsilon(t) = (M + 1)^-1 [ (lambda_s - delta) / phi - E_N - e_g ].
template <typename Scalar>
Scalar equilibrium_offset(const MarketContextT<Scalar>& ctx)
{
    return ((ctx.storage_price - ctx.delta) / ctx.phi - ctx.nonparticipant_energy - ctx.provider_grid) /
           Scalar(ctx.participants + 1);
}

template <typename Scalar>
struct NashPoint {
    Scalar epsilon;
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> trades;  // y*_p = s_p + epsilon
};

template <typename Derived>
NashPoint<typename Derived::Scalar> nash_closed_form(const Eigen::MatrixBase<Derived>& surplus,
                                                     MarketContextT<typename Derived::Scalar> ctx)
{
    using Scalar = typename Derived::Scalar;
    ctx.participants = surplus.size();
    const Scalar eps = equilibrium_offset(ctx);
    NashPoint<Scalar> out{eps, surplus.derived()};
    out.trades.array() += eps;
    return out;
}

/// Grid energy of everyone except `p`: sum of the other participants' e_q plus E_N and e_g.
template <typename DerivedY, typename DerivedS>
typename DerivedY::Scalar others_grid_energy(const Eigen::MatrixBase<DerivedY>& trades,
                                             const Eigen::MatrixBase<DerivedS>& surplus,
                                             Eigen::Index p,
                                             const MarketContextT<typename DerivedY::Scalar>& ctx)
{
    const auto total_users = (trades - surplus).sum();
    return total_users - (trades(p) - surplus(p)) + ctx.nonparticipant_energy + ctx.provider_grid;
}

struct TradeBounds {
    double lower;
    double upper;
};

/// Feasible CES trade interval of a user: [0, s] for surplus, [s, 0] for deficit.
inline TradeBounds trade_bounds(double surplus)
{
    return surplus >= 0.0 ? TradeBounds{0.0, surplus} : TradeBounds{surplus, 0.0};
}

struct NashCertificate {
    double max_advantage = 0.0;  // largest cost reduction found by a unilateral deviation
    Eigen::Index user = -1;      // user achieving it
    double deviation = 0.0;      // deviating trade
    double tolerance = 1e-8;
    int points_per_user = 0;

    bool passed() const { return max_advantage <= tolerance; }
};

struct NashScanOptions {
    int resolution = 1000;     // uniform grid points per user, >= 100
    double tolerance = 1e-8;
    bool use_trade_bounds = false;  // scan the feasible trade interval instead of a window
};

/// Scans every user's unilateral deviations on a uniform grid followed by a
/// golden-section refinement around the best grid point.
NashCertificate scan_nash_deviations(const Eigen::VectorXd& trades, const Eigen::VectorXd& surplus,
                                     const MarketContext& ctx, const NashScanOptions& options = {});

/// As scan_nash_deviations, but throws CertificateFailure when a deviation wins.
NashCertificate verify_nash(const Eigen::VectorXd& trades, const Eigen::VectorXd& surplus,
                            const MarketContext& ctx, const NashScanOptions& options = {});

}  // namespace cestrade
