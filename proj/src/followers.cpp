#include "cestrade/followers.hpp"

#include <string>

namespace cestrade {

namespace {

template <typename F>
std::pair<double, double> golden_section(const F& f, double a, double b)
{
    const double ratio = 0.5 * (std::sqrt(5.0) - 1.0);
    double x1 = b - ratio * (b - a);
    double x2 = a + ratio * (b - a);
    double f1 = f(x1);
    double f2 = f(x2);
    for (int k = 0; k < 80 && b - a > 1e-14 * (1.0 + std::abs(a) + std::abs(b)); ++k) {
        if (f1 <= f2) {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - ratio * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + ratio * (b - a);
            f2 = f(x2);
        }
    }
    return f1 <= f2 ? std::pair{x1, f1} : std::pair{x2, f2};
}

}  // namespace

NashCertificate scan_nash_deviations(const Eigen::VectorXd& trades, const Eigen::VectorXd& surplus,
                                     const MarketContext& ctx, const NashScanOptions& options)
{
    if (trades.size() != surplus.size()) {
        throw Error(ErrorKind::DimensionMismatch, "trades and surplus differ in length");
    }
    if (options.resolution < 100) throw Error(ErrorKind::InvalidParameter, "scan resolution below 100");
    NashCertificate cert;
    cert.tolerance = options.tolerance;
    cert.points_per_user = options.resolution;

    for (Eigen::Index p = 0; p < trades.size(); ++p) {
        const double others = others_grid_energy(trades, surplus, p, ctx);
        const auto cost = cost_coefficients(surplus(p), others, ctx);
        const double base = cost(trades(p));

        double lo = 0.0;
        double hi = 0.0;
        if (options.use_trade_bounds) {
            const TradeBounds b = trade_bounds(surplus(p));
            lo = b.lower;
            hi = b.upper;
        } else {
            const double half = 2.0 * std::max({1.0, std::abs(trades(p)), std::abs(surplus(p))});
            lo = trades(p) - half;
            hi = trades(p) + half;
        }
        const double step = (hi - lo) / (options.resolution - 1);
        double best_y = trades(p);
        double best_c = base;
        for (int k = 0; k < options.resolution; ++k) {
            const double y = lo + step * k;
            const double c = cost(y);
            if (c < best_c) {
                best_c = c;
                best_y = y;
            }
        }
        if (step > 0.0) {
            const double a = std::max(lo, best_y - step);
            const double b = std::min(hi, best_y + step);
            const auto [y, c] = golden_section(cost, a, b);
            if (c < best_c) {
                best_c = c;
                best_y = y;
            }
        }
        const double advantage = base - best_c;
        if (p == 0 || advantage > cert.max_advantage) {
            cert.max_advantage = advantage;
            cert.user = p;
            cert.deviation = best_y;
        }
    }
    return cert;
}

NashCertificate verify_nash(const Eigen::VectorXd& trades, const Eigen::VectorXd& surplus,
                            const MarketContext& ctx, const NashScanOptions& options)
{
    NashCertificate cert = scan_nash_deviations(trades, surplus, ctx, options);
    if (!cert.passed()) {
        throw Error(ErrorKind::CertificateFailure,
                    "user " + std::to_string(cert.user) + " gains " + std::to_string(cert.max_advantage) +
                        " by trading " + std::to_string(cert.deviation));
    }
    return cert;
}

}  // namespace cestrade
