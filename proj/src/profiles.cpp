#include "cestrade/profiles.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

#include "cestrade/csv.hpp"

namespace cestrade {

std::vector<std::size_t> ProfileSet::participants() const
{
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < users.size(); ++i) {
        if (users[i].participating) out.push_back(i);
    }
    return out;
}

std::vector<std::size_t> ProfileSet::nonparticipants() const
{
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < users.size(); ++i) {
        if (!users[i].participating) out.push_back(i);
    }
    return out;
}

Eigen::VectorXd ProfileSet::nonparticipant_demand() const
{
    Eigen::VectorXd total = Eigen::VectorXd::Zero(horizon);
    for (const auto& u : users) {
        if (!u.participating) total += u.demand;
    }
    return total;
}

void validate_profiles(const ProfileSet& set, int bus_count)
{
    for (const auto& u : set.users) {
        if (u.demand.size() != set.horizon || u.pv.size() != set.horizon ||
            u.reactive.size() != set.horizon) {
            throw Error(ErrorKind::LengthMismatch, "user " + u.user_id + " does not have " +
                                                       std::to_string(set.horizon) + " intervals");
        }
        if (bus_count > 0 && (u.bus < 1 || u.bus > bus_count)) {
            throw Error(ErrorKind::UnknownBus, "user " + u.user_id + " on bus " + std::to_string(u.bus));
        }
        for (int t = 0; t < set.horizon; ++t) {
            if (!(u.demand(t) >= 0.0)) {
                throw Error(ErrorKind::NegativeDemand,
                            "user " + u.user_id + " t=" + std::to_string(t + 1));
            }
            if (!(u.pv(t) >= 0.0)) {
                throw Error(ErrorKind::NegativePV, "user " + u.user_id + " t=" + std::to_string(t + 1));
            }
            if (!u.participating && u.pv(t) != 0.0) {
                throw Error(ErrorKind::PVOnNonParticipant,
                            "user " + u.user_id + " t=" + std::to_string(t + 1));
            }
            if (!std::isfinite(u.reactive(t))) {
                throw Error(ErrorKind::ParseError, "user " + u.user_id + " reactive not finite");
            }
        }
    }
}

ProfileSet load_profiles(const std::string& profile_path, const std::string& user_map_path,
                         int horizon, int bus_count)
{
    if (horizon <= 0) throw Error(ErrorKind::InvalidParameter, "horizon must be positive");

    ProfileSet set;
    set.horizon = horizon;
    std::map<std::string, std::size_t> index;
    {
        const auto table = csv::read(user_map_path);
        const int c_user = table.require_column("user_id", user_map_path);
        const int c_bus = table.require_column("bus_id", user_map_path);
        const int c_part = table.require_column("participating", user_map_path);
        for (std::size_t i = 0; i < table.rows.size(); ++i) {
            const auto& row = table.rows[i];
            const std::string where = user_map_path + ":" + std::to_string(table.line_numbers[i]);
            UserProfile u;
            u.user_id = row[c_user];
            u.bus = csv::to_int(row[c_bus], where);
            const std::string& flag = row[c_part];
            if (flag == "1" || flag == "true") {
                u.participating = true;
            } else if (flag == "0" || flag == "false") {
                u.participating = false;
            } else {
                throw Error(ErrorKind::ParseError, where + ": participating must be 0/1");
            }
            u.demand = Eigen::VectorXd::Constant(horizon, std::nan(""));
            u.pv = Eigen::VectorXd::Constant(horizon, std::nan(""));
            u.reactive = Eigen::VectorXd::Zero(horizon);
            if (!index.emplace(u.user_id, set.users.size()).second) {
                throw Error(ErrorKind::ParseError, where + ": duplicate user " + u.user_id);
            }
            set.users.push_back(std::move(u));
        }
    }

    const auto table = csv::read(profile_path);
    const int c_t = table.require_column("t", profile_path);
    const int c_user = table.require_column("user_id", profile_path);
    const int c_d = table.require_column("demand_kwh", profile_path);
    const int c_g = table.require_column("pv_kwh", profile_path);
    const int c_q = table.column("q_kvar");

    std::vector<int> rows_seen(set.users.size(), 0);
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        const auto& row = table.rows[i];
        const std::string where = profile_path + ":" + std::to_string(table.line_numbers[i]);
        const auto it = index.find(row[c_user]);
        if (it == index.end()) {
            throw Error(ErrorKind::UnknownUser, where + ": user " + row[c_user] + " not in user map");
        }
        const int t = csv::to_int(row[c_t], where);
        if (t < 1 || t > horizon) {
            throw Error(ErrorKind::LengthMismatch, where + ": t=" + std::to_string(t) +
                                                       " outside 1.." + std::to_string(horizon));
        }
        auto& u = set.users[it->second];
        if (!std::isnan(u.demand(t - 1))) {
            throw Error(ErrorKind::LengthMismatch, where + ": duplicate t for user " + u.user_id);
        }
        u.demand(t - 1) = csv::to_double(row[c_d], where);
        u.pv(t - 1) = csv::to_double(row[c_g], where);
        if (c_q >= 0) u.reactive(t - 1) = csv::to_double(row[c_q], where);
        ++rows_seen[it->second];
    }
    for (std::size_t k = 0; k < set.users.size(); ++k) {
        if (rows_seen[k] != horizon) {
            throw Error(ErrorKind::LengthMismatch, "user " + set.users[k].user_id + " has " +
                                                       std::to_string(rows_seen[k]) + " rows, expected " +
                                                       std::to_string(horizon));
        }
    }
    validate_profiles(set, bus_count);
    return set;
}

void write_profiles_csv(const ProfileSet& set, const std::string& path)
{
    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::ParseError, "cannot write " + path);
    out << std::setprecision(17);
    out << "t,user_id,demand_kwh,pv_kwh,q_kvar\n";
    for (int t = 0; t < set.horizon; ++t) {
        for (const auto& u : set.users) {
            out << t + 1 << ',' << u.user_id << ',' << u.demand(t) << ',' << u.pv(t) << ','
                << u.reactive(t) << '\n';
        }
    }
}

void write_user_map_csv(const ProfileSet& set, const std::string& path)
{
    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::ParseError, "cannot write " + path);
    out << "user_id,bus_id,participating\n";
    for (const auto& u : set.users) {
        out << u.user_id << ',' << u.bus << ',' << (u.participating ? 1 : 0) << '\n';
    }
}

std::vector<Eigen::Index> SurplusSet::surplus_users(Eigen::Index t) const
{
    std::vector<Eigen::Index> out;
    for (Eigen::Index p = 0; p < s.rows(); ++p) {
        if (in_surplus(p, t)) out.push_back(p);
    }
    return out;
}

std::vector<Eigen::Index> SurplusSet::deficit_users(Eigen::Index t) const
{
    std::vector<Eigen::Index> out;
    for (Eigen::Index p = 0; p < s.rows(); ++p) {
        if (!in_surplus(p, t)) out.push_back(p);
    }
    return out;
}

SurplusSet surplus(const ProfileSet& set)
{
    SurplusSet out;
    out.user_index = set.participants();
    out.s.resize(static_cast<Eigen::Index>(out.user_index.size()), set.horizon);
    for (std::size_t p = 0; p < out.user_index.size(); ++p) {
        const auto& u = set.users[out.user_index[p]];
        out.s.row(static_cast<Eigen::Index>(p)) = (u.pv - u.demand).transpose();
    }
    return out;
}

BusInjectionSeries bus_power_kw(const ProfileSet& set, int bus_count, double dt_h)
{
    BusInjectionSeries inj;
    inj.P = Eigen::MatrixXd::Zero(bus_count, set.horizon);
    inj.Q = Eigen::MatrixXd::Zero(bus_count, set.horizon);
    for (const auto& u : set.users) {
        if (u.bus < 1 || u.bus > bus_count) {
            throw Error(ErrorKind::UnknownBus, "user " + u.user_id + " on bus " + std::to_string(u.bus));
        }
        const Eigen::VectorXd net = u.participating ? Eigen::VectorXd(u.demand - u.pv) : u.demand;
        inj.P.row(u.bus - 1) += net.transpose() / dt_h;
        inj.Q.row(u.bus - 1) += u.reactive.transpose();
    }
    return inj;
}

BusInjectionSeries aggregate_by_bus(const ProfileSet& set, const FeederModel& model, double dt_h)
{
    auto inj = bus_power_kw(set, model.bus_count, dt_h);
    inj.P /= model.s_base_kva;
    inj.Q /= model.s_base_kva;
    return inj;
}

BusInjectionSeries aggregate_by_bus(const ProfileSet& set, const FeederModel& model, double dt_h,
                                    int ces_bus, const Eigen::VectorXd& storage_flow)
{
    if (ces_bus < 1 || ces_bus > model.bus_count) {
        throw Error(ErrorKind::UnknownCesBus, "storage bus " + std::to_string(ces_bus));
    }
    if (storage_flow.size() != set.horizon) {
        throw Error(ErrorKind::DimensionMismatch, "storage flow length differs from horizon");
    }
    auto inj = aggregate_by_bus(set, model, dt_h);
    inj.P.row(ces_bus - 1) += storage_flow.transpose() / (dt_h * model.s_base_kva);
    return inj;
}

std::vector<BusAllocation> default_allocation()
{
    return {{1, 6, 0}, {2, 8, 0}, {3, 0, 0}, {4, 8, 0}, {5, 10, 0}, {6, 0, 5}, {7, 18, 0}};
}

ProfileSet synthesize_profiles(const SynthParams& params)
{
    if (params.horizon <= 0 || !(params.dt_h > 0.0)) {
        throw Error(ErrorKind::InvalidParameter, "horizon and dt must be positive");
    }
    const auto allocation = params.allocation.empty() ? default_allocation() : params.allocation;
    for (const auto& a : allocation) {
        if (a.participants < 0 || a.nonparticipants < 0) {
            throw Error(ErrorKind::InvalidParameter, "negative user count on bus " + std::to_string(a.bus));
        }
    }

    std::mt19937_64 rng(params.seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    std::normal_distribution<double> noise(0.0, 1.0);

    auto bump = [](double h, double centre, double width) {
        const double z = (h - centre) / width;
        return std::exp(-0.5 * z * z);
    };
    auto pv_shape = [&](double h) {
        if (h <= params.pv_start_h || h >= params.pv_end_h) return 0.0;
        const double x = (h - params.pv_start_h) / (params.pv_end_h - params.pv_start_h);
        return std::pow(std::sin(std::numbers::pi * x), 1.5);
    };

    ProfileSet set;
    set.horizon = params.horizon;
    int next_id = 1;
    auto make_user = [&](int bus, bool participating) {
        UserProfile u;
        std::ostringstream id;
        id << 'u' << std::setw(2) << std::setfill('0') << next_id++;
        u.user_id = id.str();
        u.bus = bus;
        u.participating = participating;
        u.demand.resize(params.horizon);
        u.pv = Eigen::VectorXd::Zero(params.horizon);
        u.reactive.resize(params.horizon);

        const double scale = (participating ? 1.0 : params.nonparticipant_scale) *
                             (1.0 + params.user_spread * unit(rng));
        const double shift = 0.5 * unit(rng);
        const double pv_scale = 1.0 + params.user_spread * unit(rng);
        for (int t = 0; t < params.horizon; ++t) {
            const double h = (t + 0.5) * params.dt_h;
            double kw = params.base_kw + params.morning_kw * bump(h, params.morning_peak_h + shift, params.morning_width_h) +
                        params.evening_kw * bump(h, params.evening_peak_h + shift, params.evening_width_h);
            kw *= scale * std::max(0.0, 1.0 + params.jitter * noise(rng));
            u.demand(t) = std::max(0.0, kw) * params.dt_h;
            u.reactive(t) = params.reactive_ratio * std::max(0.0, kw);
            if (participating) {
                const double g = params.pv_kw * pv_scale * pv_shape(h) *
                                 std::max(0.0, 1.0 + params.jitter * noise(rng));
                u.pv(t) = std::max(0.0, g) * params.dt_h;
            }
        }
        set.users.push_back(std::move(u));
    };

    for (const auto& a : allocation) {
        for (int k = 0; k < a.participants; ++k) make_user(a.bus, true);
        for (int k = 0; k < a.nonparticipants; ++k) make_user(a.bus, false);
    }
    return set;
}

}  // namespace cestrade
