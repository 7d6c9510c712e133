#include "cestrade/feeder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>
#include <set>
#include <utility>

#include "cestrade/csv.hpp"

namespace cestrade {

namespace {

struct DisjointSets {
    std::vector<int> root;
    explicit DisjointSets(int n) : root(static_cast<std::size_t>(n)) { std::iota(root.begin(), root.end(), 0); }
    int find(int a)
    {
        while (root[a] != a) a = root[a] = root[root[a]];
        return a;
    }
    bool unite(int a, int b)
    {
        a = find(a);
        b = find(b);
        if (a == b) return false;
        root[std::max(a, b)] = std::min(a, b);
        return true;
    }
};

}  // namespace

double impedance_base_ohm(double v_base_kv, double s_base_kva)
{
    return 1000.0 * v_base_kv * v_base_kv / s_base_kva;
}

std::vector<int> FeederModel::path_to(int bus) const
{
    std::vector<int> path;
    for (int b = bus; b != 0; b = parent[b]) path.push_back(b);
    std::reverse(path.begin(), path.end());
    return path;
}

FeederModel build_feeder(const FeederSpec& spec)
{
    if (!(spec.v_base_kv > 0.0) || !(spec.s_base_kva > 0.0)) {
        throw Error(ErrorKind::NonPositiveBase, "v_base_kv and s_base_kva must be positive");
    }
    if (spec.edges.empty()) throw Error(ErrorKind::InvalidParameter, "feeder has no edges");
    if (!(spec.v_min_pu < spec.v0_pu && spec.v0_pu < spec.v_max_pu)) {
        throw Error(ErrorKind::InvalidParameter, "need v_min < v0 < v_max");
    }

    int max_id = 0;
    std::set<std::pair<int, int>> seen;
    for (const auto& e : spec.edges) {
        if (e.from < 0 || e.to < 0) throw Error(ErrorKind::InvalidParameter, "negative bus id");
        if (e.from == e.to) {
            throw Error(ErrorKind::CycleDetected, "self loop at bus " + std::to_string(e.from));
        }
        if (!(e.r_ohm >= 0.0) || !(e.x_ohm >= 0.0)) {
            throw Error(ErrorKind::InvalidParameter, "negative impedance on edge (" +
                                                         std::to_string(e.from) + "," +
                                                         std::to_string(e.to) + ")");
        }
        if (!(e.s_kva > 0.0)) {
            throw Error(ErrorKind::InvalidParameter, "non-positive rating on edge (" +
                                                         std::to_string(e.from) + "," +
                                                         std::to_string(e.to) + ")");
        }
        if (!seen.emplace(e.from, e.to).second) {
            throw Error(ErrorKind::DuplicateEdge, "edge (" + std::to_string(e.from) + "," +
                                                      std::to_string(e.to) + ") listed twice");
        }
        max_id = std::max({max_id, e.from, e.to});
    }

    DisjointSets sets(max_id + 1);
    for (const auto& e : spec.edges) {
        if (!sets.unite(e.from, e.to)) {
            throw Error(ErrorKind::CycleDetected, "edge (" + std::to_string(e.from) + "," +
                                                      std::to_string(e.to) + ") closes a loop");
        }
    }
    for (int b = 1; b <= max_id; ++b) {
        if (sets.find(b) != sets.find(0)) {
            throw Error(ErrorKind::DisconnectedBus, "bus " + std::to_string(b) + " not reachable from bus 0");
        }
    }

    // Orient every line away from the root.
    std::vector<std::vector<std::size_t>> incident(static_cast<std::size_t>(max_id + 1));
    for (std::size_t k = 0; k < spec.edges.size(); ++k) {
        incident[spec.edges[k].from].push_back(k);
        incident[spec.edges[k].to].push_back(k);
    }

    const double z_base = impedance_base_ohm(spec.v_base_kv, spec.s_base_kva);
    FeederModel model;
    model.bus_count = max_id;
    model.lines.resize(static_cast<std::size_t>(max_id));
    model.parent.assign(static_cast<std::size_t>(max_id + 1), -1);
    model.v0_pu = spec.v0_pu;
    model.v_base_kv = spec.v_base_kv;
    model.s_base_kva = spec.s_base_kva;
    model.v_min_pu = spec.v_min_pu;
    model.v_max_pu = spec.v_max_pu;

    std::vector<bool> visited(static_cast<std::size_t>(max_id + 1), false);
    std::queue<int> frontier;
    frontier.push(0);
    visited[0] = true;
    while (!frontier.empty()) {
        const int bus = frontier.front();
        frontier.pop();
        for (std::size_t k : incident[bus]) {
            const auto& e = spec.edges[k];
            const int other = e.from == bus ? e.to : e.from;
            if (visited[other]) continue;
            visited[other] = true;
            model.parent[other] = bus;
            model.bfs_order.push_back(other);
            model.lines[other - 1] = Line{bus, other, e.r_ohm, e.x_ohm, e.s_kva,
                                          e.r_ohm / z_base, e.x_ohm / z_base};
            frontier.push(other);
        }
    }
    return model;
}

FeederSpec load_feeder_csv(const std::string& path)
{
    const auto table = csv::read(path);
    const int c_from = table.require_column("from", path);
    const int c_to = table.require_column("to", path);
    const int c_r = table.require_column("r_ohm", path);
    const int c_x = table.require_column("x_ohm", path);
    const int c_s = table.require_column("s_kva", path);

    FeederSpec spec;
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        const auto& row = table.rows[i];
        const std::string where = path + ":" + std::to_string(table.line_numbers[i]);
        spec.edges.push_back(EdgeSpec{csv::to_int(row[c_from], where), csv::to_int(row[c_to], where),
                                      csv::to_double(row[c_r], where), csv::to_double(row[c_x], where),
                                      csv::to_double(row[c_s], where)});
    }
    return spec;
}

LineFlows lossless_flows(const FeederModel& model, const BusInjectionSeries& inj)
{
    if (inj.P.rows() != model.bus_count || inj.Q.rows() != model.bus_count) {
        throw Error(ErrorKind::DimensionMismatch, "injection rows must match bus count");
    }
    LineFlows flows{inj.P, inj.Q};
    for (auto it = model.bfs_order.rbegin(); it != model.bfs_order.rend(); ++it) {
        const int parent = model.parent[*it];
        if (parent == 0) continue;
        flows.P.row(parent - 1) += flows.P.row(*it - 1);
        flows.Q.row(parent - 1) += flows.Q.row(*it - 1);
    }
    return flows;
}

namespace {

// Residual of the three DistFlow equations for one time column.
double column_residual(const FeederModel& model, const Eigen::VectorXd& p, const Eigen::VectorXd& q,
                       const Eigen::VectorXd& vsq, const Eigen::VectorXd& pf,
                       const Eigen::VectorXd& qf, const Eigen::VectorXd& loss)
{
    const int n = model.bus_count;
    Eigen::VectorXd child_p = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd child_q = Eigen::VectorXd::Zero(n);
    for (int bus : model.bfs_order) {
        const int parent = model.parent[bus];
        if (parent == 0) continue;
        child_p(parent - 1) += pf(bus - 1);
        child_q(parent - 1) += qf(bus - 1);
    }
    const double v0sq = model.v0_pu * model.v0_pu;
    double worst = 0.0;
    for (int bus : model.bfs_order) {
        const int k = bus - 1;
        const Line& line = model.line_to(bus);
        const double vi = line.parent == 0 ? v0sq : vsq(line.parent - 1);
        const double ell = (pf(k) * pf(k) + qf(k) * qf(k)) / vi;
        const double z2 = line.r_pu * line.r_pu + line.x_pu * line.x_pu;
        worst = std::max(worst, std::abs(loss(k) - ell));
        worst = std::max(worst, std::abs(pf(k) - (p(k) + child_p(k) + line.r_pu * ell)));
        worst = std::max(worst, std::abs(qf(k) - (q(k) + child_q(k) + line.x_pu * ell)));
        worst = std::max(worst, std::abs(vsq(k) - (vi - 2.0 * (line.r_pu * pf(k) + line.x_pu * qf(k)) + z2 * ell)));
    }
    return worst;
}

}  // namespace

double distflow_residual(const FeederModel& model, const BusInjectionSeries& inj,
                         const Eigen::MatrixXd& vsq, const LineFlows& flows,
                         const Eigen::MatrixXd& loss)
{
    double worst = 0.0;
    for (Eigen::Index t = 0; t < inj.P.cols(); ++t) {
        worst = std::max(worst, column_residual(model, inj.P.col(t), inj.Q.col(t), vsq.col(t),
                                                flows.P.col(t), flows.Q.col(t), loss.col(t)));
    }
    return worst;
}

SweepResult sweep_power_flow(const FeederModel& model, const BusInjectionSeries& inj, double tol,
                             int max_iter)
{
    if (!(tol > 0.0)) throw Error(ErrorKind::InvalidParameter, "sweep tolerance must be positive");
    const int n = model.bus_count;
    const Eigen::Index horizon = inj.P.cols();
    if (inj.P.rows() != n || inj.Q.rows() != n || inj.Q.cols() != horizon) {
        throw Error(ErrorKind::DimensionMismatch, "injection rows must match bus count");
    }

    const double v0sq = model.v0_pu * model.v0_pu;
    SweepResult out;
    out.vsq = Eigen::MatrixXd::Constant(n, horizon, v0sq);
    out.flows.P = Eigen::MatrixXd::Zero(n, horizon);
    out.flows.Q = Eigen::MatrixXd::Zero(n, horizon);
    out.loss = Eigen::MatrixXd::Zero(n, horizon);

    Eigen::VectorXd pf(n), qf(n), vsq(n), loss(n);
    for (Eigen::Index t = 0; t < horizon; ++t) {
        const Eigen::VectorXd p = inj.P.col(t);
        const Eigen::VectorXd q = inj.Q.col(t);
        vsq.setConstant(v0sq);
        loss.setZero();
        double residual = 0.0;
        int iter = 0;
        for (; iter < max_iter; ++iter) {
            // backward: accumulate subtree demand plus line losses
            pf = p;
            qf = q;
            for (auto it = model.bfs_order.rbegin(); it != model.bfs_order.rend(); ++it) {
                const int k = *it - 1;
                const Line& line = model.line_to(*it);
                pf(k) += line.r_pu * loss(k);
                qf(k) += line.x_pu * loss(k);
                if (line.parent != 0) {
                    pf(line.parent - 1) += pf(k);
                    qf(line.parent - 1) += qf(k);
                }
            }
            // forward: voltages from the root outwards, then refresh the losses
            for (int bus : model.bfs_order) {
                const int k = bus - 1;
                const Line& line = model.line_to(bus);
                const double vi = line.parent == 0 ? v0sq : vsq(line.parent - 1);
                const double z2 = line.r_pu * line.r_pu + line.x_pu * line.x_pu;
                vsq(k) = vi - 2.0 * (line.r_pu * pf(k) + line.x_pu * qf(k)) + z2 * loss(k);
                if (!(vsq(k) > 0.0)) {
                    throw Error(ErrorKind::NoConvergence,
                                "voltage collapse at bus " + std::to_string(bus) + ", t=" +
                                    std::to_string(t + 1));
                }
            }
            for (int bus : model.bfs_order) {
                const int k = bus - 1;
                const Line& line = model.line_to(bus);
                const double vi = line.parent == 0 ? v0sq : vsq(line.parent - 1);
                loss(k) = (pf(k) * pf(k) + qf(k) * qf(k)) / vi;
            }
            residual = column_residual(model, p, q, vsq, pf, qf, loss);
            if (residual < tol) break;
        }
        if (!(residual < tol)) {
            throw Error(ErrorKind::NoConvergence, "sweep residual " + std::to_string(residual) +
                                                      " after " + std::to_string(max_iter) +
                                                      " iterations at t=" + std::to_string(t + 1));
        }
        out.vsq.col(t) = vsq;
        out.flows.P.col(t) = pf;
        out.flows.Q.col(t) = qf;
        out.loss.col(t) = loss;
        out.residual = std::max(out.residual, residual);
        out.iterations = std::max(out.iterations, iter + 1);
    }
    return out;
}

std::vector<VoltageViolation> check_voltage_limits(const Eigen::MatrixXd& vsq, const FeederModel& model)
{
    const double lo = model.v_min_pu * model.v_min_pu;
    const double hi = model.v_max_pu * model.v_max_pu;
    std::vector<VoltageViolation> report;
    for (Eigen::Index t = 0; t < vsq.cols(); ++t) {
        for (Eigen::Index k = 0; k < vsq.rows(); ++k) {
            const double v2 = vsq(k, t);
            if (v2 < lo) {
                report.push_back({static_cast<int>(k + 1), static_cast<int>(t + 1),
                                  std::sqrt(std::max(v2, 0.0)), model.v_min_pu, false});
            } else if (v2 > hi) {
                report.push_back({static_cast<int>(k + 1), static_cast<int>(t + 1), std::sqrt(v2),
                                  model.v_max_pu, true});
            }
        }
    }
    return report;
}

std::vector<ThermalViolation> check_thermal(const FeederModel& model, const LineFlows& flows)
{
    std::vector<ThermalViolation> report;
    for (Eigen::Index t = 0; t < flows.P.cols(); ++t) {
        for (int bus : model.bfs_order) {
            const int k = bus - 1;
            const Line& line = model.line_to(bus);
            const double s_max = line.s_kva / model.s_base_kva;
            const double s2 = flows.P(k, t) * flows.P(k, t) + flows.Q(k, t) * flows.Q(k, t);
            if (s2 > s_max * s_max) {
                report.push_back({line.parent, bus, static_cast<int>(t + 1), std::sqrt(s2), s_max});
            }
        }
    }
    return report;
}

}  // namespace cestrade
