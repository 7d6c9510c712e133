#include "cestrade/report_io.hpp"

#include <json.hpp>

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace cestrade {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

std::string format_number(double value)
{
    if (std::isnan(value)) return "nan";
    if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, value);
    return std::string(buf, res.ptr);
}

namespace {

json vec(const Eigen::VectorXd& v)
{
    json out = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
    return out;
}

json number_or_null(double v)
{
    return std::isfinite(v) ? json(v) : json(nullptr);
}

json stats_json(const std::vector<BusVoltageStats>& stats)
{
    json out = json::array();
    for (const auto& s : stats) {
        out.push_back({{"bus", s.bus}, {"min", s.min}, {"q1", s.q1}, {"median", s.median}, {"q3", s.q3}, {"max", s.max}});
    }
    return out;
}

json summary_json(const ModeSummary& s)
{
    json j;
    j["mode"] = to_string(s.mode);
    j["peak_demand_kwh"] = s.peak_demand;
    j["participant_cost_total"] = s.participant_total;
    j["participant_cost_average"] = s.participant_average;
    j["nonparticipant_cost_total"] = s.nonparticipant_total;
    j["nonparticipant_cost_average"] = s.nonparticipant_average;
    j["revenue"] = s.revenue ? json(*s.revenue) : json(nullptr);
    j["community_cost"] = s.community_cost;
    j["voltage_min_pu"] = s.voltage_min;
    j["voltage_max_pu"] = s.voltage_max;
    j["voltage_violations"] = s.voltage_violations;
    j["thermal_violations"] = s.thermal_violations;
    j["voltage_stats"] = stats_json(s.voltage_stats);
    return j;
}

json kkt_json(const KktResidual& k)
{
    return {{"stationarity", k.stationarity}, {"primal", k.primal}, {"dual", k.dual},
            {"complementarity", k.complementarity}};
}

void write_text(const fs::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::ParseError, "cannot write " + path.string());
    out << text;
}

struct CsvWriter {
    std::ostringstream out;

    explicit CsvWriter(const std::string& header) { out << header << "\n"; }

    template <typename... Ts>
    void row(const Ts&... fields)
    {
        bool first = true;
        ((out << (first ? "" : ",") << field(fields), first = false), ...);
        out << "\n";
    }

    static std::string field(double v) { return format_number(v); }
    static std::string field(int v) { return std::to_string(v); }
    static std::string field(long v) { return std::to_string(v); }
    static std::string field(const std::string& v) { return v; }
    static std::string field(const char* v) { return v; }
};

}  // namespace

std::string result_json(const ModeResult& r)
{
    json j;
    j["scenario"] = r.scenario;
    j["mode"] = to_string(r.mode);
    j["horizon"] = r.horizon;
    j["dt_hours"] = r.dt_h;
    j["seed"] = r.seed;
    j["participants"] = r.participant_ids.size();
    j["nonparticipants"] = r.nonparticipant_ids.size();
    j["summary"] = summary_json(summarize(r));
    j["accounting_residual"] = r.accounting_residual;
    j["sweep_residual"] = r.sweep_residual;

    json audit;
    audit["failures"] = r.audit_failures;
    audit["max_complementarity"] = r.max_complementarity;
    if (r.kkt) audit["kkt"] = kkt_json(*r.kkt);
    json viol = json::array();
    for (const auto& v : r.voltage_violations) {
        viol.push_back({{"bus", v.bus}, {"t", v.t}, {"value_pu", v.value}, {"limit_pu", v.limit}, {"over", v.over}});
    }
    audit["voltage_violations"] = viol;
    json therm = json::array();
    for (const auto& v : r.thermal_violations) {
        therm.push_back({{"from", v.from}, {"to", v.to}, {"t", v.t}, {"value_pu", v.value}, {"limit_pu", v.limit}});
    }
    audit["thermal_violations"] = therm;
    j["audit"] = audit;

    if (r.equilibrium) {
        const EquilibriumResult& eq = *r.equilibrium;
        json e;
        e["status"] = to_string(eq.status);
        e["voltage_constraints"] = eq.voltage_constraints;
        e["objective"] = eq.objective;
        e["split_penalty"] = eq.penalty;
        e["qp_iterations"] = eq.qp_iterations;
        if (eq.certificate) {
            const StackelbergCertificate& c = *eq.certificate;
            e["certificate"] = {
                {"passed", c.passed()},
                {"leader",
                 {{"probes", c.leader.probes},
                  {"face_probes", c.leader.face_probes},
                  {"radial_probes", c.leader.radial_probes},
                  {"max_advantage", c.leader.max_advantage},
                  {"max_revenue_advantage", c.leader.max_revenue_advantage},
                  {"tolerance", c.leader.tolerance}}},
                {"followers",
                 {{"worst_t", c.follower_t},
                  {"max_advantage", c.followers.max_advantage},
                  {"user", c.followers.user >= 0 ? json(c.followers.user + 1) : json(nullptr)},
                  {"points_per_user", c.followers.points_per_user},
                  {"tolerance", c.followers.tolerance}}}};
        } else {
            e["certificate"] = nullptr;
        }
        j["equilibrium"] = e;
    }

    json series;
    series["grid_energy_kwh"] = vec(r.grid_energy);
    series["grid_price"] = vec(r.grid_price);
    if (r.storage_price.size() > 0) series["storage_price"] = vec(r.storage_price);
    if (r.has_storage) {
        series["provider_grid_kwh"] = vec(r.provider_grid);
        series["storage_flow_kwh"] = vec(r.storage_flow);
        series["charge_level_kwh"] = vec(r.charge_level);
    }
    j["series"] = series;
    j["participant_ids"] = r.participant_ids;
    j["participant_costs"] = vec(r.participant_costs);
    j["nonparticipant_ids"] = r.nonparticipant_ids;
    j["nonparticipant_costs"] = vec(r.nonparticipant_costs);
    return j.dump(2) + "\n";
}

std::vector<std::string> write_mode_outputs(const ModeResult& r, const std::string& dir)
{
    fs::create_directories(dir);
    std::vector<std::string> files;
    auto emit = [&](const std::string& name, const std::string& text) {
        write_text(fs::path(dir) / name, text);
        files.push_back(name);
    };
    emit("result.json", result_json(r));

    CsvWriter grid("t,E_kwh,lambda_g");
    for (int t = 0; t < r.horizon; ++t) grid.row(t + 1, r.grid_energy(t), r.grid_price(t));
    emit("grid.csv", grid.out.str());

    if (r.storage_price.size() > 0) {
        CsvWriter dec("t,lambda_s,e_g,e_s,b,lambda_g");
        for (int t = 0; t < r.horizon; ++t) {
            dec.row(t + 1, r.storage_price(t), r.provider_grid(t), r.storage_flow(t), r.charge_level(t), r.grid_price(t));
        }
        emit("decisions.csv", dec.out.str());
    }
    if (r.has_storage) {
        CsvWriter st("t,e_s_kwh,b_kwh");
        for (int t = 0; t < r.horizon; ++t) st.row(t + 1, r.storage_flow(t), r.charge_level(t));
        emit("storage.csv", st.out.str());
    }

    CsvWriter trades("t,user,y,e");
    for (int t = 0; t < r.horizon; ++t) {
        for (Eigen::Index p = 0; p < r.trades.rows(); ++p) {
            trades.row(t + 1, r.participant_ids[static_cast<std::size_t>(p)], r.trades(p, t), r.grid_trades(p, t));
        }
    }
    emit("trades.csv", trades.out.str());

    CsvWriter volt("t,bus,v_pu");
    for (int t = 0; t < r.horizon; ++t) {
        for (Eigen::Index i = 0; i < r.voltage.rows(); ++i) volt.row(t + 1, static_cast<int>(i + 1), r.voltage(i, t));
    }
    emit("voltages.csv", volt.out.str());

    CsvWriter stats("bus,min,q1,median,q3,max");
    for (const auto& s : r.voltage_stats) stats.row(s.bus, s.min, s.q1, s.median, s.q3, s.max);
    emit("voltage_stats.csv", stats.out.str());
    return files;
}

StoredResult read_result_json(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::ParseError, "cannot open " + path);
    try {
        const json j = json::parse(in);
        StoredResult out;
        out.scenario = j.at("scenario").get<std::string>();
        out.horizon = j.at("horizon").get<int>();
        out.dt_h = j.at("dt_hours").get<double>();
        out.participants = j.at("participants").get<int>();
        out.nonparticipants = j.at("nonparticipants").get<int>();
        const json& s = j.at("summary");
        ModeSummary& m = out.summary;
        m.mode = parse_mode(s.at("mode").get<std::string>());
        m.peak_demand = s.at("peak_demand_kwh").get<double>();
        m.participant_total = s.at("participant_cost_total").get<double>();
        m.participant_average = s.at("participant_cost_average").get<double>();
        m.nonparticipant_total = s.at("nonparticipant_cost_total").get<double>();
        m.nonparticipant_average = s.at("nonparticipant_cost_average").get<double>();
        if (!s.at("revenue").is_null()) m.revenue = s.at("revenue").get<double>();
        m.community_cost = s.at("community_cost").get<double>();
        m.voltage_min = s.at("voltage_min_pu").get<double>();
        m.voltage_max = s.at("voltage_max_pu").get<double>();
        m.voltage_violations = s.at("voltage_violations").get<int>();
        m.thermal_violations = s.at("thermal_violations").get<int>();
        for (const json& b : s.at("voltage_stats")) {
            m.voltage_stats.push_back({b.at("bus").get<int>(), b.at("min").get<double>(), b.at("q1").get<double>(),
                                       b.at("median").get<double>(), b.at("q3").get<double>(),
                                       b.at("max").get<double>()});
        }
        return out;
    } catch (const json::exception& e) {
        throw Error(ErrorKind::ParseError, path + ": " + e.what());
    }
}

std::string comparison_json(const ComparisonReport& report)
{
    json j;
    j["scenario"] = report.scenario;
    j["horizon"] = report.horizon;
    j["reference"] = to_string(report.reference);
    json modes = json::array();
    for (const auto& m : report.modes) modes.push_back(summary_json(m));
    j["modes"] = modes;
    json deltas = json::array();
    for (const auto& d : report.deltas) {
        deltas.push_back({{"mode", to_string(d.mode)},
                          {"peak_demand_pct", number_or_null(d.peak_demand_pct)},
                          {"participant_cost_average_pct", number_or_null(d.participant_average_pct)},
                          {"nonparticipant_cost_average_pct", number_or_null(d.nonparticipant_average_pct)},
                          {"community_cost_pct", number_or_null(d.community_cost_pct)}});
    }
    j["deltas"] = deltas;
    return j.dump(2) + "\n";
}

std::vector<std::string> write_comparison(const ComparisonReport& report, const std::string& dir)
{
    fs::create_directories(dir);
    write_text(fs::path(dir) / "comparison.json", comparison_json(report));

    CsvWriter table("mode,peak_demand_kwh,participant_cost_average,nonparticipant_cost_average,revenue,community_cost,"
                    "voltage_min_pu,voltage_max_pu,voltage_violations,peak_demand_pct,participant_cost_pct,"
                    "nonparticipant_cost_pct,community_cost_pct");
    for (std::size_t i = 0; i < report.modes.size(); ++i) {
        const ModeSummary& m = report.modes[i];
        const ModeDelta& d = report.deltas[i];
        table.row(to_string(m.mode), m.peak_demand, m.participant_average, m.nonparticipant_average,
                  m.revenue ? format_number(*m.revenue) : std::string(), m.community_cost, m.voltage_min,
                  m.voltage_max, m.voltage_violations, d.peak_demand_pct, d.participant_average_pct,
                  d.nonparticipant_average_pct, d.community_cost_pct);
    }
    write_text(fs::path(dir) / "comparison.csv", table.out.str());

    CsvWriter stats("mode,bus,min,q1,median,q3,max");
    for (const auto& m : report.modes) {
        for (const auto& s : m.voltage_stats) stats.row(to_string(m.mode), s.bus, s.min, s.q1, s.median, s.q3, s.max);
    }
    write_text(fs::path(dir) / "voltage_stats.csv", stats.out.str());
    return {"comparison.json", "comparison.csv", "voltage_stats.csv"};
}

std::vector<std::string> write_sweep(const SeasonalSweep& sweep, const std::string& dir)
{
    fs::create_directories(dir);
    std::vector<std::string> files;
    CsvWriter dist("season,mode,bus,min,q1,median,q3,max");
    for (const SeasonReport& s : sweep.seasons) {
        for (const ModeResult& r : s.results) {
            const std::string sub = s.season + "/" + to_string(r.mode);
            for (const auto& f : write_mode_outputs(r, (fs::path(dir) / sub).string())) files.push_back(sub + "/" + f);
            for (const auto& b : r.voltage_stats) dist.row(s.season, to_string(r.mode), b.bus, b.min, b.q1, b.median, b.q3, b.max);
        }
        if (s.comparison.modes.size() >= 2) {
            for (const auto& f : write_comparison(s.comparison, (fs::path(dir) / s.season).string())) {
                files.push_back(s.season + "/" + f);
            }
        }
    }
    write_text(fs::path(dir) / "voltage_distribution.csv", dist.out.str());
    files.push_back("voltage_distribution.csv");

    const SeasonBars& b = sweep.bars;
    CsvWriter bars("season,revenue,participant_cost,participant_cost_baseline,nonparticipant_cost,"
                   "nonparticipant_cost_baseline");
    for (std::size_t i = 0; i < b.seasons.size(); ++i) {
        const Eigen::Index k = static_cast<Eigen::Index>(i);
        bars.row(b.seasons[i], b.revenue(k), b.participant_cost(k), b.participant_cost_baseline(k),
                 b.nonparticipant_cost(k), b.nonparticipant_cost_baseline(k));
    }
    write_text(fs::path(dir) / "season_bars.csv", bars.out.str());
    files.push_back("season_bars.csv");
    return files;
}

}  // namespace cestrade
