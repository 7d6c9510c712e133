#include "cestrade/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>

namespace cestrade {

namespace pt = boost::property_tree;

namespace {

const std::map<std::string, std::set<std::string>>& known_keys()
{
    static const std::map<std::string, std::set<std::string>> keys{
        {"scenario", {"name", "horizon", "dt_hours", "seed", "ces_bus", "transformer_kva", "voltage_margin"}},
        {"prices", {"tou_peak", "tou_offpeak", "peak_first", "peak_last", "phi_ratio", "phi_offpeak", "price_floor"}},
        {"storage", {"b_max", "b_min", "charge_rate_kw", "discharge_rate_kw", "eta_charge", "eta_discharge", "b0", "theta"}},
        {"feeder", {"file", "v0_pu", "v_base_kv", "s_base_kva", "v_min_pu", "v_max_pu"}},
        {"profiles",
         {"source", "profile_file", "user_map_file", "allocation", "base_kw", "morning_kw", "morning_peak_h",
          "morning_width_h", "evening_kw", "evening_peak_h", "evening_width_h", "nonparticipant_scale", "pv_kw",
          "pv_start_h", "pv_end_h", "user_spread", "jitter", "reactive_ratio"}},
        {"solver", {"qp_tol", "probes", "verify", "split_penalty_scale"}},
    };
    return keys;
}

template <typename T>
void read(const pt::ptree& tree, const std::string& key, T& value, const std::string& path)
{
    const auto raw = tree.get_optional<std::string>(key);
    if (!raw) return;
    try {
        value = tree.get<T>(key);
    } catch (const pt::ptree_bad_data&) {
        throw Error(ErrorKind::ParseError, path + ": bad value for " + key + ": '" + *raw + "'");
    }
}

void read_flag(const pt::ptree& tree, const std::string& key, bool& value, const std::string& path)
{
    const auto raw = tree.get_optional<std::string>(key);
    if (!raw) return;
    if (*raw == "true" || *raw == "1" || *raw == "yes") value = true;
    else if (*raw == "false" || *raw == "0" || *raw == "no") value = false;
    else throw Error(ErrorKind::ParseError, path + ": bad flag for " + key + ": '" + *raw + "'");
}

std::vector<BusAllocation> parse_allocation(const std::string& text, const std::string& path)
{
    // bus:participants:nonparticipants, comma separated
    std::vector<BusAllocation> out;
    std::stringstream items(text);
    std::string item;
    while (std::getline(items, item, ',')) {
        BusAllocation a;
        char c1 = 0, c2 = 0;
        std::stringstream fields(item);
        if (!(fields >> a.bus >> c1 >> a.participants >> c2 >> a.nonparticipants) || c1 != ':' || c2 != ':') {
            throw Error(ErrorKind::ParseError, path + ": bad allocation entry '" + item + "'");
        }
        out.push_back(a);
    }
    return out;
}

std::string format_allocation(const std::vector<BusAllocation>& alloc)
{
    std::string out;
    for (const auto& a : alloc) {
        if (!out.empty()) out += ",";
        out += std::to_string(a.bus) + ":" + std::to_string(a.participants) + ":" + std::to_string(a.nonparticipants);
    }
    return out;
}

std::string num(double v)
{
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

}  // namespace

ScenarioConfig load_config(const std::string& path)
{
    pt::ptree tree;
    try {
        pt::read_ini(path, tree);
    } catch (const pt::ini_parser_error& e) {
        throw Error(ErrorKind::ParseError, e.what());
    }
    for (const auto& [section, body] : tree) {
        const auto it = known_keys().find(section);
        if (it == known_keys().end()) throw Error(ErrorKind::ParseError, path + ": unknown section [" + section + "]");
        if (body.empty() && !body.data().empty()) {
            throw Error(ErrorKind::ParseError, path + ": key '" + section + "' outside a section");
        }
        for (const auto& [key, value] : body) {
            if (!it->second.count(key)) {
                throw Error(ErrorKind::ParseError, path + ": unknown key '" + key + "' in [" + section + "]");
            }
        }
    }

    ScenarioConfig c;
    c.path = path;
    const pt::ptree empty;
    auto section = [&](const std::string& name) -> const pt::ptree& {
        const auto child = tree.get_child_optional(name);
        return child ? *child : empty;
    };

    const auto& sc = section("scenario");
    read(sc, "name", c.name, path);
    read(sc, "horizon", c.horizon, path);
    read(sc, "dt_hours", c.dt_h, path);
    read(sc, "seed", c.seed, path);
    read(sc, "ces_bus", c.ces_bus, path);
    read(sc, "transformer_kva", c.transformer_kva, path);
    read(sc, "voltage_margin", c.voltage_margin, path);

    const auto& pr = section("prices");
    read(pr, "tou_peak", c.prices.tou_peak, path);
    read(pr, "tou_offpeak", c.prices.tou_offpeak, path);
    read(pr, "peak_first", c.prices.peak_first, path);
    read(pr, "peak_last", c.prices.peak_last, path);
    read(pr, "phi_ratio", c.prices.phi_ratio, path);
    read(pr, "phi_offpeak", c.prices.phi_offpeak, path);
    read(pr, "price_floor", c.prices.price_floor, path);

    const auto& st = section("storage");
    read(st, "b_max", c.storage.b_max, path);
    c.storage.b_min = 0.05 * c.storage.b_max;
    read(st, "b_min", c.storage.b_min, path);
    read(st, "charge_rate_kw", c.storage.charge_rate_max, path);
    read(st, "discharge_rate_kw", c.storage.discharge_rate_max, path);
    read(st, "eta_charge", c.storage.eta_charge, path);
    read(st, "eta_discharge", c.storage.eta_discharge, path);
    c.storage.b0 = StorageParams::default_initial(c.storage.b_min, c.storage.b_max);
    read(st, "b0", c.storage.b0, path);
    read(st, "theta", c.storage.theta, path);
    c.storage.dt_h = c.dt_h;

    const auto& fd = section("feeder");
    read(fd, "file", c.feeder_file, path);
    read(fd, "v0_pu", c.feeder.v0_pu, path);
    read(fd, "v_base_kv", c.feeder.v_base_kv, path);
    read(fd, "s_base_kva", c.feeder.s_base_kva, path);
    read(fd, "v_min_pu", c.feeder.v_min_pu, path);
    read(fd, "v_max_pu", c.feeder.v_max_pu, path);

    const auto& pf = section("profiles");
    std::string source = "synthetic";
    read(pf, "source", source, path);
    if (source != "synthetic" && source != "file") {
        throw Error(ErrorKind::ParseError, path + ": profiles source must be 'synthetic' or 'file'");
    }
    c.profiles.synthetic = source == "synthetic";
    read(pf, "profile_file", c.profiles.profile_file, path);
    read(pf, "user_map_file", c.profiles.user_map_file, path);
    SynthParams& sp = c.profiles.synth;
    if (const auto alloc = pf.get_optional<std::string>("allocation")) sp.allocation = parse_allocation(*alloc, path);
    read(pf, "base_kw", sp.base_kw, path);
    read(pf, "morning_kw", sp.morning_kw, path);
    read(pf, "morning_peak_h", sp.morning_peak_h, path);
    read(pf, "morning_width_h", sp.morning_width_h, path);
    read(pf, "evening_kw", sp.evening_kw, path);
    read(pf, "evening_peak_h", sp.evening_peak_h, path);
    read(pf, "evening_width_h", sp.evening_width_h, path);
    read(pf, "nonparticipant_scale", sp.nonparticipant_scale, path);
    read(pf, "pv_kw", sp.pv_kw, path);
    read(pf, "pv_start_h", sp.pv_start_h, path);
    read(pf, "pv_end_h", sp.pv_end_h, path);
    read(pf, "user_spread", sp.user_spread, path);
    read(pf, "jitter", sp.jitter, path);
    read(pf, "reactive_ratio", sp.reactive_ratio, path);
    sp.seed = c.seed;
    sp.horizon = c.horizon;
    sp.dt_h = c.dt_h;

    const auto& so = section("solver");
    read(so, "qp_tol", c.solver.qp_tol, path);
    read(so, "probes", c.solver.probes, path);
    read_flag(so, "verify", c.solver.verify, path);
    read(so, "split_penalty_scale", c.solver.split_penalty_scale, path);
    return c;
}

std::string to_ini(const ScenarioConfig& c)
{
    std::ostringstream out;
    out << "[scenario]\n"
        << "name = " << c.name << "\n"
        << "horizon = " << c.horizon << "\n"
        << "dt_hours = " << num(c.dt_h) << "\n"
        << "seed = " << c.seed << "\n"
        << "ces_bus = " << c.ces_bus << "\n"
        << "transformer_kva = " << num(c.transformer_kva) << "\n"
        << "voltage_margin = " << num(c.voltage_margin) << "\n\n";
    out << "[prices]\n"
        << "tou_peak = " << num(c.prices.tou_peak) << "\n"
        << "tou_offpeak = " << num(c.prices.tou_offpeak) << "\n"
        << "peak_first = " << c.prices.peak_first << "\n"
        << "peak_last = " << c.prices.peak_last << "\n"
        << "phi_ratio = " << num(c.prices.phi_ratio) << "\n"
        << "phi_offpeak = " << num(c.prices.phi_offpeak) << "\n"
        << "price_floor = " << num(c.prices.price_floor) << "\n\n";
    out << "[storage]\n"
        << "b_max = " << num(c.storage.b_max) << "\n"
        << "b_min = " << num(c.storage.b_min) << "\n"
        << "charge_rate_kw = " << num(c.storage.charge_rate_max) << "\n"
        << "discharge_rate_kw = " << num(c.storage.discharge_rate_max) << "\n"
        << "eta_charge = " << num(c.storage.eta_charge) << "\n"
        << "eta_discharge = " << num(c.storage.eta_discharge) << "\n"
        << "b0 = " << num(c.storage.b0) << "\n"
        << "theta = " << num(c.storage.theta) << "\n\n";
    out << "[feeder]\n";
    if (!c.feeder_file.empty()) out << "file = " << c.feeder_file << "\n";
    out << "v0_pu = " << num(c.feeder.v0_pu) << "\n"
        << "v_base_kv = " << num(c.feeder.v_base_kv) << "\n"
        << "s_base_kva = " << num(c.feeder.s_base_kva) << "\n"
        << "v_min_pu = " << num(c.feeder.v_min_pu) << "\n"
        << "v_max_pu = " << num(c.feeder.v_max_pu) << "\n\n";
    const SynthParams& sp = c.profiles.synth;
    out << "[profiles]\n"
        << "source = " << (c.profiles.synthetic ? "synthetic" : "file") << "\n";
    if (!c.profiles.profile_file.empty()) out << "profile_file = " << c.profiles.profile_file << "\n";
    if (!c.profiles.user_map_file.empty()) out << "user_map_file = " << c.profiles.user_map_file << "\n";
    if (!sp.allocation.empty()) out << "allocation = " << format_allocation(sp.allocation) << "\n";
    out << "base_kw = " << num(sp.base_kw) << "\n"
        << "morning_kw = " << num(sp.morning_kw) << "\n"
        << "morning_peak_h = " << num(sp.morning_peak_h) << "\n"
        << "morning_width_h = " << num(sp.morning_width_h) << "\n"
        << "evening_kw = " << num(sp.evening_kw) << "\n"
        << "evening_peak_h = " << num(sp.evening_peak_h) << "\n"
        << "evening_width_h = " << num(sp.evening_width_h) << "\n"
        << "nonparticipant_scale = " << num(sp.nonparticipant_scale) << "\n"
        << "pv_kw = " << num(sp.pv_kw) << "\n"
        << "pv_start_h = " << num(sp.pv_start_h) << "\n"
        << "pv_end_h = " << num(sp.pv_end_h) << "\n"
        << "user_spread = " << num(sp.user_spread) << "\n"
        << "jitter = " << num(sp.jitter) << "\n"
        << "reactive_ratio = " << num(sp.reactive_ratio) << "\n\n";
    out << "[solver]\n"
        << "qp_tol = " << num(c.solver.qp_tol) << "\n"
        << "probes = " << c.solver.probes << "\n"
        << "verify = " << (c.solver.verify ? "true" : "false") << "\n"
        << "split_penalty_scale = " << num(c.solver.split_penalty_scale) << "\n";
    return out.str();
}

std::vector<std::string> config_issues(const ScenarioConfig& c)
{
    std::vector<std::string> issues;
    auto need = [&](bool ok, const std::string& msg) {
        if (!ok) issues.push_back(msg);
    };
    need(c.horizon > 0, "horizon must be positive");
    need(c.dt_h > 0.0, "dt_hours must be positive");
    need(c.horizon * c.dt_h <= 24.0 + 1e-9, "horizon * dt_hours exceeds 24 h");
    need(c.prices.peak_first >= 1 && c.prices.peak_last <= c.horizon && c.prices.peak_first <= c.prices.peak_last,
         "peak window must lie within [1, horizon]");
    need(c.prices.phi_ratio > 0.0, "phi_ratio must be positive");
    need(c.prices.phi_offpeak >= 0.0, "phi_offpeak must be >= 0 (0 calibrates)");
    need(c.prices.tou_peak >= c.prices.tou_offpeak, "tou_peak below tou_offpeak");
    need(c.transformer_kva > 0.0, "transformer_kva must be positive");
    need(c.voltage_margin >= 0.0, "voltage_margin must be >= 0");
    need(c.solver.probes >= 0, "probes must be >= 0");
    need(c.solver.qp_tol > 0.0, "qp_tol must be positive");
    need(c.solver.split_penalty_scale > 0.0, "split_penalty_scale must be positive");
    need(!c.feeder_file.empty(), "feeder file missing");
    need(c.profiles.synthetic || (!c.profiles.profile_file.empty() && !c.profiles.user_map_file.empty()),
         "profile_file and user_map_file are required when source = file");
    if (std::abs(c.storage.dt_h - c.dt_h) > 1e-12) issues.push_back("storage dt differs from scenario dt");
    try {
        validate(c.storage);
    } catch (const Error& e) {
        issues.push_back(std::string(to_string(e.kind())) + ": " + e.detail());
    }
    return issues;
}

std::string resolve_path(const ScenarioConfig& c, const std::string& file)
{
    namespace fs = std::filesystem;
    const fs::path p(file);
    if (p.is_absolute() || c.path.empty()) return p.string();
    return (fs::path(c.path).parent_path() / p).lexically_normal().string();
}

std::vector<std::string> input_files(const ScenarioConfig& c)
{
    std::vector<std::string> files;
    if (!c.path.empty()) files.push_back(c.path);
    if (!c.feeder_file.empty()) files.push_back(resolve_path(c, c.feeder_file));
    if (!c.profiles.synthetic) {
        files.push_back(resolve_path(c, c.profiles.profile_file));
        files.push_back(resolve_path(c, c.profiles.user_map_file));
    }
    return files;
}

double average_tou(const PriceSettings& prices, int horizon)
{
    const int peak = std::max(0, std::min(prices.peak_last, horizon) - prices.peak_first + 1);
    return (peak * prices.tou_peak + (horizon - peak) * prices.tou_offpeak) / double(horizon);
}

double calibrate_phi_offpeak(const PriceSettings& prices, const Eigen::VectorXd& baseline_energy)
{
    double peak_max = -std::numeric_limits<double>::infinity();
    double off_min = std::numeric_limits<double>::infinity();
    for (Eigen::Index t = 0; t < baseline_energy.size(); ++t) {
        const int step = static_cast<int>(t + 1);
        if (step >= prices.peak_first && step <= prices.peak_last) peak_max = std::max(peak_max, baseline_energy(t));
        else off_min = std::min(off_min, baseline_energy(t));
    }
    if (!std::isfinite(peak_max) || !std::isfinite(off_min)) {
        throw Error(ErrorKind::InvalidParameter, "phi calibration needs peak and off-peak intervals");
    }
    const double spread = prices.phi_ratio * peak_max - off_min;
    if (!(spread > 0.0)) {
        throw Error(ErrorKind::InvalidParameter, "baseline load gives no positive price spread; set phi_offpeak");
    }
    return (prices.tou_peak - prices.tou_offpeak) / spread;
}

ScenarioData prepare(const ScenarioConfig& config)
{
    const auto issues = config_issues(config);
    if (!issues.empty()) throw Error(ErrorKind::InvalidParameter, issues.front());

    ScenarioData d;
    d.config = config;
    FeederSpec spec = config.feeder;
    spec.edges = load_feeder_csv(resolve_path(config, config.feeder_file)).edges;
    d.config.feeder = spec;
    d.feeder = build_feeder(spec);
    if (config.ces_bus < 1 || config.ces_bus > d.feeder.bus_count) {
        throw Error(ErrorKind::UnknownCesBus, "storage bus " + std::to_string(config.ces_bus) + " not in feeder");
    }

    if (config.profiles.synthetic) {
        SynthParams sp = config.profiles.synth;
        sp.seed = config.seed;
        sp.horizon = config.horizon;
        sp.dt_h = config.dt_h;
        d.profiles = synthesize_profiles(sp);
        validate_profiles(d.profiles, d.feeder.bus_count);
    } else {
        d.profiles = load_profiles(resolve_path(config, config.profiles.profile_file),
                                   resolve_path(config, config.profiles.user_map_file), config.horizon,
                                   d.feeder.bus_count);
    }
    d.surplus = surplus(d.profiles);
    if (d.surplus.participant_count() == 0) {
        throw Error(ErrorKind::InvalidParameter, "the trading game needs at least one participant");
    }
    d.nonparticipant_energy = d.profiles.nonparticipant_demand();
    d.base = aggregate_by_bus(d.profiles, d.feeder, config.dt_h);
    d.baseline_energy = d.nonparticipant_energy - d.surplus.total();

    const double phi_off = config.prices.phi_offpeak > 0.0 ? config.prices.phi_offpeak
                                                           : calibrate_phi_offpeak(config.prices, d.baseline_energy);
    d.config.prices.phi_offpeak = phi_off;
    d.phi.resize(config.horizon);
    for (int t = 1; t <= config.horizon; ++t) {
        const bool peak = t >= config.prices.peak_first && t <= config.prices.peak_last;
        d.phi(t - 1) = peak ? config.prices.phi_ratio * phi_off : phi_off;
    }
    d.delta = Eigen::VectorXd::Constant(config.horizon, average_tou(config.prices, config.horizon));
    return d;
}

std::vector<Diagnostic> diagnose(const ScenarioConfig& config)
{
    std::vector<Diagnostic> out;
    for (const auto& issue : config_issues(config)) out.push_back({"config", "InvalidParameter", issue});

    auto attempt = [&](const std::string& stage, auto&& fn) {
        try {
            fn();
            return true;
        } catch (const Error& e) {
            out.push_back({stage, std::string(to_string(e.kind())), e.detail()});
        } catch (const std::exception& e) {
            out.push_back({stage, "Error", e.what()});
        }
        return false;
    };

    FeederModel feeder;
    bool have_feeder = !config.feeder_file.empty() && attempt("feeder", [&] {
        FeederSpec spec = config.feeder;
        spec.edges = load_feeder_csv(resolve_path(config, config.feeder_file)).edges;
        feeder = build_feeder(spec);
    });
    if (have_feeder && (config.ces_bus < 1 || config.ces_bus > feeder.bus_count)) {
        out.push_back({"feeder", "UnknownCesBus", "storage bus " + std::to_string(config.ces_bus) + " not in feeder"});
    }
    if (config.horizon <= 0) return out;
    attempt("profiles", [&] {
        const int buses = have_feeder ? feeder.bus_count : 0;
        if (config.profiles.synthetic) {
            SynthParams sp = config.profiles.synth;
            sp.seed = config.seed;
            sp.horizon = config.horizon;
            sp.dt_h = config.dt_h;
            validate_profiles(synthesize_profiles(sp), buses);
        } else if (!config.profiles.profile_file.empty() && !config.profiles.user_map_file.empty()) {
            load_profiles(resolve_path(config, config.profiles.profile_file),
                          resolve_path(config, config.profiles.user_map_file), config.horizon, buses);
        }
    });
    if (out.empty()) attempt("prices", [&] { prepare(config); });
    return out;
}

}  // namespace cestrade
