#include <CLI11.hpp>
#include <json.hpp>
#include <openssl/evp.h>

#include <cestrade/config.hpp>
#include <cestrade/report_io.hpp>
#include <cestrade/scenarios.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

using namespace cestrade;
namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

enum Exit { Ok = 0, Invariant = 1, Parse = 2, Certificate = 3, Infeasible = 4, Incompatible = 5 };

int exit_code(ErrorKind kind)
{
    switch (kind) {
    case ErrorKind::ParseError: return Parse;
    case ErrorKind::CertificateFailure: return Certificate;
    case ErrorKind::InfeasibleScenario: return Infeasible;
    case ErrorKind::IncompatibleResults: return Incompatible;
    default: return Invariant;
    }
}

std::string read_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::ParseError, "cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string sha256_hex(const std::string& bytes)
{
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
    EVP_DigestUpdate(ctx, bytes.data(), bytes.size());
    EVP_DigestFinal_ex(ctx, digest, &len);
    EVP_MD_CTX_free(ctx);
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 15];
    }
    return out;
}

std::string default_out()
{
    const char* env = std::getenv("CESTRADE_OUT");
    return env && *env ? env : "cestrade-out";
}

std::map<std::string, std::string> digest_inputs(const ScenarioConfig& config)
{
    std::map<std::string, std::string> out;
    for (const auto& f : input_files(config)) out[f] = sha256_hex(read_file(f));
    return out;
}

void write_text(const fs::path& path, const std::string& text)
{
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::ParseError, "cannot write " + path.string());
    out << text;
}

json manifest(const std::string& command, const ScenarioConfig& config, const std::vector<std::string>& modes,
              const std::string& out_dir, const std::map<std::string, std::string>& digests)
{
    json m;
    m["tool"] = "cestrade";
    m["version"] = CESTRADE_VERSION;
    m["command"] = command;
    m["config"] = config.path;
    m["config_text"] = read_file(config.path);
    m["scenario"] = config.name;
    m["horizon"] = config.horizon;
    m["dt_hours"] = config.dt_h;
    m["seed"] = config.seed;
    m["modes"] = modes;
    m["output_dir"] = out_dir;
    json inputs = json::array();
    for (const auto& [path, digest] : digests) inputs.push_back({{"path", path}, {"sha256", digest}});
    m["inputs"] = inputs;
    return m;
}

// sha256sum-style listing of every output file, written after the results.
void write_output_digests(const fs::path& dir, std::vector<std::string> files)
{
    std::sort(files.begin(), files.end());
    std::ostringstream out;
    for (const auto& f : files) out << sha256_hex(read_file((dir / f).string())) << "  " << f << "\n";
    write_text(dir / "outputs.sha256", out.str());
}

void check_inputs_unchanged(const ScenarioConfig& config, const std::map<std::string, std::string>& digests)
{
    for (const auto& [path, digest] : digest_inputs(config)) {
        const auto it = digests.find(path);
        if (it == digests.end() || it->second != digest) {
            throw Error(ErrorKind::InvalidParameter, "input changed during the run: " + path);
        }
    }
}

// Worst outcome over the modes: audits first, then certificates.
int judge(const std::vector<ModeResult>& results)
{
    int code = Ok;
    for (const ModeResult& r : results) {
        if (!r.audit_failures.empty()) {
            std::cerr << to_string(r.mode) << ": constraint audit failed: " << r.audit_failures.front() << "\n";
            return Invariant;
        }
        if (std::abs(r.accounting_residual) > 1e-6 * std::max(1.0, std::abs(r.community_cost))) {
            std::cerr << to_string(r.mode) << ": accounting does not close (" << r.accounting_residual << ")\n";
            return Invariant;
        }
        if (r.equilibrium && r.equilibrium->certificate && !r.equilibrium->certificate->passed()) {
            const auto& c = *r.equilibrium->certificate;
            std::cerr << to_string(r.mode) << ": certificate failed: leader advantage " << c.leader.max_advantage
                      << ", follower advantage " << c.followers.max_advantage << " at t=" << c.follower_t << "\n";
            code = Certificate;
        }
    }
    return code;
}

void print_summary(const ModeResult& r)
{
    std::cout << to_string(r.mode) << ": peak " << format_number(r.peak_demand()) << " kWh, participants avg "
              << format_number(r.participant_average()) << ", non-participants avg "
              << format_number(r.nonparticipant_average());
    if (r.revenue) std::cout << ", provider " << format_number(*r.revenue);
    std::cout << ", community " << format_number(r.community_cost) << ", voltage violations "
              << r.voltage_violations.size() << "\n";
}

int cmd_validate(const std::string& config_path, const std::string& feeder, const std::string& profiles,
                 const std::string& users)
{
    ScenarioConfig config = load_config(config_path);
    if (!feeder.empty()) config.feeder_file = fs::absolute(feeder).string();
    if (!profiles.empty() || !users.empty()) {
        config.profiles.synthetic = false;
        if (!profiles.empty()) config.profiles.profile_file = fs::absolute(profiles).string();
        if (!users.empty()) config.profiles.user_map_file = fs::absolute(users).string();
    }
    const auto diags = diagnose(config);
    for (const auto& d : diags) std::cout << d.stage << ": " << d.kind << ": " << d.message << "\n";
    if (diags.empty()) {
        std::cout << "ok: " << config.name << "\n";
        return Ok;
    }
    const bool parse = std::any_of(diags.begin(), diags.end(), [](const Diagnostic& d) { return d.kind == "ParseError"; });
    return parse ? Parse : Invariant;
}

int cmd_run(const std::string& config_path, const std::vector<std::string>& mode_names, const std::string& out,
            int jobs, int probes, bool no_verify)
{
    ScenarioConfig config = load_config(config_path);
    if (probes >= 0) config.solver.probes = probes;
    if (no_verify) config.solver.verify = false;
    std::vector<Mode> modes;
    std::vector<std::string> names;
    for (const auto& n : mode_names) {
        if (n == "all") {
            for (Mode m : {Mode::Baseline, Mode::Game, Mode::GameNoVolt, Mode::Centralized}) modes.push_back(m);
        } else {
            modes.push_back(parse_mode(n));
        }
    }
    for (Mode m : modes) names.push_back(to_string(m));

    const auto digests = digest_inputs(config);
    const ScenarioData data = prepare(config);
    const fs::path dir(out);
    write_text(dir / "manifest.json", manifest("run", config, names, out, digests).dump(2) + "\n");

    const auto results = run_modes(data, modes, run_options(config), jobs);
    std::vector<std::string> files{"manifest.json"};
    for (const ModeResult& r : results) {
        for (const auto& f : write_mode_outputs(r, (dir / to_string(r.mode)).string())) {
            files.push_back(to_string(r.mode) + "/" + f);
        }
        print_summary(r);
    }
    write_output_digests(dir, files);
    check_inputs_unchanged(config, digests);
    return judge(results);
}

int cmd_compare(const std::vector<std::string>& dirs, const std::string& out)
{
    std::vector<StoredResult> stored;
    for (const auto& d : dirs) {
        const json m = json::parse(read_file((fs::path(d) / "manifest.json").string()), nullptr, false);
        if (m.is_discarded() || !m.contains("modes")) throw Error(ErrorKind::ParseError, d + ": bad manifest");
        for (const auto& mode : m.at("modes")) {
            stored.push_back(read_result_json((fs::path(d) / mode.get<std::string>() / "result.json").string()));
        }
    }
    if (stored.size() < 2) throw Error(ErrorKind::IncompatibleResults, "comparison needs at least two results");
    const StoredResult& first = stored.front();
    std::vector<ModeSummary> summaries;
    for (const auto& s : stored) {
        if (s.horizon != first.horizon || s.dt_h != first.dt_h || s.participants != first.participants ||
            s.nonparticipants != first.nonparticipants) {
            throw Error(ErrorKind::IncompatibleResults, "results do not share horizon, interval or user sets (" +
                                                            std::to_string(first.horizon) + " vs " +
                                                            std::to_string(s.horizon) + " intervals)");
        }
        summaries.push_back(s.summary);
    }
    const ComparisonReport report = compare(summaries, first.scenario, first.horizon);
    write_comparison(report, out);
    std::cout << "reference: " << to_string(report.reference) << "\n";
    for (std::size_t i = 0; i < report.modes.size(); ++i) {
        const auto& d = report.deltas[i];
        std::cout << to_string(d.mode) << ": peak " << format_number(d.peak_demand_pct) << "%, participants "
                  << format_number(d.participant_average_pct) << "%, non-participants "
                  << format_number(d.nonparticipant_average_pct) << "%, community "
                  << format_number(d.community_cost_pct) << "%\n";
    }
    return Ok;
}

int cmd_sweep(const std::vector<std::string>& configs, const std::vector<std::string>& mode_names,
              const std::string& out, int jobs, int probes, bool no_verify)
{
    std::vector<std::pair<std::string, ScenarioConfig>> seasons;
    std::map<std::string, std::string> digests;
    for (const auto& path : configs) {
        ScenarioConfig c = load_config(path);
        if (probes >= 0) c.solver.probes = probes;
        if (no_verify) c.solver.verify = false;
        for (const auto& [f, d] : digest_inputs(c)) digests[f] = d;
        seasons.emplace_back(c.name, c);
    }
    std::vector<Mode> modes;
    std::vector<std::string> names;
    for (const auto& n : mode_names) modes.push_back(parse_mode(n));
    for (Mode m : modes) names.push_back(to_string(m));

    const fs::path dir(out);
    json m = manifest("sweep-seasons", seasons.front().second, names, out, digests);
    m["seasons"] = json::array();
    for (const auto& [name, c] : seasons) m["seasons"].push_back({{"name", name}, {"config", c.path}});
    write_text(dir / "manifest.json", m.dump(2) + "\n");

    const SeasonalSweep sweep = seasonal_sweep(seasons, modes, jobs);
    std::vector<std::string> files = write_sweep(sweep, out);
    files.push_back("manifest.json");
    write_output_digests(dir, files);
    for (std::size_t i = 0; i < sweep.bars.seasons.size(); ++i) {
        const Eigen::Index k = static_cast<Eigen::Index>(i);
        std::cout << sweep.bars.seasons[i] << ": revenue " << format_number(sweep.bars.revenue(k))
                  << ", participant cost " << format_number(sweep.bars.participant_cost(k))
                  << ", non-participant cost " << format_number(sweep.bars.nonparticipant_cost(k)) << "\n";
    }
    int code = Ok;
    for (const auto& s : sweep.seasons) code = std::max(code, judge(s.results));
    return code;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Storage-provider / PV-user trading game on a radial feeder"};
    app.set_version_flag("--version", std::string("cestrade ") + CESTRADE_VERSION);
    app.require_subcommand(1);

    std::string config, feeder, profiles, users;
    auto* validate = app.add_subcommand("validate", "Check a config and its input files");
    validate->add_option("config", config, "Scenario config")->required();
    validate->add_option("--feeder", feeder, "Feeder edge list overriding the config");
    validate->add_option("--profiles", profiles, "Profile CSV overriding the config");
    validate->add_option("--users", users, "User map CSV overriding the config");

    std::vector<std::string> modes;
    std::string out = default_out();
    int jobs = 1;
    int probes = -1;
    bool no_verify = false;
    auto* run = app.add_subcommand("run", "Run operating modes and write results");
    run->add_option("config", config, "Scenario config")->required();
    run->add_option("--mode", modes, "baseline, game, game-novolt, centralized or all")->required();
    run->add_option("--out", out, "Output directory (default $CESTRADE_OUT or ./cestrade-out)");
    run->add_option("--jobs", jobs, "Modes run in parallel")->check(CLI::PositiveNumber);
    run->add_option("--probes", probes, "Leader probes per certificate");
    run->add_flag("--no-verify", no_verify, "Skip the certificates");

    std::vector<std::string> dirs;
    std::string compare_out = default_out();
    auto* cmp = app.add_subcommand("compare", "Compare result directories");
    cmp->add_option("dirs", dirs, "Directories written by run")->required()->expected(1, -1);
    cmp->add_option("--out", compare_out, "Output directory");

    std::vector<std::string> season_configs;
    std::vector<std::string> season_modes{"baseline", "game", "game-novolt", "centralized"};
    auto* sweep = app.add_subcommand("sweep-seasons", "Run every mode for several season configs");
    sweep->add_option("configs", season_configs, "One config per season")->required()->expected(1, -1);
    sweep->add_option("--mode", season_modes, "Modes to run (default all)");
    sweep->add_option("--out", out, "Output directory");
    sweep->add_option("--jobs", jobs, "Modes run in parallel")->check(CLI::PositiveNumber);
    sweep->add_option("--probes", probes, "Leader probes per certificate");
    sweep->add_flag("--no-verify", no_verify, "Skip the certificates");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? Ok : Parse;
    }

    try {
        if (*validate) return cmd_validate(config, feeder, profiles, users);
        if (*run) return cmd_run(config, modes, out, jobs, probes, no_verify);
        if (*cmp) return cmd_compare(dirs, compare_out);
        if (*sweep) return cmd_sweep(season_configs, season_modes, out, jobs, probes, no_verify);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return Invariant;
    }
    return Ok;
}
