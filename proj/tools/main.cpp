#include "v2gsim/config.hpp"
#include "v2gsim/errors.hpp"
#include "v2gsim/harness.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

using namespace v2gsim;

namespace {

struct CommonFlags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string attack;
    std::string control;
    std::string out;
};

void add_common(CLI::App* cmd, CommonFlags& f)
{
    cmd->add_option("--config", f.config, "JSON scenario file (defaults when omitted)");
    cmd->add_option("--seed", f.seed, "Override the scenario seed");
    cmd->add_option("--attack", f.attack, "Override attack enable")->check(CLI::IsMember({"on", "off"}));
    cmd->add_option("--control", f.control, "Override closed-loop control")->check(CLI::IsMember({"on", "off"}));
    cmd->add_option("--out", f.out, "Output directory");
}

ScenarioConfig resolve(const CommonFlags& f)
{
    ScenarioConfig cfg = f.config.empty() ? ScenarioConfig{} : load_config(f.config);
    if (f.seed) cfg.seed = *f.seed;
    if (!f.attack.empty()) cfg.attack_enabled = f.attack == "on";
    if (!f.control.empty()) cfg.control_enabled = f.control == "on";
    if (!f.out.empty()) cfg.out_dir = f.out;
    cfg.validate();
    return cfg;
}

nlohmann::json read_json(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw IoError(path + ": cannot open");
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

void print_pct(const char* label, const std::optional<double>& v)
{
    if (v) std::printf("%-22s %.2f%%\n", label, 100.0 * *v);
    else std::printf("%-22s n/a\n", label);
}

int cmd_simulate(const CommonFlags& f, bool record)
{
    ScenarioConfig cfg = resolve(f);
    if (record) cfg.record_measurements = true;
    const auto t0 = std::chrono::steady_clock::now();
    const RunMetrics m = run_scenario(cfg);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    export_run(cfg, m, cfg.out_dir);

    int agg = 0, feas = 0;
    for (const auto& a : m.alarms) (a.kind == detector::AlarmKind::Aggregate ? agg : feas) += 1;
    std::printf("seed                   %llu\n", static_cast<unsigned long long>(cfg.seed));
    std::printf("config hash            %s\n", config_hash(cfg).c_str());
    std::printf("steps / epochs         %zu / %zu\n", m.steps.size(), m.epochs.size());
    std::printf("aggregate alarms       %d\n", agg);
    std::printf("feasibility alarms     %d\n", feas);
    std::printf("fabricated reports     %ld (%ld manipulated)\n", m.fabricated_reports, m.manipulated_reports);
    print_pct("MAPE pre-attack", m.mape_pre);
    print_pct("MAPE post-attack", m.mape_post);
    if (m.agc)
        std::printf("AGC net imbalance      %.2f MW (dispatched %.1f, delivered %.2f)\n", m.agc->net_imbalance_mw,
                    m.agc->dispatched_mw, m.agc->delivered_mw);
    std::printf("wall time              %.1f s\n", secs);
    std::printf("output                 %s\n", cfg.out_dir.c_str());
    return 0;
}

int cmd_agc(const CommonFlags& f, const std::string& from, std::optional<double> flex_mw,
            std::optional<double> dispatched_mw, std::optional<double> delivered_mw)
{
    const ScenarioConfig cfg = resolve(f);
    double flex = 0.0, dispatched = cfg.dispatch.event_mw, delivered = 0.0;
    if (!from.empty()) {
        const auto summary = read_json((std::filesystem::path(from) / "summary.json").string());
        const auto& a = summary.at("agc");
        if (a.is_null()) throw ConfigError(from + ": run has no AGC block");
        flex = a.at("true_y_u_mw").get<double>();
        dispatched = a.at("dispatched_mw").get<double>();
        delivered = a.at("delivered_mw").get<double>();
    }
    if (flex_mw) flex = *flex_mw;
    if (dispatched_mw) dispatched = *dispatched_mw;
    if (delivered_mw) delivered = *delivered_mw;
    if (!flex_mw && from.empty()) flex = delivered;

    agc::ScenarioOptions opt = cfg.agc_options;
    opt.load_step_mw = dispatched;
    const auto r = agc::scenario_2200(cfg.agc, flex, dispatched, delivered, opt);
    std::filesystem::create_directories(cfg.out_dir);
    const std::string path = (std::filesystem::path(cfg.out_dir) / "agc.csv").string();
    write_agc_csv(&r, path);
    std::printf("dispatched             %.2f MW\n", r.dispatched_mw);
    std::printf("delivered              %.2f MW\n", r.delivered_mw);
    std::printf("shortfall              %.2f MW\n", r.shortfall_mw);
    std::printf("net imbalance          %.2f MW\n", r.net_imbalance_mw);
    std::printf("peak |df1| / |df2|     %.5f / %.5f p.u.\n", r.peak_df1, r.peak_df2);
    std::printf("tie-line range         [%.5f, %.5f] p.u.\n", r.tie_min, r.tie_max);
    std::printf("series                 %s\n", path.c_str());
    return 0;
}

int cmd_detect(const CommonFlags& f, const std::string& log_path)
{
    const ScenarioConfig cfg = resolve(f);
    const auto log = read_measurement_log(log_path);
    const auto alarms = replay_detection(cfg, log);
    int agg = 0, feas = 0;
    for (const auto& a : alarms) {
        (a.kind == detector::AlarmKind::Aggregate ? agg : feas) += 1;
        nlohmann::json j{{"kind", detector::to_string(a.kind)},
                         {"step", a.step},
                         {"t_h", clock_at(cfg, a.step)},
                         {"value", a.value},
                         {"ev_id", a.ev_id},
                         {"details", a.details}};
        std::cout << j.dump() << '\n';
    }
    std::fprintf(stderr, "%zu reports replayed: %d aggregate, %d feasibility alarms\n", log.size(), agg, feas);
    return 0;
}

int cmd_report(const std::string& dir)
{
    const auto s = read_json((std::filesystem::path(dir) / "summary.json").string());
    auto pct = [](const nlohmann::json& v) {
        char buf[32];
        if (v.is_null()) return std::string("n/a");
        std::snprintf(buf, sizeof buf, "%.2f%%", 100.0 * v.get<double>());
        return std::string(buf);
    };
    std::printf("run                    %s\n", dir.c_str());
    std::printf("seed                   %llu\n", static_cast<unsigned long long>(s.at("seed").get<std::uint64_t>()));
    std::printf("config hash            %s\n", s.at("config_hash").get<std::string>().c_str());
    std::printf("attack / control       %s / %s\n", s.at("config").at("attack").at("enabled").get<bool>() ? "on" : "off",
                s.at("config").at("control").at("enabled").get<bool>() ? "on" : "off");
    std::printf("aggregate alarms       %d\n", s.at("alarms").at("aggregate").get<int>());
    std::printf("feasibility alarms     %d\n", s.at("alarms").at("feasibility").get<int>());
    std::printf("tracking               %d of %d epochs within epsilon\n",
                s.at("tracking").at("within_epsilon").get<int>(), s.at("tracking").at("epochs").get<int>());
    std::printf("MAPE pre / post        %s / %s\n", pct(s.at("mape_pre")).c_str(), pct(s.at("mape_post")).c_str());

    std::ifstream flex(std::filesystem::path(dir) / "flexibility.csv");
    if (flex) {
        std::string line;
        std::getline(flex, line);
        double max_gap_u = 0.0, max_gap_l = 0.0, at_u = 0.0;
        while (std::getline(flex, line)) {
            double v[16];
            if (std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf,%lf,%lf,%lf,%lf,%lf,%lf", &v[0], &v[1], &v[2], &v[3], &v[4],
                            &v[5], &v[6], &v[7], &v[8], &v[9]) != 10)
                continue;
            if (v[4] - v[8] > max_gap_u) {
                max_gap_u = v[4] - v[8];
                at_u = v[0];
            }
            max_gap_l = std::max(max_gap_l, std::abs(v[5] - v[9]));
        }
        std::printf("max y_u overstatement  %.1f kW at t=%.2f h\n", max_gap_u, at_u);
        std::printf("max |y_l error|        %.1f kW\n", max_gap_l);
    }
    if (!s.at("agc").is_null())
        std::printf("AGC net imbalance      %.2f MW\n", s.at("agc").at("net_imbalance_mw").get<double>());
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"V2G eSSM false-data-injection testbed"};
    app.require_subcommand(1);

    CommonFlags sim_flags, agc_flags, det_flags;
    bool record = false;
    auto* sim = app.add_subcommand("simulate", "Run the full closed loop and write the run directory");
    add_common(sim, sim_flags);
    sim->add_flag("--record-measurements", record, "Also write measurements.csv for later replay");

    auto* agc_cmd = app.add_subcommand("agc", "Two-area frequency scenario for a flexibility shortfall");
    add_common(agc_cmd, agc_flags);
    std::string from;
    std::optional<double> flex_mw, dispatched_mw, delivered_mw;
    agc_cmd->add_option("--from", from, "Run directory whose summary.json supplies the event numbers");
    agc_cmd->add_option("--flexibility-mw", flex_mw, "True upward flexibility");
    agc_cmd->add_option("--dispatched-mw", dispatched_mw, "Dispatched regulation (defaults to the event size)");
    agc_cmd->add_option("--delivered-mw", delivered_mw, "Regulation actually delivered by the fleet");

    auto* det = app.add_subcommand("detect", "Replay the detector over a recorded measurement log");
    add_common(det, det_flags);
    std::string log_path;
    det->add_option("--log", log_path, "measurements.csv from a simulate run")->required();

    auto* rep = app.add_subcommand("report", "Summarize a run directory");
    std::string dir;
    rep->add_option("dir", dir, "Run directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (*sim) return cmd_simulate(sim_flags, record);
        if (*agc_cmd) return cmd_agc(agc_flags, from, flex_mw, dispatched_mw, delivered_mw);
        if (*det) return cmd_detect(det_flags, log_path);
        return cmd_report(dir);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const nlohmann::json::exception& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
}
