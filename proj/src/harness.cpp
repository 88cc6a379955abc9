#include "v2gsim/harness.hpp"

#include "v2gsim/attack.hpp"
#include "v2gsim/errors.hpp"
#include "v2gsim/operator.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace v2gsim {

namespace {

detector::DetectionConfig detection_config(const ScenarioConfig& cfg)
{
    detector::DetectionConfig d;
    d.epsilon = cfg.detector_epsilon;
    d.norm = cfg.detector_norm;
    d.granularity = fleet::kSocGranularity;
    d.period_h = cfg.period_h();
    d.period_steps = cfg.period_steps;
    return d;
}

OperatorConfig operator_config(const ScenarioConfig& cfg)
{
    return {cfg.layout(), cfg.step_h(), cfg.period_steps, detection_config(cfg), cfg.control_enabled, cfg.drift};
}

bool attack_active(const ScenarioConfig& cfg, double t_h)
{
    return cfg.attack_enabled && t_h >= cfg.attack_start_h - 1e-9 && t_h < cfg.attack_stop_h - 1e-9;
}

class CsvWriter {
public:
    explicit CsvWriter(const std::filesystem::path& path) : path_(path), out_(path, std::ios::binary)
    {
        if (!out_) throw IoError(path.string() + ": cannot open for writing");
    }
    void line(const std::string& s) { out_ << s << '\n'; }
    void close()
    {
        out_.close();
        if (!out_) throw IoError(path_.string() + ": write failed");
    }

private:
    std::filesystem::path path_;
    std::ofstream out_;
};

nlohmann::json optional_number(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

} // namespace

double clock_at(const ScenarioConfig& cfg, long step) { return cfg.start_h + static_cast<double>(step) * cfg.step_s / 3600.0; }

TrueAggregates compute_true_aggregates(const fleet::Fleet& fleet)
{
    const StateLayout& layout = fleet.layout();
    TrueAggregates out;
    std::vector<int> ids;
    std::vector<fleet::EvSpec> specs;
    for (std::size_t i = 0; i < fleet.size(); ++i) {
        const auto& st = fleet.statuses()[i];
        if (!st.connected) continue;
        const auto& spec = fleet.records()[i].spec;
        ids.push_back(essm::state_index(layout, st));
        specs.push_back(spec);
        if (!st.forced_charging) {
            out.steerable_kw += st.power_kw;
            if (st.soc > spec.soc_min + 1e-9) out.upward_room_kw += spec.discharge_kw;
        }
    }
    out.x = essm::build_state_vector(layout, ids);
    const double p = specs.empty() ? 0.0 : essm::p_ave(specs);
    out.report = essm::report(layout, out.x, p);
    return out;
}

double mape(std::span<const StepRecord> steps)
{
    double total = 0.0;
    long n = 0;
    for (const auto& s : steps) {
        if (!s.control || s.dp_r_kw == 0.0) continue;
        total += std::abs(s.dp_ev_kw - s.dp_r_kw) / std::abs(s.dp_r_kw);
        ++n;
    }
    if (n == 0) throw UndefinedMetric("no control step with a nonzero request");
    return total / static_cast<double>(n);
}

RunMetrics run_scenario(const ScenarioConfig& cfg)
{
    cfg.validate();
    const StateLayout layout = cfg.layout();
    fleet::Fleet fleet(fleet::sample_fleet(cfg.fleet, cfg.seed), layout);
    Operator op(operator_config(cfg), fleet.records());

    attack::AttackConfig ac;
    ac.plan.horizon = cfg.horizon;
    ac.plan.period_steps = cfg.period_steps;
    ac.plan.epsilon = cfg.attack_epsilon;
    ac.plan.norm = cfg.attack_norm;
    ac.plan.sweeps = cfg.sweeps;
    ac.step_h = cfg.step_h();
    ac.seed = cfg.seed;
    ac.follow_broadcast = cfg.follow_broadcast;
    ac.drift = cfg.drift;
    ac.sees_clean_fleet = cfg.attacker_sees_clean_fleet;
    attack::ShadowFleet shadow(layout, ac, fleet.records());

    RunMetrics m;
    const long total = cfg.total_steps();
    m.steps.reserve(static_cast<std::size_t>(total));
    double event_sum_kw = 0.0;
    long event_steps = 0;
    double event_room_kw = 0.0;
    bool event_seen = false;

    for (long k = 0; k < total; ++k) {
        const double t = clock_at(cfg, k);
        fleet.update_connections(t);
        fleet.update_forced(t);
        op.begin_step(k, t);
        const bool active = attack_active(cfg, t);
        if (active) shadow.sync(t, fleet.statuses());

        // Steps 1-3: measurements, renewal, flexibility report and detection.
        if (k % cfg.period_steps == 0) {
            std::vector<fleet::Measurement> reports = fleet.collect_measurements(k, cfg.period_steps);
            EpochRecord er;
            er.attack_active = active;
            if (active) {
                std::vector<int> pos(fleet.size(), -1);
                for (std::size_t r = 0; r < reports.size(); ++r) pos[static_cast<std::size_t>(reports[r].ev_id)] = static_cast<int>(r);
                for (const auto& fab : shadow.attack_step(k, t, reports)) {
                    const int p = pos[static_cast<std::size_t>(fab.ev_id)];
                    if (p < 0) throw InternalError("shadow replica for an EV that is not connected");
                    reports[static_cast<std::size_t>(p)] = fab;
                }
                er.shadow_reports = shadow.last_stats().replicas;
                er.manipulated = shadow.last_stats().manipulated;
                er.fallbacks = shadow.last_stats().fallbacks;
                m.fabricated_reports += er.shadow_reports;
                m.manipulated_reports += er.manipulated;
            }
            const RenewalResult rr = op.renew(k, t, reports);
            const TrueAggregates truth = compute_true_aggregates(fleet);
            er.step = k;
            er.t_h = t;
            er.estimated = rr.report;
            er.truth = truth.report;
            er.distance = rr.distance;
            er.cohort = rr.cohort;
            er.sum_error = rr.sum_error;
            er.column_error = rr.column_error;
            er.min_entry = rr.min_entry;
            for (const auto& a : rr.alarms) {
                if (a.kind == detector::AlarmKind::Aggregate) ++er.aggregate_alarms;
                else ++er.feasibility_alarms;
                m.alarms.push_back(a);
            }
            m.epochs.push_back(er);
            if (cfg.record_measurements) m.measurement_log.insert(m.measurement_log.end(), reports.begin(), reports.end());
        }

        // Steps 4-6: dispatch request, feedback and broadcast to the true fleet.
        const double target = cfg.control_enabled ? cfg.dispatch.at(t) : 0.0;
        const ControlBroadcast bc = op.control(k, target);
        fleet.apply_broadcast_all(bc, cfg.seed, k);
        if (active) shadow.observe_broadcast(bc, k);

        StepRecord sr;
        sr.step = k;
        sr.t_h = t;
        sr.dp_r_kw = target;
        sr.control = cfg.control_enabled;
        sr.model_kw = op.model_output_kw();
        sr.out_of_range = op.out_of_range();
        sr.cde = bc.cde;
        for (std::size_t i = 0; i < fleet.size(); ++i) {
            const auto& st = fleet.statuses()[i];
            if (st.connected && !st.forced_charging) sr.dp_ev_kw += st.power_kw;
        }
        m.steps.push_back(sr);

        if (cfg.dispatch.in_event(t)) {
            if (!event_seen) {
                const TrueAggregates truth = compute_true_aggregates(fleet);
                event_room_kw = truth.upward_room_kw;
                m.event_true_y_u_kw = truth.report.y_u_kw;
                event_seen = true;
            }
            event_sum_kw += sr.dp_ev_kw;
            ++event_steps;
        }

        fleet.physics_step(cfg.step_h());
        if (active) shadow.advance(cfg.step_h(), clock_at(cfg, k + 1));
    }

    std::vector<StepRecord> pre, post;
    for (const auto& s : m.steps) (attack_active(cfg, s.t_h) ? post : pre).push_back(s);
    try {
        m.mape_pre = mape(pre);
    } catch (const UndefinedMetric&) {
    }
    try {
        m.mape_post = mape(post);
    } catch (const UndefinedMetric&) {
    }

    if (cfg.agc_enabled && event_seen) {
        const double room_mw = event_room_kw / 1000.0;
        const double delivered_mw = std::clamp(event_sum_kw / static_cast<double>(event_steps) / 1000.0, 0.0, room_mw);
        agc::ScenarioOptions opt = cfg.agc_options;
        opt.load_step_mw = cfg.dispatch.event_mw;
        m.agc = agc::scenario_2200(cfg.agc, room_mw, cfg.dispatch.event_mw, delivered_mw, opt);
    }
    return m;
}

std::vector<detector::Alarm> replay_detection(const ScenarioConfig& cfg, std::span<const fleet::Measurement> log)
{
    cfg.validate();
    const auto records = fleet::sample_fleet(cfg.fleet, cfg.seed);
    Operator op(operator_config(cfg), records);
    std::vector<detector::Alarm> alarms;
    std::size_t cursor = 0;
    const long total = cfg.total_steps();
    for (long k = 0; k < total; ++k) {
        const double t = clock_at(cfg, k);
        op.begin_step(k, t);
        if (k % cfg.period_steps == 0) {
            const std::size_t begin = cursor;
            while (cursor < log.size() && log[cursor].step == k) ++cursor;
            if (cursor < log.size() && log[cursor].step < k)
                throw ContractViolation("measurement log is not ordered by step");
            const RenewalResult rr = op.renew(k, t, log.subspan(begin, cursor - begin));
            alarms.insert(alarms.end(), rr.alarms.begin(), rr.alarms.end());
        }
        op.control(k, cfg.control_enabled ? cfg.dispatch.at(t) : 0.0);
    }
    if (cursor != log.size()) throw ContractViolation("measurement log has entries off the renewal schedule");
    return alarms;
}

std::vector<fleet::Measurement> read_measurement_log(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw IoError(path + ": cannot open measurement log");
    std::string line;
    std::getline(in, line);
    if (line != "step,ev_id,soc,power_kw") throw ConfigError(path + ": unexpected header '" + line + "'");
    std::vector<fleet::Measurement> out;
    long lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        fleet::Measurement m;
        if (std::sscanf(line.c_str(), "%ld,%d,%lf,%lf", &m.step, &m.ev_id, &m.soc, &m.power_kw) != 4)
            throw ConfigError(path + ":" + std::to_string(lineno) + ": malformed record");
        out.push_back(m);
    }
    return out;
}

void write_agc_csv(const agc::AgcRunReport* report, const std::string& path)
{
    CsvWriter w(path);
    w.line("t_s,df1_pu,df2_pu,ptie_pu,pm1_pu,pm2_pu,pev_pu");
    if (report) {
        for (const auto& s : report->series) {
            char buf[256];
            std::snprintf(buf, sizeof buf, "%.4f,%.9e,%.9e,%.9e,%.9e,%.9e,%.9e", s.t, s.state.df[0], s.state.df[1],
                          s.state.ptie, s.state.pm[0], s.state.pm[1], s.inputs.ev);
            w.line(buf);
        }
    }
    w.close();
}

void export_run(const ScenarioConfig& cfg, const RunMetrics& m, const std::string& dir)
{
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError(dir + ": cannot create output directory (" + ec.message() + ")");
    const fs::path base(dir);

    {
        CsvWriter w(base / "flexibility.csv");
        w.line("t_h,step,n_est,y_est_kw,y_u_est_kw,y_l_est_kw,n_true,y_true_kw,y_u_true_kw,y_l_true_kw,p_ave_kw,"
               "distance,cohort,attack,manipulated,alarms");
        for (const auto& e : m.epochs) {
            char buf[512];
            std::snprintf(buf, sizeof buf, "%.6f,%ld,%d,%.3f,%.3f,%.3f,%d,%.3f,%.3f,%.3f,%.4f,%.6f,%d,%d,%d,%d", e.t_h,
                          e.step, e.estimated.connected, e.estimated.y_kw, e.estimated.y_u_kw, e.estimated.y_l_kw,
                          e.truth.connected, e.truth.y_kw, e.truth.y_u_kw, e.truth.y_l_kw, e.estimated.p_ave_kw,
                          e.distance, e.cohort, e.attack_active ? 1 : 0, e.manipulated,
                          e.aggregate_alarms + e.feasibility_alarms);
            w.line(buf);
        }
        w.close();
    }
    {
        CsvWriter w(base / "control.csv");
        w.line("t_h,step,dp_r_kw,dp_ev_kw,model_kw,out_of_range,cde");
        for (const auto& s : m.steps) {
            char buf[256];
            std::snprintf(buf, sizeof buf, "%.6f,%ld,%.3f,%.3f,%.3f,%d,%d", s.t_h, s.step, s.dp_r_kw, s.dp_ev_kw,
                          s.model_kw, s.out_of_range ? 1 : 0, s.cde);
            w.line(buf);
        }
        w.close();
    }
    {
        CsvWriter w(base / "alarms.log");
        for (const auto& a : m.alarms) {
            nlohmann::json j{{"kind", detector::to_string(a.kind)},
                             {"step", a.step},
                             {"t_h", clock_at(cfg, a.step)},
                             {"value", a.value},
                             {"ev_id", a.ev_id},
                             {"details", a.details}};
            w.line(j.dump());
        }
        w.close();
    }
    write_agc_csv(m.agc ? &*m.agc : nullptr, (base / "agc.csv").string());
    if (cfg.record_measurements) {
        CsvWriter w(base / "measurements.csv");
        w.line("step,ev_id,soc,power_kw");
        for (const auto& r : m.measurement_log) {
            char buf[128];
            std::snprintf(buf, sizeof buf, "%ld,%d,%.17g,%.17g", r.step, r.ev_id, r.soc, r.power_kw);
            w.line(buf);
        }
        w.close();
    }

    int agg = 0, feas = 0;
    for (const auto& a : m.alarms) (a.kind == detector::AlarmKind::Aggregate ? agg : feas) += 1;
    int tracked = 0, within = 0;
    double max_sum = 0.0, max_col = 0.0;
    for (const auto& e : m.epochs) {
        max_sum = std::max(max_sum, e.sum_error);
        max_col = std::max(max_col, e.column_error);
        if (e.cohort > 0) {
            ++tracked;
            if (e.distance < cfg.detector_epsilon) ++within;
        }
    }
    nlohmann::json agc_json = nullptr;
    if (m.agc) {
        agc_json = {{"dispatched_mw", m.agc->dispatched_mw},
                    {"delivered_mw", m.agc->delivered_mw},
                    {"shortfall_mw", m.agc->shortfall_mw},
                    {"net_imbalance_mw", m.agc->net_imbalance_mw},
                    {"peak_df1_pu", m.agc->peak_df1},
                    {"peak_df2_pu", m.agc->peak_df2},
                    {"tie_min_pu", m.agc->tie_min},
                    {"tie_max_pu", m.agc->tie_max},
                    {"true_y_u_mw", m.event_true_y_u_kw / 1000.0}};
    }
    nlohmann::json summary{
        {"seed", cfg.seed},
        {"config_hash", config_hash(cfg)},
        {"steps", m.steps.size()},
        {"epochs", m.epochs.size()},
        {"mape_pre", optional_number(m.mape_pre)},
        {"mape_post", optional_number(m.mape_post)},
        {"alarms", {{"aggregate", agg}, {"feasibility", feas}}},
        {"fabricated_reports", m.fabricated_reports},
        {"manipulated_reports", m.manipulated_reports},
        {"tracking", {{"epochs", tracked}, {"within_epsilon", within}}},
        {"invariants", {{"max_sum_error", max_sum}, {"max_column_error", max_col}}},
        {"agc", agc_json},
        {"config", config_to_json(cfg)},
    };
    CsvWriter w(base / "summary.json");
    w.line(summary.dump(2));
    w.close();
}

} // namespace v2gsim
