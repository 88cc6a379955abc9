#include "v2gsim/agc.hpp"
#include "v2gsim/config.hpp"
#include "v2gsim/errors.hpp"
#include "v2gsim/fleet.hpp"
#include "v2gsim/harness.hpp"
#include "v2gsim/optkit.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <string>

namespace py = pybind11;
using namespace v2gsim;

namespace {

ScenarioConfig parse_config(const std::string& text)
{
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text.empty() ? "{}" : text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return config_from_json(doc);
}

py::dict report_dict(const essm::FlexibilityReport& r)
{
    py::dict d;
    d["y_kw"] = r.y_kw;
    d["y_u_kw"] = r.y_u_kw;
    d["y_l_kw"] = r.y_l_kw;
    d["p_ave_kw"] = r.p_ave_kw;
    d["connected"] = r.connected;
    return d;
}

py::dict agc_dict(const agc::AgcRunReport& r)
{
    py::dict d;
    d["dispatched_mw"] = r.dispatched_mw;
    d["delivered_mw"] = r.delivered_mw;
    d["shortfall_mw"] = r.shortfall_mw;
    d["net_imbalance_mw"] = r.net_imbalance_mw;
    d["peak_df1"] = r.peak_df1;
    d["peak_df2"] = r.peak_df2;
    d["tie_min"] = r.tie_min;
    d["tie_max"] = r.tie_max;
    d["tie_final"] = r.tie_final;
    py::list t, df1, df2, ptie;
    for (const auto& s : r.series) {
        t.append(s.t);
        df1.append(s.state.df[0]);
        df2.append(s.state.df[1]);
        ptie.append(s.state.ptie);
    }
    d["t_s"] = t;
    d["df1"] = df1;
    d["df2"] = df2;
    d["ptie"] = ptie;
    return d;
}

py::dict metrics_dict(const RunMetrics& m)
{
    py::list epochs, steps, alarms;
    for (const auto& e : m.epochs) {
        py::dict d;
        d["step"] = e.step;
        d["t_h"] = e.t_h;
        d["estimated"] = report_dict(e.estimated);
        d["truth"] = report_dict(e.truth);
        d["distance"] = e.distance;
        d["cohort"] = e.cohort;
        d["aggregate_alarms"] = e.aggregate_alarms;
        d["feasibility_alarms"] = e.feasibility_alarms;
        d["sum_error"] = e.sum_error;
        d["column_error"] = e.column_error;
        d["min_entry"] = e.min_entry;
        d["attack_active"] = e.attack_active;
        d["manipulated"] = e.manipulated;
        epochs.append(d);
    }
    for (const auto& s : m.steps) {
        py::dict d;
        d["step"] = s.step;
        d["t_h"] = s.t_h;
        d["dp_r_kw"] = s.dp_r_kw;
        d["dp_ev_kw"] = s.dp_ev_kw;
        d["model_kw"] = s.model_kw;
        d["control"] = s.control;
        steps.append(d);
    }
    for (const auto& a : m.alarms) {
        py::dict d;
        d["kind"] = detector::to_string(a.kind);
        d["step"] = a.step;
        d["value"] = a.value;
        d["ev_id"] = a.ev_id;
        d["details"] = a.details;
        alarms.append(d);
    }
    py::dict out;
    out["epochs"] = epochs;
    out["steps"] = steps;
    out["alarms"] = alarms;
    out["mape_pre"] = m.mape_pre ? py::cast(*m.mape_pre) : py::none();
    out["mape_post"] = m.mape_post ? py::cast(*m.mape_post) : py::none();
    out["agc"] = m.agc ? py::object(agc_dict(*m.agc)) : py::none();
    out["fabricated_reports"] = m.fabricated_reports;
    out["manipulated_reports"] = m.manipulated_reports;
    return out;
}

} // namespace

PYBIND11_MODULE(_core, m)
{
    m.doc() = "V2G fleet, eSSM operator and stealthy aggregate attack testbed";

    auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
    py::register_exception<PhysicsViolation>(m, "PhysicsViolation", base.ptr());
    py::register_exception<ContractViolation>(m, "ContractViolation", base.ptr());
    py::register_exception<AssignmentInfeasible>(m, "AssignmentInfeasible", base.ptr());
    py::register_exception<UndefinedMetric>(m, "UndefinedMetric", base.ptr());
    py::register_exception<IoError>(m, "IoError", base.ptr());

    m.def(
        "default_config", [] { return config_to_json(ScenarioConfig{}).dump(); },
        "Complete default config as a JSON string.");
    m.def(
        "normalize_config", [](const std::string& text) { return config_to_json(parse_config(text)).dump(); },
        py::arg("config_json"));
    m.def(
        "config_hash", [](const std::string& text) { return config_hash(parse_config(text)); },
        py::arg("config_json"));
    m.def(
        "run", [](const std::string& text) {
            const ScenarioConfig cfg = parse_config(text);
            RunMetrics metrics;
            {
                py::gil_scoped_release release;
                metrics = run_scenario(cfg);
            }
            return metrics_dict(metrics);
        },
        py::arg("config_json"));
    m.def(
        "run_and_export", [](const std::string& text, const std::string& dir) {
            const ScenarioConfig cfg = parse_config(text);
            py::gil_scoped_release release;
            export_run(cfg, run_scenario(cfg), dir);
        },
        py::arg("config_json"), py::arg("out_dir"));

    m.def(
        "step_ev", [](double capacity_kwh, double charge_kw, double discharge_kw, double efficiency, double soc,
                      double power_kw, double dt_h) {
            fleet::EvSpec s;
            s.capacity_kwh = capacity_kwh;
            s.charge_kw = charge_kw;
            s.discharge_kw = discharge_kw;
            s.efficiency = efficiency;
            return fleet::step_ev(s, soc, power_kw, dt_h);
        },
        py::arg("capacity_kwh"), py::arg("charge_kw"), py::arg("discharge_kw"), py::arg("efficiency"), py::arg("soc"),
        py::arg("power_kw"), py::arg("dt_h"));
    m.def(
        "quantize_soc", [](double soc) { return fleet::quantize_soc(soc); }, py::arg("soc"));

    m.def(
        "solve_transportation",
        [](const Eigen::MatrixXd& cost, const Eigen::VectorXi& supply, const Eigen::VectorXi& demand) {
            const auto r = optkit::solve_transportation({cost, supply, demand});
            return py::make_tuple(r.flow, r.cost);
        },
        py::arg("cost"), py::arg("supply"), py::arg("demand"),
        "Min-cost balanced transportation; returns (flow, cost). Use inf for forbidden cells.");

    m.def(
        "agc_event", [](double flexibility_mw, double dispatched_mw, double delivered_mw) {
            return agc_dict(agc::scenario_2200(agc::reference_params(), flexibility_mw, dispatched_mw, delivered_mw));
        },
        py::arg("flexibility_mw"), py::arg("dispatched_mw"), py::arg("delivered_mw"));
}
