#pragma once

#include "v2gsim/agc.hpp"
#include "v2gsim/config.hpp"
#include "v2gsim/detector.hpp"
#include "v2gsim/essm.hpp"
#include "v2gsim/fleet.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace v2gsim {

struct TrueAggregates {
    essm::StateVector x;
    essm::FlexibilityReport report;
    double steerable_kw = 0.0;    // net power of connected, non-forced EVs
    double upward_room_kw = 0.0;  // output the steerable EVs could reach by all discharging
};

/// Same formulas as the operator, applied to the physical state.
TrueAggregates compute_true_aggregates(const fleet::Fleet& fleet);

struct EpochRecord {
    long step = 0;
    double t_h = 0.0;
    essm::FlexibilityReport estimated;
    essm::FlexibilityReport truth;
    double distance = 0.0;
    int cohort = 0;
    int aggregate_alarms = 0;
    int feasibility_alarms = 0;
    double sum_error = 0.0;
    double column_error = 0.0;
    double min_entry = 0.0;
    bool attack_active = false;
    int shadow_reports = 0;
    int manipulated = 0;
    int fallbacks = 0;
};

struct StepRecord {
    long step = 0;
    double t_h = 0.0;
    double dp_r_kw = 0.0;
    double dp_ev_kw = 0.0;
    double model_kw = 0.0;
    bool out_of_range = false;
    int cde = 1;
    bool control = false;
};

struct RunMetrics {
    std::vector<EpochRecord> epochs;
    std::vector<StepRecord> steps;
    std::vector<detector::Alarm> alarms;
    std::optional<double> mape_pre;
    std::optional<double> mape_post;
    std::optional<agc::AgcRunReport> agc;
    double event_true_y_u_kw = 0.0;
    long fabricated_reports = 0;
    long manipulated_reports = 0;
    std::vector<fleet::Measurement> measurement_log;
};

/// Mean of |ΔP_EV - ΔP_r| / |ΔP_r| over control steps with ΔP_r != 0.
/// Throws UndefinedMetric when no step qualifies.
double mape(std::span<const StepRecord> steps);

/// The six-step loop over the whole window.
RunMetrics run_scenario(const ScenarioConfig& cfg);

/// Re-runs the operator side over a recorded measurement log.
std::vector<detector::Alarm> replay_detection(const ScenarioConfig& cfg, std::span<const fleet::Measurement> log);

/// Writes flexibility.csv, control.csv, alarms.log, agc.csv and summary.json
/// (plus measurements.csv when recorded) into `dir`.
void export_run(const ScenarioConfig& cfg, const RunMetrics& metrics, const std::string& dir);

/// Header row only when report is null.
void write_agc_csv(const agc::AgcRunReport* report, const std::string& path);

std::vector<fleet::Measurement> read_measurement_log(const std::string& path);

double clock_at(const ScenarioConfig& cfg, long step);

} // namespace v2gsim
