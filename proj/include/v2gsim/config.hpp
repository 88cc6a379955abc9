#pragma once

#include "v2gsim/agc.hpp"
#include "v2gsim/detector.hpp"
#include "v2gsim/essm.hpp"
#include "v2gsim/fleet.hpp"

#include "json.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace v2gsim {

struct DispatchBlock {
    double start_h = 0.0;
    double end_h = 0.0;
    double mw = 0.0;
};

/// Requested net output of the steerable EVs, ΔP_r(t).
struct DispatchSchedule {
    std::vector<DispatchBlock> blocks;
    double event_h = 22.0;
    double event_duration_h = 0.25;
    double event_mw = 50.0;
    bool event_enabled = true;

    /// Block value, replaced by the event level inside the event window. kW.
    double at(double t_h) const;
    bool in_event(double t_h) const { return event_enabled && t_h >= event_h && t_h < event_h + event_duration_h; }
};

/// Piecewise-constant quarter-hour profile (sinusoid plus square wave) shaped
/// to sit inside the steerable band of the default fleet.
std::vector<DispatchBlock> default_dispatch_blocks();

struct ScenarioConfig {
    fleet::FleetParams fleet;
    int ns = 10;
    double step_s = 20.0;
    int period_steps = 15;
    double start_h = 12.0;
    double end_h = 36.0;

    bool attack_enabled = true;
    double attack_start_h = 12.0;
    double attack_stop_h = 36.0;
    int horizon = 2;
    double attack_epsilon = 0.01;
    detector::Norm attack_norm = detector::Norm::L1;
    int sweeps = 2;
    bool follow_broadcast = false;
    bool attacker_sees_clean_fleet = false;

    essm::DriftModel drift = essm::DriftModel::Projected;

    double detector_epsilon = 0.01;
    detector::Norm detector_norm = detector::Norm::L1;

    bool control_enabled = true;
    DispatchSchedule dispatch{default_dispatch_blocks()};

    bool agc_enabled = true;
    agc::AgcParams agc = agc::reference_params();
    agc::ScenarioOptions agc_options;

    std::uint64_t seed = 1;
    std::string out_dir = "out";
    bool record_measurements = false;

    double step_h() const { return step_s / 3600.0; }
    double period_h() const { return step_h() * period_steps; }
    long total_steps() const;
    StateLayout layout() const { return {ns, fleet.soc_min, fleet.soc_max}; }

    void validate() const;
};

/// Reads a config document. Every problem is a ConfigError naming the field path.
ScenarioConfig config_from_json(const nlohmann::json& doc);
ScenarioConfig load_config(const std::string& path);
/// Complete document with every default spelled out.
nlohmann::json config_to_json(const ScenarioConfig& cfg);
/// FNV-1a over the canonical dump of config_to_json, as 16 hex digits.
std::string config_hash(const ScenarioConfig& cfg);

} // namespace v2gsim
