#pragma once

#include "v2gsim/fleet.hpp"

#include <Eigen/Core>

#include <optional>
#include <string>

namespace v2gsim::detector {

enum class Norm { L1, LInf };

struct DetectionConfig {
    double epsilon = 0.01;
    Norm norm = Norm::L1;
    double granularity = fleet::kSocGranularity;
    double period_h = 5.0 / 60.0; // T_p
    int period_steps = 15;        // N_p

    void validate() const;
};

enum class AlarmKind { Aggregate, Feasibility };

struct Alarm {
    AlarmKind kind = AlarmKind::Aggregate;
    long step = 0;
    double value = 0.0; // distance for aggregate alarms
    int ev_id = -1;     // offending EV for feasibility alarms
    std::string details;
};

const char* to_string(AlarmKind kind) noexcept;
const char* to_string(Norm norm) noexcept;

double distance(const Eigen::VectorXd& a, const Eigen::VectorXd& b, Norm norm);

/// Alarm iff ||x_true - x_est|| >= epsilon.
std::optional<Alarm> check_aggregate(const Eigen::VectorXd& x_true, const Eigen::VectorXd& x_est,
                                     const DetectionConfig& cfg, long step);

/// Largest SoC rise (charging) and fall (discharging) one EV can report across
/// one measurement period, as whole multiples of the granularity.
int max_rise_steps(const fleet::EvSpec& spec, const DetectionConfig& cfg);
int max_fall_steps(const fleet::EvSpec& spec, const DetectionConfig& cfg);

/// The per-EV predicate: energy bound on the SoC change and power bound on P'.
bool feasible(const fleet::Measurement& prev, const fleet::Measurement& cur, const fleet::EvSpec& spec,
              const DetectionConfig& cfg);

/// Throws ContractViolation when the pair is not from one EV or is more than one period apart.
std::optional<Alarm> check_feasibility(const fleet::Measurement& prev, const fleet::Measurement& cur,
                                       const fleet::EvSpec& spec, const DetectionConfig& cfg);

} // namespace v2gsim::detector
