#include "v2gsim/detector.hpp"

#include "v2gsim/errors.hpp"

#include <cmath>
#include <cstdio>

namespace v2gsim::detector {

namespace {

constexpr double kGridTol = 1e-9;
constexpr double kPowerTol = 1e-9;

int ceil_steps(double amount, double granularity) { return static_cast<int>(std::ceil(amount / granularity - kGridTol)); }

} // namespace

void DetectionConfig::validate() const
{
    if (!(epsilon > 0.0)) throw ConfigError("detector.epsilon: must be positive");
    if (!(granularity > 0.0)) throw ConfigError("detector.granularity: must be positive");
    if (!(period_h > 0.0)) throw ConfigError("detector.period: must be positive");
    if (period_steps < 1) throw ConfigError("detector.period_steps: must be >= 1");
}

const char* to_string(AlarmKind kind) noexcept { return kind == AlarmKind::Aggregate ? "aggregate" : "feasibility"; }

const char* to_string(Norm norm) noexcept { return norm == Norm::L1 ? "l1" : "linf"; }

double distance(const Eigen::VectorXd& a, const Eigen::VectorXd& b, Norm norm)
{
    if (a.size() != b.size()) throw ContractViolation("state vectors have different lengths");
    const Eigen::VectorXd d = a - b;
    return norm == Norm::L1 ? d.lpNorm<1>() : d.lpNorm<Eigen::Infinity>();
}

std::optional<Alarm> check_aggregate(const Eigen::VectorXd& x_true, const Eigen::VectorXd& x_est,
                                     const DetectionConfig& cfg, long step)
{
    const double dist = distance(x_true, x_est, cfg.norm);
    if (dist < cfg.epsilon) return std::nullopt;
    char buf[96];
    std::snprintf(buf, sizeof buf, "%s distance %.6f >= %.6f", to_string(cfg.norm), dist, cfg.epsilon);
    return Alarm{AlarmKind::Aggregate, step, dist, -1, buf};
}

int max_rise_steps(const fleet::EvSpec& spec, const DetectionConfig& cfg)
{
    return ceil_steps(spec.charge_kw * cfg.period_h / spec.capacity_kwh, cfg.granularity);
}

int max_fall_steps(const fleet::EvSpec& spec, const DetectionConfig& cfg)
{
    return ceil_steps(spec.discharge_kw * cfg.period_h / (spec.efficiency * spec.capacity_kwh), cfg.granularity);
}

bool feasible(const fleet::Measurement& prev, const fleet::Measurement& cur, const fleet::EvSpec& spec,
              const DetectionConfig& cfg)
{
    if (cur.power_kw < -spec.charge_kw - kPowerTol || cur.power_kw > spec.discharge_kw + kPowerTol) return false;
    const double ds = cur.soc - prev.soc;
    // Away-from-zero rounding onto the reporting grid.
    const int grid = ds >= 0 ? ceil_steps(ds, cfg.granularity) : -ceil_steps(-ds, cfg.granularity);
    return grid <= max_rise_steps(spec, cfg) && -grid <= max_fall_steps(spec, cfg);
}

std::optional<Alarm> check_feasibility(const fleet::Measurement& prev, const fleet::Measurement& cur,
                                       const fleet::EvSpec& spec, const DetectionConfig& cfg)
{
    if (prev.ev_id != cur.ev_id) throw ContractViolation("feasibility check needs two measurements of one EV");
    const long gap = cur.step - prev.step;
    if (gap < 0 || gap > cfg.period_steps)
        throw ContractViolation("measurements are not consecutive (gap " + std::to_string(gap) + " steps)");
    if (feasible(prev, cur, spec, cfg)) return std::nullopt;
    char buf[128];
    std::snprintf(buf, sizeof buf, "soc %.4f -> %.4f, power %.3f kW", prev.soc, cur.soc, cur.power_kw);
    return Alarm{AlarmKind::Feasibility, cur.step, cur.soc - prev.soc, cur.ev_id, buf};
}

} // namespace v2gsim::detector
