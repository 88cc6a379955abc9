#include "v2gsim/fleet.hpp"

#include "v2gsim/errors.hpp"
#include "v2gsim/essm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

namespace v2gsim::fleet {

namespace {

constexpr double kPowerTol = 1e-9;
constexpr int kMaxRejections = 10'000'000;

void check_normal(const TruncatedNormal& d, const char* name)
{
    if (!(d.stddev > 0.0) || !std::isfinite(d.mean))
        throw ConfigError(std::string(name) + ".stddev: must be positive and finite");
    if (!(d.lo < d.hi)) throw ConfigError(std::string(name) + ": range must satisfy lo < hi");
}

void check_uniform(const UniformRange& d, const char* name)
{
    if (!(d.lo < d.hi)) throw ConfigError(std::string(name) + ": range must satisfy lo < hi");
}

double sample_truncated(const TruncatedNormal& d, std::mt19937_64& rng, const char* name)
{
    std::normal_distribution<double> normal(d.mean, d.stddev);
    for (int i = 0; i < kMaxRejections; ++i) {
        const double v = normal(rng);
        if (v >= d.lo && v <= d.hi) return v;
    }
    throw ConfigError(std::string(name) + ": truncation range carries negligible probability mass");
}

} // namespace

void EvSpec::validate() const
{
    if (!(capacity_kwh > 0.0)) throw ConfigError("capacity must be positive");
    if (!(charge_kw > 0.0 && discharge_kw > 0.0)) throw ConfigError("power limits must be positive");
    if (!(efficiency > 0.0 && efficiency <= 1.0)) throw ConfigError("efficiency must lie in (0, 1]");
    if (!(soc_min >= 0.0 && soc_min < soc_max && soc_max <= 1.0))
        throw ConfigError("need 0 <= soc_min < soc_max <= 1");
}

void FleetParams::validate() const
{
    check_normal(start_soc, "fleet.start_soc");
    check_normal(departure_soc, "fleet.departure_soc");
    check_normal(start_time, "fleet.start_time");
    check_normal(finish_time, "fleet.finish_time");
    check_uniform(power_kw, "fleet.power_kw");
    check_uniform(efficiency, "fleet.efficiency");
    check_uniform(capacity_kwh, "fleet.capacity_kwh");
    if (!(power_kw.lo > 0.0)) throw ConfigError("fleet.power_kw.lo: must be positive");
    if (!(efficiency.lo > 0.0 && efficiency.hi <= 1.0)) throw ConfigError("fleet.efficiency: must lie in (0, 1]");
    if (!(capacity_kwh.lo > 0.0)) throw ConfigError("fleet.capacity_kwh.lo: must be positive");
    if (!(soc_min >= 0.0 && soc_min < soc_max && soc_max <= 1.0))
        throw ConfigError("fleet.soc_min/soc_max: need 0 <= soc_min < soc_max <= 1");
    if (start_soc.lo < soc_min || start_soc.hi > soc_max)
        throw ConfigError("fleet.start_soc: range must lie inside [soc_min, soc_max]");
    if (departure_soc.lo < soc_min || departure_soc.hi > soc_max)
        throw ConfigError("fleet.departure_soc: range must lie inside [soc_min, soc_max]");
    if (start_time.lo >= finish_time.hi)
        throw ConfigError("fleet.finish_time: range must extend past the earliest start time");
    if (size < 0) throw ConfigError("fleet.size: must be >= 0");
    if (!(compromised_fraction >= 0.0 && compromised_fraction <= 1.0))
        throw ConfigError("fleet.compromised_fraction: must lie in [0, 1]");
}

std::vector<EvRecord> sample_fleet(const FleetParams& params, std::uint64_t seed)
{
    params.validate();
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto uniform = [&](const UniformRange& r) { return r.lo + (r.hi - r.lo) * unit(rng); };

    std::vector<EvRecord> fleet(static_cast<std::size_t>(params.size));
    for (int i = 0; i < params.size; ++i) {
        EvRecord& ev = fleet[static_cast<std::size_t>(i)];
        ev.id = i;
        ev.spec.capacity_kwh = uniform(params.capacity_kwh);
        // One bidirectional charger rating per EV.
        ev.spec.charge_kw = uniform(params.power_kw);
        ev.spec.discharge_kw = ev.spec.charge_kw;
        ev.spec.efficiency = uniform(params.efficiency);
        ev.spec.soc_min = params.soc_min;
        ev.spec.soc_max = params.soc_max;

        ev.session.start_soc = sample_truncated(params.start_soc, rng, "fleet.start_soc");
        do {
            ev.session.departure_soc = sample_truncated(params.departure_soc, rng, "fleet.departure_soc");
        } while (ev.session.departure_soc < ev.session.start_soc);

        const double ts = sample_truncated(params.start_time, rng, "fleet.start_time");
        double tf = 0.0;
        int tries = 0;
        do {
            tf = sample_truncated(params.finish_time, rng, "fleet.finish_time");
            if (++tries > kMaxRejections)
                throw ConfigError("fleet.finish_time: cannot draw a finish time after the start time");
        } while (tf <= ts);
        ev.session.start_h = params.anchor_hour + ts;
        ev.session.finish_h = params.anchor_hour + tf;
    }

    const auto n_comp = static_cast<std::size_t>(std::llround(params.compromised_fraction * params.size));
    std::vector<std::size_t> order(fleet.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i = 0; i < n_comp && i < order.size(); ++i) fleet[order[i]].compromised = true;
    return fleet;
}

double step_ev(const EvSpec& spec, double soc, double power_kw, double dt_h)
{
    if (power_kw < -spec.charge_kw - kPowerTol || power_kw > spec.discharge_kw + kPowerTol)
        throw PhysicsViolation("power " + std::to_string(power_kw) + " kW outside [-P_c, P_d]");
    double next = soc;
    if (power_kw < 0.0)
        next = soc - power_kw * spec.efficiency * dt_h / spec.capacity_kwh;
    else if (power_kw > 0.0)
        next = soc - power_kw / spec.efficiency * dt_h / spec.capacity_kwh;
    return std::clamp(next, spec.soc_min, spec.soc_max);
}

bool forced_charging_required(const EvSpec& spec, const EvSession& session, double soc, double now_h)
{
    if (soc >= session.departure_soc) return false;
    const double needed_h = (session.departure_soc - soc) * spec.capacity_kwh / (spec.efficiency * spec.charge_kw);
    return needed_h >= session.finish_h - now_h;
}

EvStatus apply_broadcast(const EvStatus& status, const EvSpec& spec, const StateLayout& layout, int state_id,
                         const ControlBroadcast& broadcast, Substream& rng)
{
    const double draw = rng.uniform();
    if (!status.connected || status.forced_charging || layout.is_special(state_id)) return status;
    const auto j = static_cast<Eigen::Index>(layout.block_of(state_id) - 1);

    EvStatus next = status;
    auto go = [&](Mode mode) {
        next.mode = mode;
        next.power_kw = mode == Mode::Charging ? -spec.charge_kw : mode == Mode::Discharging ? spec.discharge_kw : 0.0;
    };
    if (broadcast.cde > 0) {
        if (status.mode == Mode::Charging && draw < broadcast.u_s[j]) go(Mode::Idle);
        else if (status.mode == Mode::Idle && draw < broadcast.v_s[j]) go(Mode::Discharging);
    } else {
        if (status.mode == Mode::Idle && draw < broadcast.u_s[j]) go(Mode::Charging);
        else if (status.mode == Mode::Discharging && draw < broadcast.v_s[j]) go(Mode::Idle);
    }
    return next;
}

double quantize_soc(double soc, double granularity)
{
    const double n = std::floor(soc / granularity + 0.5 + 1e-9);
    return n * granularity;
}

Fleet::Fleet(std::vector<EvRecord> records, StateLayout layout)
    : records_(std::move(records)), statuses_(records_.size()), layout_(layout)
{
    for (std::size_t i = 0; i < records_.size(); ++i) {
        if (records_[i].id != static_cast<int>(i)) throw ContractViolation("fleet record ids must equal their position");
        records_[i].spec.validate();
        statuses_[i].compromised = records_[i].compromised;
    }
}

std::vector<int> Fleet::update_connections(double now_h)
{
    std::vector<int> arrivals;
    for (std::size_t i = 0; i < records_.size(); ++i) {
        const EvSession& s = records_[i].session;
        EvStatus& st = statuses_[i];
        const bool should = now_h >= s.start_h && now_h < s.finish_h;
        if (should && !st.connected) {
            st.connected = true;
            st.soc = s.start_soc;
            st.power_kw = 0.0;
            st.mode = Mode::Idle;
            st.forced_charging = false;
            arrivals.push_back(static_cast<int>(i));
        } else if (!should && st.connected) {
            st.connected = false;
            st.power_kw = 0.0;
            st.mode = Mode::Idle;
            st.forced_charging = false;
        }
    }
    return arrivals;
}

EvStatus refresh_forced(const EvRecord& ev, const EvStatus& status, double now_h)
{
    if (!status.connected || status.forced_charging) return status;
    if (!forced_charging_required(ev.spec, ev.session, status.soc, now_h)) return status;
    EvStatus next = status;
    next.forced_charging = true;
    next.mode = Mode::Charging;
    next.power_kw = -ev.spec.charge_kw;
    return next;
}

EvStatus advance_status(const EvRecord& ev, const EvStatus& status, double dt_h)
{
    if (!status.connected || status.power_kw == 0.0) return status;
    EvStatus next = status;
    next.soc = step_ev(ev.spec, status.soc, status.power_kw, dt_h);
    const bool hit_max = status.power_kw < 0.0 && next.soc >= ev.spec.soc_max - kSocEdgeTol;
    const bool hit_min = status.power_kw > 0.0 && next.soc <= ev.spec.soc_min + kSocEdgeTol;
    if (hit_max) next.soc = ev.spec.soc_max;
    if (hit_min) next.soc = ev.spec.soc_min;
    const bool target_met = status.forced_charging && next.soc >= ev.session.departure_soc;
    if (hit_max || hit_min || target_met) {
        next.power_kw = 0.0;
        next.mode = Mode::Idle;
        next.forced_charging = false;
    }
    return next;
}

void Fleet::update_forced(double now_h)
{
    for (std::size_t i = 0; i < records_.size(); ++i) statuses_[i] = refresh_forced(records_[i], statuses_[i], now_h);
}

int Fleet::state_id(int ev_id) const
{
    const auto& st = statuses_.at(static_cast<std::size_t>(ev_id));
    return essm::state_index(layout_, st);
}

void Fleet::apply_broadcast_all(const ControlBroadcast& broadcast, std::uint64_t seed, long step)
{
    if (broadcast.is_zero()) return;
    for (std::size_t i = 0; i < records_.size(); ++i) {
        EvStatus& st = statuses_[i];
        if (!st.connected || st.forced_charging) continue;
        Substream rng(seed, i, static_cast<std::uint64_t>(step));
        st = apply_broadcast(st, records_[i].spec, layout_, essm::state_index(layout_, st), broadcast, rng);
    }
}

void Fleet::physics_step(double dt_h)
{
    for (std::size_t i = 0; i < records_.size(); ++i) statuses_[i] = advance_status(records_[i], statuses_[i], dt_h);
}

Measurement Fleet::measure(int ev_id, long step) const
{
    const auto& st = statuses_.at(static_cast<std::size_t>(ev_id));
    return {ev_id, quantize_soc(st.soc), st.power_kw, step};
}

std::vector<Measurement> Fleet::collect_measurements(long step, int period_steps) const
{
    std::vector<Measurement> out;
    if (period_steps <= 0 || step % period_steps != 0) return out;
    for (std::size_t i = 0; i < records_.size(); ++i)
        if (statuses_[i].connected) out.push_back(measure(static_cast<int>(i), step));
    return out;
}

} // namespace v2gsim::fleet
