#pragma once

#include "v2gsim/rng.hpp"
#include "v2gsim/state.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace v2gsim::fleet {

/// Reporting granularity of SoC (1 %).
inline constexpr double kSocGranularity = 0.01;
/// SoC closer than this to a limit counts as at the limit.
inline constexpr double kSocEdgeTol = 1e-9;

struct EvSpec {
    double capacity_kwh = 30.0;
    double charge_kw = 7.0;    // magnitude
    double discharge_kw = 7.0; // magnitude
    double efficiency = 0.9;
    double soc_min = 0.05;
    double soc_max = 0.95;

    void validate() const;
};

/// Session directives. Times are absolute simulation clock hours.
struct EvSession {
    double start_h = 0.0;
    double finish_h = 0.0;
    double start_soc = 0.2;
    double departure_soc = 0.85;
};

struct EvStatus {
    double soc = 0.0;
    double power_kw = 0.0;
    Mode mode = Mode::Idle;
    bool connected = false;
    bool compromised = false;
    bool forced_charging = false;
};

struct Measurement {
    int ev_id = -1;
    double soc = 0.0; // multiple of kSocGranularity
    double power_kw = 0.0;
    long step = 0;
};

struct TruncatedNormal {
    double mean = 0.0;
    double stddev = 1.0;
    double lo = 0.0;
    double hi = 1.0;
};

struct UniformRange {
    double lo = 0.0;
    double hi = 1.0;
};

/// Population descriptors. Session times are hours relative to `anchor_hour`.
struct FleetParams {
    TruncatedNormal start_soc{0.2, 0.05, 0.2, 0.4};
    TruncatedNormal departure_soc{0.85, 0.03, 0.75, 0.95};
    TruncatedNormal start_time{-6.5, 3.4, 0.0, 5.5};
    TruncatedNormal finish_time{8.9, 3.4, 0.0, 20.9};
    UniformRange power_kw{6.0, 8.0};
    UniformRange efficiency{0.88, 0.95};
    UniformRange capacity_kwh{20.0, 40.0};
    double soc_min = 0.05;
    double soc_max = 0.95;
    double anchor_hour = 18.0;
    int size = 10000;
    double compromised_fraction = 0.3;

    void validate() const;
};

struct EvRecord {
    int id = 0;
    EvSpec spec;
    EvSession session;
    bool compromised = false;
};

std::vector<EvRecord> sample_fleet(const FleetParams& params, std::uint64_t seed);

/// One step of the SoC recursion. Power is signed (negative charges).
/// The result is clamped to [soc_min, soc_max].
double step_ev(const EvSpec& spec, double soc, double power_kw, double dt_h);

/// True when the energy still owed to the departure target needs at least the
/// remaining connection time at full charging power.
bool forced_charging_required(const EvSpec& spec, const EvSession& session, double soc, double now_h);

/// Applies a switching broadcast to one EV that sits at `state_id` (its true index).
EvStatus apply_broadcast(const EvStatus& status, const EvSpec& spec, const StateLayout& layout, int state_id,
                         const ControlBroadcast& broadcast, Substream& rng);

/// Arms forced charging when the departure target requires it.
EvStatus refresh_forced(const EvRecord& ev, const EvStatus& status, double now_h);

/// One physics step of a connected EV, including the stop conditions at the
/// SoC limits and at the departure target of a forced session.
EvStatus advance_status(const EvRecord& ev, const EvStatus& status, double dt_h);

/// Nearest multiple of kSocGranularity, ties rounded up.
double quantize_soc(double soc, double granularity = kSocGranularity);

/// Live population: records plus their physical status.
class Fleet {
public:
    Fleet(std::vector<EvRecord> records, StateLayout layout);

    const std::vector<EvRecord>& records() const noexcept { return records_; }
    const std::vector<EvStatus>& statuses() const noexcept { return statuses_; }
    const StateLayout& layout() const noexcept { return layout_; }
    std::size_t size() const noexcept { return records_.size(); }

    /// Connects arrivals and drops departures at clock `now_h`. Returns ids of new arrivals.
    std::vector<int> update_connections(double now_h);

    /// Flags EVs that must start charging now to meet their departure target.
    void update_forced(double now_h);

    /// True state index of a connected EV.
    int state_id(int ev_id) const;

    /// Every connected, non-forced EV draws from its own substream (seed, id, step).
    void apply_broadcast_all(const ControlBroadcast& broadcast, std::uint64_t seed, long step);

    /// Advances every connected EV by dt hours.
    void physics_step(double dt_h);

    /// One measurement per connected EV, only when step is a multiple of period_steps.
    std::vector<Measurement> collect_measurements(long step, int period_steps) const;
    Measurement measure(int ev_id, long step) const;

    /// Test hook: overwrite an EV's status.
    void set_status(int ev_id, const EvStatus& status) { statuses_.at(static_cast<std::size_t>(ev_id)) = status; }

private:
    std::vector<EvRecord> records_;
    std::vector<EvStatus> statuses_;
    StateLayout layout_;
};

} // namespace v2gsim::fleet
