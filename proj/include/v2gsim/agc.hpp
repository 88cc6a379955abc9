#pragma once

#include <array>
#include <functional>
#include <limits>
#include <vector>

namespace v2gsim::agc {

struct AreaParams {
    double h = 10.0;  // inertia constant (s)
    double d = 0.6;   // load damping (p.u./p.u. frequency)
    double r = 0.05;  // droop (p.u. frequency / p.u. power)
    double tg = 0.2;  // governor time constant (s)
    double tt = 0.5;  // turbine time constant (s)
    double ka = 0.3;  // integral gain on ACE
    double b = 20.6;  // frequency bias
};

struct AgcParams {
    std::array<AreaParams, 2> area{AreaParams{}, AreaParams{8.0, 0.9, 0.0625, 0.3, 0.6, 0.3, 16.9}};
    double kt = 2.0;          // tie-line synchronizing coefficient (p.u.)
    double base_mva = 400.0;
    /// Upper limit on each turbine's mechanical power deviation (p.u.); +inf disables it.
    double pm_max = std::numeric_limits<double>::infinity();

    void validate() const;
};

/// Headroom of a unit running at `base_load` p.u. with maximum output `max_output` p.u.
inline double headroom(double max_output, double base_load) { return max_output - base_load; }

/// Reference two-area values with the generator cap of the 22:00 event.
/// (200 MW units on 400 MVA carrying 0.475 p.u. base load).
AgcParams reference_params();

struct AgcState {
    std::array<double, 2> df{};   // frequency deviation (p.u.)
    std::array<double, 2> pg{};   // governor output deviation (p.u.)
    std::array<double, 2> pm{};   // mechanical power deviation (p.u.)
    std::array<double, 2> ace_int{};
    double ptie = 0.0;            // positive: Area 1 exports to Area 2

    std::array<double, 9> pack() const;
    static AgcState unpack(const std::array<double, 9>& v);
};

struct AgcInputs {
    std::array<double, 2> load{}; // ΔP_L per area (p.u.)
    double ev = 0.0;              // EV injection into Area 1 (p.u.)
};

using InputSchedule = std::function<AgcInputs(double t_s)>;

double ace(const AgcParams& p, const AgcState& s, int area);

AgcState derivatives(const AgcState& s, const AgcParams& p, const AgcInputs& in);

struct AgcSample {
    double t = 0.0;
    AgcState state;
    AgcInputs inputs;
};

/// Fixed-step classical RK4. Samples every `record_every` steps (plus the
/// final state). Throws DivergenceError on a non-finite state.
std::vector<AgcSample> integrate(const AgcParams& p, const InputSchedule& inputs, double dt_s, double duration_s,
                                 int record_every = 1, AgcState initial = {});

struct ScenarioOptions {
    double load_step_mw = 50.0;
    double ev_delay_s = 0.1;
    double dt_s = 0.01;
    double duration_s = 60.0;
    int record_every = 10;
};

struct AgcRunReport {
    double dispatched_mw = 0.0;
    double delivered_mw = 0.0;
    double shortfall_mw = 0.0;       // dispatched - delivered
    double net_imbalance_mw = 0.0;   // load step - delivered - generator headroom
    double peak_df1 = 0.0;           // max |Δf_1| (p.u.)
    double peak_df2 = 0.0;
    double tie_min = 0.0;
    double tie_max = 0.0;
    double tie_final = 0.0;
    std::vector<AgcSample> series;
};

/// Area-1 load step with the EV fleet answering `delay` later at the delivered level.
AgcRunReport scenario_2200(const AgcParams& p, double flexibility_true_mw, double dispatched_mw, double delivered_mw,
                           const ScenarioOptions& opt = {});

} // namespace v2gsim::agc
