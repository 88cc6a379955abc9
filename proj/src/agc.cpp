#include "v2gsim/agc.hpp"

#include "v2gsim/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace v2gsim::agc {

namespace {

constexpr double sign_of(int area) { return area == 0 ? 1.0 : -1.0; }

} // namespace

void AgcParams::validate() const
{
    for (const auto& a : area) {
        if (!(a.h > 0.0)) throw ConfigError("agc.h: must be positive");
        if (!(a.tg > 0.0) || !(a.tt > 0.0)) throw ConfigError("agc.tg/tt: time constants must be positive");
        if (!(a.r > 0.0)) throw ConfigError("agc.r: droop must be positive");
    }
    if (!(base_mva > 0.0)) throw ConfigError("agc.base_mva: must be positive");
}

AgcParams reference_params()
{
    AgcParams p;
    p.pm_max = headroom(200.0 / p.base_mva, 0.475);
    return p;
}

std::array<double, 9> AgcState::pack() const
{
    return {df[0], df[1], pg[0], pg[1], pm[0], pm[1], ace_int[0], ace_int[1], ptie};
}

AgcState AgcState::unpack(const std::array<double, 9>& v)
{
    AgcState s;
    s.df = {v[0], v[1]};
    s.pg = {v[2], v[3]};
    s.pm = {v[4], v[5]};
    s.ace_int = {v[6], v[7]};
    s.ptie = v[8];
    return s;
}

double ace(const AgcParams& p, const AgcState& s, int area)
{
    return p.area[static_cast<std::size_t>(area)].b * s.df[static_cast<std::size_t>(area)] + sign_of(area) * s.ptie;
}

AgcState derivatives(const AgcState& s, const AgcParams& p, const AgcInputs& in)
{
    AgcState d;
    for (int i = 0; i < 2; ++i) {
        const auto k = static_cast<std::size_t>(i);
        const AreaParams& a = p.area[k];
        const double ev = i == 0 ? in.ev : 0.0;
        d.df[k] = (s.pm[k] - in.load[k] - sign_of(i) * s.ptie + ev - a.d * s.df[k]) / (2.0 * a.h);
        const double pc = -a.ka * s.ace_int[k];
        d.pg[k] = (pc - s.df[k] / a.r - s.pg[k]) / a.tg;
        d.pm[k] = (s.pg[k] - s.pm[k]) / a.tt;
        // Turbine at its limit cannot pick up more load.
        if (s.pm[k] >= p.pm_max && d.pm[k] > 0.0) d.pm[k] = 0.0;
        d.ace_int[k] = ace(p, s, i);
    }
    d.ptie = 2.0 * std::numbers::pi * p.kt * (s.df[0] - s.df[1]);
    return d;
}

std::vector<AgcSample> integrate(const AgcParams& p, const InputSchedule& inputs, double dt_s, double duration_s,
                                 int record_every, AgcState initial)
{
    p.validate();
    if (!(dt_s > 0.0) || dt_s > 0.02 + 1e-12) throw ContractViolation("integration step must lie in (0, 0.02] s");
    if (!(duration_s >= 0.0)) throw ContractViolation("duration must be nonnegative");
    if (record_every < 1) throw ContractViolation("record_every must be >= 1");

    using Vec = std::array<double, 9>;
    // Inputs are sampled at the start of each step and held, so schedule edges fall on step boundaries.
    auto f = [&](const AgcInputs& u, const Vec& y) { return derivatives(AgcState::unpack(y), p, u).pack(); };
    auto axpy = [](const Vec& y, double h, const Vec& k) {
        Vec out;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = y[i] + h * k[i];
        return out;
    };
    auto clamp_state = [&](Vec& y) {
        y[4] = std::min(y[4], p.pm_max);
        y[5] = std::min(y[5], p.pm_max);
    };

    const long steps = std::lround(duration_s / dt_s);
    std::vector<AgcSample> out;
    out.reserve(static_cast<std::size_t>(steps / record_every + 2));
    Vec y = initial.pack();
    out.push_back({0.0, initial, inputs(0.0)});
    for (long n = 0; n < steps; ++n) {
        const double t = n * dt_s;
        const AgcInputs u = inputs(t);
        const Vec k1 = f(u, y);
        const Vec k2 = f(u, axpy(y, 0.5 * dt_s, k1));
        const Vec k3 = f(u, axpy(y, 0.5 * dt_s, k2));
        const Vec k4 = f(u, axpy(y, dt_s, k3));
        for (std::size_t i = 0; i < y.size(); ++i) y[i] += dt_s / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        clamp_state(y);
        for (double v : y)
            if (!std::isfinite(v)) throw DivergenceError("AGC state became non-finite", n + 1);
        if ((n + 1) % record_every == 0 || n + 1 == steps) {
            const double tn = (n + 1) * dt_s;
            out.push_back({tn, AgcState::unpack(y), inputs(tn)});
        }
    }
    return out;
}

AgcRunReport scenario_2200(const AgcParams& p, double flexibility_true_mw, double dispatched_mw, double delivered_mw,
                           const ScenarioOptions& opt)
{
    if (delivered_mw > flexibility_true_mw + 1e-9)
        throw ContractViolation("delivered power exceeds the fleet's true flexibility");
    if (delivered_mw < 0.0) throw ContractViolation("delivered power must be nonnegative");

    const double load_pu = opt.load_step_mw / p.base_mva;
    const double ev_pu = delivered_mw / p.base_mva;
    const double delay = opt.ev_delay_s;
    // Steps land at t >= 0 (load) and t >= delay (EV).
    InputSchedule schedule = [=](double t) {
        AgcInputs in;
        if (t >= 0.0) in.load[0] = load_pu;
        if (t >= delay - 1e-12) in.ev = ev_pu;
        return in;
    };

    AgcRunReport rep;
    rep.dispatched_mw = dispatched_mw;
    rep.delivered_mw = delivered_mw;
    rep.shortfall_mw = dispatched_mw - delivered_mw;
    const double gen_headroom_mw = std::isfinite(p.pm_max) ? 2.0 * p.pm_max * p.base_mva : 0.0;
    rep.net_imbalance_mw = opt.load_step_mw - delivered_mw - gen_headroom_mw;
    rep.series = integrate(p, schedule, opt.dt_s, opt.duration_s, opt.record_every);

    rep.tie_min = rep.tie_max = 0.0;
    for (const auto& s : rep.series) {
        rep.peak_df1 = std::max(rep.peak_df1, std::abs(s.state.df[0]));
        rep.peak_df2 = std::max(rep.peak_df2, std::abs(s.state.df[1]));
        rep.tie_min = std::min(rep.tie_min, s.state.ptie);
        rep.tie_max = std::max(rep.tie_max, s.state.ptie);
    }
    rep.tie_final = rep.series.back().state.ptie;
    return rep;
}

} // namespace v2gsim::agc
