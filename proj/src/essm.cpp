#include "v2gsim/essm.hpp"

#include "v2gsim/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace v2gsim::essm {

namespace {

constexpr double kEdgeTol = fleet::kSocEdgeTol;
constexpr double kMassTol = 1e-9;

Eigen::Index idx(int state_id) { return static_cast<Eigen::Index>(state_id - 1); }

void check_dim(const StateLayout& layout, const Eigen::VectorXd& x)
{
    if (x.size() != layout.dim())
        throw ContractViolation("state vector length " + std::to_string(x.size()) + " does not match layout dimension " +
                                std::to_string(layout.dim()));
}

Eigen::RowVectorXd blockwise(const StateLayout& layout, double cm, double im, double dm, double smax, double fcs,
                             double smin)
{
    Eigen::RowVectorXd d(layout.dim());
    d.segment(0, layout.ns).setConstant(cm);
    d.segment(layout.ns, layout.ns).setConstant(im);
    d.segment(2 * layout.ns, layout.ns).setConstant(dm);
    d[idx(layout.ss_max())] = smax;
    d[idx(layout.fcs())] = fcs;
    d[idx(layout.ss_min())] = smin;
    return d;
}

} // namespace

int state_index(const StateLayout& layout, double soc, double power_kw, bool forced)
{
    if (forced) return layout.fcs();
    const Mode mode = mode_of_power(power_kw);
    if (mode == Mode::Idle) {
        if (soc >= layout.soc_max - kEdgeTol) return layout.ss_max();
        if (soc <= layout.soc_min + kEdgeTol) return layout.ss_min();
    }
    return layout.id_for(mode, layout.soc_block(soc));
}

int state_index(const StateLayout& layout, const fleet::EvStatus& status)
{
    if (!status.connected) throw NotIndexable("disconnected EV has no state index");
    return state_index(layout, fleet::quantize_soc(status.soc), status.power_kw, status.forced_charging);
}

int infer_state(const StateLayout& layout, const fleet::Measurement& m, const fleet::EvRecord& ev, double now_h,
                double granularity)
{
    const bool forced =
        m.power_kw < 0.0 && fleet::forced_charging_required(ev.spec, ev.session, m.soc - 0.5 * granularity, now_h);
    return state_index(layout, m.soc, m.power_kw, forced);
}

namespace {

// Calls f(soc, weight) on evenly spread points of the EV's SoC interval.
template <class F>
void over_interval(const ObservedEv& o, F&& f)
{
    constexpr int kPoints = 5;
    if (!(o.soc_halfwidth > 0.0)) {
        f(o.soc, 1.0);
        return;
    }
    for (int i = 0; i < kPoints; ++i)
        f(o.soc + o.soc_halfwidth * ((2.0 * i + 1.0) / kPoints - 1.0), 1.0 / kPoints);
}

} // namespace

Eigen::VectorXd fcs_window_fraction(const StateLayout& layout, std::span<const ObservedEv> evs, double now_h,
                                    double window_h)
{
    Eigen::VectorXd hits = Eigen::VectorXd::Zero(layout.dim());
    Eigen::VectorXd total = Eigen::VectorXd::Zero(layout.dim());
    for (const auto& o : evs) {
        const bool at_min = o.state_id == layout.ss_min();
        if (!at_min && (o.state_id < 1 || o.state_id > layout.operational())) continue;
        total[idx(o.state_id)] += 1.0;
        if (now_h + window_h >= o.ev->session.finish_h) continue;
        auto forced_later = [&](double later) {
            return fleet::forced_charging_required(o.ev->spec, o.ev->session, later, now_h + window_h);
        };
        // An EV parked at the lower limit got there by running into it.
        if (at_min) {
            if (forced_later(o.ev->spec.soc_min)) hits[idx(o.state_id)] += 1.0;
            continue;
        }
        over_interval(o, [&](double soc, double w) {
            if (forced_later(fleet::step_ev(o.ev->spec, soc, o.power_kw, window_h))) hits[idx(o.state_id)] += w;
        });
    }
    for (Eigen::Index i = 0; i < hits.size(); ++i)
        if (total[i] > 0.0) hits[i] /= total[i];
    return hits;
}

Eigen::VectorXd entrant_fcs_fraction(const StateLayout& layout, std::span<const ObservedEv> evs, double now_h,
                                     double window_h)
{
    Eigen::VectorXd frac = fcs_window_fraction(layout, evs, now_h, window_h);
    // Idle EVs of the block first; failing those, the block's EVs of the other mode.
    std::vector<ObservedEv> idle, other;
    for (const auto& o : evs) {
        if (o.state_id < 1 || o.state_id > layout.operational()) continue;
        const int j = layout.block_of(o.state_id);
        const auto& spec = o.ev->spec;
        switch (layout.mode_of(o.state_id)) {
        case Mode::Idle:
            idle.push_back({o.ev, layout.cm(j), o.soc, -spec.charge_kw, o.soc_halfwidth});
            idle.push_back({o.ev, layout.dm(j), o.soc, spec.discharge_kw, o.soc_halfwidth});
            break;
        case Mode::Charging: other.push_back({o.ev, layout.dm(j), o.soc, spec.discharge_kw, o.soc_halfwidth}); break;
        case Mode::Discharging: other.push_back({o.ev, layout.cm(j), o.soc, -spec.charge_kw, o.soc_halfwidth}); break;
        }
    }
    const Eigen::VectorXd from_idle = fcs_window_fraction(layout, idle, now_h, window_h);
    const Eigen::VectorXd from_other = fcs_window_fraction(layout, other, now_h, window_h);
    auto covers = [](const std::vector<ObservedEv>& v, int id) {
        return std::any_of(v.begin(), v.end(), [&](const ObservedEv& m) { return m.state_id == id; });
    };
    for (int j = 1; j <= layout.ns; ++j) {
        for (int id : {layout.cm(j), layout.dm(j)}) {
            if (covers(idle, id)) frac[idx(id)] = from_idle[idx(id)];
            else if (covers(other, id)) frac[idx(id)] = from_other[idx(id)];
        }
    }
    return frac;
}

Eigen::VectorXd fit_chain_rates(const Eigen::VectorXd& start, const Eigen::VectorXd& target, int steps)
{
    const Eigen::Index n = start.size() - 1;
    if (n < 0 || target.size() != start.size()) throw ContractViolation("chain start and target differ in length");
    if (steps < 1) throw ContractViolation("steps must be >= 1");
    Eigen::VectorXd rates = Eigen::VectorXd::Constant(n, std::numeric_limits<double>::quiet_NaN());

    // End mass of entry j given the fitted upstream rates and a trial rate r_j.
    auto end_mass = [&](Eigen::Index j, double r) {
        Eigen::VectorXd m = start.head(j + 1);
        for (int k = 0; k < steps; ++k) {
            double carry = 0.0;
            for (Eigen::Index i = 0; i <= j; ++i) {
                const double rate = i == j ? r : rates[i];
                const double out = std::isnan(rate) ? 0.0 : rate * m[i];
                m[i] += carry - out;
                carry = out;
            }
        }
        return m[j];
    };

    double upstream = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
        upstream += start[j];
        if (upstream <= 0.0) continue;
        const double hi_mass = end_mass(j, 0.0);
        const double lo_mass = end_mass(j, 1.0);
        const double want = target[j];
        if (want >= hi_mass) {
            rates[j] = 0.0;
            continue;
        }
        if (want <= lo_mass) {
            rates[j] = 1.0;
            continue;
        }
        double lo = 0.0, hi = 1.0;
        for (int it = 0; it < 60; ++it) {
            const double mid = 0.5 * (lo + hi);
            (end_mass(j, mid) > want ? lo : hi) = mid;
        }
        rates[j] = 0.5 * (lo + hi);
    }
    return rates;
}

namespace {

// Which EVs feed a fit: CM/DM at their own power, IM projected into both
// modes, or CM/DM projected into the opposite mode.
enum class Source { Own, Idle, Opposite };

DriftRates fit_projection(const StateLayout& layout, std::span<const ObservedEv> evs, double window_h,
                          int steps_per_window, double granularity, Source source)
{
    const int ns = layout.ns;
    // Chain position: CM block j at j-1, SS_MAX at ns; DM block j at ns-j, SS_MIN at ns.
    Eigen::VectorXd up_start = Eigen::VectorXd::Zero(ns + 1), up_end = Eigen::VectorXd::Zero(ns + 1);
    Eigen::VectorXd dn_start = Eigen::VectorXd::Zero(ns + 1), dn_end = Eigen::VectorXd::Zero(ns + 1);
    auto add = [&](const ObservedEv& o, Mode mode, double power_kw) {
        const int from = layout.block_of(o.state_id);
        over_interval(o, [&](double soc, double w) {
            const double later = fleet::step_ev(o.ev->spec, soc, power_kw, window_h);
            const int to = layout.soc_block(fleet::quantize_soc(later, granularity));
            if (mode == Mode::Charging) {
                // An EV that reaches its limit stops and lands in the special state.
                const bool at_limit = later >= o.ev->spec.soc_max - kEdgeTol;
                up_start[from - 1] += w;
                up_end[at_limit ? ns : std::max(to, from) - 1] += w;
            } else {
                const bool at_limit = later <= o.ev->spec.soc_min + kEdgeTol;
                dn_start[ns - from] += w;
                dn_end[at_limit ? ns : ns - std::min(to, from)] += w;
            }
        });
    };
    for (const auto& o : evs) {
        if (o.state_id < 1 || o.state_id > layout.operational()) continue;
        const Mode mode = layout.mode_of(o.state_id);
        const auto& spec = o.ev->spec;
        if (source == Source::Own && mode != Mode::Idle) {
            add(o, mode, o.power_kw);
        } else if (source == Source::Idle && mode == Mode::Idle) {
            add(o, Mode::Charging, -spec.charge_kw);
            add(o, Mode::Discharging, spec.discharge_kw);
        } else if (source == Source::Opposite && mode == Mode::Charging) {
            add(o, Mode::Discharging, spec.discharge_kw);
        } else if (source == Source::Opposite && mode == Mode::Discharging) {
            add(o, Mode::Charging, -spec.charge_kw);
        }
    }
    DriftRates r{fit_chain_rates(up_start, up_end, steps_per_window), Eigen::VectorXd(ns)};
    const Eigen::VectorXd down_chain = fit_chain_rates(dn_start, dn_end, steps_per_window);
    for (int j = 1; j <= ns; ++j) r.down[j - 1] = down_chain[ns - j];
    return r;
}

} // namespace

DriftRates projected_drift_rates(const StateLayout& layout, std::span<const ObservedEv> evs, double window_h,
                                 int steps_per_window, double granularity)
{
    return fit_projection(layout, evs, window_h, steps_per_window, granularity, Source::Own);
}

DriftRates entrant_drift_rates(const StateLayout& layout, std::span<const ObservedEv> evs, double window_h,
                               int steps_per_window, double granularity)
{
    DriftRates r = fit_projection(layout, evs, window_h, steps_per_window, granularity, Source::Idle);
    // Without idle EVs in a block, the next to arrive are those switched through IM from the other mode.
    const DriftRates via = fit_projection(layout, evs, window_h, steps_per_window, granularity, Source::Opposite);
    for (int j = 0; j < layout.ns; ++j) {
        if (std::isnan(r.up[j])) r.up[j] = via.up[j];
        if (std::isnan(r.down[j])) r.down[j] = via.down[j];
    }
    return r;
}

StateVector build_state_vector(const StateLayout& layout, std::span<const int> state_ids)
{
    StateVector sv{Eigen::VectorXd::Zero(layout.dim()), static_cast<int>(state_ids.size())};
    for (int id : state_ids) {
        if (id < 1 || id > layout.dim()) throw ContractViolation("state id " + std::to_string(id) + " out of range");
        sv.x[idx(id)] += 1.0;
    }
    if (sv.connected > 0) sv.x /= static_cast<double>(sv.connected);
    return sv;
}

FleetStats fleet_stats(std::span<const fleet::EvSpec> specs)
{
    FleetStats s;
    s.count = static_cast<int>(specs.size());
    if (specs.empty()) return s;
    double pc = 0.0, pd = 0.0, eta = 0.0, q = 0.0;
    for (const auto& sp : specs) {
        pc += sp.charge_kw;
        pd += sp.discharge_kw;
        eta += sp.efficiency;
        q += sp.capacity_kwh;
    }
    const double n = static_cast<double>(specs.size());
    s.p_ave_kw = pc / n;
    s.p_ave_discharge_kw = pd / n;
    s.mean_efficiency = eta / n;
    s.mean_capacity_kwh = q / n;
    return s;
}

double p_ave(std::span<const fleet::EvSpec> specs)
{
    if (specs.empty()) throw UndefinedAverage("average charging power of an empty fleet is undefined");
    return fleet_stats(specs).p_ave_kw;
}

double charge_advance_probability(const StateLayout& layout, const FleetStats& stats, double step_h)
{
    if (stats.count == 0) return 0.0;
    const double dsoc = stats.p_ave_kw * stats.mean_efficiency * step_h / stats.mean_capacity_kwh;
    return std::min(1.0, dsoc / layout.block_width());
}

double discharge_advance_probability(const StateLayout& layout, const FleetStats& stats, double step_h)
{
    if (stats.count == 0) return 0.0;
    const double dsoc = stats.p_ave_discharge_kw * step_h / (stats.mean_efficiency * stats.mean_capacity_kwh);
    return std::min(1.0, dsoc / layout.block_width());
}

namespace {

double window_to_step(double f, int steps_per_window)
{
    f = std::clamp(f, 0.0, 1.0);
    return f >= 1.0 ? 1.0 : 1.0 - std::pow(1.0 - f, 1.0 / steps_per_window);
}

TransitionMatrix assemble(const StateLayout& layout, const Eigen::VectorXd& fcs_window_fraction,
                          const Eigen::VectorXd& up, const Eigen::VectorXd& down, int steps_per_window)
{
    const int ns = layout.ns;
    TransitionMatrix a = TransitionMatrix::Identity(layout.dim(), layout.dim());
    const auto fcs = idx(layout.fcs());
    auto q_of = [&](int id) { return window_to_step(fcs_window_fraction[idx(id)], steps_per_window); };

    for (int j = 1; j <= ns; ++j) {
        // CM column: drift up one interval, the top interval drains into SS_MAX.
        {
            const int id = layout.cm(j);
            const double q = q_of(id);
            const double pc = up[j - 1];
            const int next = j < ns ? layout.cm(j + 1) : layout.ss_max();
            a(idx(id), idx(id)) = (1.0 - pc) * (1.0 - q);
            a(idx(next), idx(id)) += pc * (1.0 - q);
            a(fcs, idx(id)) += q;
        }
        {
            const int id = layout.im(j);
            const double q = q_of(id);
            a(idx(id), idx(id)) = 1.0 - q;
            a(fcs, idx(id)) += q;
        }
        {
            const int id = layout.dm(j);
            const double q = q_of(id);
            const double pd = down[j - 1];
            const int next = j > 1 ? layout.dm(j - 1) : layout.ss_min();
            a(idx(id), idx(id)) = (1.0 - pd) * (1.0 - q);
            a(idx(next), idx(id)) += pd * (1.0 - q);
            a(fcs, idx(id)) += q;
        }
    }
    const auto ss_min = idx(layout.ss_min());
    const double q = window_to_step(fcs_window_fraction[ss_min], steps_per_window);
    a(ss_min, ss_min) = 1.0 - q;
    a(fcs, ss_min) += q;
    return a;
}

void check_window(double step_h, int steps_per_window)
{
    if (!(step_h > 0.0)) throw ContractViolation("transition step must be positive");
    if (steps_per_window < 1) throw ContractViolation("steps_per_window must be >= 1");
}

} // namespace

TransitionMatrix build_transition_matrix(const StateLayout& layout, const FleetStats& stats, double step_h,
                                         const Eigen::VectorXd& fcs_window_fraction, int steps_per_window)
{
    check_window(step_h, steps_per_window);
    check_dim(layout, fcs_window_fraction);
    const Eigen::VectorXd up = Eigen::VectorXd::Constant(layout.ns, charge_advance_probability(layout, stats, step_h));
    const Eigen::VectorXd down =
        Eigen::VectorXd::Constant(layout.ns, discharge_advance_probability(layout, stats, step_h));
    return assemble(layout, fcs_window_fraction, up, down, steps_per_window);
}

TransitionMatrix build_transition_matrix(const StateLayout& layout, const FleetStats& stats, double step_h,
                                         const Eigen::VectorXd& fcs_window_fraction, const DriftRates& rates,
                                         int steps_per_window)
{
    check_window(step_h, steps_per_window);
    check_dim(layout, fcs_window_fraction);
    if (rates.up.size() != layout.ns || rates.down.size() != layout.ns)
        throw ContractViolation("drift rates must have one entry per SoC block");
    const double pc = charge_advance_probability(layout, stats, step_h);
    const double pd = discharge_advance_probability(layout, stats, step_h);
    Eigen::VectorXd up(layout.ns), down(layout.ns);
    for (int j = 1; j <= layout.ns; ++j) {
        up[j - 1] = std::isnan(rates.up[j - 1]) ? pc : rates.up[j - 1];
        down[j - 1] = std::isnan(rates.down[j - 1]) ? pd : rates.down[j - 1];
    }
    return assemble(layout, fcs_window_fraction, up, down, steps_per_window);
}

const char* to_string(DriftModel d) noexcept { return d == DriftModel::Average ? "average" : "projected"; }

TransitionMatrix build_transition_matrix(const StateLayout& layout, std::span<const ObservedEv> evs,
                                         const FleetStats& stats, double step_h, int steps_per_window, double now_h,
                                         DriftModel drift)
{
    const double window_h = step_h * steps_per_window;
    Eigen::VectorXd fcs = fcs_window_fraction(layout, evs, now_h, window_h);
    if (drift == DriftModel::Average) {
        // Special states stay absorbing within the window.
        fcs.tail(3).setZero();
        return build_transition_matrix(layout, stats, step_h, fcs, steps_per_window);
    }
    return build_transition_matrix(layout, stats, step_h, fcs,
                                   projected_drift_rates(layout, evs, window_h, steps_per_window), steps_per_window);
}

Eigen::RowVectorXd d_vector(const StateLayout& layout) { return blockwise(layout, -1, 0, 1, 0, -1, 0); }
Eigen::RowVectorXd d_upper(const StateLayout& layout) { return blockwise(layout, 0, 1, 2, 0, 0, 2); }
Eigen::RowVectorXd d_lower(const StateLayout& layout) { return blockwise(layout, 2, 1, 0, 2, 0, 0); }
Eigen::RowVectorXd d_dispatchable(const StateLayout& layout) { return blockwise(layout, -1, 0, 1, 0, 0, 0); }

double aggregated_power(const StateLayout& layout, const Eigen::VectorXd& x, double p_ave_kw, int n)
{
    check_dim(layout, x);
    return p_ave_kw * n * d_vector(layout).dot(x);
}

std::pair<double, double> flexibility_bounds(const StateLayout& layout, const Eigen::VectorXd& x, double p_ave_kw,
                                             int n)
{
    check_dim(layout, x);
    return {p_ave_kw * n * d_upper(layout).dot(x), p_ave_kw * n * d_lower(layout).dot(x)};
}

FlexibilityReport report(const StateLayout& layout, const StateVector& sv, double p_ave_kw)
{
    FlexibilityReport r;
    r.p_ave_kw = p_ave_kw;
    r.connected = sv.connected;
    r.y_kw = aggregated_power(layout, sv.x, p_ave_kw, sv.connected);
    std::tie(r.y_u_kw, r.y_l_kw) = flexibility_bounds(layout, sv.x, p_ave_kw, sv.connected);
    return r;
}

Eigen::VectorXd predict(const StateLayout& layout, const Eigen::VectorXd& x, const TransitionMatrix& a,
                        const FeedbackSignal& fb)
{
    check_dim(layout, x);
    const int ns = layout.ns;
    if (fb.u.size() != ns || fb.v.size() != ns) throw ContractViolation("feedback vectors must have length n_s");
    Eigen::VectorXd next = a * x;
    next.segment(0, ns) -= fb.u;
    next.segment(ns, ns) += fb.u - fb.v;
    next.segment(2 * ns, ns) += fb.v;

    const double mass_before = x.sum();
    if (next.minCoeff() < -kMassTol) throw FeedbackInfeasible("feedback drives a state occupancy negative");
    next = next.cwiseMax(0.0);
    if (mass_before == 0.0) return next;
    const double drift = next.sum() - mass_before;
    if (std::abs(drift) > kMassTol) throw FeedbackInfeasible("prediction does not conserve mass");
    if (drift != 0.0) next *= mass_before / next.sum();
    return next;
}

SplitState predict(const StateLayout& layout, const SplitState& x, const TransitionMatrix& a_settled,
                   const TransitionMatrix& a_moved, const FeedbackSignal& fb)
{
    check_dim(layout, x.settled);
    check_dim(layout, x.moved);
    const int ns = layout.ns;
    if (fb.u.size() != ns || fb.v.size() != ns) throw ContractViolation("feedback vectors must have length n_s");
    SplitState now = x;
    const Eigen::VectorXd total = now.total();

    Eigen::VectorXd out = Eigen::VectorXd::Zero(layout.dim());
    Eigen::VectorXd in = Eigen::VectorXd::Zero(layout.dim());
    auto shift = [&](int from, int to, double mass) {
        out[idx(from)] += mass;
        in[idx(to)] += mass;
    };
    for (int j = 1; j <= ns; ++j) {
        const double u = fb.u[j - 1];
        const double v = fb.v[j - 1];
        if (u > 0.0) shift(layout.cm(j), layout.im(j), u);
        if (u < 0.0) shift(layout.im(j), layout.cm(j), -u);
        if (v > 0.0) shift(layout.im(j), layout.dm(j), v);
        if (v < 0.0) shift(layout.dm(j), layout.im(j), -v);
    }
    for (Eigen::Index i = 0; i < out.size(); ++i) {
        if (out[i] == 0.0) continue;
        if (out[i] > total[i] + kMassTol) throw FeedbackInfeasible("feedback drives a state occupancy negative");
        const double keep = total[i] > 0.0 ? std::max(0.0, 1.0 - out[i] / total[i]) : 0.0;
        now.settled[i] *= keep;
        now.moved[i] *= keep;
    }
    now.moved += in;
    return {a_settled * now.settled, a_moved * now.moved};
}

FeedbackSignal make_feedback(const StateLayout& layout, const Eigen::VectorXd& x, double target_kw, double p_ave_kw,
                             int n)
{
    check_dim(layout, x);
    const int ns = layout.ns;
    FeedbackSignal fb = FeedbackSignal::zero(ns);
    if (n <= 0 || !(p_ave_kw > 0.0)) {
        fb.out_of_range = target_kw != 0.0;
        return fb;
    }
    const double current = p_ave_kw * n * d_dispatchable(layout).dot(x);
    double rem = (target_kw - current) / (p_ave_kw * n);
    if (std::abs(rem) < 1e-12) return fb;

    auto take = [&](double occupancy) {
        const double t = std::min(std::abs(rem), std::max(occupancy, 0.0));
        rem = rem > 0 ? rem - t : rem + t;
        return t;
    };
    if (rem > 0) {
        // Raise output: stop the highest-SoC chargers first, then start dischargers.
        for (int j = ns; j >= 1 && rem > 0; --j) fb.u[j - 1] = take(x[idx(layout.cm(j))]);
        for (int j = ns; j >= 1 && rem > 0; --j) fb.v[j - 1] = take(x[idx(layout.im(j))]);
    } else {
        // Lower output: stop the lowest-SoC dischargers first, then start chargers.
        for (int j = 1; j <= ns && rem < 0; ++j) fb.v[j - 1] = -take(x[idx(layout.dm(j))]);
        for (int j = 1; j <= ns && rem < 0; ++j) fb.u[j - 1] = -take(x[idx(layout.im(j))]);
    }
    fb.out_of_range = std::abs(rem) > 1e-12;
    return fb;
}

ControlBroadcast to_broadcast(const StateLayout& layout, const FeedbackSignal& fb, const Eigen::VectorXd& x)
{
    check_dim(layout, x);
    const int ns = layout.ns;
    if (fb.u.size() != ns || fb.v.size() != ns) throw ContractViolation("feedback vectors must have length n_s");
    const bool pos = (fb.u.array() > 0).any() || (fb.v.array() > 0).any();
    const bool neg = (fb.u.array() < 0).any() || (fb.v.array() < 0).any();
    if (pos && neg) throw ContractViolation("feedback mixes both switching directions");

    ControlBroadcast bc = ControlBroadcast::none(ns);
    bc.cde = neg ? -1 : +1;
    auto ratio = [](double shift, double occupancy) {
        if (occupancy <= 0.0) return 0.0;
        return std::clamp(std::abs(shift) / occupancy, 0.0, 1.0);
    };
    for (int j = 1; j <= ns; ++j) {
        const double u_src = bc.cde > 0 ? x[idx(layout.cm(j))] : x[idx(layout.im(j))];
        const double v_src = bc.cde > 0 ? x[idx(layout.im(j))] : x[idx(layout.dm(j))];
        bc.u_s[j - 1] = ratio(fb.u[j - 1], u_src);
        bc.v_s[j - 1] = ratio(fb.v[j - 1], v_src);
    }
    return bc;
}

FeedbackSignal feedback_from_broadcast(const StateLayout& layout, const ControlBroadcast& bc,
                                       const Eigen::VectorXd& x)
{
    check_dim(layout, x);
    const int ns = layout.ns;
    FeedbackSignal fb = FeedbackSignal::zero(ns);
    for (int j = 1; j <= ns; ++j) {
        if (bc.cde > 0) {
            fb.u[j - 1] = bc.u_s[j - 1] * x[idx(layout.cm(j))];
            fb.v[j - 1] = bc.v_s[j - 1] * x[idx(layout.im(j))];
        } else {
            fb.u[j - 1] = -bc.u_s[j - 1] * x[idx(layout.im(j))];
            fb.v[j - 1] = -bc.v_s[j - 1] * x[idx(layout.dm(j))];
        }
    }
    return fb;
}

} // namespace v2gsim::essm
