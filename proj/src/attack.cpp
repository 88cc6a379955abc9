#include "v2gsim/attack.hpp"

#include "v2gsim/errors.hpp"
#include "v2gsim/optkit.hpp"
#include "v2gsim/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace v2gsim::attack {

namespace {

constexpr double kMassFloor = 1e-15;
constexpr std::uint64_t kReplicaSalt = 0x5ad0f1ee7c3b9a21ULL;

Eigen::Index idx(int id) { return static_cast<Eigen::Index>(id - 1); }

/// Best E for one period given the linear reward c on E x.
Eigen::MatrixXd solve_period(const Eigen::VectorXd& x, const Eigen::RowVectorXd& c, const Mask& mask,
                             const PlanConfig& cfg)
{
    const auto dim = x.size();
    Eigen::MatrixXd e = Eigen::MatrixXd::Identity(dim, dim);

    struct Arc {
        Eigen::Index from, to;
    };
    std::vector<Arc> arcs;
    std::vector<Eigen::Index> sources;
    std::vector<int> touched_pos(static_cast<std::size_t>(dim), -1);
    std::vector<Eigen::Index> touched;
    auto touch = [&](Eigen::Index n) {
        if (touched_pos[static_cast<std::size_t>(n)] < 0) {
            touched_pos[static_cast<std::size_t>(n)] = static_cast<int>(touched.size());
            touched.push_back(n);
        }
    };
    for (Eigen::Index m = 0; m < dim; ++m) {
        if (x[m] <= kMassFloor) continue;
        bool movable = false;
        for (Eigen::Index n = 0; n < dim; ++n) movable = movable || (n != m && mask(n, m));
        if (!movable) continue;
        sources.push_back(m);
        touch(m);
        for (Eigen::Index n = 0; n < dim; ++n) {
            if (n == m || mask(n, m)) {
                arcs.push_back({m, n});
                touch(n);
            }
        }
    }
    if (sources.empty()) return e;

    const auto n_arcs = static_cast<int>(arcs.size());
    const auto n_src = static_cast<int>(sources.size());
    const auto n_touch = static_cast<int>(touched.size());
    const bool l1 = cfg.norm == detector::Norm::L1;
    const int n_vars = n_arcs + 2 * n_touch + (l1 ? 1 : 0);
    const int n_rows = n_src + n_touch + (l1 ? 1 : 0);

    optkit::LinearProgram lp;
    lp.c = Eigen::VectorXd::Zero(n_vars);
    lp.a_eq = Eigen::MatrixXd::Zero(n_rows, n_vars);
    lp.b_eq = Eigen::VectorXd::Zero(n_rows);
    lp.lower = Eigen::VectorXd::Zero(n_vars);
    lp.upper = Eigen::VectorXd::Constant(n_vars, optkit::kInf);

    std::vector<int> src_row(static_cast<std::size_t>(dim), -1);
    for (int s = 0; s < n_src; ++s) {
        src_row[static_cast<std::size_t>(sources[static_cast<std::size_t>(s)])] = s;
        lp.b_eq[s] = x[sources[static_cast<std::size_t>(s)]];
    }
    // Deviation rows: inflow(n) - p_n + q_n = x_n, with untouched sources'
    // fixed self-flow moved to the right-hand side.
    for (int t = 0; t < n_touch; ++t) {
        const Eigen::Index n = touched[static_cast<std::size_t>(t)];
        const int row = n_src + t;
        lp.b_eq[row] = x[n] - (src_row[static_cast<std::size_t>(n)] < 0 ? x[n] : 0.0);
        lp.a_eq(row, n_arcs + 2 * t) = -1.0;
        lp.a_eq(row, n_arcs + 2 * t + 1) = 1.0;
        if (!l1) {
            lp.upper[n_arcs + 2 * t] = cfg.epsilon;
            lp.upper[n_arcs + 2 * t + 1] = cfg.epsilon;
        }
    }
    for (int k = 0; k < n_arcs; ++k) {
        const Arc& a = arcs[static_cast<std::size_t>(k)];
        lp.c[k] = c[a.to];
        lp.a_eq(src_row[static_cast<std::size_t>(a.from)], k) = 1.0;
        lp.a_eq(n_src + touched_pos[static_cast<std::size_t>(a.to)], k) = 1.0;
    }
    if (l1) {
        const int row = n_rows - 1;
        for (int v = n_arcs; v < n_arcs + 2 * n_touch; ++v) lp.a_eq(row, v) = 1.0;
        lp.a_eq(row, n_vars - 1) = 1.0;
        lp.b_eq[row] = cfg.epsilon;
    }

    const optkit::LpResult res = optkit::solve_lp(lp);
    if (res.status != optkit::LpStatus::Optimal)
        throw InternalError("per-period manipulation LP is not solvable although E = I is feasible");
    for (Eigen::Index m : sources) e(m, m) = 0.0;
    for (int k = 0; k < n_arcs; ++k) {
        const Arc& a = arcs[static_cast<std::size_t>(k)];
        e(a.to, a.from) += std::max(res.x[k], 0.0) / x[a.from];
    }
    for (Eigen::Index m : sources) e.col(m) /= e.col(m).sum();
    return e;
}

} // namespace

Mask allowed_transitions(const StateLayout& layout)
{
    const int dim = layout.dim();
    Mask mask = Mask::Constant(dim, dim, false);
    for (int id = 1; id <= dim; ++id) mask(idx(id), idx(id)) = true;
    for (int j = 1; j <= layout.ns; ++j) {
        const int ids[3] = {layout.cm(j), layout.im(j), layout.dm(j)};
        for (int from : ids)
            for (int to : ids) mask(idx(to), idx(from)) = true;
    }
    return mask;
}

Mask adjacent_mode_transitions(const StateLayout& layout)
{
    Mask mask = allowed_transitions(layout);
    for (int j = 1; j <= layout.ns; ++j) {
        mask(idx(layout.cm(j)), idx(layout.dm(j))) = false;
        mask(idx(layout.dm(j)), idx(layout.cm(j))) = false;
    }
    return mask;
}

void PlanConfig::validate() const
{
    if (horizon < 0) throw ConfigError("attack.horizon: must be >= 0");
    if (period_steps < 1) throw ConfigError("attack.period_steps: must be >= 1");
    if (!(epsilon >= 0.0)) throw ConfigError("attack.epsilon: must be >= 0");
    if (sweeps < 1) throw ConfigError("attack.sweeps: must be >= 1");
}

Eigen::RowVectorXd period_reward(const Eigen::MatrixXd& a, const Eigen::RowVectorXd& weights, int period_steps)
{
    Eigen::RowVectorXd total = Eigen::RowVectorXd::Zero(weights.size());
    Eigen::RowVectorXd term = weights;
    for (int i = 0; i < period_steps; ++i) {
        total += term;
        term = term * a;
    }
    return total;
}

double plan_objective(const Eigen::VectorXd& x0, const Eigen::MatrixXd& a, const Eigen::RowVectorXd& weights,
                      std::span<const Eigen::MatrixXd> e, int period_steps)
{
    const Eigen::RowVectorXd w = period_reward(a, weights, period_steps);
    Eigen::MatrixXd m = Eigen::MatrixXd::Identity(a.rows(), a.cols());
    for (int i = 0; i < period_steps; ++i) m = a * m;
    Eigen::VectorXd x = x0;
    double total = 0.0;
    for (const auto& eh : e) {
        const Eigen::VectorXd ex = eh * x;
        total += w.dot(ex - x);
        x = m * ex;
    }
    return total;
}

ManipulationPlan plan_manipulation(const Eigen::VectorXd& x0, const Eigen::MatrixXd& a,
                                   const Eigen::RowVectorXd& weights, const Mask& mask, const PlanConfig& cfg)
{
    cfg.validate();
    const auto dim = x0.size();
    if (a.rows() != dim || a.cols() != dim || weights.size() != dim || mask.rows() != dim || mask.cols() != dim)
        throw ContractViolation("manipulation planner inputs have inconsistent dimensions");

    const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(dim, dim);
    ManipulationPlan plan;
    plan.e.assign(static_cast<std::size_t>(cfg.horizon + 1), eye);
    if (cfg.epsilon == 0.0) return plan;

    const Eigen::RowVectorXd w = period_reward(a, weights, cfg.period_steps);
    Eigen::MatrixXd m = eye;
    for (int i = 0; i < cfg.period_steps; ++i) m = a * m;

    const int periods = cfg.horizon + 1;
    for (int sweep = 0; sweep < cfg.sweeps; ++sweep) {
        // v[h] values the state entering period h under the current downstream plan.
        std::vector<Eigen::RowVectorXd> v(static_cast<std::size_t>(periods + 1), Eigen::RowVectorXd::Zero(dim));
        for (int h = periods - 1; h >= 0; --h) {
            const auto& eh = plan.e[static_cast<std::size_t>(h)];
            v[static_cast<std::size_t>(h)] = w * (eh - eye) + v[static_cast<std::size_t>(h + 1)] * m * eh;
        }
        Eigen::VectorXd x = x0;
        for (int g = 0; g < periods; ++g) {
            const Eigen::RowVectorXd c = w + v[static_cast<std::size_t>(g + 1)] * m;
            plan.e[static_cast<std::size_t>(g)] = solve_period(x, c, mask, cfg);
            x = m * (plan.e[static_cast<std::size_t>(g)] * x);
        }
    }
    plan.objective = plan_objective(x0, a, weights, plan.e, cfg.period_steps);
    if (plan.objective < 0.0) {
        plan.e.assign(static_cast<std::size_t>(periods), eye);
        plan.objective = 0.0;
    }
    return plan;
}

double beta(int block) { return 0.8 * (1.0 - static_cast<double>(block) * block / 100.0); }
double beta_prime(int block) { return 0.8 - beta(block); }

TransitionWeights transition_weights(const StateLayout& layout, int state_id, double soc)
{
    TransitionWeights tw;
    tw.current_id = state_id;
    if (state_id < 1 || layout.is_special(state_id)) return tw;

    const int j = layout.block_of(state_id);
    const Mode mode = layout.mode_of(state_id);
    const double loc = std::clamp((soc - layout.block_lower_edge(j)) / layout.block_width(), 0.0, 1.0);

    std::vector<std::pair<int, double>> raw{{state_id, 0.8}};
    auto add = [&](int id, double w) {
        if (w > 0.0) raw.emplace_back(id, w);
    };
    switch (mode) {
    case Mode::Charging:
        add(layout.im(j), beta_prime(j));
        if (loc >= 0.9 && j < layout.ns) add(layout.cm(j + 1), 0.9);
        break;
    case Mode::Idle:
        add(layout.cm(j), beta(j));
        if (loc >= 0.9 && j < layout.ns) add(layout.im(j + 1), 0.2);
        else if (loc <= 0.1 && j > 1) add(layout.im(j - 1), 0.2);
        break;
    case Mode::Discharging:
        add(layout.im(j), beta(j));
        if (loc <= 0.1 && j > 1) add(layout.dm(j - 1), 0.9);
        break;
    }
    tw.pi = Eigen::VectorXd::Zero(layout.operational());
    double z = 0.0;
    for (const auto& [id, w] : raw) z += std::exp(w);
    for (const auto& [id, w] : raw) tw.pi[idx(id)] = std::exp(w) / z;
    return tw;
}

Eigen::VectorXi integerize_targets(const Eigen::VectorXd& shares, int total)
{
    const auto k = shares.size();
    Eigen::VectorXi counts = Eigen::VectorXi::Zero(k);
    if (total < 0) throw ContractViolation("target total must be >= 0");
    if ((shares.array() < 0).any()) throw ContractViolation("target shares must be nonnegative");
    const double sum = shares.sum();
    if (total == 0) return counts;
    if (!(sum > 0.0)) throw ContractViolation("cannot apportion a positive total over zero shares");

    std::vector<long long> rem_key(static_cast<std::size_t>(k));
    int assigned = 0;
    for (Eigen::Index i = 0; i < k; ++i) {
        const double raw = total * shares[i] / sum;
        double fl = std::floor(raw);
        // Shares that are whole numbers up to round-off stay whole.
        if (raw - fl > 1.0 - 1e-9) fl += 1.0;
        counts[i] = static_cast<int>(fl);
        assigned += counts[i];
        rem_key[static_cast<std::size_t>(i)] = std::llround(std::max(raw - fl, 0.0) * 1e9);
    }
    std::vector<Eigen::Index> order(static_cast<std::size_t>(k));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
        return rem_key[static_cast<std::size_t>(a)] > rem_key[static_cast<std::size_t>(b)];
    });
    for (int r = 0; r < total - assigned; ++r) ++counts[order[static_cast<std::size_t>(r) % order.size()]];
    if (assigned > total) throw InternalError("apportionment overshot its total");
    return counts;
}

Assignment assign_targets(const StateLayout& layout, std::span<const TransitionWeights> weights,
                          const Eigen::VectorXi& counts, const Mask* mask)
{
    const int cols = layout.operational();
    if (counts.size() != cols) throw ContractViolation("count vector must cover the operational states");
    if (counts.sum() != static_cast<int>(weights.size()))
        throw ContractViolation("counts must sum to the number of assigned EVs");

    optkit::TransportationProblem tp;
    const auto rows = static_cast<Eigen::Index>(weights.size());
    tp.cost = Eigen::MatrixXd::Constant(rows, cols, optkit::kInf);
    tp.supply = Eigen::VectorXi::Ones(rows);
    tp.demand = counts;
    for (Eigen::Index i = 0; i < rows; ++i) {
        const auto& tw = weights[static_cast<std::size_t>(i)];
        if (tw.pi.size() != cols) throw ContractViolation("EV without transition weights cannot be assigned");
        for (int j = 0; j < cols; ++j) {
            if (tw.pi[j] <= 0.0) continue;
            if (mask && !(*mask)(j, idx(tw.current_id))) continue;
            tp.cost(i, j) = -std::log(tw.pi[j]);
        }
    }
    const auto sol = optkit::solve_transportation(tp);
    Assignment out;
    out.target.resize(static_cast<std::size_t>(rows));
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) {
            if (sol.flow(i, j) > 0) {
                out.target[static_cast<std::size_t>(i)] = j + 1;
                break;
            }
        }
    }
    out.log_likelihood = -sol.cost;
    return out;
}

Fabrication map_to_measurements(const StateLayout& layout, const fleet::EvSpec& spec, double prev_soc, int from_id,
                                int to_id, double period_h, double granularity)
{
    if (layout.is_special(from_id) || layout.is_special(to_id) || from_id < 1 || to_id < 1)
        throw ContractViolation("only operational states can be fabricated");
    Fabrication f;
    int dir = 0;
    switch (layout.mode_of(to_id)) {
    case Mode::Charging:
        f.power_kw = -spec.charge_kw;
        dir = 1;
        break;
    case Mode::Idle:
        f.power_kw = 0.0;
        break;
    case Mode::Discharging:
        f.power_kw = spec.discharge_kw;
        dir = -1;
        break;
    }
    const int steps = static_cast<int>(std::ceil(std::abs(f.power_kw) * period_h / spec.capacity_kwh / granularity - 1e-9));
    const double soc = std::clamp(prev_soc + dir * steps * granularity, spec.soc_min, spec.soc_max);
    f.soc = fleet::quantize_soc(soc);
    return f;
}

ShadowFleet::ShadowFleet(StateLayout layout, AttackConfig cfg, const std::vector<fleet::EvRecord>& records)
    : layout_(layout), cfg_(cfg), records_(&records), slot_(records.size(), -1)
{
    cfg_.plan.validate();
}

void ShadowFleet::sync(double, std::span<const fleet::EvStatus> truth)
{
    if (truth.size() != records_->size()) throw ContractViolation("truth vector does not match the fleet");
    std::erase_if(replicas_, [&](const Replica& r) { return !truth[static_cast<std::size_t>(r.ev_id)].connected; });
    std::fill(slot_.begin(), slot_.end(), -1);
    for (std::size_t p = 0; p < replicas_.size(); ++p) slot_[static_cast<std::size_t>(replicas_[p].ev_id)] = static_cast<int>(p);
    for (std::size_t i = 0; i < records_->size(); ++i) {
        if (!(*records_)[i].compromised || !truth[i].connected || slot_[i] >= 0) continue;
        Replica r;
        r.ev_id = static_cast<int>(i);
        r.status = truth[i];
        slot_[i] = static_cast<int>(replicas_.size());
        replicas_.push_back(r);
    }
}

void ShadowFleet::observe_broadcast(const ControlBroadcast& bc, long step)
{
    if (!cfg_.follow_broadcast || bc.is_zero()) return;
    for (auto& r : replicas_) {
        if (r.status.forced_charging) continue;
        const auto& rec = (*records_)[static_cast<std::size_t>(r.ev_id)];
        Substream rng(cfg_.seed ^ kReplicaSalt, static_cast<std::uint64_t>(r.ev_id), static_cast<std::uint64_t>(step));
        r.status = fleet::apply_broadcast(r.status, rec.spec, layout_, essm::state_index(layout_, r.status), bc, rng);
    }
}

void ShadowFleet::advance(double dt_h, double next_now_h)
{
    for (auto& r : replicas_) {
        const auto& rec = (*records_)[static_cast<std::size_t>(r.ev_id)];
        r.status = fleet::refresh_forced(rec, fleet::advance_status(rec, r.status, dt_h), next_now_h);
    }
}

fleet::Measurement ShadowFleet::natural_report(const Replica& r, long step) const
{
    return {r.ev_id, fleet::quantize_soc(r.status.soc), r.status.power_kw, step};
}

std::vector<fleet::Measurement> ShadowFleet::attack_step(long step, double now_h,
                                                         std::span<const fleet::Measurement> clean)
{
    stats_ = EpochStats{};
    moves_.clear();
    stats_.step = step;
    stats_.replicas = static_cast<int>(replicas_.size());

    std::vector<fleet::Measurement> out;
    out.reserve(replicas_.size());
    std::vector<int> ids;
    ids.reserve(replicas_.size());
    std::vector<essm::ObservedEv> observed;
    std::vector<fleet::EvSpec> specs;
    for (const auto& r : replicas_) {
        const auto& rec = (*records_)[static_cast<std::size_t>(r.ev_id)];
        out.push_back(natural_report(r, step));
        ids.push_back(essm::infer_state(layout_, out.back(), rec, now_h, cfg_.granularity));
        observed.push_back({&rec, ids.back(), out.back().soc, out.back().power_kw});
        specs.push_back(rec.spec);
    }

    auto finish = [&]() {
        for (std::size_t p = 0; p < replicas_.size(); ++p) {
            replicas_[p].last_report = out[p];
            replicas_[p].reported = true;
        }
        return out;
    };
    if (replicas_.empty() || cfg_.plan.epsilon <= 0.0) return finish();

    const int ops = layout_.operational();
    std::vector<std::size_t> movable;
    Eigen::VectorXi fixed_counts = Eigen::VectorXi::Zero(ops);
    Eigen::VectorXi natural_counts = Eigen::VectorXi::Zero(ops);
    std::vector<TransitionWeights> weights;
    for (std::size_t p = 0; p < replicas_.size(); ++p) {
        const int id = ids[p];
        if (layout_.is_special(id)) continue;
        ++stats_.operational;
        ++natural_counts[idx(id)];
        if (!replicas_[p].reported) {
            ++fixed_counts[idx(id)];
            continue;
        }
        movable.push_back(p);
        weights.push_back(transition_weights(layout_, id, out[p].soc));
    }
    if (movable.empty()) return finish();

    // Restrict planning to moves some EV can actually present.
    Mask support = Mask::Constant(layout_.dim(), layout_.dim(), false);
    for (int id = 1; id <= layout_.dim(); ++id) support(idx(id), idx(id)) = true;
    for (const auto& tw : weights)
        for (int j = 0; j < ops; ++j)
            if (tw.pi[j] > 0.0) support(j, idx(tw.current_id)) = true;

    const essm::StateVector xs = essm::build_state_vector(layout_, ids);
    if (cfg_.sees_clean_fleet) {
        for (const auto& m : clean) {
            const auto& rec = records_->at(static_cast<std::size_t>(m.ev_id));
            if (rec.compromised) continue;
            observed.push_back({&rec, essm::infer_state(layout_, m, rec, now_h, cfg_.granularity), m.soc, m.power_kw});
            specs.push_back(rec.spec);
        }
    }
    const essm::FleetStats fs = essm::fleet_stats(specs);
    const double period_h = cfg_.plan.period_steps * cfg_.step_h;
    const Eigen::MatrixXd a =
        essm::build_transition_matrix(layout_, observed, fs, cfg_.step_h, cfg_.plan.period_steps, now_h, cfg_.drift);
    const Eigen::RowVectorXd reward = essm::d_lower(layout_);

    std::vector<int> target;
    for (const Mask& base : {allowed_transitions(layout_), adjacent_mode_transitions(layout_)}) {
        const Mask mask = base && support;
        const ManipulationPlan plan = plan_manipulation(xs.x, a, reward, mask, cfg_.plan);
        const Eigen::VectorXd shifted = plan.e.front() * xs.x;
        const Eigen::VectorXi counts = integerize_targets(shifted.head(ops).cwiseMax(0.0), stats_.operational);
        if (counts == natural_counts) return finish();
        const Eigen::VectorXi demand = counts - fixed_counts;
        if ((demand.array() < 0).any()) continue;
        try {
            target = assign_targets(layout_, weights, demand, &mask).target;
            stats_.plan_gain = plan.objective;
            break;
        } catch (const AssignmentInfeasible&) {
            continue;
        }
    }
    if (target.empty()) return finish();

    detector::DetectionConfig dcfg;
    dcfg.epsilon = cfg_.plan.epsilon > 0 ? cfg_.plan.epsilon : 1.0;
    dcfg.norm = cfg_.plan.norm;
    dcfg.granularity = cfg_.granularity;
    dcfg.period_h = period_h;
    dcfg.period_steps = cfg_.plan.period_steps;
    for (std::size_t k = 0; k < movable.size(); ++k) {
        const std::size_t p = movable[k];
        const int to = target[k];
        if (to == ids[p]) continue;
        Replica& r = replicas_[p];
        const auto& rec = (*records_)[static_cast<std::size_t>(r.ev_id)];
        const Fabrication fab =
            map_to_measurements(layout_, rec.spec, r.last_report.soc, ids[p], to, period_h, cfg_.granularity);
        const fleet::Measurement m{r.ev_id, fab.soc, fab.power_kw, step};
        // The SoC increment of a charging or discharging period may carry the
        // reading into the neighbouring block; only the mode has to land.
        const int landed = essm::infer_state(layout_, m, rec, now_h, cfg_.granularity);
        if (!detector::feasible(r.last_report, m, rec.spec, dcfg) || layout_.is_special(landed) ||
            layout_.mode_of(landed) != layout_.mode_of(to)) {
            ++stats_.fallbacks;
            continue;
        }
        out[p] = m;
        moves_.push_back({r.ev_id, ids[p], landed});
        r.status.soc = fab.soc;
        r.status.power_kw = fab.power_kw;
        r.status.mode = mode_of_power(fab.power_kw);
        r.status.forced_charging = false;
        ++stats_.manipulated;
    }
    return finish();
}

} // namespace v2gsim::attack
