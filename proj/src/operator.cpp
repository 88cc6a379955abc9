#include "v2gsim/operator.hpp"

#include "v2gsim/errors.hpp"

#include <algorithm>
#include <cmath>

namespace v2gsim {

namespace {

Eigen::Index idx(int id) { return static_cast<Eigen::Index>(id - 1); }

} // namespace

Operator::Operator(OperatorConfig cfg, const std::vector<fleet::EvRecord>& records)
    : cfg_(cfg),
      records_(&records),
      known_(records.size(), 0),
      last_id_(records.size(), 0),
      soc_lo_(records.size(), 0.0),
      soc_hi_(records.size(), 0.0),
      pin_power_(records.size(), 0.0),
      pin_time_(records.size(), 0.0),
      last_report_(records.size()),
      has_report_(records.size(), 0),
      x_(Eigen::VectorXd::Zero(cfg.layout.dim())),
      split_{x_, x_},
      a_(essm::TransitionMatrix::Identity(cfg.layout.dim(), cfg.layout.dim())),
      a_moved_(a_),
      cohort_split_{x_, x_},
      cohort_x_(x_)
{
    cfg_.layout.validate();
    cfg_.detection.validate();
}

void Operator::add_to_population(int id)
{
    const double n = static_cast<double>(n_);
    split_.settled *= n;
    split_.moved *= n;
    split_.settled[idx(id)] += 1.0;
    ++n_;
    split_.settled /= static_cast<double>(n_);
    split_.moved /= static_cast<double>(n_);
    x_ = split_.total();
}

void Operator::remove_from_population(int id)
{
    if (n_ <= 1) {
        x_.setZero();
        split_ = {x_, x_};
        n_ = 0;
        return;
    }
    const double n = static_cast<double>(n_);
    Eigen::VectorXd settled = split_.settled * n;
    Eigen::VectorXd moved = split_.moved * n;
    const double here = settled[idx(id)] + moved[idx(id)];
    if (here >= 0.5) {
        settled[idx(id)] -= settled[idx(id)] / here;
        moved[idx(id)] -= moved[idx(id)] / here;
    } else {
        // The model lost track of this EV; take it out proportionally.
        settled -= split_.settled;
        moved -= split_.moved;
    }
    --n_;
    split_.settled = settled.cwiseMax(0.0) / static_cast<double>(n_);
    split_.moved = moved.cwiseMax(0.0) / static_cast<double>(n_);
    x_ = split_.total();
}

void Operator::begin_step(long, double now_h)
{
    const StateLayout& layout = cfg_.layout;
    for (std::size_t i = 0; i < records_->size(); ++i) {
        const fleet::EvRecord& ev = (*records_)[i];
        const bool present = now_h >= ev.session.start_h && now_h < ev.session.finish_h;
        if (present && !known_[i]) {
            // Connection message: session directives and the starting SoC.
            known_[i] = 1;
            has_report_[i] = 0;
            const bool forced = fleet::forced_charging_required(ev.spec, ev.session, ev.session.start_soc, now_h);
            soc_lo_[i] = soc_hi_[i] = ev.session.start_soc;
            pin_power_[i] = forced ? -ev.spec.charge_kw : 0.0;
            pin_time_[i] = ev.session.start_h;
            last_id_[i] = essm::state_index(layout, fleet::quantize_soc(ev.session.start_soc),
                                            forced ? -ev.spec.charge_kw : 0.0, forced);
            add_to_population(last_id_[i]);
        } else if (!present && known_[i]) {
            known_[i] = 0;
            int id = last_id_[i];
            const bool idle_or_charging = !has_report_[i] || last_report_[i].power_kw <= 0.0;
            if (!layout.is_special(id) && idle_or_charging && soc_estimate(i) < ev.session.departure_soc) id = layout.fcs();
            remove_from_population(id);
            has_report_[i] = 0;
        }
    }
}

void Operator::refine_soc(std::size_t i, const fleet::Measurement& m, double now_h)
{
    const fleet::EvSpec& spec = (*records_)[i].spec;
    const double half = 0.5 * cfg_.detection.granularity;
    double lo = std::max(spec.soc_min, m.soc - half - 1e-12);
    double hi = std::min(spec.soc_max, m.soc + half + 1e-12);

    // Carry the previous bracket forward while the power is unchanged. After a
    // switch at an unknown time the report alone is the best evidence.
    const double gap = std::max(0.0, now_h - pin_time_[i]);
    const double plo = fleet::step_ev(spec, soc_lo_[i], pin_power_[i], gap);
    const double phi = fleet::step_ev(spec, soc_hi_[i], pin_power_[i], gap);
    if (m.power_kw == pin_power_[i] && std::max(lo, plo) <= std::min(hi, phi)) {
        lo = std::max(lo, plo);
        hi = std::min(hi, phi);
    }
    soc_lo_[i] = lo;
    soc_hi_[i] = hi;
    pin_power_[i] = m.power_kw;
    pin_time_[i] = now_h;
}

RenewalResult Operator::renew(long step, double now_h, std::span<const fleet::Measurement> reports)
{
    const StateLayout& layout = cfg_.layout;
    const double g = cfg_.detection.granularity;
    RenewalResult res;

    std::vector<int> ids;
    ids.reserve(reports.size());
    std::vector<fleet::EvSpec> specs;
    specs.reserve(reports.size());
    std::vector<int> id_of(records_->size(), 0);

    for (const auto& m : reports) {
        if (m.ev_id < 0 || static_cast<std::size_t>(m.ev_id) >= records_->size())
            throw ContractViolation("report for unknown EV " + std::to_string(m.ev_id));
        const auto i = static_cast<std::size_t>(m.ev_id);
        const fleet::EvRecord& ev = (*records_)[i];
        if (has_report_[i] && last_report_[i].step == step - cfg_.period_steps) {
            ++res.feasibility_checks;
            if (auto alarm = detector::check_feasibility(last_report_[i], m, ev.spec, cfg_.detection))
                res.alarms.push_back(*alarm);
        }
        refine_soc(i, m, now_h);

        const int id = essm::infer_state(layout, m, ev, now_h, g);
        ids.push_back(id);
        id_of[i] = id;
        last_id_[i] = id;
        last_report_[i] = m;
        has_report_[i] = 1;
        specs.push_back(ev.spec);
    }

    // Aggregate distance on the cohort that was present at the previous renewal and is still connected.
    if (cohort_step_ == step - cfg_.period_steps && !cohort_ids_.empty()) {
        std::vector<int> now_ids;
        now_ids.reserve(cohort_ids_.size());
        for (int ev : cohort_ids_)
            if (id_of[static_cast<std::size_t>(ev)] > 0) now_ids.push_back(id_of[static_cast<std::size_t>(ev)]);
        if (now_ids.size() != cohort_ids_.size())
            throw ContractViolation("a cohort EV did not report at the renewal");
        const essm::StateVector truth = essm::build_state_vector(layout, now_ids);
        res.cohort = truth.connected;
        res.distance = detector::distance(truth.x, cohort_x_, cfg_.detection.norm);
        if (auto alarm = detector::check_aggregate(truth.x, cohort_x_, cfg_.detection, step))
            res.alarms.push_back(*alarm);
    }

    const essm::StateVector sv = essm::build_state_vector(layout, ids);
    x_ = sv.x;
    split_ = {x_, Eigen::VectorXd::Zero(layout.dim())};
    n_ = sv.connected;
    stats_ = essm::fleet_stats(specs);

    std::vector<essm::ObservedEv> observed;
    observed.reserve(reports.size());
    for (std::size_t r = 0; r < reports.size(); ++r) {
        const auto i = static_cast<std::size_t>(reports[r].ev_id);
        observed.push_back({&(*records_)[i], ids[r], soc_estimate(i), reports[r].power_kw,
                            0.5 * (soc_hi_[i] - soc_lo_[i])});
    }
    const double window_h = cfg_.step_h * cfg_.period_steps;
    if (cfg_.drift == essm::DriftModel::Average) {
        a_ = essm::build_transition_matrix(layout, observed, stats_, cfg_.step_h, cfg_.period_steps, now_h, cfg_.drift);
        a_moved_ = a_;
    } else {
        const Eigen::VectorXd fcs = essm::fcs_window_fraction(layout, observed, now_h, window_h);
        const essm::DriftRates settled =
            essm::projected_drift_rates(layout, observed, window_h, cfg_.period_steps, g);
        essm::DriftRates moved = essm::entrant_drift_rates(layout, observed, window_h, cfg_.period_steps, g);
        for (int j = 0; j < layout.ns; ++j) {
            if (std::isnan(moved.up[j])) moved.up[j] = settled.up[j];
            if (std::isnan(moved.down[j])) moved.down[j] = settled.down[j];
        }
        a_ = essm::build_transition_matrix(layout, stats_, cfg_.step_h, fcs, settled, cfg_.period_steps);
        a_moved_ = essm::build_transition_matrix(layout, stats_, cfg_.step_h,
                                                 essm::entrant_fcs_fraction(layout, observed, now_h, window_h), moved,
                                                 cfg_.period_steps);
    }

    res.report = essm::report(layout, sv, stats_.p_ave_kw);
    res.sum_error = n_ > 0 ? std::abs(x_.sum() - 1.0) : 0.0;
    res.column_error = std::max((a_.colwise().sum().array() - 1.0).abs().maxCoeff(),
                                (a_moved_.colwise().sum().array() - 1.0).abs().maxCoeff());
    res.min_entry = std::min({x_.minCoeff(), a_.minCoeff(), a_moved_.minCoeff()});

    // Next cohort: EVs that will still be connected at the next renewal.
    const double next_h = now_h + window_h;
    cohort_ids_.clear();
    std::vector<int> cohort_state;
    for (const auto& m : reports) {
        if ((*records_)[static_cast<std::size_t>(m.ev_id)].session.finish_h > next_h + 1e-9) {
            cohort_ids_.push_back(m.ev_id);
            cohort_state.push_back(id_of[static_cast<std::size_t>(m.ev_id)]);
        }
    }
    cohort_x_ = essm::build_state_vector(layout, cohort_state).x;
    cohort_split_ = {cohort_x_, Eigen::VectorXd::Zero(layout.dim())};
    cohort_step_ = step;
    return res;
}

ControlBroadcast Operator::control(long, double target_kw)
{
    const StateLayout& layout = cfg_.layout;
    out_of_range_ = false;
    ControlBroadcast bc = ControlBroadcast::none(layout.ns);
    essm::FeedbackSignal fb = essm::FeedbackSignal::zero(layout.ns);
    essm::FeedbackSignal expected = fb;
    if (cfg_.control_enabled && n_ > 0) {
        // The broadcast lands on the fleet as it is now, before this step's physics.
        fb = essm::make_feedback(layout, x_, target_kw, stats_.p_ave_kw, n_);
        out_of_range_ = fb.out_of_range;
        bc = essm::to_broadcast(layout, fb, x_);
        expected = essm::feedback_from_broadcast(layout, bc, cohort_x_);
    }
    split_ = essm::predict(layout, split_, a_, a_moved_, fb);
    x_ = split_.total();
    cohort_split_ = essm::predict(layout, cohort_split_, a_, a_moved_, expected);
    cohort_x_ = cohort_split_.total();
    return bc;
}

double Operator::model_output_kw() const
{
    return stats_.p_ave_kw * n_ * essm::d_dispatchable(cfg_.layout).dot(x_);
}

} // namespace v2gsim
