#pragma once

#include "v2gsim/detector.hpp"
#include "v2gsim/essm.hpp"
#include "v2gsim/fleet.hpp"
#include "v2gsim/state.hpp"

#include <Eigen/Core>

#include <span>
#include <vector>

namespace v2gsim {

struct OperatorConfig {
    StateLayout layout;
    double step_h = 20.0 / 3600.0;
    int period_steps = 15;
    detector::DetectionConfig detection;
    bool control_enabled = true;
    essm::DriftModel drift = essm::DriftModel::Projected;
};

struct RenewalResult {
    std::vector<detector::Alarm> alarms;
    essm::FlexibilityReport report;
    double distance = 0.0; // cohort distance, 0 without a cohort
    int cohort = 0;
    int feasibility_checks = 0;
    double sum_error = 0.0;    // |sum(x) - 1|
    double column_error = 0.0; // max |column sum of A - 1|
    double min_entry = 0.0;    // smallest entry of x and A
};

/// The operator room: eSSM bookkeeping, renewal from measurements, the
/// detector, and per-step feedback. It only sees connection messages and
/// reported measurements, so it can be replayed from a measurement log.
class Operator {
public:
    Operator(OperatorConfig cfg, const std::vector<fleet::EvRecord>& records);

    /// Connection messages and scheduled departures at clock `now_h`.
    void begin_step(long step, double now_h);

    /// Rebuilds x, A and P_ave from one report per connected EV and runs both detector checks.
    RenewalResult renew(long step, double now_h, std::span<const fleet::Measurement> reports);

    /// Feedback toward `target_kw` for the steerable EVs, then one model step.
    ControlBroadcast control(long step, double target_kw);

    const Eigen::VectorXd& model_x() const noexcept { return x_; }
    /// Predicted distribution of the cohort due at the next renewal, and its members.
    const Eigen::VectorXd& cohort_prediction() const noexcept { return cohort_x_; }
    const std::vector<int>& cohort_members() const noexcept { return cohort_ids_; }
    int model_n() const noexcept { return n_; }
    double p_ave_kw() const noexcept { return stats_.p_ave_kw; }
    const essm::TransitionMatrix& transition() const noexcept { return a_; }
    /// A for mass switched by a broadcast since the last renewal.
    const essm::TransitionMatrix& moved_transition() const noexcept { return a_moved_; }
    /// Steerable output the model expects after the last control step (kW).
    double model_output_kw() const;
    bool out_of_range() const noexcept { return out_of_range_; }

private:
    void add_to_population(int id);
    void remove_from_population(int id);
    void refine_soc(std::size_t i, const fleet::Measurement& m, double now_h);
    double soc_estimate(std::size_t i) const { return 0.5 * (soc_lo_[i] + soc_hi_[i]); }

    OperatorConfig cfg_;
    const std::vector<fleet::EvRecord>* records_;
    std::vector<char> known_;
    std::vector<int> last_id_;
    // SoC bracket consistent with the connection message, every report and the
    // physics in between; the power and time it was last pinned at.
    std::vector<double> soc_lo_;
    std::vector<double> soc_hi_;
    std::vector<double> pin_power_;
    std::vector<double> pin_time_;
    std::vector<fleet::Measurement> last_report_;
    std::vector<char> has_report_;

    // x_ is the sum of the two parts of split_.
    Eigen::VectorXd x_;
    essm::SplitState split_;
    int n_ = 0;
    essm::FleetStats stats_;
    essm::TransitionMatrix a_;
    essm::TransitionMatrix a_moved_;

    std::vector<int> cohort_ids_;
    essm::SplitState cohort_split_;
    Eigen::VectorXd cohort_x_;
    long cohort_step_ = -1;
    bool out_of_range_ = false;
};

} // namespace v2gsim
