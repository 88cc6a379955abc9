#pragma once

#include "v2gsim/fleet.hpp"
#include "v2gsim/state.hpp"

#include <Eigen/Core>

#include <span>
#include <utility>

namespace v2gsim::essm {

/// Aggregate distribution over the 3Ns+3 states. Element i holds state id i+1.
struct StateVector {
    Eigen::VectorXd x;
    int connected = 0;
};

/// Column-stochastic one-step (T) transition matrix: x(k+1) = A x(k).
using TransitionMatrix = Eigen::MatrixXd;

/// Empirical means over connected EVs used to build A.
struct FleetStats {
    double p_ave_kw = 0.0;           // mean rated charging power
    double p_ave_discharge_kw = 0.0; // mean rated discharging power
    double mean_efficiency = 1.0;
    double mean_capacity_kwh = 1.0;
    int count = 0;
};

struct FlexibilityReport {
    double y_kw = 0.0;
    double y_u_kw = 0.0;
    double y_l_kw = 0.0;
    double p_ave_kw = 0.0;
    int connected = 0;
};

/// Mass shifts on the Ns operational blocks. u moves CM<->IM, v moves IM<->DM;
/// positive entries raise the fleet's net output.
struct FeedbackSignal {
    Eigen::VectorXd u;
    Eigen::VectorXd v;
    bool out_of_range = false;

    static FeedbackSignal zero(int ns) { return {Eigen::VectorXd::Zero(ns), Eigen::VectorXd::Zero(ns), false}; }
};

/// State id of an EV from its (soc, power, forced) triple.
int state_index(const StateLayout& layout, double soc, double power_kw, bool forced);
/// State of a physical EV as its own meter sees it, i.e. with the SoC at
/// reporting granularity. Throws NotIndexable for a disconnected EV.
int state_index(const StateLayout& layout, const fleet::EvStatus& status);

/// Normalized histogram of state ids (1-based). Empty input gives an all-zero vector.
/// Operator-side index of a reported measurement. A charging EV counts as
/// forced when even the lowest SoC consistent with the report obliges it.
int infer_state(const StateLayout& layout, const fleet::Measurement& m, const fleet::EvRecord& ev, double now_h,
                double granularity = fleet::kSocGranularity);

/// What the model knows about one connected EV at a renewal.
struct ObservedEv {
    const fleet::EvRecord* ev = nullptr;
    int state_id = 0;
    double soc = 0.0;
    double power_kw = 0.0;
    /// Half-width of the SoC interval the estimate is the midpoint of.
    double soc_halfwidth = 0.0;
};

/// Share of each state whose EVs, projected `window_h` ahead in their current
/// mode, will have to charge by force at `now_h + window_h`.
Eigen::VectorXd fcs_window_fraction(const StateLayout& layout, std::span<const ObservedEv> evs, double now_h,
                                    double window_h);

/// Same share for EVs a broadcast switches out of IM, projected from their
/// idle SoC in CM and in DM (the opposite mode standing in where a block has
/// no idle EVs); other states as fcs_window_fraction.
Eigen::VectorXd entrant_fcs_fraction(const StateLayout& layout, std::span<const ObservedEv> evs, double now_h,
                                     double window_h);

/// Per-step drift rates along the CM chain (up, block j -> j+1, top -> SS_MAX)
/// and the DM chain (down, block j -> j-1, bottom -> SS_MIN), indexed by block.
/// NaN marks a block the data says nothing about.
struct DriftRates {
    Eigen::VectorXd up;
    Eigen::VectorXd down;
};

/// Where each CM/DM EV will report from after `window_h` at its reported power,
/// then rates fitted block by block in flow order so that `steps_per_window`
/// steps of the chain reproduce that end-of-window histogram.
DriftRates projected_drift_rates(const StateLayout& layout, std::span<const ObservedEv> evs, double window_h,
                                 int steps_per_window, double granularity = fleet::kSocGranularity);

/// Same fit for EVs a broadcast switches out of IM: every idle EV projected
/// at its rated power in CM and in DM. Blocks without idle EVs fall back to
/// the block's EVs of the opposite mode, which reach it through IM.
DriftRates entrant_drift_rates(const StateLayout& layout, std::span<const ObservedEv> evs, double window_h,
                               int steps_per_window, double granularity = fleet::kSocGranularity);

/// Fits one chain. `start[j]` and `target[j]` are masses in chain order
/// (flow goes j -> j+1, the last entry is the absorbing sink). Returns one rate
/// per non-sink entry, NaN where no mass ever reaches it.
Eigen::VectorXd fit_chain_rates(const Eigen::VectorXd& start, const Eigen::VectorXd& target, int steps);

StateVector build_state_vector(const StateLayout& layout, std::span<const int> state_ids);

FleetStats fleet_stats(std::span<const fleet::EvSpec> specs);

/// Mean rated charging power. Throws UndefinedAverage on an empty set.
double p_ave(std::span<const fleet::EvSpec> specs);

/// How A gets its CM/DM drift rates: fleet averages, or a per-state projection
/// of the reported EVs over one window.
enum class DriftModel { Average, Projected };

const char* to_string(DriftModel d) noexcept;

/// Builds A from the renewal data with the chosen drift model.
TransitionMatrix build_transition_matrix(const StateLayout& layout, std::span<const ObservedEv> evs,
                                         const FleetStats& stats, double step_h, int steps_per_window, double now_h,
                                         DriftModel drift);

/// Per-interval drift probabilities under the uniform-within-interval assumption.
double charge_advance_probability(const StateLayout& layout, const FleetStats& stats, double step_h);
double discharge_advance_probability(const StateLayout& layout, const FleetStats& stats, double step_h);

/// `fcs_window_fraction[i]` is the share of state id i+1 expected to turn forced
/// within one window of `steps_per_window` steps; it is spread evenly as a per-step rate.
TransitionMatrix build_transition_matrix(const StateLayout& layout, const FleetStats& stats, double step_h,
                                         const Eigen::VectorXd& fcs_window_fraction, int steps_per_window);

/// Same, with CM/DM drift from `rates` and the fleet-average rates where they are NaN.
TransitionMatrix build_transition_matrix(const StateLayout& layout, const FleetStats& stats, double step_h,
                                         const Eigen::VectorXd& fcs_window_fraction, const DriftRates& rates,
                                         int steps_per_window);

Eigen::RowVectorXd d_vector(const StateLayout& layout);
Eigen::RowVectorXd d_upper(const StateLayout& layout);
Eigen::RowVectorXd d_lower(const StateLayout& layout);
/// D without the FCS entry: output of the EVs the operator can steer.
Eigen::RowVectorXd d_dispatchable(const StateLayout& layout);

double aggregated_power(const StateLayout& layout, const Eigen::VectorXd& x, double p_ave_kw, int n);
/// Returns (y_u, y_l).
std::pair<double, double> flexibility_bounds(const StateLayout& layout, const Eigen::VectorXd& x, double p_ave_kw,
                                             int n);
FlexibilityReport report(const StateLayout& layout, const StateVector& sv, double p_ave_kw);

/// x' = A x + B u + C v. Throws FeedbackInfeasible when an entry goes below -1e-9.
Eigen::VectorXd predict(const StateLayout& layout, const Eigen::VectorXd& x, const TransitionMatrix& a,
                        const FeedbackSignal& fb);

/// Model state split into mass that has sat in its mode since the last renewal
/// and mass a broadcast has switched since then, each with its own A.
struct SplitState {
    Eigen::VectorXd settled;
    Eigen::VectorXd moved;

    Eigen::VectorXd total() const { return settled + moved; }
};

/// One step of the split model: the switch happens first, on x, then each part
/// drifts with its own A. Shifts leave each source state pro rata from both
/// parts and arrive in `moved`. Throws FeedbackInfeasible like predict.
SplitState predict(const StateLayout& layout, const SplitState& x, const TransitionMatrix& a_settled,
                   const TransitionMatrix& a_moved, const FeedbackSignal& fb);

/// Greedy SoC-ordered waterfall that moves the dispatchable output of `x` to
/// `target_kw`. Shifts never exceed the pre-shift occupancy of their source.
FeedbackSignal make_feedback(const StateLayout& layout, const Eigen::VectorXd& x, double target_kw, double p_ave_kw,
                             int n);

/// Converts mass shifts into switching probabilities. Mixed signs throw ContractViolation.
ControlBroadcast to_broadcast(const StateLayout& layout, const FeedbackSignal& fb, const Eigen::VectorXd& x);

/// Expected mass shift produced when a population distributed as `x` obeys `bc`.
FeedbackSignal feedback_from_broadcast(const StateLayout& layout, const ControlBroadcast& bc,
                                       const Eigen::VectorXd& x);

} // namespace v2gsim::essm
