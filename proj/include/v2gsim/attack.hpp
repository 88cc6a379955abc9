#pragma once

#include "v2gsim/detector.hpp"
#include "v2gsim/essm.hpp"
#include "v2gsim/fleet.hpp"
#include "v2gsim/state.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <span>
#include <vector>

namespace v2gsim::attack {

/// mask(to - 1, from - 1) is true when mass may move from state `from` to `to`.
using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Mode changes inside one SoC block plus the diagonal; special states fixed.
Mask allowed_transitions(const StateLayout& layout);
/// Same as allowed_transitions without the direct CM<->DM jumps.
Mask adjacent_mode_transitions(const StateLayout& layout);

struct PlanConfig {
    int horizon = 2;        // T_H: periods after the first
    int period_steps = 15;  // N_p
    double epsilon = 0.01;
    detector::Norm norm = detector::Norm::L1;
    int sweeps = 2;

    void validate() const;
};

struct ManipulationPlan {
    std::vector<Eigen::MatrixXd> e; // E_0 .. E_{T_H}, column-stochastic
    double objective = 0.0;         // gain over the no-attack plan
};

/// Per-period reward row: sum over i < N_p of weights * A^i.
Eigen::RowVectorXd period_reward(const Eigen::MatrixXd& a, const Eigen::RowVectorXd& weights, int period_steps);

/// Cumulative deviation sum_h reward * (E_h x_h - x_h) with x_{h+1} = A^{N_p} E_h x_h.
double plan_objective(const Eigen::VectorXd& x0, const Eigen::MatrixXd& a, const Eigen::RowVectorXd& weights,
                      std::span<const Eigen::MatrixXd> e, int period_steps);

/// Block-coordinate sequential LP over E_0..E_{T_H}. Never returns a plan that
/// scores below the identity plan.
ManipulationPlan plan_manipulation(const Eigen::VectorXd& x0, const Eigen::MatrixXd& a,
                                   const Eigen::RowVectorXd& weights, const Mask& mask, const PlanConfig& cfg);

/// Per-EV likelihood over the 3Ns operational states (index id - 1). Empty
/// for forced or special-state EVs.
struct TransitionWeights {
    int current_id = 0;
    Eigen::VectorXd pi;
};

double beta(int block);
double beta_prime(int block);
TransitionWeights transition_weights(const StateLayout& layout, int state_id, double soc);

/// Largest-remainder apportionment of `total` over `shares`; ties go to the lower index.
Eigen::VectorXi integerize_targets(const Eigen::VectorXd& shares, int total);

struct Assignment {
    std::vector<int> target; // state id per EV
    double log_likelihood = 0.0;
};

/// Maximum-likelihood assignment with exact column counts. `mask`, when given,
/// further restricts EV i to targets reachable from its current state.
Assignment assign_targets(const StateLayout& layout, std::span<const TransitionWeights> weights,
                          const Eigen::VectorXi& counts, const Mask* mask = nullptr);

struct Fabrication {
    double soc = 0.0;
    double power_kw = 0.0;
};

/// Concrete (S', P') that presents a move from `from_id` to `to_id` starting at
/// the previously reported SoC.
Fabrication map_to_measurements(const StateLayout& layout, const fleet::EvSpec& spec, double prev_soc, int from_id,
                                int to_id, double period_h, double granularity = fleet::kSocGranularity);

struct AttackConfig {
    PlanConfig plan;
    double step_h = 20.0 / 3600.0;
    double granularity = fleet::kSocGranularity;
    std::uint64_t seed = 0;
    /// Replicas react to intercepted broadcasts like a real EV would.
    bool follow_broadcast = true;
    /// Should match the operator's construction of A.
    essm::DriftModel drift = essm::DriftModel::Projected;
    /// Build A from the true reports of the uncompromised EVs as well.
    bool sees_clean_fleet = false;
};

struct Replica {
    int ev_id = -1;
    fleet::EvStatus status;
    fleet::Measurement last_report;
    bool reported = false;
};

struct EpochStats {
    long step = -1;
    int replicas = 0;
    int operational = 0;
    int manipulated = 0;
    int fallbacks = 0;
    double plan_gain = 0.0;
};

/// One emitted manipulation: the state the replica would have reported and the
/// state its fabricated report lands in.
struct Move {
    int ev_id = -1;
    int natural_id = 0;
    int reported_id = 0;
};

/// Shadow IEVM of the compromised, connected EVs and the epoch pipeline that
/// turns it into fabricated reports.
class ShadowFleet {
public:
    ShadowFleet(StateLayout layout, AttackConfig cfg, const std::vector<fleet::EvRecord>& records);

    /// Drops departed replicas and adopts newly connected compromised EVs from their true status.
    void sync(double now_h, std::span<const fleet::EvStatus> truth);
    void observe_broadcast(const ControlBroadcast& bc, long step);
    /// One physics step, then the forced-charging check at the new clock.
    void advance(double dt_h, double next_now_h);

    /// Runs the full manipulation pipeline and returns one report per replica.
    /// `clean` holds reports of uncompromised EVs; it is read only when
    /// sees_clean_fleet is set.
    std::vector<fleet::Measurement> attack_step(long step, double now_h,
                                                std::span<const fleet::Measurement> clean = {});

    const std::vector<Replica>& replicas() const noexcept { return replicas_; }
    const EpochStats& last_stats() const noexcept { return stats_; }
    const std::vector<Move>& last_moves() const noexcept { return moves_; }

private:
    fleet::Measurement natural_report(const Replica& r, long step) const;

    StateLayout layout_;
    AttackConfig cfg_;
    const std::vector<fleet::EvRecord>* records_;
    std::vector<Replica> replicas_;
    std::vector<int> slot_; // ev id -> replica position or -1
    EpochStats stats_;
    std::vector<Move> moves_;
};

} // namespace v2gsim::attack
