#pragma once

#include <Eigen/Core>

#include <limits>

namespace v2gsim::optkit {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// maximize c.x  subject to  a_eq x = b_eq,  lower <= x <= upper.
/// Lower bounds must be finite; upper bounds may be +inf.
struct LinearProgram {
    Eigen::VectorXd c;
    Eigen::MatrixXd a_eq;
    Eigen::VectorXd b_eq;
    Eigen::VectorXd lower;
    Eigen::VectorXd upper;
};

enum class LpStatus { Optimal, Infeasible, Unbounded };

struct LpResult {
    LpStatus status = LpStatus::Infeasible;
    Eigen::VectorXd x;
    double objective = 0.0;
    /// Phase-one residual (sum of artificial variables). Positive means infeasible.
    double infeasibility = 0.0;
    int pivots = 0;
};

/// Dense two-phase tableau simplex with Bland's rule.
LpResult solve_lp(const LinearProgram& lp);

/// Balanced transportation problem; cost +inf marks forbidden cells.
struct TransportationProblem {
    Eigen::MatrixXd cost;
    Eigen::VectorXi supply;
    Eigen::VectorXi demand;
};

struct TransportationResult {
    Eigen::MatrixXi flow;
    double cost = 0.0;
};

/// Min-cost flow by successive shortest paths with potentials. Throws
/// AssignmentInfeasible naming an unreachable demand column (-1 for a row
/// without any allowed cell).
TransportationResult solve_transportation(const TransportationProblem& tp);

} // namespace v2gsim::optkit
