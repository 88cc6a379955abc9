#pragma once

// Random small instances for the oracle comparisons.

#include "v2gsim/optkit.hpp"

#include <Eigen/Core>

#include <random>

namespace instances {

/// Unit-supply rows (EVs) over `cols` columns with integer costs, some cells
/// forbidden, and column counts taken from one random feasible assignment.
inline v2gsim::optkit::TransportationProblem assignment(std::mt19937_64& rng, int max_rows = 6, int cols = 3)
{
    std::uniform_int_distribution<int> rows_d(1, max_rows);
    std::uniform_int_distribution<int> cost_d(0, 20);
    std::uniform_int_distribution<int> col_d(0, cols - 1);
    std::bernoulli_distribution forbid(0.25);
    const int rows = rows_d(rng);
    v2gsim::optkit::TransportationProblem tp;
    tp.cost.resize(rows, cols);
    tp.supply = Eigen::VectorXi::Ones(rows);
    tp.demand = Eigen::VectorXi::Zero(cols);
    for (int r = 0; r < rows; ++r) {
        const int keep = col_d(rng);
        for (int c = 0; c < cols; ++c)
            tp.cost(r, c) = c != keep && forbid(rng) ? v2gsim::optkit::kInf : static_cast<double>(cost_d(rng));
        ++tp.demand[keep];
    }
    return tp;
}

/// Equality-constrained box LP with finite bounds. Feasible by construction
/// when `feasible` is set; otherwise b is drawn freely and may be infeasible.
inline v2gsim::optkit::LinearProgram box_lp(std::mt19937_64& rng, int n, int m, bool feasible)
{
    std::uniform_real_distribution<double> coef(-3.0, 3.0);
    std::uniform_real_distribution<double> width(0.5, 4.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    v2gsim::optkit::LinearProgram lp;
    lp.c.resize(n);
    lp.a_eq.resize(m, n);
    lp.lower.resize(n);
    lp.upper.resize(n);
    for (int j = 0; j < n; ++j) {
        lp.c[j] = coef(rng);
        lp.lower[j] = coef(rng);
        lp.upper[j] = lp.lower[j] + width(rng);
    }
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) lp.a_eq(i, j) = coef(rng);
    Eigen::VectorXd x(n);
    for (int j = 0; j < n; ++j) x[j] = lp.lower[j] + unit(rng) * (lp.upper[j] - lp.lower[j]);
    lp.b_eq = lp.a_eq * x;
    if (!feasible)
        for (int i = 0; i < m; ++i) lp.b_eq[i] += 6.0 * coef(rng);
    return lp;
}

struct PlanToy {
    Eigen::VectorXd x0;
    Eigen::MatrixXd a;
    Eigen::RowVectorXd weights;
};

/// Three-state toy: random distribution, column-stochastic A, weights in [0, 2].
inline PlanToy plan_toy(std::mt19937_64& rng, int dim = 3)
{
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    PlanToy t;
    t.x0.resize(dim);
    for (int i = 0; i < dim; ++i) t.x0[i] = 0.05 + unit(rng);
    t.x0 /= t.x0.sum();
    t.a.resize(dim, dim);
    for (int c = 0; c < dim; ++c) {
        for (int r = 0; r < dim; ++r) t.a(r, c) = r == c ? 2.0 + unit(rng) : unit(rng);
        t.a.col(c) /= t.a.col(c).sum();
    }
    t.weights.resize(dim);
    for (int i = 0; i < dim; ++i) t.weights[i] = 2.0 * unit(rng);
    return t;
}

} // namespace instances
