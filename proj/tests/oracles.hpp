#pragma once

// Brute-force reference solvers shared by the unit tests and the acceptance run.

#include "v2gsim/attack.hpp"
#include "v2gsim/optkit.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <limits>
#include <optional>
#include <vector>

namespace oracle {

/// Cheapest way to send each unit-supply row to one column so that column c
/// receives exactly demand[c] rows. +inf cells are forbidden. Returns +inf
/// when no assignment exists.
inline double exhaustive_assignment(const Eigen::MatrixXd& cost, const Eigen::VectorXi& demand)
{
    const auto rows = cost.rows();
    const auto cols = cost.cols();
    double best = std::numeric_limits<double>::infinity();
    std::vector<int> left(demand.data(), demand.data() + demand.size());
    std::function<void(Eigen::Index, double)> walk = [&](Eigen::Index r, double acc) {
        if (r == rows) {
            best = std::min(best, acc);
            return;
        }
        for (Eigen::Index c = 0; c < cols; ++c) {
            if (left[static_cast<std::size_t>(c)] == 0 || !std::isfinite(cost(r, c))) continue;
            --left[static_cast<std::size_t>(c)];
            walk(r + 1, acc + cost(r, c));
            ++left[static_cast<std::size_t>(c)];
        }
    };
    walk(0, 0.0);
    return best;
}

/// Maximum of c.x over every basic solution: choose m basic columns, pin the
/// rest at a finite bound, solve for the basics and keep the ones inside
/// their bounds. All bounds must be finite. nullopt when no vertex exists.
inline std::optional<double> lp_by_vertices(const v2gsim::optkit::LinearProgram& lp, double tol = 1e-9)
{
    const int m = static_cast<int>(lp.a_eq.rows());
    const int n = static_cast<int>(lp.a_eq.cols());
    std::optional<double> best;
    std::vector<int> basis;
    std::function<void(int)> choose = [&](int from) {
        if (static_cast<int>(basis.size()) == m) {
            Eigen::MatrixXd ab(m, m);
            for (int k = 0; k < m; ++k) ab.col(k) = lp.a_eq.col(basis[static_cast<std::size_t>(k)]);
            Eigen::FullPivLU<Eigen::MatrixXd> lu(ab);
            if (lu.rank() < m) return;
            std::vector<int> non;
            for (int j = 0; j < n; ++j)
                if (std::find(basis.begin(), basis.end(), j) == basis.end()) non.push_back(j);
            const int free_count = static_cast<int>(non.size());
            for (long mask = 0; mask < (1L << free_count); ++mask) {
                Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
                for (int k = 0; k < free_count; ++k) {
                    const int j = non[static_cast<std::size_t>(k)];
                    x[j] = (mask >> k) & 1 ? lp.upper[j] : lp.lower[j];
                }
                const Eigen::VectorXd xb = lu.solve(lp.b_eq - lp.a_eq * x);
                bool inside = true;
                for (int k = 0; k < m; ++k) {
                    const int j = basis[static_cast<std::size_t>(k)];
                    inside = inside && xb[k] >= lp.lower[j] - tol && xb[k] <= lp.upper[j] + tol;
                    x[j] = xb[k];
                }
                if (!inside || (lp.a_eq * x - lp.b_eq).cwiseAbs().maxCoeff() > 1e-7) continue;
                const double obj = lp.c.dot(x);
                if (!best || obj > *best) best = obj;
            }
            return;
        }
        for (int j = from; j < n; ++j) {
            basis.push_back(j);
            choose(j + 1);
            basis.pop_back();
        }
    };
    choose(0);
    return best;
}

/// Best two-period plan value over the image grid: in each period the
/// manipulated distribution E x is x plus a multiple of `resolution` in every
/// coordinate, conserving mass, nonnegative and within `epsilon` in the
/// 1-norm. With every transition allowed any such image is reachable, and the
/// objective only depends on E x.
inline double grid_plan_optimum(const Eigen::VectorXd& x0, const Eigen::MatrixXd& a, const Eigen::RowVectorXd& weights,
                                int period_steps, int periods, double epsilon, double resolution = 0.01)
{
    const auto dim = x0.size();
    const int budget = static_cast<int>(std::floor(epsilon / resolution + 1e-9));
    std::vector<Eigen::VectorXi> offsets;
    Eigen::VectorXi d(dim);
    std::function<void(Eigen::Index, int, int)> build = [&](Eigen::Index i, int sum, int used) {
        if (i == dim - 1) {
            d[i] = -sum;
            if (used + std::abs(d[i]) <= budget) offsets.push_back(d);
            return;
        }
        for (int v = -budget; v <= budget; ++v) {
            if (used + std::abs(v) > budget) continue;
            d[i] = v;
            build(i + 1, sum + v, used + std::abs(v));
        }
    };
    build(0, 0, 0);

    const Eigen::RowVectorXd w = v2gsim::attack::period_reward(a, weights, period_steps);
    Eigen::MatrixXd m = Eigen::MatrixXd::Identity(dim, dim);
    for (int i = 0; i < period_steps; ++i) m = a * m;

    double best = -std::numeric_limits<double>::infinity();
    std::function<void(int, const Eigen::VectorXd&, double)> walk = [&](int h, const Eigen::VectorXd& x, double acc) {
        if (h == periods) {
            best = std::max(best, acc);
            return;
        }
        for (const auto& off : offsets) {
            const Eigen::VectorXd delta = off.cast<double>() * resolution;
            const Eigen::VectorXd ex = x + delta;
            if (ex.minCoeff() < -1e-12) continue;
            walk(h + 1, m * ex, acc + w.dot(delta));
        }
    };
    walk(0, x0, 0.0);
    return best;
}

} // namespace oracle
