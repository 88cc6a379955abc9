#include "v2gsim/optkit.hpp"

#include "v2gsim/errors.hpp"

#include <cmath>
#include <queue>
#include <string>
#include <vector>

namespace v2gsim::optkit {

namespace {

constexpr double kPivotTol = 1e-10;
constexpr double kCostTol = 1e-10;
constexpr double kFeasTol = 1e-9;
constexpr int kMaxPivots = 200000;

class Tableau {
public:
    Tableau(int rows, int cols) : t_(Eigen::MatrixXd::Zero(rows + 1, cols + 1)), basis_(rows, -1), rows_(rows), cols_(cols) {}

    double& at(int r, int c) { return t_(r, c); }
    double rhs(int r) const { return t_(r, cols_); }
    double& rhs(int r) { return t_(r, cols_); }
    int& basis(int r) { return basis_[static_cast<std::size_t>(r)]; }
    double objective() const { return t_(rows_, cols_); }

    /// Loads the reduced-cost row for `c` (maximize) given the current basis.
    void set_objective(const Eigen::VectorXd& c)
    {
        t_.row(rows_).setZero();
        for (int j = 0; j < cols_; ++j) t_(rows_, j) = -c[j];
        for (int r = 0; r < rows_; ++r) {
            const double cb = c[basis_[static_cast<std::size_t>(r)]];
            if (cb != 0.0) t_.row(rows_) += cb * t_.row(r);
        }
    }

    void pivot(int r, int c)
    {
        t_.row(r) /= t_(r, c);
        for (int i = 0; i <= rows_; ++i) {
            if (i == r) continue;
            const double f = t_(i, c);
            if (f != 0.0) t_.row(i) -= f * t_.row(r);
        }
        basis_[static_cast<std::size_t>(r)] = c;
    }

    /// Bland's rule iterations over columns [0, allowed). Returns false if unbounded.
    bool optimize(int allowed, int& pivots)
    {
        for (;;) {
            int enter = -1;
            for (int j = 0; j < allowed; ++j) {
                if (t_(rows_, j) < -kCostTol) {
                    enter = j;
                    break;
                }
            }
            if (enter < 0) return true;
            int leave = -1;
            double best = 0.0;
            for (int r = 0; r < rows_; ++r) {
                const double a = t_(r, enter);
                if (a <= kPivotTol) continue;
                const double ratio = t_(r, cols_) / a;
                if (leave < 0 || ratio < best - 1e-12 ||
                    (ratio <= best + 1e-12 && basis_[static_cast<std::size_t>(r)] < basis_[static_cast<std::size_t>(leave)])) {
                    leave = r;
                    best = ratio;
                }
            }
            if (leave < 0) return false;
            pivot(leave, enter);
            if (++pivots > kMaxPivots) throw InternalError("simplex pivot limit exceeded");
        }
    }

private:
    Eigen::MatrixXd t_;
    std::vector<int> basis_;
    int rows_;
    int cols_;
};

} // namespace

LpResult solve_lp(const LinearProgram& lp)
{
    const auto n = static_cast<int>(lp.c.size());
    const auto m_eq = static_cast<int>(lp.b_eq.size());
    if (lp.lower.size() != n || lp.upper.size() != n || lp.a_eq.cols() != (m_eq > 0 ? n : lp.a_eq.cols()) ||
        lp.a_eq.rows() != m_eq)
        throw ContractViolation("linear program dimensions are inconsistent");
    for (int j = 0; j < n; ++j) {
        if (!std::isfinite(lp.lower[j])) throw ContractViolation("lower bounds must be finite");
        if (lp.upper[j] < lp.lower[j]) throw ContractViolation("bound lower > upper on variable " + std::to_string(j));
    }

    std::vector<int> bounded;
    for (int j = 0; j < n; ++j)
        if (std::isfinite(lp.upper[j])) bounded.push_back(j);
    const int n_ub = static_cast<int>(bounded.size());
    const int rows = m_eq + n_ub;
    const int art0 = n + n_ub;
    const int cols = art0 + m_eq;

    Tableau tab(rows, cols);
    const Eigen::VectorXd shift = m_eq > 0 ? Eigen::VectorXd(lp.b_eq - lp.a_eq * lp.lower) : Eigen::VectorXd();
    for (int i = 0; i < m_eq; ++i) {
        const double sign = shift[i] < 0 ? -1.0 : 1.0;
        for (int j = 0; j < n; ++j) tab.at(i, j) = sign * lp.a_eq(i, j);
        tab.rhs(i) = sign * shift[i];
        tab.at(i, art0 + i) = 1.0;
        tab.basis(i) = art0 + i;
    }
    for (int k = 0; k < n_ub; ++k) {
        const int r = m_eq + k;
        const int j = bounded[static_cast<std::size_t>(k)];
        tab.at(r, j) = 1.0;
        tab.at(r, n + k) = 1.0;
        tab.rhs(r) = lp.upper[j] - lp.lower[j];
        tab.basis(r) = n + k;
    }

    LpResult res;
    Eigen::VectorXd c1 = Eigen::VectorXd::Zero(cols);
    c1.tail(m_eq).setConstant(-1.0);
    tab.set_objective(c1);
    tab.optimize(cols, res.pivots);
    res.infeasibility = -tab.objective();
    if (res.infeasibility > kFeasTol) {
        res.status = LpStatus::Infeasible;
        return res;
    }
    // Push degenerate artificials out of the basis where possible.
    for (int r = 0; r < rows; ++r) {
        if (tab.basis(r) < art0) continue;
        for (int j = 0; j < art0; ++j) {
            if (std::abs(tab.at(r, j)) > 1e-9) {
                tab.pivot(r, j);
                ++res.pivots;
                break;
            }
        }
    }

    Eigen::VectorXd c2 = Eigen::VectorXd::Zero(cols);
    c2.head(n) = lp.c;
    tab.set_objective(c2);
    if (!tab.optimize(art0, res.pivots)) {
        res.status = LpStatus::Unbounded;
        return res;
    }

    Eigen::VectorXd y = Eigen::VectorXd::Zero(cols);
    for (int r = 0; r < rows; ++r) y[tab.basis(r)] = tab.rhs(r);
    res.x = y.head(n) + lp.lower;
    for (int j = 0; j < n; ++j) {
        // Snap tiny round-off back inside the box.
        if (res.x[j] < lp.lower[j]) res.x[j] = lp.lower[j];
        if (res.x[j] > lp.upper[j]) res.x[j] = lp.upper[j];
    }
    res.objective = lp.c.dot(res.x);
    res.status = LpStatus::Optimal;
    return res;
}

TransportationResult solve_transportation(const TransportationProblem& tp)
{
    const auto rows = static_cast<int>(tp.cost.rows());
    const auto cols = static_cast<int>(tp.cost.cols());
    if (tp.supply.size() != rows || tp.demand.size() != cols)
        throw ContractViolation("transportation supply/demand sizes do not match the cost matrix");
    if ((tp.supply.array() < 0).any() || (tp.demand.array() < 0).any())
        throw ContractViolation("transportation supplies and demands must be nonnegative");
    if (tp.supply.sum() != tp.demand.sum()) throw ContractViolation("transportation problem is not balanced");

    TransportationResult res;
    res.flow = Eigen::MatrixXi::Zero(rows, cols);

    // Start from the per-row cheapest cell: optimal for the demand-relaxed
    // problem, so the reduced costs below start out nonnegative.
    Eigen::VectorXd pot_row(rows);
    Eigen::VectorXi load = Eigen::VectorXi::Zero(cols);
    for (int i = 0; i < rows; ++i) {
        int best = -1;
        for (int j = 0; j < cols; ++j)
            if (std::isfinite(tp.cost(i, j)) && (best < 0 || tp.cost(i, j) < tp.cost(i, best))) best = j;
        if (best < 0) {
            if (tp.supply[i] == 0) {
                pot_row[i] = 0.0;
                continue;
            }
            throw AssignmentInfeasible("row " + std::to_string(i) + " has no allowed column", -1);
        }
        res.flow(i, best) = tp.supply[i];
        load[best] += tp.supply[i];
        pot_row[i] = -tp.cost(i, best);
    }

    // Residual graph nodes: rows [0, rows), columns [rows, rows+cols), sink.
    // Excess columns act as sources; deficit columns drain into the sink.
    const int sink = rows + cols;
    const int nodes = sink + 1;
    std::vector<double> pot(static_cast<std::size_t>(nodes), 0.0);
    for (int i = 0; i < rows; ++i) pot[static_cast<std::size_t>(i)] = pot_row[i];

    auto excess = [&](int j) { return load[j] - tp.demand[j]; };
    std::vector<double> dist(static_cast<std::size_t>(nodes));
    std::vector<int> prev(static_cast<std::size_t>(nodes));
    std::vector<char> done(static_cast<std::size_t>(nodes));
    using Item = std::pair<double, int>;

    for (;;) {
        bool any = false;
        for (int j = 0; j < cols; ++j) any = any || excess(j) > 0;
        if (!any) break;

        std::fill(dist.begin(), dist.end(), kInf);
        std::fill(prev.begin(), prev.end(), -1);
        std::fill(done.begin(), done.end(), 0);
        std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
        for (int j = 0; j < cols; ++j) {
            if (excess(j) > 0) {
                // Excess columns never move their potential (their distance
                // is always 0), so a common zero start is a valid source.
                const auto v = static_cast<std::size_t>(rows + j);
                dist[v] = 0.0;
                pq.emplace(0.0, rows + j);
            }
        }
        while (!pq.empty()) {
            auto [d, u] = pq.top();
            pq.pop();
            const auto uu = static_cast<std::size_t>(u);
            if (done[uu] || d > dist[uu]) continue;
            done[uu] = 1;
            if (u == sink) break;
            auto relax = [&](int v, double reduced) {
                const auto vv = static_cast<std::size_t>(v);
                const double nd = d + std::max(reduced, 0.0);
                if (nd < dist[vv]) {
                    dist[vv] = nd;
                    prev[vv] = u;
                    pq.emplace(nd, v);
                }
            };
            if (u >= rows) {
                const int j = u - rows;
                // Column -> row along reverse edges of existing flow.
                for (int i = 0; i < rows; ++i)
                    if (res.flow(i, j) > 0) relax(i, -tp.cost(i, j) + pot[uu] - pot[static_cast<std::size_t>(i)]);
                if (excess(j) < 0) relax(sink, pot[uu] - pot[static_cast<std::size_t>(sink)]);
            } else {
                const int i = u;
                for (int j = 0; j < cols; ++j)
                    if (std::isfinite(tp.cost(i, j)))
                        relax(rows + j, tp.cost(i, j) + pot[uu] - pot[static_cast<std::size_t>(rows + j)]);
            }
        }
        if (!done[static_cast<std::size_t>(sink)]) {
            for (int j = 0; j < cols; ++j)
                if (excess(j) < 0)
                    throw AssignmentInfeasible("demand column " + std::to_string(j) + " cannot be reached", j);
            throw InternalError("transportation augmentation found no path");
        }
        const double dt = dist[static_cast<std::size_t>(sink)];
        for (int v = 0; v < nodes; ++v) {
            const auto vv = static_cast<std::size_t>(v);
            pot[vv] += std::min(dist[vv], dt);
        }

        // Walk back from the sink; path alternates column -> row -> column.
        int last_col = prev[static_cast<std::size_t>(sink)] - rows;
        int v = last_col + rows;
        int amount = -excess(last_col);
        std::vector<int> path{v};
        while (prev[static_cast<std::size_t>(v)] >= 0) {
            v = prev[static_cast<std::size_t>(v)];
            path.push_back(v);
        }
        const int first_col = path.back() - rows;
        amount = std::min(amount, excess(first_col));
        // path = [col_k, row_k, col_{k-1}, ..., row_1, col_0]
        for (std::size_t p = 1; p + 1 < path.size(); p += 2) {
            amount = std::min(amount, res.flow(path[p], path[p + 1] - rows));
        }
        for (std::size_t p = 1; p + 1 < path.size(); p += 2) {
            const int i = path[p];
            const int to = path[p - 1] - rows;
            const int from = path[p + 1] - rows;
            res.flow(i, from) -= amount;
            res.flow(i, to) += amount;
        }
        load[first_col] -= amount;
        load[last_col] += amount;
    }

    res.cost = 0.0;
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j)
            if (res.flow(i, j) > 0) res.cost += res.flow(i, j) * tp.cost(i, j);
    return res;
}

} // namespace v2gsim::optkit
