#include "doctest.h"

#include "v2gsim/errors.hpp"
#include "v2gsim/essm.hpp"
#include "v2gsim/fleet.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <vector>

using namespace v2gsim;
using namespace v2gsim::essm;

namespace {

const StateLayout kLayout{};

Eigen::VectorXd unit(int id)
{
    Eigen::VectorXd x = Eigen::VectorXd::Zero(kLayout.dim());
    x[id - 1] = 1.0;
    return x;
}

Eigen::VectorXd random_distribution(std::mt19937_64& rng, int dim)
{
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Eigen::VectorXd x(dim);
    for (int i = 0; i < dim; ++i) x[i] = u(rng);
    return x / x.sum();
}

struct Population {
    std::vector<fleet::EvRecord> records;
    std::vector<ObservedEv> observed;
    std::vector<fleet::EvSpec> specs;
};

/// Connected EVs at 20:00 in random modes with SoC intervals around their estimates.
Population random_population(std::uint64_t seed, int size)
{
    fleet::FleetParams p;
    p.size = size;
    Population pop;
    pop.records = fleet::sample_fleet(p, seed);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> soc(0.05, 0.95), half(0.0, 0.01);
    std::uniform_int_distribution<int> mode(0, 2);
    for (const auto& ev : pop.records) {
        const double s = fleet::quantize_soc(soc(rng));
        const int m = mode(rng);
        const double power = m == 0 ? -ev.spec.charge_kw : m == 2 ? ev.spec.discharge_kw : 0.0;
        pop.observed.push_back({&ev, state_index(kLayout, s, power, false), s, power, half(rng)});
        pop.specs.push_back(ev.spec);
    }
    return pop;
}

void check_column_stochastic(const TransitionMatrix& a)
{
    CHECK(a.minCoeff() >= 0.0);
    CHECK((a.colwise().sum().array() - 1.0).abs().maxCoeff() < 1e-9);
}

/// Runs a chain forward with the given rates (NaN counts as 0).
Eigen::VectorXd run_chain(Eigen::VectorXd m, const Eigen::VectorXd& rates, int steps)
{
    for (int k = 0; k < steps; ++k) {
        Eigen::VectorXd next = m;
        for (Eigen::Index i = 0; i < rates.size(); ++i) {
            const double out = std::isnan(rates[i]) ? 0.0 : rates[i] * m[i];
            next[i] -= out;
            next[i + 1] += out;
        }
        m = next;
    }
    return m;
}

} // namespace

TEST_SUITE("essm")
{
    TEST_CASE("state index worked values")
    {
        CHECK(state_index(kLayout, 0.45, 0.0, false) == 15);
        CHECK(state_index(kLayout, 0.45, -6.0, false) == 5);
        CHECK(state_index(kLayout, 0.45, 6.0, false) == 25);
        CHECK(state_index(kLayout, 0.30, -6.0, true) == 32);
        CHECK(state_index(kLayout, 0.95, 0.0, false) == kLayout.ss_max());
        CHECK(state_index(kLayout, 0.05, 0.0, false) == kLayout.ss_min());
        fleet::EvStatus off;
        CHECK_THROWS_AS(state_index(kLayout, off), NotIndexable);
    }

    TEST_CASE("physical index reads the metered soc")
    {
        fleet::EvStatus st;
        st.connected = true;
        st.soc = 0.4999999;
        CHECK(state_index(kLayout, st) == kLayout.im(6));
    }

    TEST_CASE("state vector counting")
    {
        const std::vector<int> idle{15, 15, 15, 15};
        const auto a = build_state_vector(kLayout, idle);
        CHECK(a.x[14] == 1.0);
        CHECK(a.x.sum() == 1.0);
        const std::vector<int> mixed{5, 5, 25, 25};
        const auto b = build_state_vector(kLayout, mixed);
        CHECK(b.x[4] == 0.5);
        CHECK(b.x[24] == 0.5);
        const auto c = build_state_vector(kLayout, std::vector<int>{});
        CHECK(c.x.isZero());
        CHECK(c.connected == 0);
        CHECK_THROWS_AS(build_state_vector(kLayout, std::vector<int>{34}), ContractViolation);
    }

    TEST_CASE("average charging power")
    {
        fleet::EvSpec a, b;
        a.charge_kw = 6.0;
        b.charge_kw = 8.0;
        CHECK(p_ave(std::vector<fleet::EvSpec>{a, b}) == 7.0);
        a.charge_kw = 6.5;
        CHECK(p_ave(std::vector<fleet::EvSpec>{a}) == 6.5);
        CHECK_THROWS_AS(p_ave(std::vector<fleet::EvSpec>{}), UndefinedAverage);
    }

    TEST_CASE("average drift probability and matrix entries")
    {
        FleetStats s;
        s.p_ave_kw = 7.0;
        s.p_ave_discharge_kw = 7.0;
        s.mean_efficiency = 0.9;
        s.mean_capacity_kwh = 30.0;
        s.count = 1;
        const double step = 20.0 / 3600.0;
        const double pc = charge_advance_probability(kLayout, s, step);
        CHECK(pc == doctest::Approx(0.0130).epsilon(0.005));
        const auto a = build_transition_matrix(kLayout, s, step, Eigen::VectorXd::Zero(kLayout.dim()), 15);
        CHECK(a(5, 4) == doctest::Approx(pc));
        CHECK(a(4, 4) == doctest::Approx(1.0 - pc));
        check_column_stochastic(a);
    }

    TEST_CASE("all-idle fleet leaves the idle block alone")
    {
        auto pop = random_population(4, 200);
        for (auto& o : pop.observed) {
            o.power_kw = 0.0;
            o.state_id = state_index(kLayout, o.soc, 0.0, false);
        }
        // Far from any departure.
        for (auto& r : pop.records) r.session.finish_h = 1000.0;
        const auto a = build_transition_matrix(kLayout, pop.observed, fleet_stats(pop.specs), 20.0 / 3600.0, 15, 20.0,
                                               DriftModel::Projected);
        const int ns = kLayout.ns;
        CHECK(a.block(ns, ns, ns, ns).isIdentity());
    }

    TEST_CASE("transition matrices are column-stochastic for both drift models")
    {
        for (std::uint64_t seed = 1; seed <= 5; ++seed) {
            const auto pop = random_population(seed, 400);
            for (auto drift : {DriftModel::Average, DriftModel::Projected}) {
                const auto a = build_transition_matrix(kLayout, pop.observed, fleet_stats(pop.specs), 20.0 / 3600.0,
                                                       15, 21.0, drift);
                check_column_stochastic(a);
                std::mt19937_64 rng(seed);
                Eigen::VectorXd x = random_distribution(rng, kLayout.dim());
                for (int n = 0; n < 15; ++n) {
                    x = a * x;
                    CHECK(x.minCoeff() >= 0.0);
                    CHECK(std::abs(x.sum() - 1.0) < 1e-9);
                }
            }
        }
    }

    TEST_CASE("average drift keeps the special states absorbing")
    {
        const auto pop = random_population(8, 300);
        const auto a = build_transition_matrix(kLayout, pop.observed, fleet_stats(pop.specs), 20.0 / 3600.0, 15, 21.0,
                                               DriftModel::Average);
        for (int id = kLayout.ss_max(); id <= kLayout.ss_min(); ++id) CHECK(a(id - 1, id - 1) == 1.0);
    }

    TEST_CASE("chain rate fit reproduces the end-of-window masses")
    {
        std::mt19937_64 rng(21);
        std::uniform_real_distribution<double> u(0.0, 0.3);
        for (int trial = 0; trial < 50; ++trial) {
            const int n = 6;
            Eigen::VectorXd start(n + 1), rates(n);
            for (int i = 0; i <= n; ++i) start[i] = i < n ? u(rng) : 0.0;
            for (int i = 0; i < n; ++i) rates[i] = u(rng);
            const Eigen::VectorXd target = run_chain(start, rates, 15);
            const Eigen::VectorXd fitted = fit_chain_rates(start, target, 15);
            CHECK((run_chain(start, fitted, 15) - target).cwiseAbs().maxCoeff() < 1e-9);
            for (int i = 0; i < n; ++i) CHECK(fitted[i] == doctest::Approx(rates[i]).epsilon(1e-6));
        }
    }

    TEST_CASE("chain rate fit marks unreachable entries and clamps")
    {
        Eigen::VectorXd start(4), target(4);
        start << 0.0, 1.0, 0.0, 0.0;
        target << 0.0, 0.0, 0.0, 1.0;
        const auto r = fit_chain_rates(start, target, 3);
        CHECK(std::isnan(r[0]));
        CHECK(r[1] == 1.0);
        CHECK(r[2] == 1.0);
        target << 0.0, 1.0, 0.0, 0.0;
        CHECK(fit_chain_rates(start, target, 3)[1] == 0.0);
        CHECK_THROWS_AS(fit_chain_rates(start, Eigen::VectorXd::Zero(3), 3), ContractViolation);
    }

    TEST_CASE("projection fit follows the EVs it is built from")
    {
        // A single charging block whose EVs all cross into the next block within the window.
        fleet::EvRecord ev;
        ev.spec.capacity_kwh = 20.0;
        ev.spec.charge_kw = 8.0;
        ev.spec.efficiency = 0.95;
        ev.session.finish_h = 1000.0;
        const double soc = 0.49;
        std::vector<ObservedEv> obs{{&ev, state_index(kLayout, soc, -8.0, false), soc, -8.0, 0.0}};
        const double window = 5.0 / 60.0;
        const auto rates = projected_drift_rates(kLayout, obs, window, 15);
        const int j = kLayout.soc_block(soc);
        CHECK(rates.up[j - 1] == 1.0);
        CHECK(rates.up[j] == 0.0);
        CHECK(std::isnan(rates.up[j - 2]));
        CHECK(std::isnan(rates.down[j - 1]));
    }

    TEST_CASE("entrant rates come from idle EVs")
    {
        fleet::EvRecord ev;
        ev.session.finish_h = 1000.0;
        const double soc = 0.50;
        std::vector<ObservedEv> obs{{&ev, state_index(kLayout, soc, 0.0, false), soc, 0.0, 0.0}};
        const auto own = projected_drift_rates(kLayout, obs, 5.0 / 60.0, 15);
        const auto entrant = entrant_drift_rates(kLayout, obs, 5.0 / 60.0, 15);
        const int j = kLayout.soc_block(soc);
        CHECK(std::isnan(own.up[j - 1]));
        CHECK_FALSE(std::isnan(entrant.up[j - 1]));
        CHECK_FALSE(std::isnan(entrant.down[j - 1]));
    }

    TEST_CASE("forced onset share")
    {
        fleet::EvRecord late, early;
        late.spec.capacity_kwh = 30.0;
        late.spec.charge_kw = 6.0;
        late.spec.efficiency = 0.9;
        late.session.departure_soc = 0.85;
        late.session.finish_h = 23.4;
        early = late;
        early.session.finish_h = 40.0;
        const double soc = 0.25;
        const int id = state_index(kLayout, soc, 0.0, false);
        std::vector<ObservedEv> obs{{&late, id, soc, 0.0, 0.0}, {&early, id, soc, 0.0, 0.0}};
        // At 20:00 with a 5-minute window the first EV needs 3.33 h but has 3.32 h left.
        const auto f = fcs_window_fraction(kLayout, obs, 20.0, 5.0 / 60.0);
        CHECK(f[id - 1] == doctest::Approx(0.5));
    }

    TEST_CASE("aggregate power and flexibility vectors")
    {
        const double p = 7.0;
        const int n = 100;
        CHECK(aggregated_power(kLayout, unit(15), p, n) == 0.0);
        CHECK(aggregated_power(kLayout, unit(5), p, n) == doctest::Approx(-700.0));
        CHECK(aggregated_power(kLayout, unit(kLayout.fcs()), p, n) == doctest::Approx(-700.0));
        auto [yu, yl] = flexibility_bounds(kLayout, unit(15), p, n);
        CHECK(yu == doctest::Approx(700.0));
        CHECK(yl == doctest::Approx(700.0));
        std::tie(yu, yl) = flexibility_bounds(kLayout, unit(3), p, n);
        CHECK(yu == 0.0);
        CHECK(yl == doctest::Approx(1400.0));
        std::tie(yu, yl) = flexibility_bounds(kLayout, unit(kLayout.ss_min()), p, n);
        CHECK(yu == doctest::Approx(1400.0));
        CHECK(yl == 0.0);
    }

    TEST_CASE("aggregates are linear in the distribution")
    {
        std::mt19937_64 rng(2);
        for (int t = 0; t < 50; ++t) {
            const auto x1 = random_distribution(rng, kLayout.dim());
            const auto x2 = random_distribution(rng, kLayout.dim());
            const double al = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
            const Eigen::VectorXd mix = al * x1 + (1.0 - al) * x2;
            const double y = aggregated_power(kLayout, mix, 7.0, 50);
            CHECK(y == doctest::Approx(al * aggregated_power(kLayout, x1, 7.0, 50) +
                                       (1.0 - al) * aggregated_power(kLayout, x2, 7.0, 50)));
            const auto [u, l] = flexibility_bounds(kLayout, mix, 7.0, 50);
            const auto [u1, l1] = flexibility_bounds(kLayout, x1, 7.0, 50);
            const auto [u2, l2] = flexibility_bounds(kLayout, x2, 7.0, 50);
            CHECK(u == doctest::Approx(al * u1 + (1.0 - al) * u2));
            CHECK(l == doctest::Approx(al * l1 + (1.0 - al) * l2));
        }
    }

    TEST_CASE("prediction with and without feedback")
    {
        std::mt19937_64 rng(6);
        const auto x = random_distribution(rng, kLayout.dim());
        const auto pop = random_population(6, 200);
        const auto a = build_transition_matrix(kLayout, pop.observed, fleet_stats(pop.specs), 20.0 / 3600.0, 15, 20.0,
                                               DriftModel::Projected);
        CHECK((predict(kLayout, x, a, FeedbackSignal::zero(kLayout.ns)) - a * x).norm() < 1e-15);

        const int ns = kLayout.ns;
        const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(kLayout.dim(), kLayout.dim());
        FeedbackSignal fb = FeedbackSignal::zero(ns);
        fb.u = x.head(ns);
        const auto shifted = predict(kLayout, x, eye, fb);
        CHECK(shifted.head(ns).cwiseAbs().maxCoeff() < 1e-15);
        CHECK((shifted.segment(ns, ns) - x.segment(ns, ns) - x.head(ns)).norm() < 1e-15);
        CHECK(std::abs(shifted.sum() - 1.0) < 1e-12);

        fb.u *= 2.0;
        CHECK_THROWS_AS(predict(kLayout, x, eye, fb), FeedbackInfeasible);
    }

    TEST_CASE("split prediction conserves mass and matches the joint model for one A")
    {
        std::mt19937_64 rng(12);
        const auto pop = random_population(12, 300);
        const auto a = build_transition_matrix(kLayout, pop.observed, fleet_stats(pop.specs), 20.0 / 3600.0, 15, 20.0,
                                               DriftModel::Projected);
        const auto x = random_distribution(rng, kLayout.dim());
        SplitState s{0.7 * x, 0.3 * x};
        for (int k = 0; k < 15; ++k) {
            const FeedbackSignal fb = make_feedback(kLayout, s.total(), 150.0, 7.0, 100);
            const Eigen::VectorXd joint = a * predict(kLayout, s.total(), Eigen::MatrixXd::Identity(33, 33), fb);
            s = predict(kLayout, s, a, a, fb);
            CHECK((s.total() - joint).cwiseAbs().maxCoeff() < 1e-12);
            CHECK(std::abs(s.total().sum() - 1.0) < 1e-9);
            CHECK(s.settled.minCoeff() >= 0.0);
            CHECK(s.moved.minCoeff() >= 0.0);
        }
    }

    TEST_CASE("feedback waterfall")
    {
        const int ns = kLayout.ns;
        Eigen::VectorXd x = Eigen::VectorXd::Zero(kLayout.dim());
        x[kLayout.cm(9) - 1] = 0.3;
        x[kLayout.cm(10) - 1] = 0.2;
        x[kLayout.im(4) - 1] = 0.5;
        const double p = 7.0;
        const int n = 100;
        const double now = p * n * d_dispatchable(kLayout).dot(x);

        CHECK(make_feedback(kLayout, x, now, p, n).u.isZero());

        // Raise output by 0.25 of the fleet: the top charging block goes first.
        auto fb = make_feedback(kLayout, x, now + 0.25 * p * n, p, n);
        CHECK(fb.u[9] == doctest::Approx(0.2));
        CHECK(fb.u[8] == doctest::Approx(0.05));
        CHECK(fb.u.head(8).isZero());
        CHECK(fb.v.isZero());

        // Exhaust all charging mass, then idle EVs start discharging.
        fb = make_feedback(kLayout, x, now + 0.6 * p * n, p, n);
        CHECK(fb.u.sum() == doctest::Approx(0.5));
        CHECK(fb.v[3] == doctest::Approx(0.1));
        CHECK_FALSE(fb.out_of_range);

        fb = make_feedback(kLayout, x, now + 5.0 * p * n, p, n);
        CHECK(fb.out_of_range);
        CHECK(fb.v.sum() == doctest::Approx(0.5));
        (void)ns;
    }

    TEST_CASE("small three-block waterfall")
    {
        const StateLayout small{3, 0.05, 0.95};
        Eigen::VectorXd x = Eigen::VectorXd::Zero(small.dim());
        x << 0.1, 0.1, 0.1, 0.2, 0.2, 0.2, 0.0, 0.0, 0.0, 0.1, 0.0, 0.0;
        const double now = 10.0 * d_dispatchable(small).dot(x);
        const auto fb = make_feedback(small, x, now + 10.0 * 0.4, 10.0, 1);
        CHECK((fb.u - x.head(3)).norm() < 1e-12);
        CHECK(fb.v[2] == doctest::Approx(0.1));
        CHECK(fb.v.head(2).isZero());
    }

    TEST_CASE("broadcast conversion")
    {
        Eigen::VectorXd x = Eigen::VectorXd::Zero(kLayout.dim());
        x[kLayout.cm(3) - 1] = 0.2;
        x[kLayout.cm(4) - 1] = 0.3;
        FeedbackSignal fb = FeedbackSignal::zero(kLayout.ns);
        fb.u[2] = 0.1;
        fb.u[3] = 0.3;
        auto bc = to_broadcast(kLayout, fb, x);
        CHECK(bc.u_s[2] == doctest::Approx(0.5));
        CHECK(bc.u_s[3] == 1.0);
        CHECK(bc.cde == 1);

        const auto none = to_broadcast(kLayout, FeedbackSignal::zero(kLayout.ns), x);
        CHECK(none.is_zero());
        CHECK(none.cde == 1);

        fb.v[5] = -0.1;
        CHECK_THROWS_AS(to_broadcast(kLayout, fb, x), ContractViolation);
    }

    TEST_CASE("broadcast and expected shift round trip")
    {
        std::mt19937_64 rng(17);
        for (int t = 0; t < 100; ++t) {
            const auto x = random_distribution(rng, kLayout.dim());
            const double target = std::uniform_real_distribution<double>(-700.0, 700.0)(rng);
            const auto fb = make_feedback(kLayout, x, target, 7.0, 100);
            const auto back = feedback_from_broadcast(kLayout, to_broadcast(kLayout, fb, x), x);
            CHECK((back.u - fb.u).cwiseAbs().maxCoeff() < 1e-12);
            CHECK((back.v - fb.v).cwiseAbs().maxCoeff() < 1e-12);
        }
    }

    TEST_CASE("reported index of a charging EV near its deadline")
    {
        fleet::EvRecord ev;
        ev.spec.capacity_kwh = 30.0;
        ev.spec.charge_kw = 6.0;
        ev.spec.efficiency = 0.9;
        ev.session.departure_soc = 0.85;
        ev.session.finish_h = 3.3;
        CHECK(infer_state(kLayout, {0, 0.25, -6.0, 0}, ev, 0.0) == kLayout.fcs());
        CHECK(infer_state(kLayout, {0, 0.25, 0.0, 0}, ev, 0.0) == kLayout.im(3));
    }
}
