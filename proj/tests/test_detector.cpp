#include "doctest.h"

#include "v2gsim/detector.hpp"
#include "v2gsim/errors.hpp"

using namespace v2gsim;
using namespace v2gsim::detector;

namespace {

fleet::EvSpec spec_30kwh()
{
    fleet::EvSpec s;
    s.capacity_kwh = 30.0;
    s.charge_kw = 6.0;
    s.discharge_kw = 8.0;
    s.efficiency = 0.9;
    return s;
}

DetectionConfig five_minutes()
{
    DetectionConfig c;
    c.period_h = 1.0 / 12.0;
    return c;
}

} // namespace

TEST_SUITE("detector")
{
    TEST_CASE("aggregate check uses a strict threshold")
    {
        const DetectionConfig cfg;
        Eigen::VectorXd a = Eigen::VectorXd::Zero(4), b = Eigen::VectorXd::Zero(4);
        a << 0.5, 0.5, 0.0, 0.0;
        CHECK_FALSE(check_aggregate(a, a, cfg, 0));
        b << 0.49, 0.5, 0.01, 0.0;
        const auto alarm = check_aggregate(a, b, cfg, 3);
        REQUIRE(alarm);
        CHECK(alarm->value == doctest::Approx(0.02));
        CHECK(alarm->kind == AlarmKind::Aggregate);
        CHECK(alarm->step == 3);
        b << 0.4955, 0.5, 0.0045, 0.0;
        CHECK_FALSE(check_aggregate(a, b, cfg, 3));
    }

    TEST_CASE("norms")
    {
        Eigen::VectorXd a(3), b(3);
        a << 0.2, 0.3, 0.5;
        b << 0.3, 0.3, 0.4;
        CHECK(distance(a, b, Norm::L1) == doctest::Approx(0.2));
        CHECK(distance(a, b, Norm::LInf) == doctest::Approx(0.1));
        CHECK_THROWS_AS(distance(a, Eigen::VectorXd::Zero(2), Norm::L1), ContractViolation);
    }

    TEST_CASE("energy bound on the reported soc change")
    {
        const auto s = spec_30kwh();
        const auto cfg = five_minutes();
        CHECK(max_rise_steps(s, cfg) == 2);
        const fleet::Measurement prev{1, 0.50, -6.0, 0};
        CHECK(feasible(prev, {1, 0.50, 0.0, 15}, s, cfg));
        CHECK(feasible(prev, {1, 0.52, -6.0, 15}, s, cfg));
        CHECK_FALSE(feasible(prev, {1, 0.53, -6.0, 15}, s, cfg));
        const auto alarm = check_feasibility(prev, {1, 0.55, -6.0, 15}, s, cfg);
        REQUIRE(alarm);
        CHECK(alarm->kind == AlarmKind::Feasibility);
        CHECK(alarm->ev_id == 1);
    }

    TEST_CASE("power bound")
    {
        const auto s = spec_30kwh();
        const auto cfg = five_minutes();
        const fleet::Measurement prev{1, 0.50, 0.0, 0};
        CHECK(check_feasibility(prev, {1, 0.50, 10.0, 15}, s, cfg));
        CHECK(check_feasibility(prev, {1, 0.50, -7.0, 15}, s, cfg));
        CHECK_FALSE(check_feasibility(prev, {1, 0.50, 8.0, 15}, s, cfg));
    }

    TEST_CASE("discharge bound includes the efficiency")
    {
        const auto s = spec_30kwh();
        const auto cfg = five_minutes();
        // 8 kW for 5 minutes drains 8/12/(0.9*30) = 2.47 points.
        CHECK(max_fall_steps(s, cfg) == 3);
        const fleet::Measurement prev{1, 0.50, 8.0, 0};
        CHECK(feasible(prev, {1, 0.47, 8.0, 15}, s, cfg));
        CHECK_FALSE(feasible(prev, {1, 0.46, 8.0, 15}, s, cfg));
    }

    TEST_CASE("feasibility check contracts")
    {
        const auto s = spec_30kwh();
        const auto cfg = five_minutes();
        CHECK_THROWS_AS(check_feasibility({1, 0.5, 0.0, 0}, {2, 0.5, 0.0, 15}, s, cfg), ContractViolation);
        CHECK_THROWS_AS(check_feasibility({1, 0.5, 0.0, 0}, {1, 0.5, 0.0, 31}, s, cfg), ContractViolation);
        DetectionConfig bad;
        bad.epsilon = 0.0;
        CHECK_THROWS_AS(bad.validate(), ConfigError);
    }

    TEST_CASE("true physics never trips the per-EV check")
    {
        const auto s = spec_30kwh();
        const auto cfg = five_minutes();
        const double dt = 20.0 / 3600.0;
        for (double p : {-6.0, 0.0, 8.0}) {
            for (double start = 0.10; start < 0.90; start += 0.0137) {
                double soc = start;
                for (int k = 0; k < 15; ++k) soc = fleet::step_ev(s, soc, p, dt);
                const fleet::Measurement a{0, fleet::quantize_soc(start), p, 0};
                const fleet::Measurement b{0, fleet::quantize_soc(soc), p, 15};
                CHECK(feasible(a, b, s, cfg));
            }
        }
    }
}
