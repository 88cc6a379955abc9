#include "doctest.h"

#include "v2gsim/agc.hpp"
#include "v2gsim/errors.hpp"

#include <cmath>

using namespace v2gsim;
using namespace v2gsim::agc;

namespace {

InputSchedule area1_step(double pu)
{
    return [=](double) {
        AgcInputs in;
        in.load[0] = pu;
        return in;
    };
}

double max_abs_diff(const AgcState& a, const AgcState& b)
{
    const auto x = a.pack(), y = b.pack();
    double m = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) m = std::max(m, std::abs(x[i] - y[i]));
    return m;
}

} // namespace

TEST_SUITE("agc")
{
    TEST_CASE("equilibrium")
    {
        const AgcParams p;
        const auto d = derivatives(AgcState{}, p, AgcInputs{});
        for (double v : d.pack()) CHECK(v == 0.0);
        const auto run = integrate(p, [](double) { return AgcInputs{}; }, 0.01, 5.0, 50);
        for (const auto& s : run)
            for (double v : s.state.pack()) CHECK(v == 0.0);
    }

    TEST_CASE("a load increase pulls frequency down")
    {
        const AgcParams p;
        AgcInputs in;
        in.load[0] = 0.125;
        CHECK(derivatives(AgcState{}, p, in).df[0] < 0.0);
    }

    TEST_CASE("symmetric areas exchange nothing")
    {
        AgcParams p;
        p.area[1] = p.area[0];
        const auto run = integrate(
            p,
            [](double) {
                AgcInputs in;
                in.load = {0.05, 0.05};
                return in;
            },
            0.01, 30.0, 10);
        for (const auto& s : run) CHECK(std::abs(s.state.ptie) < 1e-15);
    }

    TEST_CASE("pack and unpack round trip")
    {
        AgcState s;
        s.df = {1, 2};
        s.pg = {3, 4};
        s.pm = {5, 6};
        s.ace_int = {7, 8};
        s.ptie = 9;
        CHECK(AgcState::unpack(s.pack()).pack() == s.pack());
    }

    TEST_CASE("fourth-order convergence under step halving")
    {
        const AgcParams p;
        const auto in = area1_step(0.05);
        const double t = 10.0;
        const auto a = integrate(p, in, 0.02, t, 100000).back().state;
        const auto b = integrate(p, in, 0.01, t, 100000).back().state;
        const auto c = integrate(p, in, 0.005, t, 100000).back().state;
        const double e1 = max_abs_diff(a, b), e2 = max_abs_diff(b, c);
        CHECK(e2 < 1e-6);
        CHECK(e1 / e2 == doctest::Approx(16.0).epsilon(0.25));
    }

    TEST_CASE("integral action restores frequency and ACE")
    {
        const AgcParams p;
        const auto run = integrate(p, area1_step(0.05), 0.02, 200.0, 1000);
        const auto& s = run.back().state;
        CHECK(std::abs(s.df[0]) < 1e-4);
        CHECK(std::abs(s.df[1]) < 1e-4);
        CHECK(std::abs(ace(p, s, 0)) < 1e-4);
        CHECK(std::abs(ace(p, s, 1)) < 1e-4);
    }

    TEST_CASE("a load step in area 1 draws power over the tie line")
    {
        const AgcParams p;
        double lowest = 0.0;
        for (const auto& s : integrate(p, area1_step(0.05), 0.01, 20.0, 10)) lowest = std::min(lowest, s.state.ptie);
        CHECK(lowest < 0.0);
    }

    TEST_CASE("the reference event")
    {
        const AgcParams p = reference_params();
        const auto short_run = scenario_2200(p, 60.0, 50.0, 25.95);
        const auto full_run = scenario_2200(p, 60.0, 50.0, 50.0);
        const auto none_run = scenario_2200(p, 60.0, 50.0, 0.0);
        CHECK(short_run.shortfall_mw == doctest::Approx(24.05).epsilon(1e-6));
        CHECK(short_run.net_imbalance_mw == doctest::Approx(4.05).epsilon(1e-6));
        CHECK(short_run.tie_min < 0.0);
        CHECK(short_run.peak_df1 > full_run.peak_df1);
        CHECK(none_run.peak_df1 > short_run.peak_df1);
        CHECK(full_run.shortfall_mw == 0.0);
    }

    TEST_CASE("scenario and integrator contracts")
    {
        const AgcParams p = reference_params();
        CHECK_THROWS_AS(scenario_2200(p, 20.0, 50.0, 25.95), ContractViolation);
        CHECK_THROWS_AS(scenario_2200(p, 60.0, 50.0, -1.0), ContractViolation);
        CHECK_THROWS_AS(integrate(p, area1_step(0.1), 0.05, 1.0), ContractViolation);
        AgcParams bad;
        bad.area[0].h = 0.0;
        CHECK_THROWS_AS(bad.validate(), ConfigError);
    }
}
