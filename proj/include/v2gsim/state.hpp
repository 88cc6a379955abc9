#pragma once

#include <Eigen/Core>

#include <cstdint>

namespace v2gsim {

/// Operating mode of a connected EV. Power sign: negative charges, positive discharges.
enum class Mode : std::uint8_t { Charging, Idle, Discharging };

inline Mode mode_of_power(double power_kw) noexcept
{
    if (power_kw < 0.0) return Mode::Charging;
    if (power_kw > 0.0) return Mode::Discharging;
    return Mode::Idle;
}

/// Index layout of the aggregate state. Ids are 1-based:
/// CM = 1..Ns, IM = Ns+1..2Ns, DM = 2Ns+1..3Ns, then SS_MAX, FCS, SS_MIN.
struct StateLayout {
    int ns = 10;
    double soc_min = 0.05;
    double soc_max = 0.95;

    int dim() const noexcept { return 3 * ns + 3; }
    int operational() const noexcept { return 3 * ns; }
    double block_width() const noexcept { return (soc_max - soc_min) / ns; }

    /// SoC interval 1..ns over [soc_min, soc_max]; values outside are clamped.
    int soc_block(double soc) const noexcept;
    double block_lower_edge(int block) const noexcept { return soc_min + (block - 1) * block_width(); }

    int cm(int block) const noexcept { return block; }
    int im(int block) const noexcept { return ns + block; }
    int dm(int block) const noexcept { return 2 * ns + block; }
    int id_for(Mode mode, int block) const noexcept;

    int ss_max() const noexcept { return 3 * ns + 1; }
    int fcs() const noexcept { return 3 * ns + 2; }
    int ss_min() const noexcept { return 3 * ns + 3; }

    bool is_special(int id) const noexcept { return id > 3 * ns; }
    /// Only meaningful for operational ids.
    Mode mode_of(int id) const noexcept;
    int block_of(int id) const noexcept { return (id - 1) % ns + 1; }

    void validate() const;
};

/// Probabilistic switching broadcast: u_s drives CM<->IM, v_s drives IM<->DM.
/// cde = +1 selects CM->IM / IM->DM, cde = -1 selects IM->CM / DM->IM.
struct ControlBroadcast {
    Eigen::VectorXd u_s;
    Eigen::VectorXd v_s;
    int cde = +1;

    static ControlBroadcast none(int ns)
    {
        return {Eigen::VectorXd::Zero(ns), Eigen::VectorXd::Zero(ns), +1};
    }
    bool is_zero() const noexcept { return u_s.isZero(0.0) && v_s.isZero(0.0); }
};

} // namespace v2gsim
