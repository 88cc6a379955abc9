#include "v2gsim/state.hpp"

#include "v2gsim/errors.hpp"

#include <algorithm>
#include <cmath>

namespace v2gsim {

int StateLayout::soc_block(double soc) const noexcept
{
    // Reported SoC sits on a 1 % grid that can coincide with block edges; the
    // small bias keeps 0.50 in the block that starts at 0.50.
    const double pos = (soc - soc_min) / block_width() + 1e-9;
    const int block = static_cast<int>(std::floor(pos)) + 1;
    return std::clamp(block, 1, ns);
}

int StateLayout::id_for(Mode mode, int block) const noexcept
{
    switch (mode) {
    case Mode::Charging: return cm(block);
    case Mode::Idle: return im(block);
    case Mode::Discharging: return dm(block);
    }
    return im(block);
}

Mode StateLayout::mode_of(int id) const noexcept
{
    if (id <= ns) return Mode::Charging;
    if (id <= 2 * ns) return Mode::Idle;
    return Mode::Discharging;
}

void StateLayout::validate() const
{
    if (ns < 1) throw ConfigError("n_s: must be >= 1");
    if (!(soc_min >= 0.0 && soc_min < soc_max && soc_max <= 1.0))
        throw ConfigError("soc range: need 0 <= soc_min < soc_max <= 1");
}

} // namespace v2gsim
