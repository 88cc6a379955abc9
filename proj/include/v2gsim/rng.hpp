#pragma once

#include <cstdint>

namespace v2gsim {

// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept
{
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Counter-based uniform stream. The draw for (seed, stream, counter) does not
/// depend on how many other draws were made, so per-EV stepping gives the same
/// numbers in any evaluation order.
class Substream {
public:
    Substream(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter = 0) noexcept
        : key_(mix64(seed ^ mix64(stream + 0x632be59bd9b4e019ULL))), counter_(counter)
    {
    }

    std::uint64_t next_u64() noexcept { return mix64(key_ ^ mix64(counter_++)); }

    /// Uniform in [0, 1).
    double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    std::uint64_t counter() const noexcept { return counter_; }

private:
    std::uint64_t key_;
    std::uint64_t counter_;
};

} // namespace v2gsim
