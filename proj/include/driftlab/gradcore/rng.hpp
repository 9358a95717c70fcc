#pragma once

#include <cstdint>

namespace dlab {

/// Stateless counter-based generator: every draw is a pure function of
/// (seed, stream, counter), so any worker can reproduce any draw.
std::uint64_t counter_bits(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter) noexcept;

/// Sequential view over one (seed, stream) pair.
class RngStream {
public:
    RngStream(std::uint64_t seed, std::uint64_t stream) noexcept : seed_(seed), stream_(stream) {}

    std::uint64_t next_u64() noexcept { return counter_bits(seed_, stream_, counter_++); }
    /// Uniform in [0, 1).
    double uniform() noexcept;
    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [lo, hi].
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) noexcept;
    /// Standard normal (Box-Muller, always consumes two counters).
    double normal() noexcept;

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t stream() const noexcept { return stream_; }
    std::uint64_t counter() const noexcept { return counter_; }

private:
    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t counter_ = 0;
};

/// Well-known stream ids. Separate streams keep unrelated consumers from
/// shifting each other's draws.
namespace streams {
inline constexpr std::uint64_t init = 1;
inline constexpr std::uint64_t train = 2;
inline constexpr std::uint64_t render = 3;
inline constexpr std::uint64_t eval_noise = 4;
inline constexpr std::uint64_t probe = 5;
inline constexpr std::uint64_t token_init = 6;
/// Sampler streams are offset by the timestep: initial noise uses
/// sampler_base + 0, the ancestral step at t uses sampler_base + t.
inline constexpr std::uint64_t sampler_base = 1ull << 32;
}  // namespace streams

}  // namespace dlab
