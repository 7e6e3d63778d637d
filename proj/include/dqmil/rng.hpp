#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <utility>

namespace dqmil {

/// Philox4x32-10 counter-based generator.
///
/// The stream is a pure function of (seed, stream, counter), so it is the
/// same on every platform. Distinct `stream` ids give independent sequences
/// under one seed, which is how the generators hand out per-bag streams.
class Rng {
public:
    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t stream() const noexcept { return stream_; }

    /// Fresh generator on another stream of the same seed.
    Rng fork(std::uint64_t stream) const { return Rng(seed_, stream); }

    std::uint32_t next_u32();
    std::uint64_t next_u64();
    /// Uniform in [0, 1) with 53 random bits.
    double uniform();
    /// Uniform integer in [0, n); n must be positive.
    std::uint64_t uniform_index(std::uint64_t n);
    /// Standard normal via Box-Muller.
    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// Fisher-Yates with this generator's stream (std::shuffle is not portable).
    template <typename Item>
    void shuffle(std::span<Item> items)
    {
        for (std::size_t i = items.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(uniform_index(i));
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    void refill();

    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t counter_ = 0;
    std::array<std::uint32_t, 4> block_{};
    std::size_t used_ = 4;
    std::optional<double> spare_normal_;
};

} // namespace dqmil
