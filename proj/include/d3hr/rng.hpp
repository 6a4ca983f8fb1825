#pragma once

#include <cstdint>
#include <random>

namespace d3hr {

// splitmix64 output finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Stream seed for (class i, candidate j) under a run seed. Order independent,
/// so candidates and classes can be generated in any order or in parallel.
constexpr std::uint64_t derived_seed(std::uint64_t seed, std::uint64_t i, std::uint64_t j) noexcept {
    return mix64(seed ^ (i * 0x9E3779B97F4A7C15ULL) ^ (j * 0xBF58476D1CE4E5B9ULL));
}

// Salt separating the DDPM forward-noise stream from candidate streams.
inline constexpr std::uint64_t kForwardNoiseSalt = 0xD0D0'F00D'5EED'0001ULL;

using Engine = std::mt19937_64;

class StandardNormal {
public:
    explicit StandardNormal(std::uint64_t seed) : engine_(seed) {}
    double operator()() { return dist_(engine_); }
    Engine& engine() { return engine_; }

private:
    Engine engine_;
    std::normal_distribution<double> dist_{0.0, 1.0};
};

}  // namespace d3hr
