#pragma once

#include <array>
#include <cstdint>
#include <cstddef>
#include <vector>

namespace spnet {

/// Philox4x64-10 counter-based generator. Streams are addressed by
/// (seed, stream): the pair forms the key, so any number of independent
/// per-layer / per-trial streams can be derived without coordination.
class PhiloxRng {
public:
    explicit PhiloxRng(std::uint64_t seed, std::uint64_t stream = 0);

    /// Core block function, exposed for known-answer tests.
    static std::array<std::uint64_t, 4> block(const std::array<std::uint64_t, 4>& counter,
                                              const std::array<std::uint64_t, 2>& key);

    std::uint64_t next_u64();
    /// Uniform in [0,1), 53-bit mantissa.
    double next_double();
    /// Uniform integer in [0, n).
    std::uint64_t next_below(std::uint64_t n);
    /// Standard normal via Box-Muller (two uniforms per pair, cached).
    double next_gaussian();

    /// Index draw from an unnormalized weight vector via its running sum.
    /// Zero-weight entries are never selected.
    std::size_t sample_index(const std::vector<double>& cumulative);

private:
    void refill();

    std::array<std::uint64_t, 4> counter_{};
    std::array<std::uint64_t, 2> key_{};
    std::array<std::uint64_t, 4> buf_{};
    std::size_t buf_pos_ = 4;
    double cached_gauss_ = 0.0;
    bool has_gauss_ = false;
};

/// Prefix sums of p for sample_index; total need not be exactly 1.
std::vector<double> cumulative_weights(const std::vector<double>& p);

}  // namespace spnet
