#include "spnet/rng.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace spnet {

namespace {

constexpr std::uint64_t kMul0 = 0xD2E7470EE14C6C93ULL;
constexpr std::uint64_t kMul1 = 0xCA5A826395121157ULL;
constexpr std::uint64_t kWeyl0 = 0x9E3779B97F4A7C15ULL;
constexpr std::uint64_t kWeyl1 = 0xBB67AE8584CAA73BULL;

inline void mulhilo(std::uint64_t a, std::uint64_t b, std::uint64_t& hi, std::uint64_t& lo) {
    const unsigned __int128 prod = static_cast<unsigned __int128>(a) * b;
    hi = static_cast<std::uint64_t>(prod >> 64);
    lo = static_cast<std::uint64_t>(prod);
}

}  // namespace

PhiloxRng::PhiloxRng(std::uint64_t seed, std::uint64_t stream) {
    key_ = {seed, stream};
    counter_ = {0, 0, 0, 0};
}

std::array<std::uint64_t, 4> PhiloxRng::block(const std::array<std::uint64_t, 4>& counter,
                                              const std::array<std::uint64_t, 2>& key) {
    std::array<std::uint64_t, 4> c = counter;
    std::array<std::uint64_t, 2> k = key;
    for (int round = 0; round < 10; ++round) {
        std::uint64_t hi0, lo0, hi1, lo1;
        mulhilo(kMul0, c[0], hi0, lo0);
        mulhilo(kMul1, c[2], hi1, lo1);
        c = {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
        k[0] += kWeyl0;
        k[1] += kWeyl1;
    }
    return c;
}

void PhiloxRng::refill() {
    buf_ = block(counter_, key_);
    buf_pos_ = 0;
    // 256-bit counter increment.
    for (int i = 0; i < 4; ++i) {
        if (++counter_[i] != 0) break;
    }
}

std::uint64_t PhiloxRng::next_u64() {
    if (buf_pos_ >= 4) refill();
    return buf_[buf_pos_++];
}

double PhiloxRng::next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t PhiloxRng::next_below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("next_below: n must be positive");
    // Rejection sampling for an unbiased draw.
    const std::uint64_t limit = n * ((~0ULL) / n);
    std::uint64_t x;
    do {
        x = next_u64();
    } while (x >= limit);
    return x % n;
}

double PhiloxRng::next_gaussian() {
    if (has_gauss_) {
        has_gauss_ = false;
        return cached_gauss_;
    }
    double u1, u2;
    do {
        u1 = next_double();
    } while (u1 <= 0.0);
    u2 = next_double();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    cached_gauss_ = r * std::sin(theta);
    has_gauss_ = true;
    return r * std::cos(theta);
}

std::size_t PhiloxRng::sample_index(const std::vector<double>& cumulative) {
    if (cumulative.empty()) throw std::invalid_argument("sample_index: empty distribution");
    const double total = cumulative.back();
    if (!(total > 0.0)) throw std::invalid_argument("sample_index: total weight is zero");
    const double x = next_double() * total;
    // First entry with cumulative > x; flat (zero-weight) entries are skipped
    // because upper_bound is strict.
    const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), x);
    const std::size_t idx = static_cast<std::size_t>(it - cumulative.begin());
    return std::min(idx, cumulative.size() - 1);
}

std::vector<double> cumulative_weights(const std::vector<double>& p) {
    std::vector<double> cum(p.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] < 0.0) throw std::invalid_argument("cumulative_weights: negative weight");
        acc += p[i];
        cum[i] = acc;
    }
    return cum;
}

}  // namespace spnet
