#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace nrdet {

// Deterministic RNG streams. Every consumer of randomness derives its own
// stream from (root seed, tag trail) so that adding or removing one consumer
// never shifts the draws seen by another. All distribution sampling is
// hand-rolled on top of mt19937_64; std::uniform_* are implementation-defined
// and would break bit-reproducibility across standard libraries.

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
    std::uint64_t s = splitmix64(seed ^ 0x5dee'ce66'd1ce'4e5bULL);
    for (std::uint64_t t : tags) s = splitmix64(s ^ t);
    return s;
}

class Rng {
  public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}
    Rng(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) : eng_(mix_seed(seed, tags)) {}

    std::uint64_t next_u64() { return eng_(); }

    // Unbiased integer in [0, n). Rejection sampling, fixed algorithm.
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) return 0;
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % n;
    }

    int index(int n) { return static_cast<int>(below(static_cast<std::uint64_t>(n))); }

    // Uniform double in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller; draws two uniforms per pair, caches the spare.
    double gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    // Fisher-Yates, fixed order.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // First k entries of a random permutation of [0, n).
    std::vector<int> sample_indices(int n, int k);

  private:
    std::mt19937_64 eng_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

inline std::vector<int> Rng::sample_indices(int n, int k) {
    std::vector<int> idx(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
    if (k > n) k = n;
    for (int i = 0; i < k; ++i) {
        const int j = i + index(n - i);
        std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
    }
    idx.resize(static_cast<std::size_t>(k));
    return idx;
}

// Stream tags, kept in one place so derivations stay collision-free.
namespace rng_tag {
constexpr std::uint64_t kInit = 0x01;
constexpr std::uint64_t kEpoch = 0x02;
constexpr std::uint64_t kRoi = 0x03;
constexpr std::uint64_t kRpn = 0x04;
constexpr std::uint64_t kSynth = 0x05;
constexpr std::uint64_t kLabelNoise = 0x06;
constexpr std::uint64_t kBoxNoise = 0x07;
}  // namespace rng_tag

}  // namespace nrdet
