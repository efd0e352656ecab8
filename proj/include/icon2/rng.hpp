#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

namespace icon2 {

// splitmix64 (Steele, Lea, Flood 2014). Chosen over std engines because the
// output stream is fully pinned by this header: runs reproduce across
// compilers and platforms.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1), 53 bits of entropy
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // uniform in [0, bound)
    uint64_t next_below(uint64_t bound) { return next_u64() % bound; }

    // standard normal via Box-Muller
    double next_gaussian() {
        double u1 = next_double();
        double u2 = next_double();
        while (u1 <= 0.0) u1 = next_double();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

private:
    uint64_t state_;
};

// Derives an independent stream seed from a base seed and a stream index.
inline uint64_t derive_seed(uint64_t base, uint64_t stream) {
    Rng mix(base ^ (0x9e3779b97f4a7c15ULL * (stream + 1)));
    return mix.next_u64();
}

// k distinct indices drawn from [0, population) without replacement
// (partial Fisher-Yates over an index array).
inline std::vector<size_t> sample_without_replacement(size_t population, size_t k, Rng& rng) {
    std::vector<size_t> idx(population);
    for (size_t i = 0; i < population; ++i) idx[i] = i;
    for (size_t i = 0; i < k; ++i) {
        size_t j = i + static_cast<size_t>(rng.next_below(population - i));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    return idx;
}

}  // namespace icon2
