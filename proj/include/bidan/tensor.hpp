#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace bidan {

inline std::size_t numel_of(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int e : shape) {
        if (e <= 0) throw std::invalid_argument("tensor: non-positive extent " + std::to_string(e));
        n *= static_cast<std::size_t>(e);
    }
    return n;
}

// Dense row-major float32 array. This is the storage/interchange type;
// graph execution keeps its own double buffers.
struct Tensor {
    std::vector<int> shape;
    std::vector<float> data;

    Tensor() = default;
    Tensor(std::vector<int> s, std::vector<float> d) : shape(std::move(s)), data(std::move(d)) {
        if (data.size() != numel_of(shape)) throw std::invalid_argument("tensor: data/shape mismatch");
    }

    static Tensor zeros(std::vector<int> s) {
        std::size_t n = numel_of(s);
        return Tensor(std::move(s), std::vector<float>(n, 0.0f));
    }
    static Tensor full(std::vector<int> s, float v) {
        std::size_t n = numel_of(s);
        return Tensor(std::move(s), std::vector<float>(n, v));
    }

    std::size_t numel() const { return data.size(); }
    int rows() const { return shape.empty() ? 1 : shape[0]; }
    int cols() const { return shape.size() < 2 ? 1 : shape[1]; }

    float& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols() + c]; }
    float at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols() + c]; }
};

inline uint64_t splitmix64(uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Deterministic RNG. All randomness in the toolkit flows through this class;
// the mappings below are hand-rolled so streams are identical across
// standard-library implementations.
class Rng {
public:
    explicit Rng(uint64_t seed) {
        // splitmix-expanded seeding of xoshiro256** state
        uint64_t s = seed;
        for (auto& w : state_) w = splitmix64(s);
    }

    uint64_t next_u64() {
        uint64_t result = rotl_(state_[1] * 5, 7) * 9;
        uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl_(state_[3], 45);
        return result;
    }

    // uniform in [0,1) with 53-bit resolution
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // unbiased integer in [0, n)
    uint32_t below(uint32_t n) {
        if (n == 0) throw std::invalid_argument("rng: below(0)");
        uint64_t threshold = (~uint64_t{0} - n + 1) % n;
        for (;;) {
            uint64_t r = next_u64();
            if (r >= threshold) return static_cast<uint32_t>(r % n);
        }
    }

    // derived independent stream
    Rng fork(uint64_t tag) {
        uint64_t s = next_u64() ^ (tag * 0x9e3779b97f4a7c15ULL);
        return Rng(splitmix64(s));
    }

private:
    static uint64_t rotl_(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    uint64_t state_[4];
};

}  // namespace bidan
