#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

#include "peos/error.hpp"
#include "peos/rng.hpp"
#include "peos/vecstore.hpp"

namespace peos {

inline constexpr std::uint32_t kDefaultSimHashBits = 64;

/// n random hyperplanes in R^d drawn from the SimHash stream.
class SimHashEnsemble {
public:
    SimHashEnsemble() = default;
    SimHashEnsemble(std::uint64_t seed, std::uint32_t d, std::uint32_t bits) : seed_(seed), d_(d), bits_(bits) {
        if (bits == 0 || bits % 64 != 0) throw UsageError("SimHashEnsemble: bit count must be a positive multiple of 64");
        if (d == 0) throw UsageError("SimHashEnsemble: dimension must be >= 1");
        planes_.resize(static_cast<std::size_t>(bits) * d);
        const auto s = static_cast<std::uint64_t>(Stream::SimHash);
        for (std::size_t k = 0; k < planes_.size(); ++k) planes_[k] = static_cast<float>(counter_gaussian(seed, s, k));
    }

    std::uint32_t bits() const noexcept { return bits_; }
    std::uint32_t dim() const noexcept { return d_; }
    std::uint64_t seed() const noexcept { return seed_; }
    std::span<const float> plane(std::uint32_t i) const noexcept {
        return {planes_.data() + static_cast<std::size_t>(i) * d_, d_};
    }

private:
    std::uint64_t seed_ = 0;
    std::uint32_t d_ = 0, bits_ = 0;
    std::vector<float> planes_;
};

/// Bit i is the sign bit of xᵀa_i.
struct SimHashSketch {
    std::vector<std::uint64_t> words;

    std::uint32_t bits() const noexcept { return static_cast<std::uint32_t>(words.size() * 64); }
    friend bool operator==(const SimHashSketch&, const SimHashSketch&) = default;
};

inline SimHashSketch simhash_sketch(std::span<const float> x, const SimHashEnsemble& ens) {
    if (x.size() != ens.dim()) throw UsageError("simhash_sketch: dimension mismatch");
    SimHashSketch s;
    s.words.assign(ens.bits() / 64, 0);
    for (std::uint32_t i = 0; i < ens.bits(); ++i)
        if (std::signbit(dot(x, ens.plane(i)))) s.words[i / 64] |= std::uint64_t{1} << (i % 64);
    return s;
}

inline std::uint32_t collisions(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b) noexcept {
    std::uint32_t diff = 0;
    for (std::size_t w = 0; w < a.size(); ++w) diff += static_cast<std::uint32_t>(std::popcount(a[w] ^ b[w]));
    return static_cast<std::uint32_t>(a.size() * 64) - diff;
}

inline std::uint32_t collisions(const SimHashSketch& a, const SimHashSketch& b) {
    if (a.words.size() != b.words.size()) throw UsageError("collisions: sketch length mismatch");
    return collisions(std::span<const std::uint64_t>(a.words), std::span<const std::uint64_t>(b.words));
}

/// Hoeffding lower bound on #Col for a pair at the threshold angle
/// θ̃ = arccos(a_r): n(1 − θ̃/π) − √(n·ln(1/ε)/2).
inline double simhash_threshold(double a_r, double eps, std::uint32_t n) {
    double theta = std::acos(std::clamp(a_r, -1.0, 1.0));
    return n * (1.0 - theta / std::numbers::pi) - std::sqrt(n * std::log(1.0 / eps) / 2.0);
}

/// Decision from the collision count and the cosine threshold A_r.
inline bool simhash_test(std::uint32_t col, double a_r, double eps, std::uint32_t n) {
    if (a_r >= 1.0) return false;
    if (a_r <= 0.0) return true;
    return col >= simhash_threshold(a_r, eps, n);
}

inline bool simhash_test(const SimHashSketch& e, const SimHashSketch& q, double a_r, double eps) {
    return simhash_test(collisions(e, q), a_r, eps, e.bits());
}

}  // namespace peos
