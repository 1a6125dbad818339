#pragma once

#include <cmath>
#include <cstdint>

namespace peos {

// Counter-based generator: every draw is a pure function of
// (seed, stream, counter), so ensembles can be regenerated from the index
// header alone and in any order. Gaussians come from the inverse normal CDF
// (Acklam's rational approximation) applied to a 53-bit uniform.
//
// Any change to the mixing function or the Gaussian transform must bump
// kRngId, since persisted edge metadata depends on bit-exact projections.
inline constexpr std::uint32_t kRngId = 1;  // splitmix64-counter / acklam-icdf

/// Named streams. Values are part of the on-disk contract.
enum class Stream : std::uint64_t {
    SubProjection = 1,
    FullProjection = 2,
    SimHash = 3,
    HnswLevel = 4,
    Synthetic = 5,
    Test = 6,
};

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t counter_bits(std::uint64_t seed, std::uint64_t stream,
                                     std::uint64_t counter) noexcept {
    std::uint64_t k = splitmix64(seed ^ splitmix64(stream * 0xd1342543de82ef95ULL));
    return splitmix64(k ^ splitmix64(counter + 0x632be59bd9b4e019ULL));
}

/// Uniform in the open interval (0, 1).
constexpr double counter_uniform(std::uint64_t seed, std::uint64_t stream,
                                 std::uint64_t counter) noexcept {
    return (static_cast<double>(counter_bits(seed, stream, counter) >> 11) + 0.5) *
           0x1.0p-53;
}

/// Acklam's inverse normal CDF, relative error below 1.2e-9.
inline double acklam_icdf(double p) noexcept {
    constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                            -2.759285104469687e+02, 1.383577518672690e+02,
                            -3.066479806614716e+01, 2.506628277459239e+00};
    constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                            -1.556989798598866e+02, 6.680131188771972e+01,
                            -1.328068155288572e+01};
    constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                            -2.400758277161838e+00, -2.549732539343734e+00,
                            4.374664141464968e+00,  2.938163982698783e+00};
    constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                            2.445134137142996e+00, 3.754408661907416e+00};
    constexpr double p_low = 0.02425;

    if (p < p_low) {
        double q = std::sqrt(-2.0 * std::log(p));
        return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    if (p > 1.0 - p_low) {
        double q = std::sqrt(-2.0 * std::log1p(-p));
        return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    double q = p - 0.5;
    double r = q * q;
    return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
           (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

inline double counter_gaussian(std::uint64_t seed, std::uint64_t stream,
                               std::uint64_t counter) noexcept {
    return acklam_icdf(counter_uniform(seed, stream, counter));
}

/// Sequential convenience wrapper over one (seed, stream) pair.
class CounterRng {
public:
    CounterRng(std::uint64_t seed, Stream stream, std::uint64_t start = 0) noexcept
        : seed_(seed), stream_(static_cast<std::uint64_t>(stream)), counter_(start) {}

    double uniform() noexcept { return counter_uniform(seed_, stream_, counter_++); }
    double gaussian() noexcept { return counter_gaussian(seed_, stream_, counter_++); }
    std::uint64_t bits() noexcept { return counter_bits(seed_, stream_, counter_++); }

    std::uint64_t counter() const noexcept { return counter_; }

private:
    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t counter_;
};

}  // namespace peos
