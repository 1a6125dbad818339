#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "peos/edge_meta.hpp"
#include "peos/error.hpp"
#include "peos/rng.hpp"

namespace peos {

/// Smallest m for which RCEOs beats an n-bit SimHash at angle θ:
/// exp(n / (2θ(π − θ))).
inline double required_m_rceos(double n, double theta) {
    if (!(theta > 0.0 && theta < std::numbers::pi)) throw UsageError("required_m_rceos: theta must lie in (0, pi)");
    return std::exp(n / (2.0 * theta * (std::numbers::pi - theta)));
}

struct PartitionStats {
    double mean_w_reg = 0.0;
    double mean_w_res = 0.0;
    double mean_w_res_sq = 0.0;
    double j_rel = 0.0;  // (1 + (L−1)·E[w_res²]) / L
    double j_opt = 0.0;  // 1 / L
    double delta = 0.0;  // |E[w_res] − 1/(L+1)|
    std::uint64_t samples = 0;
};

/// Monte-Carlo moments of the decomposition weights for isotropic unit e.
inline PartitionStats estimate_partition_stats(std::uint32_t d, std::uint32_t L, std::uint64_t samples,
                                               std::uint64_t seed = 42) {
    if (samples == 0) throw UsageError("estimate_partition_stats: samples must be >= 1");
    if (L == 0 || d == 0 || d % L != 0) throw UsageError("estimate_partition_stats: d must be divisible by L");
    CounterRng rng(seed, Stream::Test);
    std::vector<float> e(d);
    double s_reg = 0.0, s_res = 0.0, s_res2 = 0.0;
    for (std::uint64_t s = 0; s < samples; ++s) {
        for (auto& x : e) x = static_cast<float>(rng.gaussian());
        Decomposition dec = decompose(e, L);
        s_reg += dec.w_reg;
        s_res += dec.w_res;
        s_res2 += dec.w_res * dec.w_res;
    }
    PartitionStats p;
    p.samples = samples;
    p.mean_w_reg = s_reg / samples;
    p.mean_w_res = s_res / samples;
    p.mean_w_res_sq = s_res2 / samples;
    p.j_rel = (1.0 + (L - 1.0) * p.mean_w_res_sq) / L;
    p.j_opt = 1.0 / L;
    p.delta = std::fabs(p.mean_w_res - 1.0 / (L + 1.0));
    return p;
}

/// Closed-form lower bound on E[w_reg] for isotropic e (needs d/L > 3).
inline double w_reg_lower_bound(std::uint32_t d, std::uint32_t L) {
    const double dd = d, dp = static_cast<double>(d) / L;
    return (dp - 1.0) * std::sqrt(2.0 * L * dd - 3.0 * L) / ((dd - 1.0) * std::sqrt(2.0 * dp + 2.0 * std::sqrt(3.0) - 6.0));
}

/// Exact E[w_reg] for isotropic e:
/// √L·Γ((d'−1)/2)Γ(d/2)(d'−1) / (Γ(d'/2)Γ((d−1)/2)(d−1)).
inline double expected_w_reg(std::uint32_t d, std::uint32_t L) {
    const double dd = d, dp = static_cast<double>(d) / L;
    double lg = std::lgamma((dp - 1.0) / 2.0) + std::lgamma(dd / 2.0) - std::lgamma(dp / 2.0) - std::lgamma((dd - 1.0) / 2.0);
    return std::sqrt(static_cast<double>(L)) * std::exp(lg) * (dp - 1.0) / (dd - 1.0);
}

}  // namespace peos
