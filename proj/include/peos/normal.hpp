#pragma once

#include <boost/math/distributions/normal.hpp>

#include <cmath>

#include "peos/error.hpp"

namespace peos {

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

/// Standard normal quantile Φ⁻¹(p) for p in (0, 1).
inline double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw UsageError("normal_quantile: p must lie in (0, 1)");
    return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

}  // namespace peos
