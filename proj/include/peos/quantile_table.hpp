#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <vector>

#include "peos/error.hpp"
#include "peos/normal.hpp"

namespace peos {

/// Row index into the variance axis of the quantile table.
///
/// Rows 0..254 are uniform over (0, v_max] with v_max = 1 + (L-1)/4; a
/// variance is always rounded UP to the next row. Row 255 is a catch-all at
/// v = L, the largest value w_reg² + L·w_res² can take when w_reg² + w_res² = 1.
class VarianceGrid {
public:
    static constexpr std::uint32_t kGridRows = 255;
    static constexpr std::uint32_t kRows = kGridRows + 1;
    static constexpr std::uint8_t kOverflowRow = 255;

    VarianceGrid() = default;
    explicit VarianceGrid(std::uint32_t L) : L_(L), v_max_(1.0 + (L - 1) * 0.25) {
        if (L == 0) throw UsageError("VarianceGrid: L must be >= 1");
    }

    std::uint32_t L() const noexcept { return L_; }
    double v_max() const noexcept { return v_max_; }

    double value(std::uint32_t row) const noexcept {
        if (row >= kGridRows) return static_cast<double>(L_);
        return v_max_ * static_cast<double>(row + 1) / kGridRows;
    }

    /// Smallest row whose variance is >= v.
    std::uint8_t row_for(double v) const noexcept {
        if (!(v > 0.0)) return 0;
        double t = std::ceil(v / v_max_ * kGridRows) - 1.0;
        std::uint32_t k = t < 0.0 ? 0u : static_cast<std::uint32_t>(std::min(t, 1e9));
        while (k < kGridRows && value(k) < v) ++k;
        if (k >= kGridRows) {
            // Absorb round-off on exact w_reg = 1 style inputs.
            if (v <= v_max_ * (1.0 + 1e-12)) return static_cast<std::uint8_t>(kGridRows - 1);
            return kOverflowRow;
        }
        return static_cast<std::uint8_t>(k);
    }

    /// Variance of N^{e,x}_min for this edge's weights.
    static double edge_variance(double w_reg, double w_res, std::uint32_t L) noexcept {
        return w_reg * w_reg + L * w_res * w_res;
    }

private:
    std::uint32_t L_ = 1;
    double v_max_ = 1.0;
};

/// Precomputed ε-quantiles of N(x·√(2L ln m), v − L·x²/(L+1)) over a
/// variance × threshold grid. Each stored float is rounded toward −∞, so a
/// lookup never exceeds the exact quantile at its grid point; lookups round
/// the variance up and the threshold x down, which can only lower it further.
class QuantileTable {
public:
    static constexpr std::uint32_t kDefaultCols = 512;

    QuantileTable() = default;

    double eps() const noexcept { return eps_; }
    std::uint32_t L() const noexcept { return grid_.L(); }
    std::uint32_t m() const noexcept { return m_; }
    std::uint32_t rows() const noexcept { return VarianceGrid::kRows; }
    std::uint32_t cols() const noexcept { return cols_; }
    const VarianceGrid& grid() const noexcept { return grid_; }
    double z_eps() const noexcept { return z_eps_; }
    double mean_scale() const noexcept { return mean_scale_; }

    double x_value(std::uint32_t col) const noexcept { return static_cast<double>(col) / cols_; }
    double v_value(std::uint32_t row) const noexcept { return grid_.value(row); }

    float at(std::uint32_t row, std::uint32_t col) const noexcept { return values_[row * cols_ + col]; }

    /// Column of the largest grid threshold <= a (a in (0, 1)).
    std::uint32_t col_for(double a) const noexcept {
        double t = std::floor(a * cols_);
        if (!(t > 0.0)) return 0;
        auto c = static_cast<std::uint32_t>(std::min(t, static_cast<double>(cols_ - 1)));
        // For a power-of-two column count floor(a·cols)/cols is exact.
        if ((cols_ & (cols_ - 1)) != 0)
            while (c > 0 && x_value(c) > a) --c;
        return c;
    }

    /// T_r(e) for an edge with variance row `row` and cosine threshold a.
    float threshold(std::uint8_t row, double a) const noexcept { return at(row, col_for(a)); }

    /// The quantile in closed form, evaluated in double.
    static double exact(double x, double v, std::uint32_t L, std::uint32_t m, double z_eps) {
        double var = v - L * x * x / (L + 1.0);
        return x * std::sqrt(2.0 * L * std::log(static_cast<double>(m))) + std::sqrt(std::max(var, 0.0)) * z_eps;
    }

    friend QuantileTable build_quantile_table(double eps, std::uint32_t L, std::uint32_t m, std::uint32_t cols);

private:
    double eps_ = 0.0;
    std::uint32_t m_ = 0;
    std::uint32_t cols_ = 0;
    VarianceGrid grid_;
    double z_eps_ = 0.0;
    double mean_scale_ = 0.0;
    std::vector<float> values_;
};

inline float round_down_to_float(double x) {
    auto f = static_cast<float>(x);
    if (static_cast<double>(f) > x) f = std::nextafter(f, -std::numeric_limits<float>::infinity());
    return f;
}

inline QuantileTable build_quantile_table(double eps, std::uint32_t L, std::uint32_t m,
                                          std::uint32_t cols = QuantileTable::kDefaultCols) {
    if (!(eps > 0.0 && eps <= 0.5)) throw UsageError("build_quantile_table: eps must lie in (0, 0.5]");
    if (L == 0 || m < 2 || cols == 0) throw UsageError("build_quantile_table: invalid grid parameters");
    QuantileTable t;
    t.eps_ = eps;
    t.m_ = m;
    t.cols_ = cols;
    t.grid_ = VarianceGrid(L);
    t.z_eps_ = eps == 0.5 ? 0.0 : normal_quantile(eps);
    t.mean_scale_ = std::sqrt(2.0 * L * std::log(static_cast<double>(m)));
    t.values_.resize(static_cast<std::size_t>(VarianceGrid::kRows) * cols);
    for (std::uint32_t r = 0; r < VarianceGrid::kRows; ++r)
        for (std::uint32_t c = 0; c < cols; ++c)
            t.values_[r * cols + c] =
                round_down_to_float(QuantileTable::exact(t.x_value(c), t.v_value(r), L, m, t.z_eps_));
    return t;
}

}  // namespace peos
