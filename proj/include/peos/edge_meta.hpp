#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "peos/error.hpp"
#include "peos/projections.hpp"
#include "peos/quantile_table.hpp"
#include "peos/simhash.hpp"
#include "peos/vecstore.hpp"

namespace peos {

enum class RoutingMode : std::uint8_t { None = 0, Peos = 1, Rceos = 2, SimHash = 3 };

inline std::string_view to_string(RoutingMode m) {
    switch (m) {
        case RoutingMode::None: return "none";
        case RoutingMode::Peos: return "peos";
        case RoutingMode::Rceos: return "rceos";
        case RoutingMode::SimHash: return "simhash";
    }
    return "?";
}

inline RoutingMode parse_routing_mode(std::string_view s) {
    if (s == "none") return RoutingMode::None;
    if (s == "peos") return RoutingMode::Peos;
    if (s == "rceos") return RoutingMode::Rceos;
    if (s == "simhash") return RoutingMode::SimHash;
    throw UsageError("unknown routing mode '" + std::string(s) + "'");
}

struct RoutingConfig {
    RoutingMode mode = RoutingMode::None;
    double eps = 0.2;
    std::uint32_t L = 8;
    std::uint32_t m = 128;
    bool compact = false;
    std::uint32_t simhash_bits = kDefaultSimHashBits;

    bool uses_projections() const noexcept { return mode == RoutingMode::Peos || mode == RoutingMode::Rceos; }

    /// Throws UsageError when the combination is invalid for dimension d.
    void validate(std::size_t d) const {
        if (mode == RoutingMode::None) return;
        if (mode == RoutingMode::SimHash) {
            if (!(eps > 0.0 && eps < 1.0)) throw UsageError("simhash routing needs eps in (0, 1)");
            if (simhash_bits == 0 || simhash_bits % 64 != 0)
                throw UsageError("simhash bits must be a positive multiple of 64");
            if (compact) throw UsageError("compact mode applies to peos only");
            return;
        }
        if (!(eps > 0.0 && eps <= 0.5)) throw UsageError("epsilon must lie in (0, 0.5]");
        if (m < 2 || m > kMaxProjections) throw UsageError("m must lie in [2, 128]");
        if (L == 0 || d % L != 0) throw UsageError("d must be divisible by L");
        if (mode == RoutingMode::Rceos && L != 1) throw UsageError("rceos routing requires L = 1");
        if (compact) {
            if (mode != RoutingMode::Peos) throw UsageError("compact mode applies to peos only");
            if (L < 2 || L > 4) throw UsageError("compact mode requires 2 <= L <= 4");
        }
    }
};

// ---------------------------------------------------------------------------
// Orthogonal decomposition e = e_reg + e_res

struct Decomposition {
    double w_reg = 1.0;
    double w_res = 0.0;
    std::vector<double> reg_dir;  // unit vector, block i = e_i / (√L'·‖e_i‖)
    std::vector<double> res;      // e − (eᵀreg_dir)·reg_dir
    std::uint32_t zero_blocks = 0;
};

/// Splits e into its block-normalised regular part and the orthogonal
/// residual. A zero block contributes a zero direction block and reg_dir is
/// renormalised over the L' non-zero blocks.
inline Decomposition decompose(std::span<const float> e, std::uint32_t L) {
    const std::size_t d = e.size();
    if (L == 0 || d % L != 0) throw UsageError("decompose: d must be divisible by L");
    const std::size_t dp = d / L;
    std::vector<double> bnorm(L, 0.0);
    double total = 0.0;
    for (std::uint32_t i = 0; i < L; ++i) {
        double s = 0.0;
        for (std::size_t k = 0; k < dp; ++k) s += static_cast<double>(e[i * dp + k]) * e[i * dp + k];
        bnorm[i] = std::sqrt(s);
        total += s;
    }
    if (total == 0.0) throw UsageError("decompose: zero vector");
    const double enorm = std::sqrt(total);

    Decomposition out;
    std::uint32_t live = 0;
    for (double b : bnorm) live += b > 0.0 ? 1 : 0;
    out.zero_blocks = L - live;
    const double scale = std::sqrt(static_cast<double>(live));

    out.reg_dir.assign(d, 0.0);
    double proj = 0.0;  // eᵀreg_dir = Σ‖e_i‖ / √L'
    for (std::uint32_t i = 0; i < L; ++i) {
        if (bnorm[i] == 0.0) continue;
        for (std::size_t k = 0; k < dp; ++k) out.reg_dir[i * dp + k] = e[i * dp + k] / (scale * bnorm[i]);
        proj += bnorm[i] / scale;
    }
    out.res.resize(d);
    if (L == 1) {
        out.w_reg = 1.0;
        out.w_res = 0.0;
        std::fill(out.res.begin(), out.res.end(), 0.0);
        return out;
    }
    for (std::size_t k = 0; k < d; ++k) out.res[k] = e[k] - proj * out.reg_dir[k];
    out.w_reg = std::min(proj / enorm, 1.0);
    out.w_res = std::sqrt(std::max(0.0, 1.0 - out.w_reg * out.w_reg));
    return out;
}

// ---------------------------------------------------------------------------
// Scalar quantisation of per-edge norms

/// Affine quantiser x ≈ min + code·step with directed rounding.
struct ScalarQuantizer {
    double min = 0.0;
    double step = 0.0;
    std::uint32_t bits = 16;

    std::uint32_t max_code() const noexcept { return (bits >= 32) ? 0xffffffffu : ((1u << bits) - 1u); }

    static ScalarQuantizer fit(double lo, double hi, std::uint32_t bits) {
        if (!(lo <= hi)) throw UsageError("ScalarQuantizer: empty range");
        ScalarQuantizer q;
        q.bits = bits;
        q.min = lo;
        q.step = hi > lo ? (hi - lo) / q.max_code() : 0.0;
        return q;
    }

    double decode(std::uint32_t code) const noexcept { return min + code * step; }

    /// Largest code whose value is <= x.
    std::uint32_t encode_down(double x) const noexcept {
        if (step == 0.0 || x <= min) return 0;
        double t = std::floor((x - min) / step);
        auto c = static_cast<std::uint32_t>(std::min(t, static_cast<double>(max_code())));
        while (c > 0 && decode(c) > x) --c;
        return c;
    }

    /// Smallest code whose value is >= x (clamped to the top code).
    std::uint32_t encode_up(double x) const noexcept {
        if (step == 0.0 || x <= min) return 0;
        double t = std::ceil((x - min) / step);
        auto c = static_cast<std::uint32_t>(std::min(t, static_cast<double>(max_code())));
        while (c < max_code() && decode(c) < x) ++c;
        return c;
    }

    friend bool operator==(const ScalarQuantizer&, const ScalarQuantizer&) = default;
};

/// ‖u‖²/2 rounds down and ‖e‖ rounds up; both can only lower A_r.
struct NormQuantizers {
    ScalarQuantizer half_u_sq;
    ScalarQuantizer enorm;
    friend bool operator==(const NormQuantizers&, const NormQuantizers&) = default;
};

// ---------------------------------------------------------------------------
// Edge metadata

/// Byte layout of one packed edge record.
///   peos/rceos: [L+1 ids][w_reg_q, w_res_q, var_idx][half_u_sq_q][enorm_q]
///   compact:    [L ids][half_u_sq_q][enorm_q] with one-byte norms
///   simhash:    [n/8 sketch bytes][half_u_sq_q][enorm_q]
///   none:       empty
struct MetaLayout {
    RoutingMode mode = RoutingMode::None;
    std::uint32_t L = 0;
    bool compact = false;
    std::uint32_t norm_bytes = 0;  // per norm
    std::uint32_t id_bytes = 0, weight_bytes = 0, sketch_bytes = 0;

    static MetaLayout for_config(const RoutingConfig& cfg) {
        MetaLayout l;
        l.mode = cfg.mode;
        l.L = cfg.L;
        l.compact = cfg.compact;
        switch (cfg.mode) {
            case RoutingMode::None: l.norm_bytes = 0; break;
            case RoutingMode::SimHash:
                l.sketch_bytes = cfg.simhash_bits / 8;
                l.norm_bytes = 2;
                break;
            case RoutingMode::Peos:
            case RoutingMode::Rceos:
                l.id_bytes = cfg.compact ? cfg.L : cfg.L + 1;
                l.weight_bytes = cfg.compact ? 0 : 3;
                l.norm_bytes = cfg.compact ? 1 : 2;
                break;
        }
        return l;
    }

    std::size_t weight_offset() const noexcept { return id_bytes; }
    std::size_t norm_offset() const noexcept { return sketch_bytes + id_bytes + weight_bytes; }
    std::size_t size() const noexcept { return norm_offset() + 2 * norm_bytes; }
    std::uint32_t norm_bits() const noexcept { return norm_bytes * 8; }
};

/// Decoded edge record for the projection-based tests. ext_ids[0] is the
/// full-space index e[0]; ext_ids[1..L] are the subspace indices.
struct EdgeMeta {
    std::vector<SignedIndex> ext_ids;
    std::uint8_t w_reg_q = 255;
    std::uint8_t w_res_q = 0;
    std::uint8_t var_idx = 0;
    std::uint32_t half_u_sq_q = 0;
    std::uint32_t enorm_q = 0;

    double w_reg() const noexcept { return w_reg_q / 255.0; }
    double w_res() const noexcept { return w_res_q / 255.0; }

    friend bool operator==(const EdgeMeta&, const EdgeMeta&) = default;
};

inline constexpr double kWeightStep = 1.0 / 255.0;

inline std::uint8_t quantize_weight(double w) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(w, 0.0, 1.0) * 255.0));
}

namespace detail {

inline std::uint8_t encode_id(SignedIndex id) noexcept {
    if (id == kNullIndex) return 0;
    auto mag = static_cast<std::uint8_t>(std::abs(id) - 1);
    return id < 0 ? static_cast<std::uint8_t>(0x80 | mag) : mag;
}

inline SignedIndex decode_id(std::uint8_t b) noexcept {
    SignedIndex j = (b & 0x7f) + 1;
    return (b & 0x80) ? -j : j;
}

inline void put_uint(std::uint8_t* p, std::uint32_t v, std::uint32_t nbytes) noexcept {
    for (std::uint32_t k = 0; k < nbytes; ++k) p[k] = static_cast<std::uint8_t>(v >> (8 * k));
}

inline std::uint32_t get_uint(const std::uint8_t* p, std::uint32_t nbytes) noexcept {
    std::uint32_t v = 0;
    for (std::uint32_t k = 0; k < nbytes; ++k) v |= static_cast<std::uint32_t>(p[k]) << (8 * k);
    return v;
}

}  // namespace detail

// A one-byte id has no spare code for NULL when m = 128, so NULL is written
// as 0x00 and recovered on decode from the weight it multiplies: block ids
// are NULL when w_reg_q == 0, e[0] is NULL when w_res_q == 0. Either way the
// id's contribution to H(e) is zero.
inline void encode_edge_meta(const EdgeMeta& meta, const MetaLayout& layout, std::span<std::uint8_t> out) {
    if (out.size() < layout.size()) throw UsageError("encode_edge_meta: buffer too small");
    if (layout.mode != RoutingMode::Peos && layout.mode != RoutingMode::Rceos)
        throw UsageError("encode_edge_meta: layout is not projection-based");
    if (meta.ext_ids.size() != layout.L + 1) throw UsageError("encode_edge_meta: id count mismatch");
    std::uint8_t* p = out.data();
    const std::size_t first = layout.compact ? 1 : 0;
    for (std::size_t i = first; i <= layout.L; ++i) *p++ = detail::encode_id(meta.ext_ids[i]);
    if (!layout.compact) {
        *p++ = meta.w_reg_q;
        *p++ = meta.w_res_q;
        *p++ = meta.var_idx;
    }
    detail::put_uint(p, meta.half_u_sq_q, layout.norm_bytes);
    detail::put_uint(p + layout.norm_bytes, meta.enorm_q, layout.norm_bytes);
}

inline EdgeMeta decode_edge_meta(std::span<const std::uint8_t> rec, const MetaLayout& layout) {
    if (rec.size() < layout.size()) throw UsageError("decode_edge_meta: record too small");
    EdgeMeta m;
    m.ext_ids.assign(layout.L + 1, kNullIndex);
    const std::uint8_t* p = rec.data();
    const std::size_t first = layout.compact ? 1 : 0;
    for (std::size_t i = first; i <= layout.L; ++i) m.ext_ids[i] = detail::decode_id(*p++);
    if (layout.compact) {
        m.w_reg_q = 255;
        m.w_res_q = 0;
        m.var_idx = VarianceGrid(layout.L).row_for(1.0);
    } else {
        m.w_reg_q = *p++;
        m.w_res_q = *p++;
        m.var_idx = *p++;
        if (m.w_res_q == 0) m.ext_ids[0] = kNullIndex;
        if (m.w_reg_q == 0)
            for (std::size_t i = 1; i <= layout.L; ++i) m.ext_ids[i] = kNullIndex;
    }
    m.half_u_sq_q = detail::get_uint(p, layout.norm_bytes);
    m.enorm_q = detail::get_uint(p + layout.norm_bytes, layout.norm_bytes);
    return m;
}

/// Metadata for edge v -> u with residual e = u − v.
///
/// `e_perm` is e in permuted coordinates, `u` is the neighbour in original
/// coordinates (only its norm is used). An edge with a zero subspace block is
/// stored as pure residual (w_reg = 0, w_res = 1): the block-normalised
/// direction would otherwise claim L blocks' worth of projection mass.
inline EdgeMeta build_edge_meta(std::span<const float> e_perm, double u_norm_sq, Metric metric,
                                const ProjectionEnsemble& ens, const NormQuantizers& quant,
                                const RoutingConfig& cfg) {
    const std::uint32_t L = cfg.L;
    if (ens.subspaces() != L || ens.dim() != e_perm.size())
        throw UsageError("build_edge_meta: ensemble does not match configuration");
    const double en = norm(e_perm);
    if (en == 0.0) throw DegenerateInputError("build_edge_meta: u == v");

    EdgeMeta m;
    m.ext_ids.assign(L + 1, kNullIndex);
    const std::size_t dp = ens.subdim();
    for (std::uint32_t i = 0; i < L; ++i)
        m.ext_ids[i + 1] = extreme_index(e_perm.subspan(i * dp, dp), ens, i);

    VarianceGrid grid(L);
    if (cfg.compact) {
        m.w_reg_q = 255;
        m.w_res_q = 0;
        m.var_idx = grid.row_for(1.0);
    } else {
        Decomposition dec = decompose(e_perm, L);
        double w_reg = dec.w_reg, w_res = dec.w_res;
        std::vector<float> res(dec.res.begin(), dec.res.end());
        if (dec.zero_blocks > 0) {
            w_reg = 0.0;
            w_res = 1.0;
            res.assign(e_perm.begin(), e_perm.end());
        }
        m.ext_ids[0] = w_res > 0.0 ? extreme_index_full(res, ens) : kNullIndex;
        m.w_reg_q = quantize_weight(w_reg);
        m.w_res_q = quantize_weight(w_res);
        m.var_idx = grid.row_for(VarianceGrid::edge_variance(w_reg, w_res, L));
        if (m.w_res_q == 0) m.ext_ids[0] = kNullIndex;
        if (m.w_reg_q == 0)
            for (std::uint32_t i = 1; i <= L; ++i) m.ext_ids[i] = kNullIndex;
    }
    m.half_u_sq_q = metric == Metric::L2 ? quant.half_u_sq.encode_down(u_norm_sq / 2.0) : 0;
    m.enorm_q = quant.enorm.encode_up(en);
    return m;
}

// ---------------------------------------------------------------------------
// Query-side threshold state

/// r and δ derived from the furthest element p of a full result list, plus
/// the cached vᵀq of the node being expanded. For L2 δ² − 2r = ‖q‖²; for
/// angular and IP r = −pᵀq. r = +∞ while the result list is not full.
struct ThresholdState {
    double r = std::numeric_limits<double>::infinity();
    double delta = std::numeric_limits<double>::infinity();
    double vq = 0.0;

    bool open() const noexcept { return r == std::numeric_limits<double>::infinity(); }

    static ThresholdState unbounded(double vq = 0.0) noexcept {
        ThresholdState t;
        t.vq = vq;
        return t;
    }

    /// From the search key of p: squared distance (L2), 1 − pᵀq/‖q‖ with unit
    /// base vectors (angular), or −pᵀq (IP).
    static ThresholdState from_key(Metric metric, double key, double qnorm, double vq) noexcept {
        ThresholdState t;
        t.vq = vq;
        switch (metric) {
            case Metric::L2:
                t.delta = std::sqrt(std::max(key, 0.0));
                t.r = (key - qnorm * qnorm) / 2.0;
                break;
            case Metric::Angular:
                t.delta = key;
                t.r = -(1.0 - key) * qnorm;
                break;
            case Metric::IP:
                t.delta = key;
                t.r = key;
                break;
        }
        return t;
    }
};

/// A_r(e) from already-dequantised norms. half_u_sq is ignored unless L2.
inline double compute_Ar(double half_u_sq, double enorm, const ThresholdState& ts, double qnorm, Metric metric) noexcept {
    if (ts.open()) return -std::numeric_limits<double>::infinity();
    double num = (metric == Metric::L2 ? half_u_sq : 0.0) - ts.r - ts.vq;
    return num / (qnorm * enorm);
}

inline double compute_Ar(const EdgeMeta& meta, const NormQuantizers& quant, const ThresholdState& ts, double qnorm,
                         Metric metric) noexcept {
    return compute_Ar(quant.half_u_sq.decode(meta.half_u_sq_q), quant.enorm.decode(meta.enorm_q), ts, qnorm, metric);
}

}  // namespace peos
