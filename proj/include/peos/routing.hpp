#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <numeric>
#include <span>
#include <vector>

#include "peos/edge_meta.hpp"
#include "peos/error.hpp"
#include "peos/projections.hpp"
#include "peos/quantile_table.hpp"
#include "peos/simhash.hpp"
#include "peos/vecstore.hpp"

namespace peos {

namespace detail {

// w / 255 for every weight byte, so the hot path avoids a division.
inline const std::array<double, 256>& weight_values() noexcept {
    static const std::array<double, 256> t = [] {
        std::array<double, 256> v{};
        for (int w = 0; w < 256; ++w) v[static_cast<std::size_t>(w)] = w / 255.0;
        return v;
    }();
    return t;
}

// Shared by the per-edge and batched paths so both give bit-identical
// decisions. h1 must be accumulated over subspaces in ascending order.
inline bool peos_decide(double a_r, double h1, double h2, std::uint8_t w_reg_q, std::uint8_t w_res_q,
                        std::uint8_t var_idx, double sqrt_L, const QuantileTable& tbl) noexcept {
    // A_r >= 1 fails, A_r <= 0 passes, otherwise H >= T_r. Evaluated without
    // early returns since the outcome is close to a coin flip per edge.
    const auto& w = weight_values();
    const double h = w[w_reg_q] * h1 + sqrt_L * w[w_res_q] * h2;
    const double a = std::clamp(a_r, 0.0, 1.0);
    const bool above = h >= static_cast<double>(tbl.threshold(var_idx, a));
    return (a_r <= 0.0) | ((a_r < 1.0) & above);
}

}  // namespace detail

/// Partitioned extreme-order-statistics test for one edge.
inline bool peos_test(const EdgeMeta& meta, const QuantileTable& tbl, const QueryProjectionTable& qpt,
                      const ThresholdState& ts, const NormQuantizers& quant, Metric metric) {
    const std::uint32_t L = qpt.L;
    if (meta.ext_ids.size() != L + 1 || tbl.L() != L) throw UsageError("peos_test: L mismatch");
    double a = compute_Ar(meta, quant, ts, qpt.qnorm, metric);
    double h1 = 0.0;
    for (std::uint32_t i = 0; i < L; ++i) h1 += qpt.lookup_sub(i, meta.ext_ids[i + 1]);
    double h2 = qpt.lookup_full(meta.ext_ids[0]);
    return detail::peos_decide(a, h1, h2, meta.w_reg_q, meta.w_res_q, meta.var_idx, std::sqrt(static_cast<double>(L)),
                               tbl);
}

/// Reverse-CEOs test: q'ᵀa_1 against the L = 1 quantile, where a_1 is the
/// extreme projection of e. Decision-identical to peos_test at L = 1.
inline bool rceos_test(const EdgeMeta& meta, const QuantileTable& tbl, const QueryProjectionTable& qpt,
                       const ThresholdState& ts, const NormQuantizers& quant, Metric metric) {
    if (qpt.L != 1 || tbl.L() != 1 || meta.ext_ids.size() != 2) throw UsageError("rceos_test: requires L = 1");
    if (meta.w_reg_q != 255 || meta.w_res_q != 0) throw UsageError("rceos_test: not single-subspace metadata");
    double a = compute_Ar(meta, quant, ts, qpt.qnorm, metric);
    if (a >= 1.0) return false;
    if (a <= 0.0) return true;
    double proj = qpt.lookup_sub(0, meta.ext_ids[1]);
    return proj >= static_cast<double>(tbl.threshold(meta.var_idx, a));
}

namespace detail {

// Shared body of the batched PEOs test. rec(t) returns the t-th record;
// bit t of `bitmap` is set when it passes.
template <typename RecordAt>
void batch_peos_core(RecordAt rec_at, std::size_t count, const MetaLayout& layout, const QuantileTable& tbl,
                     const QueryProjectionTable& qpt, const ThresholdState& ts, const NormQuantizers& quant,
                     Metric metric, std::span<std::uint64_t> bitmap) {
    if (bitmap.size() * 64 < count) throw UsageError("batch_peos_test: bitmap too small");
    std::fill(bitmap.begin(), bitmap.begin() + static_cast<std::ptrdiff_t>((count + 63) / 64), 0);

    const std::uint32_t L = layout.L;
    const double sqrt_L = std::sqrt(static_cast<double>(L));
    const std::size_t first_id = layout.compact ? 1 : 0;
    const std::uint8_t compact_row = layout.compact ? VarianceGrid(L).row_for(1.0) : 0;
    const double qnorm = qpt.qnorm;
    const std::size_t norm_off = layout.norm_offset();
    const std::size_t w_off = layout.weight_offset();

    constexpr std::size_t B = 16;
    double a[B], h1[B], h2[B];
    const std::uint8_t* recs[B];
    for (std::size_t start = 0; start < count; start += B) {
        const std::size_t nb = std::min(B, count - start);
        for (std::size_t k = 0; k < nb; ++k) {
            recs[k] = rec_at(start + k);
            const std::uint8_t* nr = recs[k] + norm_off;
            a[k] = compute_Ar(quant.half_u_sq.decode(get_uint(nr, layout.norm_bytes)),
                              quant.enorm.decode(get_uint(nr + layout.norm_bytes, layout.norm_bytes)), ts, qnorm,
                              metric);
            h1[k] = 0.0;
            h2[k] = 0.0;
        }
        for (std::uint32_t i = 0; i < L; ++i) {
            const float* row = qpt.sub_proj.data() + static_cast<std::size_t>(i) * qpt.m;
            for (std::size_t k = 0; k < nb; ++k) {
                const std::uint8_t b = recs[k][i + 1 - first_id];
                const float v = row[b & 0x7f];
                h1[k] += (b & 0x80) ? -v : v;
            }
        }
        if (!layout.compact) {
            for (std::size_t k = 0; k < nb; ++k) {
                const std::uint8_t* rec = recs[k];
                if (rec[w_off + 1] == 0) continue;  // e[0] is NULL
                const float v = qpt.full_proj[rec[0] & 0x7f];
                h2[k] = (rec[0] & 0x80) ? -v : v;
            }
        }
        for (std::size_t k = 0; k < nb; ++k) {
            const std::uint8_t* rec = recs[k];
            std::uint8_t wr = 255, ws = 0, vi = compact_row;
            if (!layout.compact) {
                wr = rec[w_off];
                ws = rec[w_off + 1];
                vi = rec[w_off + 2];
                if (wr == 0) h1[k] = 0.0;
            }
            if (peos_decide(a[k], h1[k], h2[k], wr, ws, vi, sqrt_L, tbl))
                bitmap[(start + k) / 64] |= std::uint64_t{1} << ((start + k) % 64);
        }
    }
}

}  // namespace detail

/// Evaluates `count` consecutive packed PEOs records, 16 at a time, setting
/// bit k of `bitmap` when edge k passes. Decisions equal per-edge peos_test.
inline void batch_peos_test(std::span<const std::uint8_t> records, std::size_t count, const MetaLayout& layout,
                            const QuantileTable& tbl, const QueryProjectionTable& qpt, const ThresholdState& ts,
                            const NormQuantizers& quant, Metric metric, std::span<std::uint64_t> bitmap) {
    const std::size_t rs = layout.size();
    if (records.size() < count * rs) throw UsageError("batch_peos_test: record block too small");
    const std::uint8_t* base = records.data();
    detail::batch_peos_core([&](std::size_t t) { return base + t * rs; }, count, layout, tbl, qpt, ts, quant, metric,
                            bitmap);
}

/// Same test over the records at slots[0..count) of a block; bit t refers
/// to slots[t].
inline void batch_peos_test(const std::uint8_t* block, std::span<const std::uint32_t> slots, const MetaLayout& layout,
                            const QuantileTable& tbl, const QueryProjectionTable& qpt, const ThresholdState& ts,
                            const NormQuantizers& quant, Metric metric, std::span<std::uint64_t> bitmap) {
    const std::size_t rs = layout.size();
    detail::batch_peos_core([&](std::size_t t) { return block + slots[t] * rs; }, slots.size(), layout, tbl, qpt, ts,
                            quant, metric, bitmap);
}

inline std::vector<std::uint64_t> batch_peos_test(std::span<const std::uint8_t> records, std::size_t count,
                                                  const MetaLayout& layout, const QuantileTable& tbl,
                                                  const QueryProjectionTable& qpt, const ThresholdState& ts,
                                                  const NormQuantizers& quant, Metric metric) {
    std::vector<std::uint64_t> bitmap((count + 63) / 64, 0);
    batch_peos_test(records, count, layout, tbl, qpt, ts, quant, metric, bitmap);
    return bitmap;
}

// ---------------------------------------------------------------------------
// SimHash edge records

struct SimHashEdge {
    SimHashSketch sketch;
    std::uint32_t half_u_sq_q = 0;
    std::uint32_t enorm_q = 0;
    friend bool operator==(const SimHashEdge&, const SimHashEdge&) = default;
};

inline SimHashEdge build_simhash_edge(std::span<const float> e, double u_norm_sq, Metric metric,
                                      const SimHashEnsemble& ens, const NormQuantizers& quant) {
    const double en = norm(e);
    if (en == 0.0) throw DegenerateInputError("build_simhash_edge: u == v");
    SimHashEdge s;
    s.sketch = simhash_sketch(e, ens);
    s.half_u_sq_q = metric == Metric::L2 ? quant.half_u_sq.encode_down(u_norm_sq / 2.0) : 0;
    s.enorm_q = quant.enorm.encode_up(en);
    return s;
}

inline void encode_simhash_edge(const SimHashEdge& s, const MetaLayout& layout, std::span<std::uint8_t> out) {
    if (layout.mode != RoutingMode::SimHash || out.size() < layout.size() ||
        s.sketch.words.size() * 8 != layout.sketch_bytes)
        throw UsageError("encode_simhash_edge: layout mismatch");
    std::memcpy(out.data(), s.sketch.words.data(), layout.sketch_bytes);
    detail::put_uint(out.data() + layout.norm_offset(), s.half_u_sq_q, layout.norm_bytes);
    detail::put_uint(out.data() + layout.norm_offset() + layout.norm_bytes, s.enorm_q, layout.norm_bytes);
}

inline SimHashEdge decode_simhash_edge(std::span<const std::uint8_t> rec, const MetaLayout& layout) {
    if (layout.mode != RoutingMode::SimHash || rec.size() < layout.size())
        throw UsageError("decode_simhash_edge: layout mismatch");
    SimHashEdge s;
    s.sketch.words.resize(layout.sketch_bytes / 8);
    std::memcpy(s.sketch.words.data(), rec.data(), layout.sketch_bytes);
    s.half_u_sq_q = detail::get_uint(rec.data() + layout.norm_offset(), layout.norm_bytes);
    s.enorm_q = detail::get_uint(rec.data() + layout.norm_offset() + layout.norm_bytes, layout.norm_bytes);
    return s;
}

// ---------------------------------------------------------------------------
// Router: everything a query needs to gate the edges of one index

/// Per-query state: permuted query, projection table and SimHash sketch.
struct QueryRouting {
    double qnorm = 0.0;
    QueryProjectionTable qpt;
    SimHashSketch sketch;
};

class Router {
public:
    Router() = default;

    /// Regenerates ensembles and tables from (cfg, seed); `plan` and `quant`
    /// come from index construction or from the index header.
    Router(const RoutingConfig& cfg, Metric metric, std::uint32_t d, std::uint64_t seed, PermutationPlan plan,
           NormQuantizers quant)
        : cfg_(cfg), metric_(metric), d_(d), seed_(seed), layout_(MetaLayout::for_config(cfg)), plan_(std::move(plan)),
          quant_(quant) {
        cfg_.validate(d);
        if (plan_.dim() != d) throw UsageError("Router: permutation plan dimension mismatch");
        if (cfg_.uses_projections()) {
            ens_ = generate_ensemble(seed, d, cfg_.L, cfg_.m);
            table_ = build_quantile_table(cfg_.eps, cfg_.L, cfg_.m);
        } else if (cfg_.mode == RoutingMode::SimHash) {
            sh_ = SimHashEnsemble(seed, d, cfg_.simhash_bits);
        }
    }

    const RoutingConfig& config() const noexcept { return cfg_; }
    RoutingMode mode() const noexcept { return cfg_.mode; }
    Metric metric() const noexcept { return metric_; }
    std::uint64_t seed() const noexcept { return seed_; }
    const MetaLayout& layout() const noexcept { return layout_; }
    const NormQuantizers& quantizers() const noexcept { return quant_; }
    const QuantileTable& table() const noexcept { return table_; }
    const ProjectionEnsemble& ensemble() const noexcept { return ens_; }
    const SimHashEnsemble& simhash() const noexcept { return sh_; }
    const PermutationPlan& plan() const noexcept { return plan_; }

    /// Packed record for edge v -> u.
    void encode_edge(std::span<const float> u, std::span<const float> v, std::span<std::uint8_t> out) const {
        std::vector<float> e(u.size());
        for (std::size_t k = 0; k < e.size(); ++k) e[k] = u[k] - v[k];
        const double usq = dot(u, u);
        if (cfg_.uses_projections()) {
            std::vector<float> ep = apply_permutation(e, plan_);
            encode_edge_meta(build_edge_meta(ep, usq, metric_, ens_, quant_, cfg_), layout_, out);
        } else if (cfg_.mode == RoutingMode::SimHash) {
            encode_simhash_edge(build_simhash_edge(e, usq, metric_, sh_, quant_), layout_, out);
        }
    }

    QueryRouting prepare(std::span<const float> q) const {
        QueryRouting r;
        r.qnorm = norm(q);
        if (cfg_.mode == RoutingMode::None) return r;
        if (r.qnorm == 0.0) throw DegenerateInputError("routing: zero query");
        if (cfg_.uses_projections()) r.qpt = project_query(apply_permutation(q, plan_), ens_);
        else r.sketch = simhash_sketch(q, sh_);
        return r;
    }

    /// Gates the records at slots[0..n) of a node's record block; bit t of
    /// `bitmap` refers to slots[t].
    void evaluate(const std::uint8_t* block, std::span<const std::uint32_t> slots, const QueryRouting& qr,
                  const ThresholdState& ts, std::span<std::uint64_t> bitmap) const {
        const std::size_t count = slots.size();
        const std::size_t words = (count + 63) / 64;
        if (bitmap.size() < words) throw UsageError("Router::evaluate: bitmap too small");
        switch (cfg_.mode) {
            case RoutingMode::None:
                for (std::size_t w = 0; w < words; ++w) bitmap[w] = ~std::uint64_t{0};
                return;
            case RoutingMode::Peos:
            case RoutingMode::Rceos:
                batch_peos_test(block, slots, layout_, table_, qr.qpt, ts, quant_, metric_, bitmap);
                return;
            case RoutingMode::SimHash: {
                std::fill(bitmap.begin(), bitmap.begin() + static_cast<std::ptrdiff_t>(words), 0);
                const std::size_t rs = layout_.size();
                const std::size_t nw = layout_.sketch_bytes / 8;
                std::uint64_t buf[16];
                for (std::size_t t = 0; t < count; ++t) {
                    const std::uint8_t* rec = block + slots[t] * rs;
                    const std::uint8_t* nr = rec + layout_.norm_offset();
                    double a = compute_Ar(quant_.half_u_sq.decode(detail::get_uint(nr, layout_.norm_bytes)),
                                          quant_.enorm.decode(detail::get_uint(nr + layout_.norm_bytes, layout_.norm_bytes)),
                                          ts, qr.qnorm, metric_);
                    std::uint32_t col = 0;
                    for (std::size_t w0 = 0; w0 < nw; w0 += 16) {
                        const std::size_t c = std::min<std::size_t>(16, nw - w0);
                        std::memcpy(buf, rec + w0 * 8, c * 8);
                        col += collisions(std::span<const std::uint64_t>(buf, c),
                                          std::span<const std::uint64_t>(qr.sketch.words.data() + w0, c));
                    }
                    if (simhash_test(col, a, cfg_.eps, cfg_.simhash_bits)) bitmap[t / 64] |= std::uint64_t{1} << (t % 64);
                }
                return;
            }
        }
    }

    /// Gates `count` consecutive packed records; bit k set on pass.
    void evaluate(const std::uint8_t* records, std::size_t count, const QueryRouting& qr, const ThresholdState& ts,
                  std::span<std::uint64_t> bitmap) const {
        std::vector<std::uint32_t> slots(count);
        std::iota(slots.begin(), slots.end(), 0u);
        evaluate(records, slots, qr, ts, bitmap);
    }

private:
    RoutingConfig cfg_;
    Metric metric_ = Metric::L2;
    std::uint32_t d_ = 0;
    std::uint64_t seed_ = 0;
    MetaLayout layout_;
    PermutationPlan plan_;
    NormQuantizers quant_;
    ProjectionEnsemble ens_;
    QuantileTable table_;
    SimHashEnsemble sh_;
};

}  // namespace peos
