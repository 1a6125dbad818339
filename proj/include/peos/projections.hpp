#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "peos/error.hpp"
#include "peos/rng.hpp"
#include "peos/vecstore.hpp"

namespace peos {

/// Signed 1-based projection index: ±j for j in 1..m. Zero is the reserved
/// NULL index returned for an all-zero input.
using SignedIndex = int;
inline constexpr SignedIndex kNullIndex = 0;

/// Largest m whose signed indices still pack into one byte.
inline constexpr std::uint32_t kMaxProjections = 128;

/// L·m subspace Gaussians a^i_j (dimension d/L each) and m full-space
/// Gaussians b_j. Fully determined by (seed, rng_id, d, L, m).
class ProjectionEnsemble {
public:
    ProjectionEnsemble() = default;

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint32_t rng_id() const noexcept { return kRngId; }
    std::uint32_t dim() const noexcept { return d_; }
    std::uint32_t subspaces() const noexcept { return L_; }
    std::uint32_t count() const noexcept { return m_; }
    std::uint32_t subdim() const noexcept { return L_ == 0 ? 0 : d_ / L_; }

    /// a^i_j with 0-based subspace i and 0-based j.
    std::span<const float> sub(std::uint32_t i, std::uint32_t j) const noexcept {
        return {sub_.data() + (static_cast<std::size_t>(i) * m_ + j) * subdim(), subdim()};
    }
    /// b_j with 0-based j.
    std::span<const float> full(std::uint32_t j) const noexcept {
        return {full_.data() + static_cast<std::size_t>(j) * d_, d_};
    }

    friend bool operator==(const ProjectionEnsemble&, const ProjectionEnsemble&) = default;

    friend ProjectionEnsemble generate_ensemble(std::uint64_t seed, std::uint32_t d, std::uint32_t L,
                                                std::uint32_t m);

private:
    std::uint64_t seed_ = 0;
    std::uint32_t d_ = 0, L_ = 0, m_ = 0;
    std::vector<float> sub_;
    std::vector<float> full_;
};

inline ProjectionEnsemble generate_ensemble(std::uint64_t seed, std::uint32_t d, std::uint32_t L,
                                            std::uint32_t m) {
    if (L == 0 || d == 0 || d % L != 0) throw UsageError("generate_ensemble: d must be divisible by L");
    if (m < 2) throw UsageError("generate_ensemble: m must be >= 2");
    if (m > kMaxProjections) throw UsageError("generate_ensemble: m must be <= 128");
    ProjectionEnsemble e;
    e.seed_ = seed;
    e.d_ = d;
    e.L_ = L;
    e.m_ = m;
    e.sub_.resize(static_cast<std::size_t>(L) * m * (d / L));
    e.full_.resize(static_cast<std::size_t>(m) * d);
    const auto ss = static_cast<std::uint64_t>(Stream::SubProjection);
    const auto fs = static_cast<std::uint64_t>(Stream::FullProjection);
    for (std::size_t k = 0; k < e.sub_.size(); ++k) e.sub_[k] = static_cast<float>(counter_gaussian(seed, ss, k));
    for (std::size_t k = 0; k < e.full_.size(); ++k) e.full_[k] = static_cast<float>(counter_gaussian(seed, fs, k));
    return e;
}

namespace detail {

template <typename Get>
SignedIndex signed_argmax(std::uint32_t m, Get&& inner) {
    double best = 0.0;
    SignedIndex out = kNullIndex;
    for (std::uint32_t j = 0; j < m; ++j) {
        double p = inner(j);
        if (std::fabs(p) > best) {
            best = std::fabs(p);
            out = p > 0 ? static_cast<SignedIndex>(j + 1) : -static_cast<SignedIndex>(j + 1);
        }
    }
    return out;
}

}  // namespace detail

/// sgn(xᵀa^i_j)·j for j = argmax_j |xᵀa^i_j|; x is the sub-vector of
/// subspace i (0-based). NULL for a zero sub-vector.
inline SignedIndex extreme_index(std::span<const float> x, const ProjectionEnsemble& ens, std::uint32_t i) {
    if (i >= ens.subspaces()) throw UsageError("extreme_index: subspace out of range");
    if (x.size() != ens.subdim()) throw UsageError("extreme_index: dimension mismatch");
    return detail::signed_argmax(ens.count(), [&](std::uint32_t j) { return fast_dot(x.data(), ens.sub(i, j).data(), x.size()); });
}

/// Full-space variant over {b_j}.
inline SignedIndex extreme_index_full(std::span<const float> x, const ProjectionEnsemble& ens) {
    if (x.size() != ens.dim()) throw UsageError("extreme_index_full: dimension mismatch");
    return detail::signed_argmax(ens.count(), [&](std::uint32_t j) { return fast_dot(x.data(), ens.full(j).data(), x.size()); });
}

/// Per-query table T_I of q'ᵢᵀa^i_j and q'ᵀb_j, built once per query.
struct QueryProjectionTable {
    std::uint32_t L = 0, m = 0;
    std::vector<float> sub_proj;   // [i * m + j]
    std::vector<float> full_proj;  // [j]
    double qnorm = 0.0;
    std::vector<float> qn;

    float sub(std::uint32_t i, std::uint32_t j) const noexcept { return sub_proj[i * m + j]; }

    /// Signed lookup for an extreme index; NULL contributes zero.
    float lookup_sub(std::uint32_t i, SignedIndex id) const noexcept {
        if (id == kNullIndex) return 0.0f;
        float v = sub_proj[i * m + static_cast<std::uint32_t>(std::abs(id)) - 1];
        return id > 0 ? v : -v;
    }
    float lookup_full(SignedIndex id) const noexcept {
        if (id == kNullIndex) return 0.0f;
        float v = full_proj[static_cast<std::uint32_t>(std::abs(id)) - 1];
        return id > 0 ? v : -v;
    }
};

/// `q` must already be in the ensemble's (permuted) coordinate system.
inline QueryProjectionTable project_query(std::span<const float> q, const ProjectionEnsemble& ens) {
    if (q.size() != ens.dim()) throw UsageError("project_query: dimension mismatch");
    QueryProjectionTable t;
    t.qnorm = norm(q);
    if (t.qnorm == 0.0) throw DegenerateInputError("project_query: zero query");
    t.qn = normalize(q);
    t.L = ens.subspaces();
    t.m = ens.count();
    const std::uint32_t dp = ens.subdim();
    t.sub_proj.resize(static_cast<std::size_t>(t.L) * t.m);
    for (std::uint32_t i = 0; i < t.L; ++i) {
        std::span<const float> qi(t.qn.data() + static_cast<std::size_t>(i) * dp, dp);
        for (std::uint32_t j = 0; j < t.m; ++j)
            t.sub_proj[i * t.m + j] = static_cast<float>(dot(qi, ens.sub(i, j)));
    }
    t.full_proj.resize(t.m);
    for (std::uint32_t j = 0; j < t.m; ++j) t.full_proj[j] = static_cast<float>(dot(t.qn, ens.full(j)));
    return t;
}

}  // namespace peos
