#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "peos/error.hpp"

namespace peos {

static_assert(std::endian::native == std::endian::little,
              "fvecs/ivecs and index files are little-endian; big-endian hosts need byte swapping");

enum class Metric : std::uint8_t { L2 = 0, Angular = 1, IP = 2 };

inline std::string_view to_string(Metric m) {
    switch (m) {
        case Metric::L2: return "l2";
        case Metric::Angular: return "angular";
        case Metric::IP: return "ip";
    }
    return "?";
}

inline Metric parse_metric(std::string_view s) {
    if (s == "l2") return Metric::L2;
    if (s == "angular") return Metric::Angular;
    if (s == "ip") return Metric::IP;
    throw UsageError("unknown metric '" + std::string(s) + "'");
}

/// Dense row-major n×d float matrix. Ids are implicit row numbers.
class Dataset {
public:
    Dataset() = default;

    Dataset(std::vector<float> values, std::size_t dim) : values_(std::move(values)), dim_(dim) {
        if (dim_ == 0) throw UsageError("Dataset: dimension must be >= 1");
        if (values_.empty() || values_.size() % dim_ != 0)
            throw UsageError("Dataset: value count must be a positive multiple of dim");
        for (float x : values_)
            if (!std::isfinite(x)) throw UsageError("Dataset: non-finite component");
        n_ = values_.size() / dim_;
    }

    std::size_t size() const noexcept { return n_; }
    std::size_t dim() const noexcept { return dim_; }
    bool empty() const noexcept { return n_ == 0; }

    std::span<const float> row(std::size_t i) const noexcept {
        return {values_.data() + i * dim_, dim_};
    }
    const float* data() const noexcept { return values_.data(); }
    const std::vector<float>& values() const noexcept { return values_; }

    friend bool operator==(const Dataset&, const Dataset&) = default;

private:
    std::vector<float> values_;
    std::size_t dim_ = 0;
    std::size_t n_ = 0;
};

using IdLists = std::vector<std::vector<std::uint32_t>>;

// ---------------------------------------------------------------------------
// Kernels

/// Double-accumulated inner product; used where accuracy matters more than speed.
inline double dot(std::span<const float> a, std::span<const float> b) {
    double acc[4] = {0.0, 0.0, 0.0, 0.0};
    std::size_t i = 0;
    for (; i + 4 <= a.size(); i += 4)
        for (int k = 0; k < 4; ++k) acc[k] += static_cast<double>(a[i + k]) * b[i + k];
    double s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
    return s;
}

inline double norm(std::span<const float> a) { return std::sqrt(dot(a, a)); }

// Float kernels for the search loop. Eight independent accumulators keep the
// dependency chain short enough for the auto-vectoriser.
inline float fast_dot(const float* a, const float* b, std::size_t d) noexcept {
    float acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
    std::size_t i = 0;
    for (; d - i >= 8; i += 8)
        for (int k = 0; k < 8; ++k) acc[k] += a[i + k] * b[i + k];
    float s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for (std::size_t k = 0; k < d % 8; ++k) s += a[i + k] * b[i + k];
    return s;
}

inline float fast_l2sq(const float* a, const float* b, std::size_t d) noexcept {
    float acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
    std::size_t i = 0;
    for (; d - i >= 8; i += 8)
        for (int k = 0; k < 8; ++k) {
            float t = a[i + k] - b[i + k];
            acc[k] += t * t;
        }
    float s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for (std::size_t k = 0; k < d % 8; ++k) {
        float t = a[i + k] - b[i + k];
        s += t * t;
    }
    return s;
}

/// Distance with a uniform "smaller is better" contract.
///   L2      -> Euclidean distance
///   Angular -> 1 - cos(a, b)
///   IP      -> -aᵀb
inline double distance(std::span<const float> a, std::span<const float> b, Metric metric) {
    if (a.size() != b.size()) throw UsageError("distance: dimension mismatch");
    switch (metric) {
        case Metric::L2: {
            double s = 0.0;
            for (std::size_t i = 0; i < a.size(); ++i) {
                double t = static_cast<double>(a[i]) - b[i];
                s += t * t;
            }
            return std::sqrt(s);
        }
        case Metric::Angular: {
            double na = norm(a), nb = norm(b);
            if (na == 0.0 || nb == 0.0) throw DegenerateInputError("distance: angular distance of a zero vector");
            return 1.0 - dot(a, b) / (na * nb);
        }
        case Metric::IP: return -dot(a, b);
    }
    return 0.0;
}

inline std::vector<float> normalize(std::span<const float> q) {
    double n = norm(q);
    if (n == 0.0) throw DegenerateInputError("normalize: zero vector");
    std::vector<float> out(q.size());
    for (std::size_t i = 0; i < q.size(); ++i) out[i] = static_cast<float>(q[i] / n);
    return out;
}

/// Copy of `ds` with every row scaled to unit norm.
inline Dataset normalize_rows(const Dataset& ds) {
    std::vector<float> v(ds.values());
    for (std::size_t i = 0; i < ds.size(); ++i) {
        auto r = normalize(ds.row(i));
        std::copy(r.begin(), r.end(), v.begin() + static_cast<std::ptrdiff_t>(i * ds.dim()));
    }
    return Dataset(std::move(v), ds.dim());
}

// ---------------------------------------------------------------------------
// fvecs / ivecs

namespace detail {

template <typename T>
std::vector<std::vector<T>> read_vecs(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::vector<std::vector<T>> rows;
    std::size_t pos = 0;
    std::int32_t first_dim = -1;
    while (pos < bytes.size()) {
        if (bytes.size() - pos < 4) throw IoError("'" + path + "': truncated dimension prefix");
        std::int32_t d;
        std::memcpy(&d, bytes.data() + pos, 4);
        pos += 4;
        if (d <= 0) throw FormatError("'" + path + "': non-positive dimension prefix");
        if (first_dim < 0) first_dim = d;
        if (d != first_dim) throw FormatError("'" + path + "': inconsistent dimension prefix");
        std::size_t need = static_cast<std::size_t>(d) * sizeof(T);
        if (bytes.size() - pos < need) throw IoError("'" + path + "': truncated record");
        std::vector<T> row(static_cast<std::size_t>(d));
        std::memcpy(row.data(), bytes.data() + pos, need);
        pos += need;
        rows.push_back(std::move(row));
    }
    return rows;
}

template <typename Row>
void write_vecs(const std::string& path, const std::vector<Row>& rows) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path + "'");
    for (const auto& r : rows) {
        std::int32_t d = static_cast<std::int32_t>(r.size());
        out.write(reinterpret_cast<const char*>(&d), 4);
        out.write(reinterpret_cast<const char*>(r.data()),
                  static_cast<std::streamsize>(r.size() * sizeof(r[0])));
    }
    if (!out) throw IoError("write failed for '" + path + "'");
}

}  // namespace detail

inline Dataset load_fvecs(const std::string& path) {
    auto rows = detail::read_vecs<float>(path);
    if (rows.empty()) throw FormatError("'" + path + "': no records");
    std::size_t d = rows.front().size();
    std::vector<float> flat;
    flat.reserve(rows.size() * d);
    for (auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
    try {
        return Dataset(std::move(flat), d);
    } catch (const UsageError& e) {
        throw FormatError("'" + path + "': " + e.what());
    }
}

inline void save_fvecs(const std::string& path, const Dataset& ds) {
    std::vector<std::span<const float>> rows;
    rows.reserve(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) rows.push_back(ds.row(i));
    detail::write_vecs(path, rows);
}

inline IdLists load_ivecs(const std::string& path) {
    auto rows = detail::read_vecs<std::int32_t>(path);
    IdLists out;
    out.reserve(rows.size());
    for (auto& r : rows) {
        std::vector<std::uint32_t> ids;
        ids.reserve(r.size());
        for (auto v : r) {
            if (v < 0) throw FormatError("'" + path + "': negative id");
            ids.push_back(static_cast<std::uint32_t>(v));
        }
        out.push_back(std::move(ids));
    }
    return out;
}

inline void save_ivecs(const std::string& path, const IdLists& lists) {
    std::vector<std::vector<std::int32_t>> rows;
    rows.reserve(lists.size());
    for (const auto& l : lists) rows.emplace_back(l.begin(), l.end());
    detail::write_vecs(path, rows);
}

// ---------------------------------------------------------------------------
// Dimension permutation

/// Accumulates Avg(e_j) = Σ_e e_j² / |E| over a stream of residual vectors.
class SquaredCoordinateMean {
public:
    explicit SquaredCoordinateMean(std::size_t dim) : sums_(dim, 0.0) {}

    void add(std::span<const float> e) {
        if (e.size() != sums_.size()) throw UsageError("SquaredCoordinateMean: dimension mismatch");
        for (std::size_t j = 0; j < e.size(); ++j) sums_[j] += static_cast<double>(e[j]) * e[j];
        ++count_;
    }

    std::size_t count() const noexcept { return count_; }

    std::vector<double> means() const {
        if (count_ == 0) throw UsageError("SquaredCoordinateMean: no edges");
        std::vector<double> out(sums_);
        for (auto& s : out) s /= static_cast<double>(count_);
        return out;
    }

private:
    std::vector<double> sums_;
    std::size_t count_ = 0;
};

inline double avg_squared_coordinate(std::span<const std::vector<float>> edges, std::size_t j) {
    if (edges.empty()) throw UsageError("avg_squared_coordinate: empty edge collection");
    double s = 0.0;
    for (const auto& e : edges) {
        if (j >= e.size()) throw UsageError("avg_squared_coordinate: dimension out of range");
        s += static_cast<double>(e[j]) * e[j];
    }
    return s / static_cast<double>(edges.size());
}

/// Coordinate permutation grouping dimensions into L contiguous subspace
/// blocks. Permuted coordinate k is original coordinate perm[k]; block i
/// spans permuted coordinates [i·d/L, (i+1)·d/L).
struct PermutationPlan {
    std::vector<std::uint32_t> perm;
    std::vector<std::uint32_t> subspace_of;  // original dim -> 0-based subspace
    std::uint32_t L = 1;

    std::size_t dim() const noexcept { return perm.size(); }

    bool is_identity() const noexcept {
        for (std::size_t k = 0; k < perm.size(); ++k)
            if (perm[k] != k) return false;
        return true;
    }

    static PermutationPlan identity(std::size_t d, std::uint32_t L) {
        if (L == 0 || d % L != 0) throw UsageError("PermutationPlan: d must be divisible by L");
        PermutationPlan p;
        p.L = L;
        p.perm.resize(d);
        std::iota(p.perm.begin(), p.perm.end(), 0u);
        p.subspace_of.resize(d);
        for (std::size_t j = 0; j < d; ++j) p.subspace_of[j] = static_cast<std::uint32_t>(j / (d / L));
        return p;
    }

    friend bool operator==(const PermutationPlan&, const PermutationPlan&) = default;
};

/// Greedy balancing of per-dimension mass across L subspaces.
///
/// Dimensions are ranked by ascending Avg (ties: lower dimension first). In
/// round l the ranks l·L .. l·L+L-1 are handed out in order, each to the set
/// with the largest running sum among those not yet served this round (ties:
/// lower set index).
inline PermutationPlan build_permutation(std::span<const double> avgs, std::uint32_t L) {
    const std::size_t d = avgs.size();
    if (L == 0 || d == 0 || d % L != 0) throw UsageError("build_permutation: d must be divisible by L");

    std::vector<std::uint32_t> order(d);
    std::iota(order.begin(), order.end(), 0u);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::uint32_t a, std::uint32_t b) { return avgs[a] < avgs[b]; });

    std::vector<std::vector<std::uint32_t>> sets(L);
    std::vector<double> sums(L, 0.0);
    std::vector<char> served(L);
    const std::size_t rounds = d / L;
    for (std::size_t l = 0; l < rounds; ++l) {
        std::fill(served.begin(), served.end(), 0);
        for (std::size_t j = 0; j < L; ++j) {
            std::uint32_t dim = order[l * L + j];
            std::size_t best = L;
            for (std::size_t s = 0; s < L; ++s) {
                if (served[s]) continue;
                if (best == L || sums[s] > sums[best]) best = s;
            }
            served[best] = 1;
            sets[best].push_back(dim);
            sums[best] += avgs[dim];
        }
    }

    PermutationPlan plan;
    plan.L = L;
    plan.perm.reserve(d);
    plan.subspace_of.assign(d, 0);
    for (std::uint32_t s = 0; s < L; ++s)
        for (auto dim : sets[s]) {
            plan.perm.push_back(dim);
            plan.subspace_of[dim] = s;
        }
    return plan;
}

inline void apply_permutation(std::span<const float> x, const PermutationPlan& plan, std::span<float> out) {
    if (x.size() != plan.dim() || out.size() != plan.dim())
        throw UsageError("apply_permutation: dimension mismatch");
    for (std::size_t k = 0; k < x.size(); ++k) out[k] = x[plan.perm[k]];
}

inline std::vector<float> apply_permutation(std::span<const float> x, const PermutationPlan& plan) {
    std::vector<float> out(x.size());
    apply_permutation(x, plan, out);
    return out;
}

inline std::vector<float> invert_permutation(std::span<const float> y, const PermutationPlan& plan) {
    if (y.size() != plan.dim()) throw UsageError("invert_permutation: dimension mismatch");
    std::vector<float> out(y.size());
    for (std::size_t k = 0; k < y.size(); ++k) out[plan.perm[k]] = y[k];
    return out;
}

}  // namespace peos
