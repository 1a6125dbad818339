#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <queue>
#include <span>
#include <utility>
#include <vector>

#include "peos/error.hpp"
#include "peos/rng.hpp"
#include "peos/routing.hpp"
#include "peos/vecstore.hpp"

namespace peos {

struct HnswParams {
    std::uint32_t M = 16;
    std::uint32_t efc = 200;
    std::uint64_t seed = 100;
};

/// Epoch-stamped visited set: clearing is O(1) except on epoch wrap-around.
class VisitedSet {
public:
    explicit VisitedSet(std::size_t n = 0) : stamp_(n, 0) {}

    void reset(std::size_t n) {
        if (stamp_.size() != n) {
            stamp_.assign(n, 0);
            epoch_ = 0;
        }
        if (++epoch_ == 0) {
            std::fill(stamp_.begin(), stamp_.end(), 0);
            epoch_ = 1;
        }
    }
    bool test(std::uint32_t i) const noexcept { return stamp_[i] == epoch_; }
    void mark(std::uint32_t i) noexcept { stamp_[i] = epoch_; }

private:
    std::vector<std::uint32_t> stamp_;
    std::uint32_t epoch_ = 0;
};

using KeyId = std::pair<float, std::uint32_t>;
using MaxHeap = std::priority_queue<KeyId>;
using MinHeap = std::priority_queue<KeyId, std::vector<KeyId>, std::greater<KeyId>>;

/// Hierarchical navigable small-world graph plus optional per-edge routing
/// metadata on the base layer.
///
/// Base-layer adjacency uses fixed slots of width 2M; slot (v, k) also
/// indexes the packed routing record of edge v -> links0[v·2M + k].
/// Adjacency lists are sorted by id once construction finishes.
class HnswIndex {
public:
    HnswIndex() = default;

    Metric metric() const noexcept { return metric_; }
    std::size_t size() const noexcept { return data_.size(); }
    std::uint32_t dim() const noexcept { return static_cast<std::uint32_t>(data_.dim()); }
    const HnswParams& params() const noexcept { return params_; }
    std::uint32_t max_degree0() const noexcept { return 2 * params_.M; }
    std::uint32_t max_degree(int level) const noexcept { return level == 0 ? 2 * params_.M : params_.M; }
    std::uint32_t entry() const noexcept { return entry_; }
    int max_level() const noexcept { return max_level_; }
    int level(std::uint32_t node) const noexcept { return levels_[node]; }
    const Dataset& data() const noexcept { return data_; }

    std::span<const std::uint32_t> neighbors(std::uint32_t node, int level) const noexcept {
        if (level == 0) return {links0_.data() + static_cast<std::size_t>(node) * max_degree0(), count0_[node]};
        const auto& l = upper_[node][static_cast<std::size_t>(level - 1)];
        return {l.data(), l.size()};
    }

    std::size_t base_edge_count() const noexcept {
        return std::accumulate(count0_.begin(), count0_.end(), std::size_t{0});
    }

    /// Search key: squared L2, 1 − uᵀq (unit rows) or −uᵀq; `q` is the
    /// prepared query (unit for angular).
    float key(std::uint32_t node, const float* q) const noexcept {
        const float* x = data_.data() + static_cast<std::size_t>(node) * data_.dim();
        switch (metric_) {
            case Metric::L2: return fast_l2sq(x, q, data_.dim());
            case Metric::Angular: return 1.0f - fast_dot(x, q, data_.dim());
            case Metric::IP: return -fast_dot(x, q, data_.dim());
        }
        return 0.0f;
    }

    /// Reported distance for a search key.
    double key_to_distance(double key) const noexcept {
        return metric_ == Metric::L2 ? std::sqrt(std::max(key, 0.0)) : key;
    }

    // Routing --------------------------------------------------------------

    bool has_routing() const noexcept { return router_.mode() != RoutingMode::None; }
    const Router& router() const noexcept { return router_; }
    std::span<const std::uint8_t> meta_slots() const noexcept { return meta_; }
    const std::uint8_t* meta_record(std::uint32_t node, std::uint32_t k) const noexcept {
        return meta_.data() + (static_cast<std::size_t>(node) * max_degree0() + k) * router_.layout().size();
    }
    bool degenerate_edge(std::uint32_t node, std::uint32_t k) const noexcept {
        return !degenerate_.empty() && degenerate_[static_cast<std::size_t>(node) * max_degree0() + k];
    }
    bool node_has_degenerate(std::uint32_t node) const noexcept {
        return !degenerate_node_.empty() && degenerate_node_[node];
    }

    friend HnswIndex build_hnsw(const Dataset& ds, Metric metric, const HnswParams& params);
    friend HnswIndex attach_routing(const HnswIndex& idx, const RoutingConfig& cfg, std::uint64_t seed, bool permute);
    friend struct IndexIo;

private:
    friend class HnswBuilder;

    float pair_key(std::uint32_t a, std::uint32_t b) const noexcept {
        return key(a, data_.data() + static_cast<std::size_t>(b) * data_.dim());
    }

    void mark_degenerate_edges();

    Dataset data_;
    Metric metric_ = Metric::L2;
    HnswParams params_;
    std::vector<std::uint32_t> links0_;
    std::vector<std::uint32_t> count0_;
    std::vector<std::uint8_t> levels_;
    std::vector<std::vector<std::vector<std::uint32_t>>> upper_;
    std::uint32_t entry_ = 0;
    int max_level_ = 0;

    Router router_;
    std::vector<std::uint8_t> meta_;
    std::vector<std::uint8_t> degenerate_;
    std::vector<std::uint8_t> degenerate_node_;
};

inline void HnswIndex::mark_degenerate_edges() {
    degenerate_.assign(links0_.size(), 0);
    degenerate_node_.assign(size(), 0);
    const std::size_t d = data_.dim();
    bool any = false;
    for (std::uint32_t v = 0; v < size(); ++v) {
        auto nb = neighbors(v, 0);
        for (std::uint32_t k = 0; k < nb.size(); ++k) {
            auto a = data_.row(v), b = data_.row(nb[k]);
            if (std::equal(a.begin(), a.end(), b.begin(), b.begin() + static_cast<std::ptrdiff_t>(d))) {
                degenerate_[static_cast<std::size_t>(v) * max_degree0() + k] = 1;
                degenerate_node_[v] = 1;
                any = true;
            }
        }
    }
    if (!any) {
        degenerate_.clear();
        degenerate_node_.clear();
    }
}

// ---------------------------------------------------------------------------
// Construction

class HnswBuilder {
public:
    HnswBuilder(HnswIndex& idx) : idx_(idx), visited_(idx.size()) {}

    void insert(std::uint32_t id) {
        const int level = idx_.levels_[id];
        if (id == 0) {
            idx_.entry_ = 0;
            idx_.max_level_ = level;
            return;
        }
        const float* q = row(id);
        std::uint32_t cur = idx_.entry_;
        float cur_key = idx_.key(cur, q);
        for (int lc = idx_.max_level_; lc > level; --lc) cur = greedy(cur, cur_key, q, lc);
        for (int lc = std::min(level, idx_.max_level_); lc >= 0; --lc) {
            MaxHeap top = search_layer(cur, q, idx_.params_.efc, lc);
            cur = connect(id, top, lc);
        }
        if (level > idx_.max_level_) {
            idx_.entry_ = id;
            idx_.max_level_ = level;
        }
    }

    /// Links nodes unreachable from the entry point into the base layer.
    void repair_connectivity() {
        const std::size_t n = idx_.size();
        std::vector<char> seen(n, 0);
        auto flood = [&](std::uint32_t s) {
            std::vector<std::uint32_t> stack{s};
            seen[s] = 1;
            while (!stack.empty()) {
                auto v = stack.back();
                stack.pop_back();
                for (auto u : idx_.neighbors(v, 0))
                    if (!seen[u]) {
                        seen[u] = 1;
                        stack.push_back(u);
                    }
            }
        };
        flood(idx_.entry_);
        for (std::uint32_t x = 0; x < n; ++x) {
            if (seen[x]) continue;
            const float* q = row(x);
            std::vector<KeyId> cands;
            for (std::uint32_t y = 0; y < n; ++y)
                if (seen[y]) cands.emplace_back(idx_.key(y, q), y);
            std::sort(cands.begin(), cands.end());
            bool linked = false;
            for (auto [k, y] : cands) {
                auto& cnt = idx_.count0_[y];
                if (cnt < idx_.max_degree0()) {
                    idx_.links0_[static_cast<std::size_t>(y) * idx_.max_degree0() + cnt++] = x;
                    linked = true;
                    break;
                }
            }
            if (!linked) throw Error("hnsw: cannot restore connectivity, every reachable node is full");
            flood(x);
        }
    }

private:
    const float* row(std::uint32_t id) const noexcept {
        return idx_.data_.data() + static_cast<std::size_t>(id) * idx_.data_.dim();
    }

    std::uint32_t greedy(std::uint32_t cur, float& cur_key, const float* q, int level) const {
        bool changed = true;
        while (changed) {
            changed = false;
            for (auto u : idx_.neighbors(cur, level)) {
                float k = idx_.key(u, q);
                if (k < cur_key) {
                    cur_key = k;
                    cur = u;
                    changed = true;
                }
            }
        }
        return cur;
    }

    MaxHeap search_layer(std::uint32_t ep, const float* q, std::uint32_t ef, int level) {
        visited_.reset(idx_.size());
        MaxHeap top;
        MinHeap cand;
        float k0 = idx_.key(ep, q);
        top.emplace(k0, ep);
        cand.emplace(k0, ep);
        visited_.mark(ep);
        while (!cand.empty()) {
            auto [ck, c] = cand.top();
            if (ck > top.top().first && top.size() >= ef) break;
            cand.pop();
            for (auto u : idx_.neighbors(c, level)) {
                if (visited_.test(u)) continue;
                visited_.mark(u);
                float k = idx_.key(u, q);
                KeyId item{k, u};
                if (top.size() < ef || item < top.top()) {
                    cand.push(item);
                    top.push(item);
                    if (top.size() > ef) top.pop();
                }
            }
        }
        return top;
    }

    /// Diversity heuristic: keep a candidate only if it is closer to the
    /// base point than to every neighbour already kept.
    std::vector<KeyId> select_neighbors(std::vector<KeyId> cands, std::uint32_t M) const {
        std::sort(cands.begin(), cands.end());
        if (cands.size() <= M) return cands;
        std::vector<KeyId> out;
        for (const auto& c : cands) {
            if (out.size() >= M) break;
            bool good = true;
            for (const auto& r : out)
                if (idx_.pair_key(c.second, r.second) < c.first) {
                    good = false;
                    break;
                }
            if (good) out.push_back(c);
        }
        return out;
    }

    void set_links(std::uint32_t node, int level, const std::vector<KeyId>& sel) {
        if (level == 0) {
            std::uint32_t* p = idx_.links0_.data() + static_cast<std::size_t>(node) * idx_.max_degree0();
            for (std::size_t k = 0; k < sel.size(); ++k) p[k] = sel[k].second;
            idx_.count0_[node] = static_cast<std::uint32_t>(sel.size());
        } else {
            auto& l = idx_.upper_[node][static_cast<std::size_t>(level - 1)];
            l.clear();
            for (const auto& s : sel) l.push_back(s.second);
        }
    }

    std::uint32_t connect(std::uint32_t id, MaxHeap& top, int level) {
        std::vector<KeyId> cands;
        while (!top.empty()) {
            cands.push_back(top.top());
            top.pop();
        }
        auto sel = select_neighbors(std::move(cands), idx_.params_.M);
        set_links(id, level, sel);
        const std::uint32_t cap = idx_.max_degree(level);
        for (const auto& [k, s] : sel) {
            auto nb = idx_.neighbors(s, level);
            if (nb.size() < cap) {
                if (level == 0) {
                    idx_.links0_[static_cast<std::size_t>(s) * idx_.max_degree0() + idx_.count0_[s]++] = id;
                } else {
                    idx_.upper_[s][static_cast<std::size_t>(level - 1)].push_back(id);
                }
                continue;
            }
            std::vector<KeyId> pool;
            pool.reserve(nb.size() + 1);
            pool.emplace_back(k, id);
            for (auto u : nb) pool.emplace_back(idx_.pair_key(u, s), u);
            set_links(s, level, select_neighbors(std::move(pool), cap));
        }
        return sel.front().second;
    }

    HnswIndex& idx_;
    VisitedSet visited_;
};

/// Single-threaded construction; deterministic for a given seed. Angular
/// datasets are normalised to unit rows first.
inline HnswIndex build_hnsw(const Dataset& ds, Metric metric, const HnswParams& params) {
    if (ds.empty()) throw UsageError("build_hnsw: empty dataset");
    if (params.M < 2 || params.efc < 1) throw UsageError("build_hnsw: need M >= 2 and efc >= 1");
    if (ds.size() > std::numeric_limits<std::uint32_t>::max()) throw UsageError("build_hnsw: too many points");
    HnswIndex idx;
    idx.data_ = metric == Metric::Angular ? normalize_rows(ds) : ds;
    idx.metric_ = metric;
    idx.params_ = params;
    const std::size_t n = ds.size();
    idx.links0_.assign(n * idx.max_degree0(), 0);
    idx.count0_.assign(n, 0);
    idx.levels_.resize(n);
    idx.upper_.resize(n);
    const double mult = 1.0 / std::log(static_cast<double>(params.M));
    for (std::size_t i = 0; i < n; ++i) {
        double u = counter_uniform(params.seed, static_cast<std::uint64_t>(Stream::HnswLevel), i);
        int lvl = static_cast<int>(std::min(-std::log(u) * mult, 30.0));
        idx.levels_[i] = static_cast<std::uint8_t>(lvl);
        idx.upper_[i].resize(static_cast<std::size_t>(lvl));
    }
    HnswBuilder b(idx);
    for (std::uint32_t i = 0; i < n; ++i) b.insert(i);
    b.repair_connectivity();
    for (std::uint32_t v = 0; v < n; ++v) {
        std::uint32_t* p = idx.links0_.data() + static_cast<std::size_t>(v) * idx.max_degree0();
        std::sort(p, p + idx.count0_[v]);
        for (auto& l : idx.upper_[v]) std::sort(l.begin(), l.end());
    }
    return idx;
}

/// Builds per-edge routing metadata for every base-layer edge. With
/// `permute`, coordinates are first rebalanced across subspaces from the
/// per-dimension mean squared residuals of all edges.
inline HnswIndex attach_routing(const HnswIndex& src, const RoutingConfig& cfg, std::uint64_t seed, bool permute) {
    const std::uint32_t d = src.dim();
    cfg.validate(d);
    HnswIndex idx = src;
    idx.meta_.clear();
    const std::uint32_t plan_L = cfg.uses_projections() ? cfg.L : 1;
    PermutationPlan plan = PermutationPlan::identity(d, plan_L);

    const std::size_t n = idx.size();
    std::vector<float> e(d);
    auto residual = [&](std::uint32_t v, std::uint32_t u) {
        auto a = idx.data_.row(u), b = idx.data_.row(v);
        for (std::uint32_t k = 0; k < d; ++k) e[k] = a[k] - b[k];
    };
    if (permute && cfg.uses_projections() && idx.base_edge_count() > 0) {
        SquaredCoordinateMean acc(d);
        for (std::uint32_t v = 0; v < n; ++v)
            for (auto u : idx.neighbors(v, 0)) {
                residual(v, u);
                acc.add(e);
            }
        auto avgs = acc.means();
        plan = build_permutation(avgs, plan_L);
    }

    NormQuantizers quant;
    const MetaLayout layout = MetaLayout::for_config(cfg);
    if (cfg.mode != RoutingMode::None) {
        double hmin = std::numeric_limits<double>::infinity(), hmax = -hmin;
        double emin = hmin, emax = -hmin;
        for (std::uint32_t v = 0; v < n; ++v) {
            double h = dot(idx.data_.row(v), idx.data_.row(v)) / 2.0;
            hmin = std::min(hmin, h);
            hmax = std::max(hmax, h);
            for (auto u : idx.neighbors(v, 0)) {
                residual(v, u);
                double en = norm(e);
                if (en == 0.0) continue;
                emin = std::min(emin, en);
                emax = std::max(emax, en);
            }
        }
        if (emin > emax) emin = emax = 1.0;
        if (idx.metric_ != Metric::L2) hmin = hmax = 0.0;
        quant.half_u_sq = ScalarQuantizer::fit(hmin, hmax, layout.norm_bits());
        quant.enorm = ScalarQuantizer::fit(emin, emax, layout.norm_bits());
    }

    idx.router_ = Router(cfg, idx.metric_, d, seed, std::move(plan), quant);
    idx.mark_degenerate_edges();
    const std::size_t rs = layout.size();
    idx.meta_.assign(idx.links0_.size() * rs, 0);
    if (rs > 0) {
        for (std::uint32_t v = 0; v < n; ++v) {
            auto nb = idx.neighbors(v, 0);
            for (std::uint32_t k = 0; k < nb.size(); ++k) {
                if (idx.degenerate_edge(v, k)) continue;
                std::span<std::uint8_t> slot(idx.meta_.data() + (static_cast<std::size_t>(v) * idx.max_degree0() + k) * rs, rs);
                idx.router_.encode_edge(idx.data_.row(nb[k]), idx.data_.row(v), slot);
            }
        }
    }
    return idx;
}

// ---------------------------------------------------------------------------
// Ground truth

struct Neighbor {
    std::uint32_t id;
    double distance;
    friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

/// Exact K nearest by full scan; ties broken by lower id.
inline std::vector<Neighbor> brute_force_knn(const Dataset& ds, std::span<const float> q, std::size_t K, Metric metric) {
    if (K > ds.size()) throw UsageError("brute_force_knn: K exceeds dataset size");
    if (q.size() != ds.dim()) throw UsageError("brute_force_knn: dimension mismatch");
    std::vector<Neighbor> all(ds.size());
    for (std::uint32_t i = 0; i < ds.size(); ++i) all[i] = {i, distance(ds.row(i), q, metric)};
    auto less = [](const Neighbor& a, const Neighbor& b) {
        return a.distance < b.distance || (a.distance == b.distance && a.id < b.id);
    };
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(K), all.end(), less);
    all.resize(K);
    return all;
}

inline IdLists brute_force_truth(const Dataset& base, const Dataset& queries, std::size_t K, Metric metric) {
    IdLists out(queries.size());
    for (std::size_t i = 0; i < queries.size(); ++i)
        for (const auto& nb : brute_force_knn(base, queries.row(i), K, metric)) out[i].push_back(nb.id);
    return out;
}

}  // namespace peos
