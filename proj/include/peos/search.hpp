#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "peos/error.hpp"
#include "peos/hnsw.hpp"
#include "peos/routing.hpp"
#include "peos/vecstore.hpp"

namespace peos {

struct SearchParams {
    std::size_t K = 10;
    std::size_t efs = 100;
    bool routed = true;  // false ignores any attached routing metadata
};

struct SearchStats {
    std::uint64_t dist_computations = 0;  // exact base-layer neighbour distances
    std::uint64_t tests_evaluated = 0;
    std::uint64_t tests_passed = 0;
    std::uint64_t unconditional = 0;  // neighbours evaluated while the result list was not full
    std::uint64_t hops = 0;
    std::uint64_t upper_dist_computations = 0;  // entry point and upper-layer descent
    std::uint64_t inner_products = 0;           // vᵀq per gated expansion

    SearchStats& operator+=(const SearchStats& o) noexcept {
        dist_computations += o.dist_computations;
        tests_evaluated += o.tests_evaluated;
        tests_passed += o.tests_passed;
        unconditional += o.unconditional;
        hops += o.hops;
        upper_dist_computations += o.upper_dist_computations;
        inner_products += o.inner_products;
        return *this;
    }
};

struct SearchResult {
    std::vector<Neighbor> neighbors;
    SearchStats stats;
};

/// One gated edge as seen by an audit observer: the test outcome, the exact
/// distance of the neighbour and the threshold δ the test was given.
struct TestTrace {
    std::uint32_t from = 0;
    std::uint32_t to = 0;
    bool passed = false;
    double distance = 0.0;
    double delta = 0.0;
};

using TestObserver = std::function<void(const TestTrace&)>;

/// Reusable per-thread search workspace.
class Searcher {
public:
    explicit Searcher(const HnswIndex& idx) : idx_(idx), visited_(idx.size()) {
        bitmap_.resize((idx.max_degree0() + 63) / 64);
    }

    /// With an observer attached, every gated neighbour additionally gets an
    /// exact shadow distance; the traversal itself is unchanged.
    void set_observer(TestObserver obs) { observer_ = std::move(obs); }

    SearchResult search(std::span<const float> q, const SearchParams& p) {
        if (q.size() != idx_.dim()) throw UsageError("search: dimension mismatch");
        if (p.K == 0 || p.efs < p.K) throw UsageError("search: need 1 <= K <= efs");
        if (idx_.size() == 0) throw UsageError("search: empty index");
        const bool routed = p.routed && idx_.has_routing();

        SearchResult res;
        SearchStats& st = res.stats;
        QueryRouting qr;
        if (routed) qr = idx_.router().prepare(q);
        prepare_query(q);
        const float* qp = qbuf_.data();

        std::uint32_t cur = idx_.entry();
        float cur_key = idx_.key(cur, qp);
        ++st.upper_dist_computations;
        for (int lc = idx_.max_level(); lc > 0; --lc) {
            bool changed = true;
            while (changed) {
                changed = false;
                for (auto u : idx_.neighbors(cur, lc)) {
                    float k = idx_.key(u, qp);
                    ++st.upper_dist_computations;
                    if (k < cur_key || (k == cur_key && u < cur)) {
                        cur_key = k;
                        cur = u;
                        changed = true;
                    }
                }
            }
        }

        visited_.reset(idx_.size());
        MaxHeap top;
        MinHeap cand;
        top.emplace(cur_key, cur);
        cand.emplace(cur_key, cur);
        visited_.mark(cur);
        const double qnorm = norm(q);

        while (!cand.empty()) {
            auto [ck, c] = cand.top();
            if (top.size() >= p.efs && ck > top.top().first) break;
            cand.pop();
            ++st.hops;
            auto nb = idx_.neighbors(c, 0);
            const bool gated = routed && top.size() >= p.efs;
            double delta_key = 0.0;
            if (gated) {
                delta_key = top.top().first;
                slots_.clear();
                for (std::uint32_t k = 0; k < nb.size(); ++k)
                    if (!visited_.test(nb[k])) slots_.push_back(k);
                if (slots_.empty()) continue;
                double vq = dot(idx_.data().row(c), q);
                ++st.inner_products;
                auto ts = ThresholdState::from_key(idx_.metric(), delta_key, qnorm, vq);
                idx_.router().evaluate(idx_.meta_record(c, 0), slots_, qr, ts, bitmap_);
                for (std::size_t t = 0; t < slots_.size(); ++t) {
                    const std::uint32_t u = nb[slots_[t]];
                    ++st.tests_evaluated;
                    bool pass = (bitmap_[t / 64] >> (t % 64)) & 1u;
                    if (!pass && idx_.node_has_degenerate(c) && idx_.degenerate_edge(c, slots_[t])) pass = true;
                    if (observer_) {
                        observer_(TestTrace{c, u, pass, idx_.key_to_distance(idx_.key(u, qp)),
                                            idx_.key_to_distance(delta_key)});
                    }
                    if (!pass) continue;
                    ++st.tests_passed;
                    // Gate decisions use the δ snapshot taken above; admission
                    // into R uses the live result list.
                    visit(u, qp, p.efs, top, cand, st);
                }
            } else {
                for (std::uint32_t k = 0; k < nb.size(); ++k) {
                    const std::uint32_t u = nb[k];
                    if (visited_.test(u)) continue;
                    ++st.unconditional;
                    visit(u, qp, p.efs, top, cand, st);
                }
            }
        }

        std::vector<KeyId> all;
        all.reserve(top.size());
        while (!top.empty()) {
            all.push_back(top.top());
            top.pop();
        }
        const std::size_t k_out = std::min(p.K, all.size());
        res.neighbors.reserve(k_out);
        for (std::size_t i = 0; i < k_out; ++i) {
            const auto& kv = all[all.size() - 1 - i];
            res.neighbors.push_back({kv.second, idx_.key_to_distance(kv.first)});
        }
        return res;
    }

private:
    void visit(std::uint32_t u, const float* qp, std::size_t efs, MaxHeap& top, MinHeap& cand, SearchStats& st) {
        visited_.mark(u);
        KeyId item{idx_.key(u, qp), u};
        ++st.dist_computations;
        if (top.size() < efs || item < top.top()) {
            cand.push(item);
            top.push(item);
            if (top.size() > efs) top.pop();
        }
    }

    void prepare_query(std::span<const float> q) {
        qbuf_.assign(q.begin(), q.end());
        if (idx_.metric() == Metric::Angular) {
            double n = norm(q);
            if (n == 0.0) throw DegenerateInputError("search: zero query under angular metric");
            for (auto& x : qbuf_) x = static_cast<float>(x / n);
        }
    }

    const HnswIndex& idx_;
    VisitedSet visited_;
    std::vector<std::uint64_t> bitmap_;
    std::vector<std::uint32_t> slots_;
    std::vector<float> qbuf_;
    TestObserver observer_;
};

inline SearchResult search(const HnswIndex& idx, std::span<const float> q, const SearchParams& p) {
    Searcher s(idx);
    return s.search(q, p);
}

/// Plain HNSW search with every neighbour evaluated exactly.
inline SearchResult search_unrouted(const HnswIndex& idx, std::span<const float> q, SearchParams p) {
    p.routed = false;
    return search(idx, q, p);
}

}  // namespace peos
