#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <ostream>
#include <string>
#include <unordered_set>
#include <vector>

#include "peos/error.hpp"
#include "peos/hnsw.hpp"
#include "peos/rng.hpp"
#include "peos/search.hpp"
#include "peos/vecstore.hpp"

namespace peos {

/// Mean over queries of |result ∩ truth@K| / K.
inline double compute_recall(const IdLists& results, const IdLists& truth, std::size_t K) {
    if (K == 0) throw UsageError("compute_recall: K must be >= 1");
    if (results.size() != truth.size()) throw UsageError("compute_recall: query count mismatch");
    if (results.empty()) return 0.0;
    double total = 0.0;
    for (std::size_t i = 0; i < results.size(); ++i) {
        if (truth[i].size() < K) throw UsageError("compute_recall: ground truth shorter than K");
        std::unordered_set<std::uint32_t> gt(truth[i].begin(), truth[i].begin() + static_cast<std::ptrdiff_t>(K));
        std::size_t hit = 0;
        const std::size_t lim = std::min(K, results[i].size());
        for (std::size_t k = 0; k < lim; ++k) hit += gt.count(results[i][k]);
        total += static_cast<double>(hit) / K;
    }
    return total / results.size();
}

/// Isotropic Gaussian vectors; rows [first, first + n) of an endless
/// seeded sequence, so base and queries can share one seed.
inline Dataset make_gaussian(std::size_t n, std::size_t d, std::uint64_t seed, std::size_t first = 0) {
    if (n == 0 || d == 0) throw UsageError("make_gaussian: n and d must be >= 1");
    std::vector<float> v(n * d);
    const auto s = static_cast<std::uint64_t>(Stream::Synthetic);
    for (std::size_t k = 0; k < v.size(); ++k) v[k] = static_cast<float>(counter_gaussian(seed, s, first * d + k));
    return Dataset(std::move(v), d);
}

struct SyntheticSpec {
    std::size_t n = 50000;
    std::size_t d = 128;
    std::size_t queries = 100;
};

inline std::pair<Dataset, Dataset> make_synthetic(const SyntheticSpec& s, std::uint64_t seed) {
    return {make_gaussian(s.n, s.d, seed, 0), make_gaussian(s.queries, s.d, seed, s.n)};
}

/// Loads cached ground truth when present and long enough, otherwise
/// computes it by brute force and writes the cache (empty path: no cache).
inline IdLists load_or_compute_truth(const std::string& path, const Dataset& base, const Dataset& queries,
                                     std::size_t K, Metric metric) {
    if (!path.empty() && std::filesystem::exists(path)) {
        IdLists t = load_ivecs(path);
        bool ok = t.size() == queries.size();
        for (const auto& row : t) ok = ok && row.size() >= K;
        if (ok) return t;
    }
    IdLists t = brute_force_truth(base, queries, K, metric);
    if (!path.empty()) save_ivecs(path, t);
    return t;
}

struct BenchmarkSpec {
    Metric metric = Metric::L2;
    HnswParams graph{32, 200, 100};
    std::vector<RoutingConfig> routings;
    bool permute = false;
    std::vector<std::size_t> efs;
    std::size_t K = 100;
    std::size_t repetitions = 3;
    std::uint64_t seed = 42;  // projection / hash seed

    void validate() const {
        if (routings.empty()) throw UsageError("bench: routing list is empty");
        if (efs.empty()) throw UsageError("bench: efs sweep is empty");
        if (K == 0 || K > *std::min_element(efs.begin(), efs.end())) throw UsageError("bench: need 1 <= K <= min(efs)");
        if (repetitions == 0) throw UsageError("bench: repetitions must be >= 1");
    }
};

struct RunRow {
    RoutingConfig routing;
    std::size_t efs = 0;
    std::size_t K = 0;
    double recall = 0.0;
    double qps = 0.0;
    double dist_comps = 0.0;  // mean per query
    double pass_frac = 1.0;   // tests passed / tests evaluated
    double wall_ms = 0.0;     // median pass over all queries
    SearchStats totals;
};

struct QueryRun {
    IdLists ids;
    SearchStats totals;
    double wall_ms = 0.0;
};

/// One timed pass over all queries; the projection table is rebuilt per query.
inline QueryRun run_queries(const HnswIndex& idx, const Dataset& queries, const SearchParams& p) {
    QueryRun out;
    out.ids.resize(queries.size());
    Searcher s(idx);
    auto t0 = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < queries.size(); ++i) {
        auto r = s.search(queries.row(i), p);
        out.totals += r.stats;
        out.ids[i].reserve(r.neighbors.size());
        for (const auto& nb : r.neighbors) out.ids[i].push_back(nb.id);
    }
    out.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

/// Sweeps every (routing, efs) pair over one graph; rows follow the order
/// of spec.routings then spec.efs.
inline std::vector<RunRow> run_sweep(const BenchmarkSpec& spec, const HnswIndex& graph, const Dataset& queries,
                                     const IdLists& truth) {
    spec.validate();
    std::vector<RunRow> rows;
    for (const auto& cfg : spec.routings) {
        HnswIndex idx = attach_routing(graph, cfg, spec.seed, spec.permute);
        for (std::size_t efs : spec.efs) {
            SearchParams p{spec.K, efs, true};
            std::vector<double> walls;
            QueryRun first;
            for (std::size_t rep = 0; rep < spec.repetitions; ++rep) {
                QueryRun r = run_queries(idx, queries, p);
                walls.push_back(r.wall_ms);
                if (rep == 0) first = std::move(r);
            }
            std::nth_element(walls.begin(), walls.begin() + static_cast<std::ptrdiff_t>(walls.size() / 2), walls.end());
            RunRow row;
            row.routing = cfg;
            row.efs = efs;
            row.K = spec.K;
            row.recall = compute_recall(first.ids, truth, spec.K);
            row.wall_ms = walls[walls.size() / 2];
            row.qps = row.wall_ms > 0.0 ? queries.size() * 1000.0 / row.wall_ms : 0.0;
            row.totals = first.totals;
            row.dist_comps = static_cast<double>(first.totals.dist_computations) / queries.size();
            row.pass_frac = first.totals.tests_evaluated > 0
                                ? static_cast<double>(first.totals.tests_passed) / first.totals.tests_evaluated
                                : 1.0;
            rows.push_back(row);
        }
    }
    return rows;
}

inline constexpr const char* kCsvHeader = "mode,epsilon,L,m,compact,efs,K,recall,qps,dist_comps,pass_frac,wall_ms";

inline std::string format_g6(double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", x);
    return buf;
}

inline void write_csv(std::ostream& os, const std::vector<RunRow>& rows) {
    os << kCsvHeader << '\n';
    for (const auto& r : rows) {
        const bool proj = r.routing.uses_projections();
        os << to_string(r.routing.mode) << ',' << format_g6(r.routing.mode == RoutingMode::None ? 0.0 : r.routing.eps)
           << ',' << (proj ? r.routing.L : 0) << ',' << (proj ? r.routing.m : 0) << ',' << (r.routing.compact ? 1 : 0)
           << ',' << r.efs << ',' << r.K << ',' << format_g6(r.recall) << ',' << format_g6(r.qps) << ','
           << format_g6(r.dist_comps) << ',' << format_g6(r.pass_frac) << ',' << format_g6(r.wall_ms) << '\n';
    }
}

// ---------------------------------------------------------------------------
// Guarantee audit

struct AuditReport {
    std::uint64_t evaluations = 0;      // gated neighbour evaluations observed
    std::uint64_t positives = 0;        // of which dist < δ
    std::uint64_t positives_passed = 0;
    std::uint64_t passed = 0;
    std::size_t queries = 0;
    double rate = 1.0;                  // positives_passed / positives
    double bound = 0.0;                 // 1 − ε − 0.02

    bool ok() const noexcept { return rate >= bound; }
};

/// Shadow evaluation over live search traces: every gated neighbour also
/// gets an exact distance, and the report gives the fraction of neighbours
/// closer than δ that passed the gate. Traversal is identical to a normal
/// search. Queries are used in order until `min_evaluations` is reached.
inline AuditReport audit_guarantee(const HnswIndex& idx, const Dataset& queries, const SearchParams& p,
                                   std::uint64_t min_evaluations = 1000) {
    AuditReport rep;
    const RoutingConfig& cfg = idx.router().config();
    rep.bound = cfg.mode == RoutingMode::None ? 1.0 : 1.0 - cfg.eps - 0.02;
    Searcher s(idx);
    s.set_observer([&](const TestTrace& t) {
        ++rep.evaluations;
        rep.passed += t.passed;
        if (t.distance < t.delta) {
            ++rep.positives;
            rep.positives_passed += t.passed;
        }
    });
    for (std::size_t i = 0; i < queries.size(); ++i) {
        if (i > 0 && rep.evaluations >= min_evaluations) break;
        s.search(queries.row(i), p);
        ++rep.queries;
    }
    rep.rate = rep.positives > 0 ? static_cast<double>(rep.positives_passed) / rep.positives : 1.0;
    return rep;
}

}  // namespace peos
