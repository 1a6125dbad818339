// Command-line front end: build / attach / search / bench / audit / stats.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "peos/peos.hpp"

namespace {

enum ExitCode : int { kOk = 0, kUsage = 1, kIo = 2, kAuditFail = 3 };

struct Options {
    std::string base, query, truth, index, out, save;
    std::string metric = "l2";
    std::uint32_t M = 32, efc = 200;
    std::uint64_t graph_seed = 100;
    std::vector<std::string> routing{"peos"};
    double epsilon = 0.2;
    std::uint32_t L = 8, m_proj = 128, simhash_bits = 64;
    bool compact = false, permute = false;
    std::vector<std::size_t> efs{500};
    std::size_t K = 100;
    std::uint64_t seed = 42;
    std::size_t reps = 3;
    std::uint64_t min_evals = 10000;
    std::uint64_t data_seed = 7;
    std::size_t syn_n = 50000, syn_d = 128, syn_q = 100;
};

void add_data_flags(CLI::App* c, Options& o) {
    c->add_option("--base", o.base, "Base vectors (.fvecs); synthetic Gaussians when omitted");
    c->add_option("--query", o.query, "Query vectors (.fvecs)");
    c->add_option("--truth", o.truth, "Ground truth (.ivecs); computed and cached when absent");
    c->add_option("--metric", o.metric, "l2 | angular | ip")->check(CLI::IsMember({"l2", "angular", "ip"}));
    c->add_option("--synthetic-n", o.syn_n, "Synthetic base size");
    c->add_option("--synthetic-d", o.syn_d, "Synthetic dimension");
    c->add_option("--synthetic-queries", o.syn_q, "Synthetic query count");
    c->add_option("--data-seed", o.data_seed, "Synthetic data seed");
}

void add_graph_flags(CLI::App* c, Options& o) {
    c->add_option("--M", o.M, "HNSW max degree (base layer uses 2M)");
    c->add_option("--efc", o.efc, "HNSW construction beam width");
    c->add_option("--graph-seed", o.graph_seed, "HNSW level-assignment seed");
}

void add_routing_flags(CLI::App* c, Options& o) {
    c->add_option("--routing", o.routing, "Comma list of none,peos,rceos,simhash")->delimiter(',');
    c->add_option("--epsilon", o.epsilon, "Routing failure probability");
    c->add_option("--L", o.L, "Subspace count (rceos: must be 1)");
    c->add_option("--m-proj", o.m_proj, "Projections per subspace");
    c->add_option("--simhash-bits", o.simhash_bits, "SimHash sketch length");
    c->add_flag("--compact", o.compact, "One-byte norms, no residual part (peos, L in [2,4])");
    c->add_flag("--permute", o.permute, "Rebalance dimensions across subspaces");
    c->add_option("--seed", o.seed, "Projection / hash seed");
}

void add_search_flags(CLI::App* c, Options& o) {
    c->add_option("--efs", o.efs, "Comma list of result-list capacities")->delimiter(',');
    c->add_option("--K", o.K, "Result count");
}

std::vector<peos::RoutingConfig> routing_configs(const Options& o, bool explicit_L, std::size_t d) {
    std::vector<peos::RoutingConfig> out;
    for (const auto& name : o.routing) {
        peos::RoutingConfig c;
        c.mode = peos::parse_routing_mode(name);
        c.eps = o.epsilon;
        c.m = o.m_proj;
        c.simhash_bits = o.simhash_bits;
        c.compact = o.compact && c.mode == peos::RoutingMode::Peos;
        c.L = c.mode == peos::RoutingMode::Rceos && !explicit_L ? 1 : o.L;
        c.validate(d);
        out.push_back(c);
    }
    return out;
}

struct Data {
    peos::Dataset base, queries;
};

Data load_data(const Options& o, bool need_queries) {
    Data d;
    if (o.base.empty()) {
        auto [b, q] = peos::make_synthetic({o.syn_n, o.syn_d, o.syn_q}, o.data_seed);
        d.base = std::move(b);
        d.queries = std::move(q);
        return d;
    }
    d.base = peos::load_fvecs(o.base);
    if (need_queries) {
        if (o.query.empty()) throw peos::UsageError("--query is required with --base");
        d.queries = peos::load_fvecs(o.query);
        if (d.queries.dim() != d.base.dim()) throw peos::UsageError("query and base dimensions differ");
    }
    return d;
}

peos::HnswIndex graph_for(const Options& o, const Data& data) {
    if (!o.index.empty()) return peos::load_index(o.index, data.base);
    return peos::build_hnsw(data.base, peos::parse_metric(o.metric), {o.M, o.efc, o.graph_seed});
}

void print_stats(const peos::HnswIndex& idx) {
    const auto& cfg = idx.router().config();
    std::size_t edges = idx.base_edge_count();
    std::printf("metric        %s\n", std::string(peos::to_string(idx.metric())).c_str());
    std::printf("points        %zu\n", idx.size());
    std::printf("dimension     %u\n", idx.dim());
    std::printf("M / efc       %u / %u\n", idx.params().M, idx.params().efc);
    std::printf("top level     %d\n", idx.max_level());
    std::printf("base edges    %zu (mean degree %.2f)\n", edges, static_cast<double>(edges) / idx.size());
    std::printf("routing       %s\n", std::string(peos::to_string(cfg.mode)).c_str());
    if (cfg.mode != peos::RoutingMode::None) {
        std::printf("epsilon       %g\n", cfg.eps);
        if (cfg.uses_projections()) {
            std::printf("L / m         %u / %u%s\n", cfg.L, cfg.m, cfg.compact ? " (compact)" : "");
            std::printf("permuted      %s\n", idx.router().plan().is_identity() ? "no" : "yes");
        } else {
            std::printf("sketch bits   %u\n", cfg.simhash_bits);
        }
        std::printf("bytes / edge  %zu\n", idx.router().layout().size());
        std::printf("routing seed  %llu\n", static_cast<unsigned long long>(idx.router().seed()));
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Graph ANN search with probabilistic routing"};
    app.require_subcommand(1);
    Options o;

    auto* build = app.add_subcommand("build", "Build an HNSW graph, optionally with routing metadata");
    add_data_flags(build, o);
    add_graph_flags(build, o);
    add_routing_flags(build, o);
    build->add_option("--index", o.index, "Output index file")->required();
    o.routing = {"none"};

    auto* attach = app.add_subcommand("attach", "Attach routing metadata to an existing index");
    add_data_flags(attach, o);
    add_routing_flags(attach, o);
    attach->add_option("--index", o.index, "Input index file")->required();
    attach->add_option("--save", o.save, "Output index file (default: overwrite --index)");

    auto* search = app.add_subcommand("search", "Run queries and report recall and counters");
    add_data_flags(search, o);
    add_graph_flags(search, o);
    add_search_flags(search, o);
    search->add_option("--index", o.index, "Index file (routing taken from it)");
    search->add_option("--out", o.out, "Write result ids as .ivecs");

    auto* bench = app.add_subcommand("bench", "Sweep routing modes and efs, emit CSV");
    add_data_flags(bench, o);
    add_graph_flags(bench, o);
    add_routing_flags(bench, o);
    add_search_flags(bench, o);
    bench->add_option("--index", o.index, "Graph file (its routing is replaced)");
    bench->add_option("--out", o.out, "CSV path (default stdout)");
    bench->add_option("--reps", o.reps, "Timing repetitions (median)");

    auto* audit = app.add_subcommand("audit", "Shadow-evaluate the routing guarantee");
    add_data_flags(audit, o);
    add_graph_flags(audit, o);
    add_routing_flags(audit, o);
    add_search_flags(audit, o);
    audit->add_option("--index", o.index, "Graph file (its routing is replaced)");
    audit->add_option("--min-evals", o.min_evals, "Minimum gated evaluations");

    auto* stats = app.add_subcommand("stats", "Print index statistics");
    add_data_flags(stats, o);
    stats->add_option("--index", o.index, "Index file")->required();

    // Routing defaults differ per subcommand; reset before parsing flags.
    for (auto* c : {attach, bench, audit}) c->preparse_callback([&](std::size_t) { o.routing = {"peos"}; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kOk : kUsage;
    }

    try {
        auto* sub = app.get_subcommands().front();
        const auto* l_opt = sub->get_option_no_throw("--L");
        const bool explicit_L = l_opt != nullptr && l_opt->count() > 0;

        if (sub == build) {
            Data data = load_data(o, false);
            auto cfgs = routing_configs(o, explicit_L, data.base.dim());
            if (cfgs.size() != 1) throw peos::UsageError("build takes a single --routing mode");
            auto idx = peos::build_hnsw(data.base, peos::parse_metric(o.metric), {o.M, o.efc, o.graph_seed});
            idx = peos::attach_routing(idx, cfgs[0], o.seed, o.permute);
            peos::save_index(idx, o.index);
            print_stats(idx);
            return kOk;
        }
        if (sub == attach) {
            Data data = load_data(o, false);
            auto cfgs = routing_configs(o, explicit_L, data.base.dim());
            if (cfgs.size() != 1) throw peos::UsageError("attach takes a single --routing mode");
            auto idx = peos::attach_routing(peos::load_index(o.index, data.base), cfgs[0], o.seed, o.permute);
            peos::save_index(idx, o.save.empty() ? o.index : o.save);
            print_stats(idx);
            return kOk;
        }
        if (sub == stats) {
            Data data = load_data(o, false);
            print_stats(peos::load_index(o.index, data.base));
            return kOk;
        }

        Data data = load_data(o, true);
        peos::HnswIndex graph = graph_for(o, data);
        if (o.K == 0 || o.K > *std::min_element(o.efs.begin(), o.efs.end()))
            throw peos::UsageError("need 1 <= K <= min(efs)");
        if (o.K > data.base.size()) throw peos::UsageError("K exceeds base size");

        if (sub == search) {
            peos::IdLists truth = peos::load_or_compute_truth(o.truth, data.base, data.queries, o.K, graph.metric());
            std::printf("efs,recall,dist_comps,tests_evaluated,tests_passed,hops,wall_ms\n");
            for (auto efs : o.efs) {
                auto run = peos::run_queries(graph, data.queries, {o.K, efs, true});
                const double nq = static_cast<double>(data.queries.size());
                std::printf("%zu,%s,%s,%s,%s,%s,%s\n", efs,
                            peos::format_g6(peos::compute_recall(run.ids, truth, o.K)).c_str(),
                            peos::format_g6(run.totals.dist_computations / nq).c_str(),
                            peos::format_g6(run.totals.tests_evaluated / nq).c_str(),
                            peos::format_g6(run.totals.tests_passed / nq).c_str(),
                            peos::format_g6(run.totals.hops / nq).c_str(), peos::format_g6(run.wall_ms).c_str());
                if (!o.out.empty() && efs == o.efs.back()) peos::save_ivecs(o.out, run.ids);
            }
            return kOk;
        }

        auto cfgs = routing_configs(o, explicit_L, data.base.dim());
        if (sub == bench) {
            peos::IdLists truth = peos::load_or_compute_truth(o.truth, data.base, data.queries, o.K, graph.metric());
            peos::BenchmarkSpec spec;
            spec.metric = graph.metric();
            spec.graph = graph.params();
            spec.routings = cfgs;
            spec.permute = o.permute;
            spec.efs = o.efs;
            spec.K = o.K;
            spec.repetitions = o.reps;
            spec.seed = o.seed;
            auto rows = peos::run_sweep(spec, graph, data.queries, truth);
            if (o.out.empty()) {
                peos::write_csv(std::cout, rows);
            } else {
                std::ofstream f(o.out);
                if (!f) throw peos::IoError("cannot open " + o.out);
                peos::write_csv(f, rows);
            }
            return kOk;
        }
        if (sub == audit) {
            bool all_ok = true;
            for (const auto& cfg : cfgs) {
                auto idx = peos::attach_routing(graph, cfg, o.seed, o.permute);
                auto rep = peos::audit_guarantee(idx, data.queries, {o.K, o.efs.front(), true}, o.min_evals);
                std::printf("%s eps=%g evaluations=%llu positives=%llu rate=%.6f bound=%.6f %s\n",
                            std::string(peos::to_string(cfg.mode)).c_str(), cfg.eps,
                            static_cast<unsigned long long>(rep.evaluations),
                            static_cast<unsigned long long>(rep.positives), rep.rate, rep.bound,
                            rep.ok() ? "PASS" : "FAIL");
                all_ok = all_ok && rep.ok();
            }
            return all_ok ? kOk : kAuditFail;
        }
    } catch (const peos::IoError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kIo;
    } catch (const peos::FormatError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kIo;
    } catch (const peos::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kUsage;
    }
    return kOk;
}
