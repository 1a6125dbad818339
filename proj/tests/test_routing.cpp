#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "mc_harness.hpp"
#include "oracles.hpp"
#include "peos/analysis.hpp"
#include "peos/edge_meta.hpp"
#include "peos/quantile_table.hpp"
#include "peos/routing.hpp"
#include "peos/simhash.hpp"

using namespace peos;

namespace {

RoutingConfig peos_config(std::uint32_t L, std::uint32_t m = 128, double eps = 0.2) {
    RoutingConfig c;
    c.mode = L == 1 ? RoutingMode::Rceos : RoutingMode::Peos;
    c.L = L;
    c.m = m;
    c.eps = eps;
    return c;
}

double dotd(const std::vector<double>& a, const std::vector<double>& b) {
    long double s = 0;
    for (std::size_t k = 0; k < a.size(); ++k) s += static_cast<long double>(a[k]) * b[k];
    return static_cast<double>(s);
}

}  // namespace

// ---------------------------------------------------------------------------
// Decomposition

TEST(Decompose, EqualBlockNormsCollapse) {
    std::vector<float> e{1, 0, 0, 1, -1, 0, 0, 1};  // four blocks of norm 1
    auto dec = decompose(e, 4);
    EXPECT_NEAR(dec.w_reg, 1.0, 1e-12);
    EXPECT_NEAR(dec.w_res, 0.0, 1e-6);
    for (double r : dec.res) EXPECT_NEAR(r, 0.0, 1e-12);
}

TEST(Decompose, OrthogonalAndUnitWeights) {
    std::mt19937_64 g(21);
    for (int t = 0; t < 200; ++t) {
        auto e = oracle::gaussian_vector(g, 32);
        auto dec = decompose(e, 4);
        const double ee = dot(e, e);
        EXPECT_LE(std::fabs(dotd(dec.reg_dir, dec.res)), 1e-6 * ee);
        EXPECT_NEAR(dec.w_reg * dec.w_reg + dec.w_res * dec.w_res, 1.0, 1e-9);
        EXPECT_NEAR(dotd(dec.reg_dir, dec.reg_dir), 1.0, 1e-12);
        // e = ‖e‖·w_reg·reg_dir + res
        const double en = std::sqrt(ee);
        for (std::size_t k = 0; k < 32; ++k) EXPECT_NEAR(en * dec.w_reg * dec.reg_dir[k] + dec.res[k], e[k], 1e-5);
        EXPECT_NEAR(std::sqrt(dotd(dec.res, dec.res)) / en, dec.w_res, 1e-6);
    }
}

TEST(Decompose, MeanRegularWeightAtD128L8) {
    auto s = estimate_partition_stats(128, 8, 10000, 5);
    EXPECT_GE(s.mean_w_reg, 0.978);
}

TEST(Decompose, ZeroInputAndZeroBlocks) {
    EXPECT_THROW(decompose(std::vector<float>(8, 0.0f), 2), UsageError);
    EXPECT_THROW(decompose(std::vector<float>(9, 1.0f), 2), UsageError);
    std::vector<float> e{3, 4, 0, 0, 0, 0, 1, 0};
    auto dec = decompose(e, 4);
    EXPECT_EQ(dec.zero_blocks, 2u);
    EXPECT_NEAR(dotd(dec.reg_dir, dec.reg_dir), 1.0, 1e-12);
    for (std::size_t k = 2; k < 6; ++k) EXPECT_EQ(dec.reg_dir[k], 0.0);
    EXPECT_NEAR(dec.w_reg * dec.w_reg + dec.w_res * dec.w_res, 1.0, 1e-9);
}

// ---------------------------------------------------------------------------
// Edge metadata

TEST(EdgeMetaBuild, SingleSubspaceCollapse) {
    auto ens = generate_ensemble(3, 16, 1, 32);
    std::mt19937_64 g(22);
    auto e = oracle::gaussian_vector(g, 16);
    auto quant = mc::unit_quantizers();
    auto meta = build_edge_meta(e, 0.5, Metric::L2, ens, quant, peos_config(1, 32));
    ASSERT_EQ(meta.ext_ids.size(), 2u);
    EXPECT_EQ(meta.w_reg_q, 255);
    EXPECT_EQ(meta.w_res_q, 0);
    EXPECT_EQ(meta.ext_ids[0], kNullIndex);
    EXPECT_EQ(meta.ext_ids[1], extreme_index(e, ens, 0));
}

TEST(EdgeMetaBuild, QuantizerWithinOneStep) {
    std::mt19937_64 g(23);
    std::uniform_real_distribution<double> u(0.0, 40.0);
    for (std::uint32_t bits : {8u, 16u}) {
        auto q = ScalarQuantizer::fit(0.0, 40.0, bits);
        for (int t = 0; t < 10000; ++t) {
            double x = u(g);
            double lo = q.decode(q.encode_down(x)), hi = q.decode(q.encode_up(x));
            EXPECT_LE(lo, x);
            EXPECT_GE(hi, x);
            EXPECT_LE(x - lo, q.step * (1 + 1e-9));
            EXPECT_LE(hi - x, q.step * (1 + 1e-9));
        }
    }
}

TEST(EdgeMetaBuild, MatchesRecomputationFromSeed) {
    const std::uint32_t d = 64, L = 4, m = 64;
    auto cfg = peos_config(L, m);
    auto quant = mc::unit_quantizers();
    auto ens = generate_ensemble(77, d, L, m);
    auto again = generate_ensemble(77, d, L, m);
    std::mt19937_64 g(24);
    for (int t = 0; t < 100; ++t) {
        auto e = oracle::gaussian_vector(g, d);
        auto meta = build_edge_meta(e, 0.3, Metric::L2, ens, quant, cfg);
        auto dec = decompose(e, L);
        for (std::uint32_t i = 0; i < L; ++i) {
            std::span<const float> blk(e.data() + i * 16, 16);
            int best = 0;
            long double bv = -1;
            for (std::uint32_t j = 0; j < m; ++j) {
                long double p = oracle::dot(blk.data(), again.sub(i, j).data(), 16);
                if (std::fabs(p) > bv) {
                    bv = std::fabs(p);
                    best = p > 0 ? int(j + 1) : -int(j + 1);
                }
            }
            EXPECT_EQ(meta.ext_ids[i + 1], best);
        }
        std::vector<float> res(dec.res.begin(), dec.res.end());
        EXPECT_EQ(meta.ext_ids[0], extreme_index_full(res, again));
        EXPECT_EQ(meta.w_reg_q, quantize_weight(dec.w_reg));
        EXPECT_EQ(meta.w_res_q, quantize_weight(dec.w_res));
        const double wr = meta.w_reg(), ws = meta.w_res();
        EXPECT_NEAR(wr * wr + ws * ws, 1.0, 2.0 * kWeightStep);
        EXPECT_GT(quant.enorm.decode(meta.enorm_q), 0.0);
    }
}

TEST(EdgeMetaBuild, DegenerateEdgeRejected) {
    auto ens = generate_ensemble(3, 16, 2, 8);
    EXPECT_THROW(build_edge_meta(std::vector<float>(16, 0.0f), 1.0, Metric::L2, ens, mc::unit_quantizers(),
                                 peos_config(2, 8)),
                 DegenerateInputError);
}

TEST(EdgeMetaLayout, ByteSizesAndRoundTrip) {
    auto cfg = peos_config(8);
    auto l = MetaLayout::for_config(cfg);
    EXPECT_EQ(l.size(), 9u + 3u + 4u);
    RoutingConfig compact = peos_config(4);
    compact.compact = true;
    auto lc = MetaLayout::for_config(compact);
    EXPECT_EQ(lc.size(), 4u + 2u);
    EXPECT_EQ(MetaLayout::for_config(RoutingConfig{}).size(), 0u);

    auto ens = generate_ensemble(4, 128, 8, 128);
    std::mt19937_64 g(25);
    auto quant = mc::unit_quantizers();
    for (int t = 0; t < 50; ++t) {
        auto e = oracle::gaussian_vector(g, 128);
        for (auto& x : e) x *= 0.1f;
        auto meta = build_edge_meta(e, 0.7, Metric::L2, ens, quant, cfg);
        std::vector<std::uint8_t> buf(l.size());
        encode_edge_meta(meta, l, buf);
        EXPECT_EQ(decode_edge_meta(buf, l), meta);
        // Wire order: ids e[0..L], then w_reg_q, w_res_q, var_idx, then norms.
        EXPECT_EQ(buf[9], meta.w_reg_q);
        EXPECT_EQ(buf[10], meta.w_res_q);
        EXPECT_EQ(buf[11], meta.var_idx);
        EXPECT_EQ(buf[12] | (buf[13] << 8), static_cast<int>(meta.half_u_sq_q));
    }
}

TEST(EdgeMetaBuild, CompactForcesUnitRegularWeight) {
    RoutingConfig cfg = peos_config(4, 64);
    cfg.compact = true;
    auto ens = generate_ensemble(5, 64, 4, 64);
    std::mt19937_64 g(26);
    auto e = oracle::gaussian_vector(g, 64);
    auto quant = NormQuantizers{ScalarQuantizer::fit(0, 1, 8), ScalarQuantizer::fit(0, 20, 8)};
    auto meta = build_edge_meta(e, 0.5, Metric::L2, ens, quant, cfg);
    EXPECT_EQ(meta.w_reg_q, 255);
    EXPECT_EQ(meta.w_res_q, 0);
    EXPECT_EQ(meta.ext_ids[0], kNullIndex);
    auto l = MetaLayout::for_config(cfg);
    std::vector<std::uint8_t> buf(l.size());
    encode_edge_meta(meta, l, buf);
    EXPECT_EQ(decode_edge_meta(buf, l), meta);
}

TEST(RoutingConfigValidation, Combinations) {
    RoutingConfig c = peos_config(4);
    c.mode = RoutingMode::Rceos;
    EXPECT_THROW(c.validate(128), UsageError);
    c = peos_config(8);
    c.compact = true;
    EXPECT_THROW(c.validate(128), UsageError);
    c = peos_config(8);
    c.eps = 0.6;
    EXPECT_THROW(c.validate(128), UsageError);
    c = peos_config(8);
    EXPECT_THROW(c.validate(100), UsageError);
    EXPECT_NO_THROW(peos_config(8).validate(128));
}

// ---------------------------------------------------------------------------
// Quantile table

TEST(QuantileTableBuild, HalfEpsilonIsTheMean) {
    auto t = build_quantile_table(0.5, 8, 128);
    const double scale = std::sqrt(2.0 * 8 * std::log(128.0));
    for (std::uint32_t r = 0; r < t.rows(); r += 17)
        for (std::uint32_t c = 0; c < t.cols(); c += 7) {
            const double mean = t.x_value(c) * scale;
            EXPECT_LE(t.at(r, c), mean);
            EXPECT_NEAR(t.at(r, c), mean, 1e-6 * (1 + mean));
        }
}

TEST(QuantileTableBuild, UnitVarianceAtZeroThreshold) {
    auto t = build_quantile_table(0.2, 1, 128);
    auto row = t.grid().row_for(VarianceGrid::edge_variance(1.0, 0.0, 1));
    EXPECT_DOUBLE_EQ(t.v_value(row), 1.0);
    EXPECT_NEAR(t.threshold(row, 0.0), static_cast<double>(oracle::inverse_normal(0.2L)), 1e-6);
    EXPECT_NEAR(t.threshold(row, 0.0), -0.8416, 1e-4);
}

TEST(QuantileTableBuild, MonotoneAndConservativeEverywhere) {
    for (std::uint32_t L : {1u, 4u, 8u}) {
        auto t = build_quantile_table(0.2, L, 128);
        const long double z = oracle::inverse_normal(0.2L);
        const long double mu = std::sqrt(2.0L * L * std::log(128.0L));
        for (std::uint32_t r = 0; r < t.rows(); ++r)
            for (std::uint32_t c = 0; c < t.cols(); ++c) {
                const long double x = t.x_value(c), v = t.v_value(r);
                const long double exact = x * mu + std::sqrt(std::max(0.0L, v - L * x * x / (L + 1.0L))) * z;
                ASSERT_LE(static_cast<long double>(t.at(r, c)), exact) << r << "," << c;
                if (c > 0) {
                    ASSERT_GE(t.at(r, c), t.at(r, c - 1)) << r << "," << c;
                }
            }
    }
}

TEST(QuantileTableBuild, VarianceRoundsUpAndXRoundsDown) {
    VarianceGrid g(8);
    std::mt19937_64 rng(27);
    std::uniform_real_distribution<double> u(1e-6, g.v_max());
    for (int t = 0; t < 10000; ++t) {
        double v = u(rng);
        auto row = g.row_for(v);
        EXPECT_GE(g.value(row), v);
        if (row > 0) {
            EXPECT_LT(g.value(row - 1), v);
        }
    }
    EXPECT_EQ(g.row_for(8.0), VarianceGrid::kOverflowRow);
    auto tbl = build_quantile_table(0.2, 8, 128);
    std::uniform_real_distribution<double> ua(0, 1);
    for (int t = 0; t < 10000; ++t) {
        double a = ua(rng);
        EXPECT_LE(tbl.x_value(tbl.col_for(a)), a);
    }
}

TEST(QuantileTableBuild, RejectsInvalidEpsilon) {
    EXPECT_THROW(build_quantile_table(0.6, 8, 128), UsageError);
    EXPECT_THROW(build_quantile_table(0.0, 8, 128), UsageError);
}

// ---------------------------------------------------------------------------
// A_r

TEST(ComputeAr, OpenResultListPasses) {
    ThresholdState ts = ThresholdState::unbounded(0.3);
    EXPECT_EQ(compute_Ar(1.0, 1.0, ts, 1.0, Metric::L2), -std::numeric_limits<double>::infinity());
}

TEST(ComputeAr, WorkedExample) {
    // q=(1,0), v=(0,0), u=(0,2), p=(3,0)
    std::vector<float> q{1, 0}, u{0, 2}, p{3, 0};
    double key = distance(p, q, Metric::L2);
    auto ts = ThresholdState::from_key(Metric::L2, key * key, 1.0, 0.0);
    EXPECT_DOUBLE_EQ(ts.r, 1.5);
    EXPECT_DOUBLE_EQ(ts.delta, 2.0);
    EXPECT_DOUBLE_EQ(ts.delta * ts.delta - 2 * ts.r, 1.0);
    EXPECT_DOUBLE_EQ(compute_Ar(2.0, 2.0, ts, 1.0, Metric::L2), 0.25);
    EXPECT_GT(distance(u, q, Metric::L2), ts.delta);
    EXPECT_NEAR(distance(u, q, Metric::L2), std::sqrt(5.0), 1e-12);
}

TEST(ComputeAr, CandidateAtFurthestGivesCosine) {
    std::mt19937_64 g(28);
    for (int t = 0; t < 100; ++t) {
        auto q = oracle::gaussian_vector(g, 12), v = oracle::gaussian_vector(g, 12), u = oracle::gaussian_vector(g, 12);
        std::vector<float> e(12);
        for (int k = 0; k < 12; ++k) e[k] = u[k] - v[k];
        double d = distance(u, q, Metric::L2);
        auto ts = ThresholdState::from_key(Metric::L2, d * d, norm(q), dot(v, q));
        double a = compute_Ar(dot(u, u) / 2, norm(e), ts, norm(q), Metric::L2);
        EXPECT_NEAR(a, dot(e, q) / (norm(e) * norm(q)), 1e-5);
        // Inner product: A_r = (pᵀq − vᵀq)/(‖q‖‖e‖) with p = u.
        auto ti = ThresholdState::from_key(Metric::IP, -dot(u, q), norm(q), dot(v, q));
        EXPECT_NEAR(compute_Ar(0.0, norm(e), ti, norm(q), Metric::IP), dot(e, q) / (norm(e) * norm(q)), 1e-5);
    }
}

// ---------------------------------------------------------------------------
// PEOs / RCEOs tests

TEST(PeosTest, EarlyReturns) {
    auto ens = generate_ensemble(31, 128, 8, 128);
    auto tbl = build_quantile_table(0.2, 8, 128);
    auto quant = mc::unit_quantizers();
    std::mt19937_64 g(29);
    auto e = normalize(oracle::gaussian_vector(g, 128));
    auto q = normalize(oracle::gaussian_vector(g, 128));
    auto meta = build_edge_meta(e, 1.0, Metric::L2, ens, quant, peos_config(8));
    auto qpt = project_query(q, ens);
    EXPECT_TRUE(peos_test(meta, tbl, qpt, mc::state_for(-0.3), quant, Metric::L2));
    EXPECT_TRUE(peos_test(meta, tbl, qpt, ThresholdState::unbounded(), quant, Metric::L2));
    EXPECT_FALSE(peos_test(meta, tbl, qpt, mc::state_for(1.2), quant, Metric::L2));
}

TEST(PeosTest, GuaranteeOnTruePositives) {
    auto r = mc::guarantee_rate(RoutingMode::Peos, 128, 8, 128, 0.2, 64, 10000, 1);
    EXPECT_GE(r.rate(), 0.78) << r.passed << "/" << r.trials;
}

TEST(RceosTest, GuaranteeOnTruePositives) {
    auto r = mc::guarantee_rate(RoutingMode::Rceos, 128, 1, 128, 0.2, 64, 10000, 2);
    EXPECT_GE(r.rate(), 0.78) << r.passed << "/" << r.trials;
}

TEST(RceosTest, DecisionIdenticalToPeosAtL1) {
    const std::uint32_t d = 64, m = 128;
    auto ens = generate_ensemble(32, d, 1, m);
    auto tbl = build_quantile_table(0.2, 1, m);
    auto quant = mc::unit_quantizers();
    CounterRng rng(33, Stream::Test);
    int mismatches = 0, inside = 0;
    for (int t = 0; t < 10000; ++t) {
        mc::PositiveCase c;
        mc::pair_at_random_angle(rng, d, -0.95, 0.95, c);
        auto meta = build_edge_meta(c.e, 1.0, Metric::L2, ens, quant, peos_config(1, m));
        auto qpt = project_query(c.q, ens);
        auto ts = mc::state_for(-0.2 + 1.4 * rng.uniform());
        double a = compute_Ar(meta, quant, ts, 1.0, Metric::L2);
        inside += a > 0 && a < 1;
        mismatches += rceos_test(meta, tbl, qpt, ts, quant, Metric::L2) != peos_test(meta, tbl, qpt, ts, quant, Metric::L2);
    }
    EXPECT_EQ(mismatches, 0);
    EXPECT_GT(inside, 5000);
}

TEST(RceosTest, EarlyReturn) {
    auto ens = generate_ensemble(34, 16, 1, 16);
    auto tbl = build_quantile_table(0.2, 1, 16);
    auto quant = mc::unit_quantizers();
    std::vector<float> e(16, 0.25f), q(16, -0.25f);
    auto meta = build_edge_meta(e, 1.0, Metric::L2, ens, quant, peos_config(1, 16));
    EXPECT_TRUE(rceos_test(meta, tbl, project_query(q, ens), mc::state_for(-0.01), quant, Metric::L2));
}

// ---------------------------------------------------------------------------
// Batched evaluation

namespace {

struct BlockFixture {
    RoutingConfig cfg;
    MetaLayout layout;
    ProjectionEnsemble ens;
    QuantileTable tbl;
    NormQuantizers quant;
    std::vector<EdgeMeta> metas;
    std::vector<std::uint8_t> bytes;

    BlockFixture(std::uint32_t L, bool compact, std::size_t pool) {
        cfg = peos_config(L, 128);
        cfg.compact = compact;
        layout = MetaLayout::for_config(cfg);
        ens = generate_ensemble(40 + L, 64, L, 128);
        tbl = build_quantile_table(0.2, L, 128);
        quant = NormQuantizers{ScalarQuantizer::fit(0, 1, layout.norm_bits()), ScalarQuantizer::fit(0, 2, layout.norm_bits())};
        CounterRng rng(41, Stream::Test);
        bytes.resize(pool * layout.size());
        for (std::size_t k = 0; k < pool; ++k) {
            auto e = mc::unit_gaussian(rng, 64);
            if (k % 7 == 3) std::fill(e.begin(), e.begin() + 64 / L, 0.0f);  // zero block
            metas.push_back(build_edge_meta(e, rng.uniform(), Metric::L2, ens, quant, cfg));
            encode_edge_meta(metas.back(), layout, std::span(bytes).subspan(k * layout.size(), layout.size()));
        }
    }
};

}  // namespace

TEST(BatchPeos, EqualsPerEdgeDecisions) {
    for (auto [L, compact] : {std::pair{8u, false}, std::pair{4u, true}, std::pair{2u, false}}) {
        BlockFixture fx(L, compact, 256);
        CounterRng rng(42, Stream::Test);
        std::size_t mismatches = 0, evaluated = 0;
        for (int b = 0; b < 10000; ++b) {
            const std::size_t count = 1 + static_cast<std::size_t>(rng.uniform() * 64);
            const std::size_t start = static_cast<std::size_t>(rng.uniform() * (256 - count));
            auto q = mc::unit_gaussian(rng, 64);
            auto qpt = project_query(q, fx.ens);
            ThresholdState ts = mc::state_for(-0.1 + 0.6 * rng.uniform());
            ts.vq = rng.gaussian() * 0.05;
            auto bits = batch_peos_test(std::span(fx.bytes).subspan(start * fx.layout.size()), count, fx.layout, fx.tbl,
                                        qpt, ts, fx.quant, Metric::L2);
            for (std::size_t k = 0; k < count; ++k) {
                auto meta = decode_edge_meta(std::span(fx.bytes).subspan((start + k) * fx.layout.size()), fx.layout);
                bool ref = peos_test(meta, fx.tbl, qpt, ts, fx.quant, Metric::L2);
                mismatches += ref != static_cast<bool>((bits[k / 64] >> (k % 64)) & 1);
                ++evaluated;
            }
        }
        EXPECT_EQ(mismatches, 0u) << "L=" << L << " over " << evaluated;
    }
}

TEST(BatchPeos, EmptyAndUniformBlocks) {
    BlockFixture fx(8, false, 1);
    auto q = std::vector<float>(64, 1.0f);
    auto qpt = project_query(q, fx.ens);
    auto empty = batch_peos_test({}, 0, fx.layout, fx.tbl, qpt, mc::state_for(0.3), fx.quant, Metric::L2);
    EXPECT_TRUE(empty.empty());
    std::vector<std::uint8_t> same;
    for (int k = 0; k < 16; ++k) same.insert(same.end(), fx.bytes.begin(), fx.bytes.end());
    for (double a : {-0.5, 0.05, 0.2, 0.4, 0.9, 1.5}) {
        auto bits = batch_peos_test(same, 16, fx.layout, fx.tbl, qpt, mc::state_for(a), fx.quant, Metric::L2);
        EXPECT_TRUE(bits[0] == 0 || bits[0] == 0xffff) << std::hex << bits[0];
    }
}

TEST(RouterEvaluate, SlotsAndNoneMode) {
    BlockFixture fx(8, false, 32);
    Router router(fx.cfg, Metric::L2, 64, 48, PermutationPlan::identity(64, 8), fx.quant);
    EXPECT_EQ(router.ensemble(), generate_ensemble(48, 64, 8, 128));
    CounterRng rng(43, Stream::Test);
    auto q = mc::unit_gaussian(rng, 64);
    auto qr = router.prepare(q);
    auto ts = mc::state_for(0.1);
    std::vector<std::uint32_t> slots{3, 9, 0, 31, 17};
    std::vector<std::uint64_t> bm(1), all(1);
    // Re-encode the pool with this router's ensemble.
    std::vector<std::uint8_t> block(32 * fx.layout.size());
    for (std::uint32_t k = 0; k < 32; ++k) {
        auto e = mc::unit_gaussian(rng, 64);
        std::vector<float> zero(64, 0.0f);
        router.encode_edge(e, zero, std::span(block).subspan(k * fx.layout.size(), fx.layout.size()));
    }
    router.evaluate(block.data(), slots, qr, ts, bm);
    router.evaluate(block.data(), std::size_t{32}, qr, ts, all);
    for (std::size_t t = 0; t < slots.size(); ++t)
        EXPECT_EQ((bm[0] >> t) & 1, (all[0] >> slots[t]) & 1);

    Router none(RoutingConfig{}, Metric::L2, 64, 1, PermutationPlan::identity(64, 1), {});
    std::vector<std::uint64_t> nb(1, 0);
    none.evaluate(nullptr, slots, none.prepare(q), ts, nb);
    for (std::size_t t = 0; t < slots.size(); ++t) EXPECT_TRUE((nb[0] >> t) & 1);
}

// ---------------------------------------------------------------------------
// SimHash

TEST(SimHash, NegationFlipsEveryBit) {
    SimHashEnsemble ens(50, 32, 256);
    std::mt19937_64 g(51);
    auto e = oracle::gaussian_vector(g, 32);
    std::vector<float> neg(e);
    for (auto& x : neg) x = -x;
    auto a = simhash_sketch(e, ens), b = simhash_sketch(neg, ens);
    for (std::size_t w = 0; w < a.words.size(); ++w) EXPECT_EQ(a.words[w] ^ b.words[w], ~std::uint64_t{0});
    EXPECT_EQ(collisions(a, a), 256u);
    std::vector<float> scaled(e);
    for (auto& x : scaled) x *= 3.0f;
    EXPECT_EQ(collisions(a, simhash_sketch(scaled, ens)), 256u);
}

TEST(SimHash, OrthogonalCollisionFraction) {
    const int trials = 1000;
    const std::uint32_t n = 256;
    CounterRng rng(52, Stream::Test);
    std::uint64_t col = 0;
    for (int t = 0; t < trials; ++t) {
        SimHashEnsemble ens(5000 + t, 32, n);
        mc::PositiveCase c;
        mc::pair_at_random_angle(rng, 32, 0.0, 0.0, c);
        col += collisions(simhash_sketch(c.e, ens), simhash_sketch(c.q, ens));
    }
    const double frac = double(col) / (double(n) * trials);
    EXPECT_LT(std::fabs(frac - 0.5), 3 * std::sqrt(0.25 / (double(n) * trials)));
}

TEST(SimHash, ThresholdArithmetic) {
    const double a = std::cos(std::numbers::pi / 2);
    EXPECT_NEAR(simhash_threshold(a, 0.2, 64), 32 - std::sqrt(64 * std::log(5.0) / 2), 1e-9);
    EXPECT_NEAR(simhash_threshold(a, 0.2, 64), 24.83, 0.01);  // the worked value rounds the subtrahend to 7.17
    EXPECT_TRUE(simhash_test(25, a, 0.2, 64));
    EXPECT_FALSE(simhash_test(24, a, 0.2, 64));
    EXPECT_NEAR(simhash_threshold(0.5, 1.0 - 1e-12, 64), 64 * (1 - std::acos(0.5) / std::numbers::pi), 1e-4);
    EXPECT_TRUE(simhash_test(0, -0.2, 0.2, 64));
    EXPECT_FALSE(simhash_test(64, 1.0, 0.2, 64));
    EXPECT_NO_THROW(simhash_threshold(1.0 + 1e-9, 0.2, 64));
}

TEST(SimHash, GuaranteeOnTruePositives) {
    auto r = mc::guarantee_rate(RoutingMode::SimHash, 128, 1, 0, 0.2, 64, 10000, 3);
    EXPECT_GE(r.rate(), 0.78) << r.passed << "/" << r.trials;
}

// ---------------------------------------------------------------------------
// Analysis helpers

TEST(RequiredM, TableValueAndSymmetry) {
    const double v = required_m_rceos(64, std::numbers::pi / 2);
    EXPECT_GT(v, 4.28e5);
    EXPECT_LT(v, 4.30e5);
    EXPECT_NEAR(v, 428957, 1.0);
    EXPECT_NEAR(required_m_rceos(64, 0.7), required_m_rceos(64, std::numbers::pi - 0.7), 1e-6 * required_m_rceos(64, 0.7));
    EXPECT_DOUBLE_EQ(required_m_rceos(0, 1.0), 1.0);
    EXPECT_THROW(required_m_rceos(64, 0.0), UsageError);
    EXPECT_THROW(required_m_rceos(64, std::numbers::pi), UsageError);
}

TEST(PartitionStats, SingleSubspace) {
    auto s = estimate_partition_stats(32, 1, 200);
    EXPECT_EQ(s.mean_w_res, 0.0);
    EXPECT_EQ(s.j_rel, 1.0);
    EXPECT_EQ(s.j_opt, 1.0);
}

TEST(PartitionStats, RelativeCostAtLeastOptimal) {
    for (std::uint32_t L : {2u, 4u, 8u, 16u}) {
        auto s = estimate_partition_stats(128, L, 2000);
        EXPECT_GE(s.j_rel, s.j_opt);
    }
}

TEST(PartitionStats, LowerBoundHoldsEmpirically) {
    for (auto [d, L] : {std::pair{128u, 8u}, std::pair{384u, 16u}, std::pair{960u, 16u}}) {
        const std::uint64_t n = 4000;
        auto s = estimate_partition_stats(d, L, n, 60 + d);
        const double var = 1.0 - s.mean_w_res_sq - s.mean_w_reg * s.mean_w_reg;
        const double se = std::sqrt(std::max(var, 1e-12) / n);
        EXPECT_GE(s.mean_w_reg + 3 * se, w_reg_lower_bound(d, L)) << d << "," << L;
        EXPECT_NEAR(s.mean_w_reg, expected_w_reg(d, L), 5 * se + 1e-4) << d << "," << L;
    }
}

// ---------------------------------------------------------------------------
// Distribution of the test statistic

namespace {

struct HSamples {
    std::vector<double> h1, h;
};

// H1 and H over fresh ensembles for one fixed (e, q) pair.
HSamples sample_h(const std::vector<float>& e, const std::vector<float>& q, std::uint32_t L, std::uint32_t m,
                  int trials, std::uint64_t seed) {
    HSamples out;
    RoutingConfig cfg;
    cfg.mode = RoutingMode::Peos;
    cfg.L = L;
    cfg.m = m;
    const auto quant = mc::unit_quantizers();
    for (int t = 0; t < trials; ++t) {
        auto ens = generate_ensemble(seed + t, static_cast<std::uint32_t>(e.size()), L, m);
        auto meta = build_edge_meta(e, 1.0, Metric::L2, ens, quant, cfg);
        auto qpt = project_query(q, ens);
        double h1 = 0;
        for (std::uint32_t i = 0; i < L; ++i) h1 += qpt.lookup_sub(i, meta.ext_ids[i + 1]);
        auto dec = decompose(e, L);
        out.h1.push_back(h1);
        out.h.push_back(dec.w_reg * h1 + std::sqrt(double(L)) * dec.w_res * qpt.lookup_full(meta.ext_ids[0]));
    }
    return out;
}

std::pair<double, double> mean_var(const std::vector<double>& x) {
    long double s = 0, s2 = 0;
    for (double v : x) {
        s += v;
        s2 += static_cast<long double>(v) * v;
    }
    const long double mu = s / x.size();
    return {static_cast<double>(mu), static_cast<double>(s2 / x.size() - mu * mu)};
}

// Σ‖q_i‖cosθ_i and Σ‖q_i‖²cos²θ_i, Σ‖q_i‖² sin²θ_i for unit q.
struct BlockGeometry {
    double eta_sum = 0, cos2 = 0, sin2 = 0;
};

BlockGeometry block_geometry(const std::vector<float>& e, const std::vector<float>& q, std::uint32_t L) {
    const std::size_t dp = e.size() / L;
    BlockGeometry g;
    for (std::uint32_t i = 0; i < L; ++i) {
        const long double en = std::sqrt(oracle::dot(e.data() + i * dp, e.data() + i * dp, dp));
        const long double qn2 = oracle::dot(q.data() + i * dp, q.data() + i * dp, dp);
        const long double c = oracle::dot(e.data() + i * dp, q.data() + i * dp, dp) / en;  // ‖q_i‖cosθ_i
        g.eta_sum += static_cast<double>(c);
        g.cos2 += static_cast<double>(c * c);
        g.sin2 += static_cast<double>(qn2 - c * c);
    }
    return g;
}

// Unit e whose block norms are 1/√L, each scaled by (1 + jitter·U).
std::vector<float> near_equal_blocks(CounterRng& rng, std::size_t d, std::uint32_t L, double jitter) {
    std::vector<float> e(d);
    const std::size_t dp = d / L;
    double total = 0;
    for (std::uint32_t i = 0; i < L; ++i) {
        auto b = mc::unit_gaussian(rng, dp);
        const double s = 1.0 + jitter * rng.uniform();
        for (std::size_t k = 0; k < dp; ++k) {
            e[i * dp + k] = static_cast<float>(b[k] * s);
            total += double(e[i * dp + k]) * e[i * dp + k];
        }
    }
    for (auto& x : e) x = static_cast<float>(x / std::sqrt(total));
    return e;
}

}  // namespace

TEST(StatisticDistribution, H1MomentsMatchFiniteOracle) {
    const std::uint32_t d = 128, L = 8, m = 128;
    CounterRng rng(70, Stream::Test);
    mc::PositiveCase c;
    mc::pair_at_random_angle(rng, d, 0.5, 0.5, c);
    const int trials = 10000;
    auto s = sample_h(c.e, c.q, L, m, trials, 9000);
    auto [mean, var] = mean_var(s.h1);
    const auto g = block_geometry(c.e, c.q, L);
    const double em = static_cast<double>(oracle::expected_max_abs_normal(m));
    const double vm = static_cast<double>(oracle::expected_max_abs_normal_sq(m)) - em * em;
    const double exact_mean = em * g.eta_sum;
    const double exact_var = g.cos2 * vm + g.sin2;
    EXPECT_LT(std::fabs(mean - exact_mean), 3 * std::sqrt(exact_var / trials)) << mean << " vs " << exact_mean;
    EXPECT_LE(var, 1.0);
    EXPECT_LT(std::fabs(var - exact_var), 3 * exact_var * std::sqrt(2.0 / trials));
}

TEST(StatisticDistribution, EqualBlockNormsMeanMatchesFiniteOracle) {
    const std::uint32_t d = 128, L = 8, m = 128;
    CounterRng rng(71, Stream::Test);
    auto e = near_equal_blocks(rng, d, L, 0.0);
    const double cos_theta = 0.6;
    auto w = mc::unit_gaussian(rng, d);
    double ew = 0, wn = 0;
    for (std::size_t k = 0; k < d; ++k) ew += double(e[k]) * w[k];
    for (std::size_t k = 0; k < d; ++k) {
        w[k] = static_cast<float>(w[k] - ew * e[k]);
        wn += double(w[k]) * w[k];
    }
    std::vector<float> q(d);
    for (std::size_t k = 0; k < d; ++k)
        q[k] = static_cast<float>(cos_theta * e[k] + std::sqrt(1 - cos_theta * cos_theta) * w[k] / std::sqrt(wn));
    const int trials = 10000;
    auto s = sample_h(e, q, L, m, trials, 20000);
    auto [mean, var] = mean_var(s.h1);
    const double em = static_cast<double>(oracle::expected_max_abs_normal(m));
    EXPECT_NEAR(block_geometry(e, q, L).eta_sum, std::sqrt(double(L)) * cos_theta, 1e-5);
    EXPECT_LT(std::fabs(mean - cos_theta * std::sqrt(double(L)) * em), 3 * std::sqrt(var / trials));
}

TEST(StatisticDistribution, VarianceWithinBand) {
    const std::uint32_t d = 128, L = 8, m = 128;
    CounterRng rng(72, Stream::Test);
    auto e = near_equal_blocks(rng, d, L, 0.5);
    const double w_res = decompose(e, L).w_res;
    ASSERT_LE(w_res, 1.0 / (L + 1));
    for (double cos_theta : {0.2, 0.5, 0.8}) {
        auto w = mc::unit_gaussian(rng, d);
        double ew = 0, wn = 0;
        for (std::size_t k = 0; k < d; ++k) ew += double(e[k]) * w[k];
        for (std::size_t k = 0; k < d; ++k) {
            w[k] = static_cast<float>(w[k] - ew * e[k]);
            wn += double(w[k]) * w[k];
        }
        std::vector<float> q(d);
        for (std::size_t k = 0; k < d; ++k)
            q[k] = static_cast<float>(cos_theta * e[k] + std::sqrt(1 - cos_theta * cos_theta) * w[k] / std::sqrt(wn));
        const int trials = 10000;
        auto s = sample_h(e, q, L, m, trials, 30000 + static_cast<std::uint64_t>(cos_theta * 1000) * trials);
        const double tau = 2.0 * L * std::log(double(m));
        auto [mean, var] = mean_var(s.h);
        const double var_n = var / tau;
        const double delta = var_n - (1 - cos_theta * cos_theta) / tau;
        const double slack = 3 * var_n * std::sqrt(2.0 / trials);
        const double lo = -(L + 2.0) / (L * (L + 1.0) * (L + 1.0) * std::log(double(m)));
        const double hi = 1.0 / ((L + 1.0) * (L + 1.0) * std::log(double(m)));
        EXPECT_GE(delta, lo - slack) << "cos=" << cos_theta;
        EXPECT_LE(delta, hi + slack) << "cos=" << cos_theta << " delta=" << delta << " hi=" << hi;
        (void)mean;
    }
}
