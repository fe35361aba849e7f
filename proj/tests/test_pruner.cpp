#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "spnet/data.hpp"
#include "spnet/model.hpp"
#include "spnet/pruner.hpp"
#include "spnet/rng.hpp"
#include "spnet/sensitivity.hpp"

using namespace spnet;

namespace {

// A dense pair with a fixed sensitivity vector injected directly.
struct Fixture {
    NetworkModel model;
    SensitivityReport report;
};

Fixture dense_fixture(const std::vector<double>& s, std::uint64_t seed, std::size_t units = 3) {
    const std::size_t eta = s.size();
    Fixture f;
    f.model.input_shape = {eta};
    Layer d1;
    d1.kind = LayerKind::dense;
    d1.weights = DenseTensor({eta, eta});
    Layer r;
    r.kind = LayerKind::relu;
    Layer d2;
    d2.kind = LayerKind::dense;
    d2.weights = DenseTensor({units, eta});
    f.model.layers = {d1, r, d2};
    init_weights(f.model, seed);

    LayerSensitivity l;
    l.producer = 0;
    l.consumer = 2;
    l.eta = eta;
    l.units = units;
    l.s = s;
    l.s_sum = std::accumulate(s.begin(), s.end(), 0.0);
    l.p.resize(eta);
    for (std::size_t j = 0; j < eta; ++j) l.p[j] = s[j] / l.s_sum;
    f.report.layers.push_back(l);
    f.report.calib_size = 1;
    return f;
}

}  // namespace

TEST_CASE("sample_complexity closed form") {
    SUBCASE("frozen value from the defining inequality") {
        // smallest m with 2 exp(-eps^2 m / (S K (6+2eps))) <= delta/(2 eta)
        const std::uint64_t m = sample_complexity(0.1, 0.05, 2.0, 1.0, 100);
        CHECK(m == 11145);
        const auto lhs = [](double mm) { return 2.0 * std::exp(-0.01 * mm / (2.0 * 6.2)); };
        const double bound = 0.05 / 200.0;
        CHECK(lhs(double(m)) <= bound);
        CHECK(lhs(double(m - 1)) > bound);
    }
    SUBCASE("linear in the sensitivity sum") {
        const std::uint64_t m1 = sample_complexity(0.1, 0.05, 2.0, 1.0, 100);
        const std::uint64_t m2 = sample_complexity(0.1, 0.05, 4.0, 1.0, 100);
        CHECK(std::llabs(static_cast<long long>(m2) - 2ll * static_cast<long long>(m1)) <= 1);
    }
    SUBCASE("monotone in eps") {
        CHECK(sample_complexity(0.2, 0.05, 2.0, 1.0, 100) < sample_complexity(0.1, 0.05, 2.0, 1.0, 100));
    }
    SUBCASE("rejects out-of-range parameters") {
        CHECK_THROWS_AS(sample_complexity(0.0, 0.05, 2.0, 1.0, 100), std::invalid_argument);
        CHECK_THROWS_AS(sample_complexity(0.1, 1.0, 2.0, 1.0, 100), std::invalid_argument);
        CHECK_THROWS_AS(sample_complexity(0.1, 0.05, 0.0, 1.0, 100), std::invalid_argument);
        CHECK_THROWS_AS(sample_complexity(0.1, 0.05, 2.0, 1.0, 0), std::invalid_argument);
    }
}

TEST_CASE("expected_unique") {
    SUBCASE("exhaustive enumeration for p=(.5,.5), m=2") {
        // outcomes 00,01,10,11 each 1/4: uniques 1,2,2,1 -> 1.5
        CHECK(expected_unique({0.5, 0.5}, 2.0) == doctest::Approx(1.5).epsilon(1e-15));
    }
    SUBCASE("m=1 always gives one unique") {
        CHECK(expected_unique({0.2, 0.3, 0.5}, 1.0) == doctest::Approx(1.0).epsilon(1e-15));
    }
    SUBCASE("point mass keeps exactly one") {
        CHECK(expected_unique({1.0, 0.0, 0.0}, 50.0) == doctest::Approx(1.0).epsilon(1e-15));
    }
}

TEST_CASE("hybrid_advantage") {
    SUBCASE("frozen evaluation for s=(0.9,0.05,0.05), k=1") {
        // eps=0.3, delta=0.1, K=1, eta*=3; values from a 50-digit evaluation
        const HybridAdvantage h = hybrid_advantage({0.9, 0.05, 0.05}, 1, 0.3, 0.1, 1.0, 3);
        CHECK(h.m == 352.0);
        CHECK(h.m_prime == 15.0);
        CHECK(h.lhs == doctest::Approx(6.103515625e-5).epsilon(1e-12));
        CHECK(h.rhs == doctest::Approx(23.446041745862509).epsilon(1e-12));
        CHECK_FALSE(h.better);
    }
    SUBCASE("k=0 compares the same sum at two draw counts plus the slack") {
        const std::vector<double> s = {0.4, 0.3, 0.3};
        const HybridAdvantage h = hybrid_advantage(s, 0, 0.2, 0.1, 1.0, 3);
        const double S = 1.0;
        double lhs = 0.0, rhs_sum = 0.0;
        for (double sj : s) {
            lhs += std::pow(1.0 - sj / S, h.m_prime);
            rhs_sum += std::pow(1.0 - sj / S, h.m);
        }
        CHECK(h.lhs == doctest::Approx(lhs).epsilon(1e-12));
        CHECK(h.rhs == doctest::Approx(rhs_sum + std::sqrt(std::log(20.0) * (h.m + h.m_prime) / 2.0))
                           .epsilon(1e-12));
    }
    SUBCASE("dominant sensitivity with the rest exactly zero") {
        const HybridAdvantage h = hybrid_advantage({1.0, 0.0, 0.0}, 1, 0.3, 0.1, 1.0, 3);
        CHECK(h.better);
        CHECK(h.m_prime == 0.0);
    }
    SUBCASE("dominant mass plus many small channels fires the condition") {
        // eta*=512, k=1: s = (1, 337 x 1.48e-4, 0...); eps=0.05, delta=0.5.
        std::vector<double> s(512, 0.0);
        s[0] = 1.0;
        for (std::size_t j = 1; j <= 337; ++j) s[j] = 1.48e-4;
        const HybridAdvantage h = hybrid_advantage(s, 1, 0.05, 0.5, 1.0, 512);
        CHECK(h.m == 21308.0);
        CHECK(h.m_prime == 180.0);
        CHECK(h.better);
        CHECK(h.lhs > h.rhs);
    }
}

TEST_CASE("top_k tie-break prefers the lower index") {
    const auto top = top_k_by_sensitivity({0.5, 0.9, 0.5, 0.9}, 3);
    REQUIRE(top.size() == 3);
    CHECK(top[0] == 0);
    CHECK(top[1] == 1);
    CHECK(top[2] == 3);
}

TEST_CASE("prune_layer rand mode") {
    SUBCASE("point mass keeps the channel with exact weight") {
        Fixture f = dense_fixture({1.0, 0.0}, 61);
        const DenseTensor orig = f.model.layers[2].weights;
        PrunePlan plan;
        plan.mode = PruneMode::rand;
        plan.m = 9;
        plan.seed = 1;
        const PruneOutcome out = prune_layer(f.model, 0, f.report, plan);
        REQUIRE(out.layers[0].kept == std::vector<std::size_t>{0});
        CHECK(out.layers[0].reweight[0] == 1.0);  // 9 draws * 1/(9*1) telescopes
        const Layer& cons = out.model.layers[2];
        for (std::size_t i = 0; i < 3; ++i) {
            CHECK(cons.weights.at2(i, 0) == orig.at2(i, 0));
            CHECK(cons.weights.at2(i, 1) == 0.0);
        }
        CHECK(producer_filter_is_zero(out.model.layers[0], 1));
        CHECK_FALSE(producer_filter_is_zero(out.model.layers[0], 0));
    }

    SUBCASE("symmetric two-channel case is deterministic despite sampling") {
        // W2 = [[1,1]], a = (1,1): any single draw reweighs its channel to 2,
        // so zhat = 2 = z for either outcome.
        NetworkModel m;
        m.input_shape = {2};
        Layer d1;
        d1.kind = LayerKind::dense;
        d1.weights = DenseTensor({2, 2}, {1, 0, 0, 1});
        Layer r;
        r.kind = LayerKind::relu;
        Layer d2;
        d2.kind = LayerKind::dense;
        d2.weights = DenseTensor({1, 2}, {1, 1});
        m.layers = {d1, r, d2};
        SensitivityReport rep;
        LayerSensitivity l;
        l.producer = 0;
        l.consumer = 2;
        l.eta = 2;
        l.units = 1;
        l.s = {0.5, 0.5};
        l.s_sum = 1.0;
        l.p = {0.5, 0.5};
        rep.layers.push_back(l);
        const auto pair = prunable_pairs(m)[0];
        const DenseTensor a({2}, {1.0, 1.0});
        for (std::uint64_t seed = 0; seed < 8; ++seed) {
            PrunePlan plan;
            plan.mode = PruneMode::rand;
            plan.m = 1;
            plan.seed = seed;
            const PruneOutcome out = prune_layer(m, 0, rep, plan);
            const DenseTensor zhat = consumer_preact(out.model, pair, a);
            CHECK(zhat[0] == doctest::Approx(2.0).epsilon(1e-15));
            CHECK(out.layers[0].unique_kept == 1);
        }
    }

    SUBCASE("kept multiset distribution matches exhaustive enumeration") {
        const std::vector<double> p = {0.2, 0.5, 0.3};
        Fixture f = dense_fixture(p, 62);
        // enumerate the 9 ordered draws -> multiset probabilities
        std::map<std::vector<std::size_t>, double> want;
        for (std::size_t c1 = 0; c1 < 3; ++c1) {
            for (std::size_t c2 = 0; c2 < 3; ++c2) {
                std::vector<std::size_t> kept = {c1};
                if (c2 != c1) kept.push_back(c2);
                std::sort(kept.begin(), kept.end());
                want[kept] += p[c1] * p[c2];
            }
        }
        std::map<std::vector<std::size_t>, double> got;
        const int trials = 20000;
        for (int t = 0; t < trials; ++t) {
            PrunePlan plan;
            plan.mode = PruneMode::rand;
            plan.m = 2;
            plan.seed = 100 + t;
            const PruneOutcome out = prune_layer(f.model, 0, f.report, plan);
            got[out.layers[0].kept] += 1.0 / trials;
        }
        for (const auto& [kept, prob] : want) {
            const double se = std::sqrt(prob * (1 - prob) / trials);
            CHECK(std::fabs(got[kept] - prob) <= 4 * se + 1e-9);
        }
    }

    SUBCASE("support invariant and determinism") {
        Fixture f = dense_fixture({0.3, 0.1, 0.4, 0.2}, 63);
        PrunePlan plan;
        plan.mode = PruneMode::rand;
        plan.m = 3;
        plan.seed = 9;
        const PruneOutcome a = prune_layer(f.model, 0, f.report, plan);
        const PruneOutcome b = prune_layer(f.model, 0, f.report, plan);
        CHECK(a.layers[0].kept == b.layers[0].kept);
        for (std::size_t i = 0; i < a.model.layers[2].weights.size(); ++i) {
            CHECK(a.model.layers[2].weights[i] == b.model.layers[2].weights[i]);
        }
        const auto pair = prunable_pairs(f.model)[0];
        for (std::size_t j = 0; j < 4; ++j) {
            const bool kept = std::find(a.layers[0].kept.begin(), a.layers[0].kept.end(), j) !=
                              a.layers[0].kept.end();
            CHECK(producer_filter_is_zero(a.model.layers[0], j) == !kept);
            CHECK(consumer_channel_is_zero(a.model.layers[2], pair, j) == !kept);
        }
    }

    SUBCASE("zero sensitivity sum cannot build a distribution") {
        Fixture f = dense_fixture({0.5, 0.5}, 64);
        f.report.layers[0].s = {0.0, 0.0};
        f.report.layers[0].s_sum = 0.0;
        PrunePlan plan;
        plan.mode = PruneMode::rand;
        plan.m = 2;
        CHECK_THROWS_AS(prune_layer(f.model, 0, f.report, plan), std::runtime_error);
    }
}

TEST_CASE("prune_layer partial and derand modes") {
    Fixture f = dense_fixture({0.6, 0.25, 0.1, 0.05}, 71);
    const DenseTensor orig = f.model.layers[2].weights;

    SUBCASE("deterministic keeps are never reweighed") {
        PrunePlan plan;
        plan.mode = PruneMode::partial;
        plan.m = 5;
        plan.det_keep = {0};
        plan.seed = 3;
        const PruneOutcome out = prune_layer(f.model, 0, f.report, plan);
        for (std::size_t i = 0; i < 3; ++i) {
            CHECK(out.model.layers[2].weights.at2(i, 0) == orig.at2(i, 0));
        }
        // multiplicity 0 marks the deterministic keep
        REQUIRE(out.layers[0].kept[0] == 0);
        CHECK(out.layers[0].multiplicity[0] == 0);
        CHECK(out.layers[0].reweight[0] == 1.0);
        // sampled channels reweigh with q = s/(S - S_k)
        for (std::size_t idx = 1; idx < out.layers[0].kept.size(); ++idx) {
            const std::size_t j = out.layers[0].kept[idx];
            const double q = f.report.layers[0].s[j] / 0.4;
            const double expect = double(out.layers[0].multiplicity[idx]) / (5.0 * q);
            CHECK(out.layers[0].reweight[idx] == doctest::Approx(expect).epsilon(1e-12));
        }
    }

    SUBCASE("derand keeps the top channels unreweighed") {
        PrunePlan plan;
        plan.mode = PruneMode::derand;
        plan.m = 2;
        plan.det_keep = {0, 1};
        const PruneOutcome out = prune_layer(f.model, 0, f.report, plan);
        CHECK(out.layers[0].kept == std::vector<std::size_t>{0, 1});
        CHECK(out.layers[0].realized_m == 0);
        for (std::size_t i = 0; i < 3; ++i) {
            CHECK(out.model.layers[2].weights.at2(i, 0) == orig.at2(i, 0));
            CHECK(out.model.layers[2].weights.at2(i, 1) == orig.at2(i, 1));
            CHECK(out.model.layers[2].weights.at2(i, 2) == 0.0);
            CHECK(out.model.layers[2].weights.at2(i, 3) == 0.0);
        }
    }
}

TEST_CASE("make_plan") {
    Fixture f = dense_fixture({0.6, 0.25, 0.1, 0.05}, 81);

    SUBCASE("keep-all fallback when sampling cannot shrink the layer") {
        const PrunePlan plan = make_plan(f.report.layers[0], 0.01, 0.01, PruneMode::rand, {}, 1.0, 4, 0);
        CHECK(plan.incompressible);
        CHECK(plan.mode == PruneMode::derand);
        CHECK(plan.m == 4);
        CHECK(plan.det_keep.size() == 4);
    }
    SUBCASE("partial with all mass deterministic degenerates to derand") {
        Fixture g = dense_fixture({0.7, 0.3, 0.0, 0.0}, 82);
        const PrunePlan plan = make_plan(g.report.layers[0], 0.3, 0.1, PruneMode::partial,
                                         std::size_t(2), 1.0, 4, 0);
        CHECK(plan.mode == PruneMode::derand);
    }
    SUBCASE("rand plan carries the Bernstein draw count") {
        const PrunePlan plan = make_plan(f.report.layers[0], 0.5, 0.3, PruneMode::rand, {}, 1.0, 4, 0);
        if (!plan.incompressible) {
            CHECK(plan.m == sample_complexity(0.5, 0.3, 1.0, 1.0, 3));
        }
    }
    SUBCASE("all-zero sensitivities are rejected") {
        Fixture g = dense_fixture({0.5, 0.5}, 83);
        g.report.layers[0].all_zero = true;
        CHECK_THROWS_AS(make_plan(g.report.layers[0], 0.5, 0.1, PruneMode::rand, {}, 1.0, 2, 0),
                        std::runtime_error);
    }
}

TEST_CASE("baseline pruners") {
    SUBCASE("FT keeps the larger-norm filter") {
        NetworkModel m;
        m.input_shape = {2};
        Layer d1;
        d1.kind = LayerKind::dense;
        d1.weights = DenseTensor({2, 2}, {3, 4, 0.6, 0.8});  // norms 5 and 1
        Layer r;
        r.kind = LayerKind::relu;
        Layer d2;
        d2.kind = LayerKind::dense;
        d2.weights = DenseTensor({1, 2}, {1, 1});
        m.layers = {d1, r, d2};
        Dataset calib;
        const PruneOutcome out = baseline_prune(m, 0, BaselineMethod::ft, 0.5, calib);
        CHECK(out.layers[0].kept == std::vector<std::size_t>{0});
    }
    SUBCASE("identical filters tie toward the lower index") {
        NetworkModel m;
        m.input_shape = {2};
        Layer d1;
        d1.kind = LayerKind::dense;
        d1.weights = DenseTensor({2, 2}, {1, 2, 1, 2});
        Layer r;
        r.kind = LayerKind::relu;
        Layer d2;
        d2.kind = LayerKind::dense;
        d2.weights = DenseTensor({1, 2}, {1, 1});
        m.layers = {d1, r, d2};
        Dataset calib;
        const PruneOutcome ft = baseline_prune(m, 0, BaselineMethod::ft, 0.5, calib);
        CHECK(ft.layers[0].kept == std::vector<std::size_t>{0});
        const PruneOutcome sn = baseline_prune(m, 0, BaselineMethod::softnet, 0.5, calib);
        CHECK(sn.layers[0].kept == std::vector<std::size_t>{0});
    }
    SUBCASE("ThiNet matches a brute-force greedy replay") {
        NetworkModel m;
        m.input_shape = {3};
        Layer d1;
        d1.kind = LayerKind::dense;
        d1.weights = DenseTensor({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
        Layer r;
        r.kind = LayerKind::relu;
        Layer d2;
        d2.kind = LayerKind::dense;
        d2.weights = DenseTensor({2, 3}, {2.0, -1.0, 0.3, 0.5, 1.5, -0.2});
        m.layers = {d1, r, d2};
        Dataset calib;
        calib.inputs = DenseTensor({2, 3}, {1.0, 0.5, 2.0, 0.2, 1.5, 0.1});

        const PruneOutcome out = baseline_prune(m, 0, BaselineMethod::thinet, 2.0 / 3.0, calib);

        // independent greedy replay on the quoted criterion
        const auto pair = prunable_pairs(m)[0];
        std::vector<std::vector<DenseTensor>> contrib(2);
        std::vector<DenseTensor> full;
        for (std::size_t c = 0; c < 2; ++c) {
            ForwardTrace tr;
            forward(m, calib.sample(c), &tr);
            const DenseTensor& a = tr.input_of(2);
            for (std::size_t j = 0; j < 3; ++j) contrib[c].push_back(consumer_channel_contrib(m, pair, a, j));
            full.push_back(consumer_preact(m, pair, a));
        }
        std::vector<std::size_t> kept_oracle;
        std::vector<bool> in(3, false);
        for (int step = 0; step < 2; ++step) {
            double best = 1e300;
            std::size_t bj = 3;
            for (std::size_t j = 0; j < 3; ++j) {
                if (in[j]) continue;
                double err = 0.0;
                for (std::size_t c = 0; c < 2; ++c) {
                    for (std::size_t e = 0; e < 2; ++e) {
                        double approx = contrib[c][j][e];
                        for (std::size_t jj = 0; jj < 3; ++jj) {
                            if (in[jj]) approx += contrib[c][jj][e];
                        }
                        err = std::max(err, std::fabs(full[c][e] - approx));
                    }
                }
                if (err < best) {
                    best = err;
                    bj = j;
                }
            }
            in[bj] = true;
        }
        for (std::size_t j = 0; j < 3; ++j) {
            if (in[j]) kept_oracle.push_back(j);
        }
        CHECK(out.layers[0].kept == kept_oracle);
    }
    SUBCASE("ThiNet requires calibration data") {
        NetworkModel m = make_mlp({3, 3, 2}, 5);
        Dataset empty;
        CHECK_THROWS_AS(baseline_prune(m, 0, BaselineMethod::thinet, 0.5, empty), std::invalid_argument);
    }
}

TEST_CASE("prune_model uses per-layer streams independent of order") {
    NetworkModel m = make_mlp({6, 8, 8, 4}, 91);
    const Dataset calib = synth_activations(6, parse_synth_spec("uniform:dim=6"), 1);
    const SensitivityReport rep = compute_report(m, calib);
    std::vector<PrunePlan> plans;
    for (const auto& l : rep.layers) {
        PrunePlan p;
        p.mode = PruneMode::rand;
        p.m = 6;
        p.seed = 42;
        plans.push_back(p);
    }
    const PruneOutcome whole = prune_model(m, rep, plans);
    // layer-at-a-time application gives identical kept sets
    for (std::size_t i = 0; i < rep.layers.size(); ++i) {
        const PruneOutcome single = prune_layer(m, rep.layers[i].producer, rep, plans[i]);
        CHECK(single.layers[0].kept == whole.layers[i].kept);
    }
}
