#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "spnet/allocator.hpp"
#include "spnet/data.hpp"
#include "spnet/model.hpp"
#include "spnet/rng.hpp"

using namespace spnet;

namespace {

std::vector<LayerBudgetInput> uniform_profile(std::size_t layers, std::size_t eta, double s_sum) {
    std::vector<LayerBudgetInput> in(layers);
    for (auto& l : in) {
        l.eta = eta;
        l.eta_next = eta;
        l.s_sum = s_sum;
        l.p.assign(eta, 1.0 / double(eta));
        l.downstream_amplification = 1.0;
    }
    return in;
}

}  // namespace

TEST_CASE("delta_profile") {
    SUBCASE("nonnegative nets have unit amplification") {
        NetworkModel m = make_mlp({4, 5, 3}, 7);
        for (Layer& l : m.layers) {
            for (double& v : l.weights.values()) v = std::fabs(v);
        }
        const Dataset calib = synth_activations(6, parse_synth_spec("uniform:dim=4"), 2);
        const DeltaProfile prof = delta_profile(m, calib);
        for (double d : prof.delta_hat) CHECK(d == 1.0);
        for (double d : prof.delta_forward) CHECK(d == 1.0);
    }

    SUBCASE("hand case: z+=3, z-=1 gives amplification 2") {
        NetworkModel m;
        m.input_shape = {2};
        Layer d;
        d.kind = LayerKind::dense;
        d.weights = DenseTensor({1, 2}, {3.0, -1.0});
        m.layers = {d};
        Dataset calib;
        calib.inputs = DenseTensor({1, 2}, {1.0, 1.0});
        const DeltaProfile prof = delta_profile(m, calib);
        REQUIRE(prof.delta_hat.size() == 1);
        CHECK(prof.delta_hat[0] == doctest::Approx(2.0).epsilon(1e-12));
    }

    SUBCASE("matches a brute-force recomputation from traces") {
        NetworkModel m = make_mlp({5, 6, 4, 3}, 17);
        const Dataset calib = synth_activations(5, parse_synth_spec("uniform:dim=5"), 3);
        const double tau = 1e-12;
        const DeltaProfile prof = delta_profile(m, calib, tau);

        const auto widx = weighted_layer_indices(m);
        std::vector<double> want(widx.size(), 1.0);
        for (std::size_t c = 0; c < calib.count(); ++c) {
            ForwardTrace tr;
            forward(m, calib.sample(c), &tr);
            for (std::size_t w = 0; w < widx.size(); ++w) {
                const Layer& l = m.layers[widx[w]];
                const DenseTensor& a = tr.input_of(widx[w]);
                for (std::size_t i = 0; i < l.weights.dim(0); ++i) {
                    double zp = 0.0, zn = 0.0;
                    for (std::size_t k = 0; k < l.weights.dim(1); ++k) {
                        const double t = l.weights.at2(i, k) * a[k];
                        if (t >= 0) zp += t;
                        else zn -= t;
                    }
                    if (zp + zn == 0.0) continue;
                    want[w] = std::max(want[w], (zp + zn) / std::max(std::fabs(zp - zn), tau));
                }
            }
        }
        for (std::size_t w = 0; w < widx.size(); ++w) {
            CHECK(prof.delta_hat[w] == doctest::Approx(want[w]).epsilon(1e-12));
        }
        // suffix products
        double acc = 1.0;
        for (std::size_t w = widx.size(); w-- > 0;) {
            acc *= prof.delta_hat[w];
            CHECK(prof.delta_forward[w] == doctest::Approx(acc).epsilon(1e-12));
        }
    }
}

TEST_CASE("allocate") {
    SUBCASE("two identical layers split the budget evenly") {
        const auto prof = uniform_profile(2, 32, 0.5);
        const Allocation a = allocate(prof, 44, 0.1);
        CHECK(a.feasible);
        CHECK(std::llabs(static_cast<long long>(a.total) - 44) <= 1);
        CHECK(std::llabs(static_cast<long long>(a.layers[0].n) -
                         static_cast<long long>(a.layers[1].n)) <= 1);
    }

    SUBCASE("unequal sensitivity mass meets the budget within one feature map") {
        std::vector<LayerBudgetInput> prof = uniform_profile(4, 64, 1.0);
        prof[0].s_sum = 8.0;
        prof[1].s_sum = 4.0;
        prof[2].s_sum = 2.0;
        prof[3].s_sum = 1.0;
        const Allocation a = allocate(prof, 240, 0.1);
        CHECK(a.feasible);
        CHECK(std::llabs(static_cast<long long>(a.total) - 240) <= 1);
        // compressibility bridges importance: larger mass -> more budget
        CHECK(a.layers[0].n >= a.layers[1].n);
        CHECK(a.layers[1].n >= a.layers[2].n);
        CHECK(a.layers[2].n >= a.layers[3].n);
    }

    SUBCASE("monotone in the budget") {
        std::vector<LayerBudgetInput> prof = uniform_profile(3, 48, 0.8);
        prof[1].s_sum = 2.0;
        const Allocation a = allocate(prof, 115, 0.1);
        const Allocation b = allocate(prof, 130, 0.1);
        for (std::size_t l = 0; l < 3; ++l) {
            CHECK(static_cast<long long>(b.layers[l].n) >=
                  static_cast<long long>(a.layers[l].n) - 1);
        }
    }

    SUBCASE("uniform profile allocates uniformly") {
        const auto prof = uniform_profile(4, 32, 0.5);
        const Allocation a = allocate(prof, 96, 0.1);
        for (std::size_t l = 0; l < 4; ++l) {
            CHECK(std::llabs(static_cast<long long>(a.layers[l].n) - 24) <= 1);
        }
    }

    SUBCASE("keep-all budget sits at the lower search bound") {
        const auto prof = uniform_profile(1, 16, 2.0);
        const Allocation a = allocate(prof, 16, 0.1);
        CHECK(a.feasible);
        CHECK(a.layers[0].n == 16);
        CHECK(a.eps_star <= 1e-6 + 1e-12);
    }

    SUBCASE("infeasible budgets report the minimum achievable size") {
        // one guaranteed keep per layer makes very small budgets unreachable
        auto prof = uniform_profile(4, 128, 16.0);
        const Allocation a = allocate(prof, 4, 0.9);
        CHECK_FALSE(a.feasible);
        CHECK(a.min_achievable > 4);
    }

    SUBCASE("downstream amplification tightens a layer's eps") {
        auto prof = uniform_profile(2, 64, 2.0);
        prof[0].downstream_amplification = 4.0;
        const Allocation a = allocate(prof, 124, 0.1);
        CHECK(a.layers[0].eps_layer == doctest::Approx(a.eps_star / 4.0).epsilon(1e-12));
        CHECK(a.layers[1].eps_layer == doctest::Approx(a.eps_star).epsilon(1e-12));
        CHECK(a.layers[0].n >= a.layers[1].n);  // tighter eps keeps more
    }

    SUBCASE("parameter validation") {
        const auto prof = uniform_profile(2, 8, 1.0);
        CHECK_THROWS_AS(allocate(prof, 1, 0.1), std::invalid_argument);   // below one per layer
        CHECK_THROWS_AS(allocate(prof, 17, 0.1), std::invalid_argument);  // above total
        CHECK_THROWS_AS(allocate({}, 4, 0.1), std::invalid_argument);
    }
}
