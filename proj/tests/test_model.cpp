#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "spnet/model.hpp"
#include "spnet/rng.hpp"
#include "spnet/serialize.hpp"

using namespace spnet;

namespace {

DenseTensor random_input(const std::vector<std::size_t>& shape, std::uint64_t seed) {
    PhiloxRng rng(seed, 7);
    DenseTensor t(shape);
    for (double& v : t.values()) v = 2.0 * rng.next_double() - 1.0;
    return t;
}

}  // namespace

TEST_CASE("forward on tiny hand cases") {
    SUBCASE("identity dense layer") {
        NetworkModel m;
        m.input_shape = {2};
        Layer d;
        d.kind = LayerKind::dense;
        d.weights = DenseTensor({2, 2}, {1, 0, 0, 1});
        m.layers.push_back(d);
        const DenseTensor y = forward(m, DenseTensor({2}, {1, 2}));
        CHECK(y[0] == 1.0);
        CHECK(y[1] == 2.0);
    }
    SUBCASE("dense then relu") {
        NetworkModel m;
        m.input_shape = {2};
        Layer d;
        d.kind = LayerKind::dense;
        d.weights = DenseTensor({1, 2}, {1, 1});
        m.layers.push_back(d);
        Layer r;
        r.kind = LayerKind::relu;
        m.layers.push_back(r);
        ForwardTrace trace;
        const DenseTensor y = forward(m, DenseTensor({2}, {-3, 1}), &trace);
        CHECK(trace.outputs[0][0] == -2.0);  // pre-activation
        CHECK(y[0] == 0.0);
    }
    SUBCASE("input shape mismatch throws") {
        NetworkModel m;
        m.input_shape = {2};
        Layer d;
        d.kind = LayerKind::dense;
        d.weights = DenseTensor({1, 2}, {1, 1});
        m.layers.push_back(d);
        CHECK_THROWS_AS(forward(m, DenseTensor({3}, {1, 2, 3})), std::invalid_argument);
    }
}

TEST_CASE("forward matches explicit layer-by-layer composition") {
    NetworkModel m = make_lenet300(99);
    const DenseTensor x = random_input({1, 28, 28}, 1);
    const DenseTensor got = forward(m, x);

    // Oracle: compose the layers by hand with tensor ops.
    DenseTensor a = x.reshaped({784});
    for (std::size_t li = 1; li < m.layers.size(); ++li) {
        const Layer& l = m.layers[li];
        if (l.kind == LayerKind::dense) {
            const std::size_t out = l.weights.dim(0), in = l.weights.dim(1);
            const DenseTensor z = matmul(l.weights, a.reshaped({in, 1}));
            DenseTensor zn({out});
            for (std::size_t i = 0; i < out; ++i) zn[i] = z[i] + (l.bias.empty() ? 0.0 : l.bias[i]);
            a = zn;
        } else if (l.kind == LayerKind::relu) {
            a = relu(a);
        }
    }
    REQUIRE(got.size() == a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(std::fabs(got[i] - a[i]) <= 1e-12 * std::max(1.0, std::fabs(a[i])));
    }
}

TEST_CASE("forward is deterministic") {
    NetworkModel m = make_lenet5(3);
    const DenseTensor x = random_input({1, 28, 28}, 2);
    const DenseTensor y1 = forward(m, x);
    const DenseTensor y2 = forward(m, x);
    for (std::size_t i = 0; i < y1.size(); ++i) CHECK(y1[i] == y2[i]);
}

TEST_CASE("size_of counts nonzero entries") {
    NetworkModel m;
    m.input_shape = {2};
    Layer d;
    d.kind = LayerKind::dense;
    d.weights = DenseTensor({2, 2}, {1, 0, 2, 3});
    m.layers.push_back(d);
    CHECK(size_of(m) == 3);

    for (double& v : m.layers[0].weights.values()) v = 0.0;
    CHECK(size_of(m) == 0);
}

TEST_CASE("zeroing conv channels drops size by f*k*kh*kw") {
    NetworkModel m;
    m.input_shape = {4, 6, 6};
    Layer c1;
    c1.kind = LayerKind::conv;
    c1.weights = DenseTensor({4, 4, 3, 3});
    PhiloxRng rng(5, 0);
    for (double& v : c1.weights.values()) v = rng.next_double() + 0.5;
    m.layers.push_back(c1);
    Layer c2 = c1;
    c2.weights = DenseTensor({5, 4, 3, 3});
    for (double& v : c2.weights.values()) v = rng.next_double() + 0.5;
    m.layers.push_back(c2);

    const std::size_t before = size_of(m);
    const auto pairs = prunable_pairs(m);
    REQUIRE(pairs.size() == 1);
    zero_consumer_channel(m.layers[1], pairs[0], 1);
    zero_consumer_channel(m.layers[1], pairs[0], 3);
    CHECK(before - size_of(m) == 5 * 2 * 9);
}

TEST_CASE("compact") {
    auto build = [](std::uint64_t seed) {
        NetworkModel m;
        m.input_shape = {3};
        Layer d1;
        d1.kind = LayerKind::dense;
        d1.weights = DenseTensor({4, 3});
        d1.bias = DenseTensor({4});
        Layer r;
        r.kind = LayerKind::relu;
        Layer d2;
        d2.kind = LayerKind::dense;
        d2.weights = DenseTensor({2, 4});
        d2.bias = DenseTensor({2});
        m.layers = {d1, r, d2};
        init_weights(m, seed);
        return m;
    };

    SUBCASE("no zero channels leaves the model unchanged") {
        NetworkModel m = build(11);
        const NetworkModel c = compact(m);
        REQUIRE(c.layers.size() == m.layers.size());
        for (std::size_t li = 0; li < m.layers.size(); ++li) {
            CHECK(c.layers[li].weights.shape() == m.layers[li].weights.shape());
            for (std::size_t i = 0; i < m.layers[li].weights.size(); ++i) {
                CHECK(c.layers[li].weights[i] == m.layers[li].weights[i]);
            }
        }
    }

    SUBCASE("tail channel removal keeps outputs bit-equal") {
        NetworkModel m = build(12);
        const auto pairs = prunable_pairs(m);
        zero_producer_filter(m.layers[0], 3);
        zero_consumer_channel(m.layers[2], pairs[0], 3);
        const NetworkModel c = compact(m);
        CHECK(c.layers[0].weights.shape() == std::vector<std::size_t>{3, 3});
        CHECK(c.layers[2].weights.shape() == std::vector<std::size_t>{2, 3});
        CHECK(size_of(c) <= size_of(m));
        for (int t = 0; t < 100; ++t) {
            const DenseTensor x = random_input({3}, 1000 + t);
            const DenseTensor y1 = forward(m, x);
            const DenseTensor y2 = forward(c, x);
            for (std::size_t i = 0; i < y1.size(); ++i) CHECK(y1[i] == y2[i]);
        }
    }

    SUBCASE("middle channel removal stays within 1e-12 relative") {
        NetworkModel m = build(13);
        const auto pairs = prunable_pairs(m);
        zero_producer_filter(m.layers[0], 1);
        zero_consumer_channel(m.layers[2], pairs[0], 1);
        const NetworkModel c = compact(m);
        for (int t = 0; t < 100; ++t) {
            const DenseTensor x = random_input({3}, 2000 + t);
            const DenseTensor y1 = forward(m, x);
            const DenseTensor y2 = forward(c, x);
            for (std::size_t i = 0; i < y1.size(); ++i) {
                CHECK(std::fabs(y1[i] - y2[i]) <= 1e-12 * std::max(1.0, std::fabs(y1[i])));
            }
        }
    }

    SUBCASE("all channels zero is degenerate") {
        NetworkModel m = build(14);
        const auto pairs = prunable_pairs(m);
        for (std::size_t j = 0; j < 4; ++j) {
            zero_producer_filter(m.layers[0], j);
            zero_consumer_channel(m.layers[2], pairs[0], j);
        }
        CHECK_THROWS_AS(compact(m), std::runtime_error);
    }

    SUBCASE("inconsistent zero pattern is an integrity error") {
        NetworkModel m = build(15);
        zero_producer_filter(m.layers[0], 2);  // filter zeroed, channel kept
        CHECK_THROWS_AS(compact(m), std::runtime_error);
    }

    SUBCASE("conv filter removal through flatten into dense") {
        NetworkModel m;
        m.input_shape = {1, 6, 6};
        Layer c1;
        c1.kind = LayerKind::conv;
        c1.weights = DenseTensor({3, 1, 3, 3});
        c1.bias = DenseTensor({3});
        Layer r;
        r.kind = LayerKind::relu;
        Layer f;
        f.kind = LayerKind::flatten;
        Layer d;
        d.kind = LayerKind::dense;
        d.weights = DenseTensor({2, 3 * 4 * 4});
        d.bias = DenseTensor({2});
        m.layers = {c1, r, f, d};
        init_weights(m, 16);
        const auto pairs = prunable_pairs(m);
        REQUIRE(pairs.size() == 1);
        CHECK(pairs[0].group == 16);
        zero_producer_filter(m.layers[0], 2);
        zero_consumer_channel(m.layers[3], pairs[0], 2);
        const NetworkModel c = compact(m);
        CHECK(c.layers[0].weights.dim(0) == 2);
        CHECK(c.layers[3].weights.dim(1) == 2 * 16);
        const DenseTensor x = random_input({1, 6, 6}, 17);
        const DenseTensor y1 = forward(m, x);
        const DenseTensor y2 = forward(c, x);
        for (std::size_t i = 0; i < y1.size(); ++i) {
            CHECK(std::fabs(y1[i] - y2[i]) <= 1e-12 * std::max(1.0, std::fabs(y1[i])));
        }
    }
}

TEST_CASE("spnet-v1 round trip and integrity") {
    const std::string path = "/tmp/spnet_test_model.spnet";
    NetworkModel m = make_lenet5(77);
    save_model(m, path);

    SUBCASE("round trip is bit-exact") {
        const NetworkModel r = load_model(path);
        REQUIRE(r.layers.size() == m.layers.size());
        CHECK(r.input_shape == m.input_shape);
        for (std::size_t li = 0; li < m.layers.size(); ++li) {
            CHECK(r.layers[li].kind == m.layers[li].kind);
            REQUIRE(r.layers[li].weights.shape() == m.layers[li].weights.shape());
            for (std::size_t i = 0; i < m.layers[li].weights.size(); ++i) {
                CHECK(r.layers[li].weights[i] == m.layers[li].weights[i]);
            }
        }
    }

    SUBCASE("missing format field is rejected") {
        std::ofstream out(path + ".bad");
        out << "{\"layers\": []}";
        out.close();
        CHECK_THROWS_AS(load_model(path + ".bad"), format_error);
    }

    SUBCASE("corrupt blob fails the hash check") {
        // flip one byte in the blob
        std::fstream blob(path + ".bin", std::ios::in | std::ios::out | std::ios::binary);
        blob.seekp(100);
        char c;
        blob.seekg(100);
        blob.get(c);
        blob.seekp(100);
        blob.put(static_cast<char>(c ^ 0x1));
        blob.close();
        CHECK_THROWS_AS(load_model(path), format_error);
        save_model(m, path);  // restore for other subcases
    }

    SUBCASE("missing file is an io error") {
        CHECK_THROWS_AS(load_model("/tmp/definitely_not_here.spnet"), io_error);
    }
}

TEST_CASE("model validation rejects non-composing shapes") {
    NetworkModel m;
    m.input_shape = {3};
    Layer d;
    d.kind = LayerKind::dense;
    d.weights = DenseTensor({2, 4});  // wants 4 inputs, gets 3
    m.layers.push_back(d);
    CHECK_THROWS_AS(validate_model(m), std::invalid_argument);

    NetworkModel empty;
    empty.input_shape = {3};
    Layer r;
    r.kind = LayerKind::relu;
    empty.layers.push_back(r);
    CHECK_THROWS_AS(validate_model(empty), std::invalid_argument);
}
