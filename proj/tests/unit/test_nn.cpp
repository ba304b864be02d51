#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "degan/errors.hpp"
#include "degan/model.hpp"
#include "degan/nn.hpp"
#include "helpers.hpp"

using namespace degan;
using namespace degan::nn;

namespace {

// Plain scalar Adam, written out independently of the library.
struct ScalarAdam {
    double lr, b1, b2, eps, m = 0, v = 0;
    int t = 0;
    double step(double w, double g) {
        ++t;
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        const double mh = m / (1 - std::pow(b1, t)), vh = v / (1 - std::pow(b2, t));
        return w - lr * mh / (std::sqrt(vh) + eps);
    }
};

}  // namespace

TEST_CASE("init_weights statistics") {
    const Tensor w = init_weights({100, 100}, 42);
    double mean = 0.0, sq = 0.0;
    for (double v : w.data()) mean += v;
    mean /= 10000.0;
    for (double v : w.data()) sq += (v - mean) * (v - mean);
    const double sd = std::sqrt(sq / 9999.0);
    CHECK(std::abs(mean) <= 0.0006);
    CHECK(sd >= 0.019);
    CHECK(sd <= 0.021);
    CHECK(w.requires_grad());
}

TEST_CASE("init_weights determinism") {
    CHECK(testing::values(init_weights({7, 3}, 5)) == testing::values(init_weights({7, 3}, 5)));
    CHECK(testing::values(init_weights({7, 3}, 5)) != testing::values(init_weights({7, 3}, 6)));
    CHECK(derive_seed(1, 2) != derive_seed(1, 3));
    CHECK(derive_seed(1, 2) == derive_seed(1, 2));
}

TEST_CASE("adam with zero gradient leaves parameters and counts the step") {
    Tensor p({3}, {1.0, -2.0, 0.5}, true);
    std::vector<Tensor> ps{p};
    auto st = make_optimizer_state(ps, {});
    adam_step(ps, st);
    CHECK(testing::values(p) == std::vector<double>{1.0, -2.0, 0.5});
    CHECK(st.step == 1);
}

TEST_CASE("adam one step from fresh state moves by lr against the gradient sign") {
    for (double g : {3.0, -0.25}) {
        std::vector<double> w{0.7};
        const std::vector<double> grad{g};
        OptimizerState st;
        st.m = {{0.0}};
        st.v = {{0.0}};
        std::span<double> pw[] = {w};
        std::span<const double> pg[] = {grad};
        adam_step(pw, pg, st);
        CHECK(w[0] - 0.7 == doctest::Approx(-1e-4 * (g > 0 ? 1 : -1)).epsilon(1e-6));
    }
}

TEST_CASE("adam matches a scalar reference trajectory and makes progress") {
    const std::vector<double> c{0.01, -0.01, 0.005, -0.008};
    Tensor w({4}, 0.0, true);
    std::vector<Tensor> ps{w};
    auto st = make_optimizer_state(ps, {});
    std::vector<ScalarAdam> ref(4, ScalarAdam{1e-4, 0.5, 0.999, 1e-8});
    std::vector<double> wr(4, 0.0);
    for (int it = 0; it < 100; ++it) {
        w.zero_grad();
        Tensor d = sub(w, Tensor({4}, c));
        sum(mul(d, d)).backward();
        adam_step(ps, st);
        for (std::size_t i = 0; i < 4; ++i) wr[i] = ref[i].step(wr[i], 2 * (wr[i] - c[i]));
    }
    double dist = 0, norm = 0;
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(w.data()[i] == doctest::Approx(wr[i]).epsilon(1e-12));
        dist += (w.data()[i] - c[i]) * (w.data()[i] - c[i]);
        norm += c[i] * c[i];
    }
    CHECK(std::sqrt(dist) < 0.9 * std::sqrt(norm));
    CHECK(st.step == 100);
}

TEST_CASE("property: adam with lr 0 is the identity") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor p = testing::randn({5}, rng, true);
        const auto before = testing::values(p);
        std::vector<Tensor> ps{p};
        AdamConfig cfg;
        cfg.learning_rate = 0.0;
        auto st = make_optimizer_state(ps, cfg);
        for (int s = 0; s < 5; ++s) {
            p.zero_grad();
            sum(mul(p, testing::randn({5}, rng))).backward();
            adam_step(ps, st);
        }
        CHECK(testing::values(p) == before);
    }
}

TEST_CASE("adam shape mismatch") {
    std::vector<double> w{1.0, 2.0};
    const std::vector<double> g{1.0};
    OptimizerState st;
    st.m = {{0.0, 0.0}};
    st.v = {{0.0, 0.0}};
    std::span<double> pw[] = {w};
    std::span<const double> pg[] = {g};
    CHECK_THROWS_AS(adam_step(pw, pg, st), DimensionError);
}

TEST_CASE("build_network counts and identity") {
    const LayerSpec dense[] = {LayerSpec::dense(3)};
    const auto net = build_network(dense, {4}, 1);
    CHECK(net.parameter_count() == 15);
    CHECK(net.output_shape() == Shape{3});

    const auto id = build_network({}, {2, 3}, 1);
    const Tensor x({2, 2, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12});
    CHECK(testing::values(id.forward(x)) == testing::values(x));
    CHECK(id.parameter_count() == 0);
}

TEST_CASE("default encoder maps 1x32x32 to 350") {
    const DeGanConfig cfg;
    const auto specs = encoder_specs(cfg);
    const auto enc = build_network(specs, {1, 32, 32}, 1, "encoder");
    CHECK(enc.output_shape() == Shape{350});
    std::mt19937_64 rng(1);
    CHECK(enc.forward(testing::randn({2, 1, 32, 32}, rng)).shape() == Shape{2, 350});
}

TEST_CASE("inconsistent specs name the offending layer") {
    const LayerSpec specs[] = {LayerSpec::conv(4, 3, 1, 0), LayerSpec::conv(4, 9, 1, 0)};
    try {
        build_network(specs, {1, 8, 8}, 1, "trunk");
        FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("trunk layer 1") != std::string::npos);
    }
}

TEST_CASE("property: same seed gives the same network; batch size leaves parameters alone") {
    const LayerSpec specs[] = {LayerSpec::conv(3, 3, 2, 1), LayerSpec::act(Activation::LeakyRelu),
                               LayerSpec::flatten(), LayerSpec::dense(5), LayerSpec::act(Activation::Tanh)};
    std::mt19937_64 rng(9);
    for (std::size_t batch : {1, 2, 7}) {
        const auto a = build_network(specs, {2, 6, 6}, 17), b = build_network(specs, {2, 6, 6}, 17);
        const Tensor x = testing::randn({batch, 2, 6, 6}, rng);
        CHECK(testing::values(a.forward(x)) == testing::values(b.forward(x)));
        CHECK(a.parameter_count() == 3 * 2 * 9 + 3 + 27 * 5 + 5);
    }
}

TEST_CASE("biases start at zero and parameter names are stable") {
    const LayerSpec specs[] = {LayerSpec::dense(3), LayerSpec::act(Activation::Relu), LayerSpec::dense(2)};
    const auto net = build_network(specs, {4}, 1, "mlp");
    REQUIRE(net.parameters().size() == 4);
    CHECK(net.parameters()[0].name == "mlp.0.weight");
    CHECK(net.parameters()[1].name == "mlp.0.bias");
    CHECK(net.parameters()[3].name == "mlp.2.bias");
    for (double v : net.parameters()[1].value.data()) CHECK(v == 0.0);
}

TEST_CASE("checkpoint round trip is value-exact") {
    std::mt19937_64 rng(4);
    Checkpoint ck;
    ck.set("format", "test");
    ck.set("note", "two words");
    const Tensor t = testing::randn({3, 2}, rng, false, 1e-3);
    ck.arrays.push_back({"a/b", t.shape(), testing::values(t)});
    ck.arrays.push_back({"tiny", {2}, {5e-324, -0.0}});
    const auto path = std::filesystem::temp_directory_path() / "degan_unit_ckpt.txt";
    save_checkpoint(ck, path);
    const auto back = load_checkpoint(path);
    CHECK(back.get("note") == "two words");
    CHECK(back.array("a/b").values == testing::values(t));
    CHECK(back.array("tiny").values[0] == 5e-324);
    CHECK(std::signbit(back.array("tiny").values[1]));
    CHECK_THROWS_AS(back.array("missing"), IoError);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(load_checkpoint(path), IoError);
}

TEST_CASE("network and optimizer state survive a checkpoint") {
    const LayerSpec specs[] = {LayerSpec::dense(3)};
    auto net = build_network(specs, {2}, 3, "n");
    auto tensors = net.parameter_tensors();
    auto st = make_optimizer_state(tensors, {});
    sum(net.forward(Tensor({1, 2}, {1.0, 2.0}))).backward();
    adam_step(tensors, st);
    Checkpoint ck;
    store_network(ck, "net", net);
    store_optimizer(ck, "opt", net, st);

    auto other = build_network(specs, {2}, 99, "n");
    restore_network(ck, "net", other);
    OptimizerState st2 = make_optimizer_state(other.parameter_tensors(), {});
    restore_optimizer(ck, "opt", other.parameters(), st2);
    for (std::size_t i = 0; i < net.parameters().size(); ++i) {
        CHECK(testing::values(net.parameters()[i].value) == testing::values(other.parameters()[i].value));
    }
    CHECK(st2.step == st.step);
    CHECK(st2.m == st.m);
    CHECK(st2.v == st.v);
    CHECK(st2.config.beta1 == 0.5);
}
