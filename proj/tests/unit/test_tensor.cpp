#include <doctest.h>

#include <cmath>
#include <numeric>

#include "degan/errors.hpp"
#include "degan/tensor.hpp"
#include "helpers.hpp"

using namespace degan;
using testing::randn;
using testing::values;

namespace {

// Direct summation over (n, f, oy, ox, c, ky, kx) with explicit padding checks.
std::vector<double> conv_oracle(const Tensor& x, const Tensor& k, std::size_t s, std::size_t p) {
    const auto N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const auto F = k.dim(0), KH = k.dim(2), KW = k.dim(3);
    const auto OH = (H + 2 * p - KH) / s + 1, OW = (W + 2 * p - KW) / s + 1;
    std::vector<double> out(N * F * OH * OW, 0.0);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t f = 0; f < F; ++f)
            for (std::size_t oy = 0; oy < OH; ++oy)
                for (std::size_t ox = 0; ox < OW; ++ox) {
                    double acc = 0.0;
                    for (std::size_t c = 0; c < C; ++c)
                        for (std::size_t ky = 0; ky < KH; ++ky)
                            for (std::size_t kx = 0; kx < KW; ++kx) {
                                const long iy = static_cast<long>(oy * s + ky) - static_cast<long>(p);
                                const long ix = static_cast<long>(ox * s + kx) - static_cast<long>(p);
                                if (iy < 0 || ix < 0 || iy >= static_cast<long>(H) || ix >= static_cast<long>(W)) continue;
                                acc += x.data()[((n * C + c) * H + iy) * W + ix] * k.data()[((f * C + c) * KH + ky) * KW + kx];
                            }
                    out[((n * F + f) * OH + oy) * OW + ox] = acc;
                }
    return out;
}

// Scatter form of the transposed convolution.
std::vector<double> conv_transpose_oracle(const Tensor& x, const Tensor& k, std::size_t s, std::size_t p) {
    const auto N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const auto F = k.dim(1), KH = k.dim(2), KW = k.dim(3);
    const auto OH = (H - 1) * s + KH - 2 * p, OW = (W - 1) * s + KW - 2 * p;
    std::vector<double> out(N * F * OH * OW, 0.0);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t iy = 0; iy < H; ++iy)
                for (std::size_t ix = 0; ix < W; ++ix)
                    for (std::size_t f = 0; f < F; ++f)
                        for (std::size_t ky = 0; ky < KH; ++ky)
                            for (std::size_t kx = 0; kx < KW; ++kx) {
                                const long oy = static_cast<long>(iy * s + ky) - static_cast<long>(p);
                                const long ox = static_cast<long>(ix * s + kx) - static_cast<long>(p);
                                if (oy < 0 || ox < 0 || oy >= static_cast<long>(OH) || ox >= static_cast<long>(OW)) continue;
                                out[((n * F + f) * OH + oy) * OW + ox] +=
                                    x.data()[((n * C + c) * H + iy) * W + ix] * k.data()[((c * F + f) * KH + ky) * KW + kx];
                            }
    return out;
}

}  // namespace

TEST_CASE("tensor construction and shape invariants") {
    Tensor t({2, 3}, 1.5);
    CHECK(t.numel() == 6);
    CHECK(t.shape() == Shape{2, 3});
    CHECK(shape_str(t.shape()) == "[2x3]");
    CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
    CHECK_THROWS_AS(Tensor({2, 0}), DimensionError);
    CHECK(Tensor::scalar(4.0).item() == 4.0);
    CHECK_THROWS_AS(t.item(), ContractError);
}

TEST_CASE("matmul examples") {
    const Tensor eye({2, 2}, {1, 0, 0, 1});
    const Tensor m({2, 2}, {1, 2, 3, 4});
    CHECK(values(matmul(eye, m)) == std::vector<double>{1, 2, 3, 4});
    CHECK(values(matmul(Tensor({1, 2}, {1, 2}), Tensor({2, 1}, {3, 4}))) == std::vector<double>{11});
}

TEST_CASE("matmul shape mismatch names both shapes") {
    try {
        matmul(Tensor({2, 3}), Tensor({2, 3}));
        FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2x3]") != std::string::npos);
    }
}

TEST_CASE("matmul gradients match finite differences") {
    std::mt19937_64 rng(1);
    const Tensor a = randn({4, 5}, rng, true), b = randn({5, 3}, rng, true);
    const Tensor pts[] = {a, b};
    CHECK(finite_diff_check([&] { return testing::probe(matmul(a, b), 7); }, pts) < 1e-6);
}

TEST_CASE("conv2d examples") {
    const Tensor x({1, 1, 2, 2}, {1, 2, 3, 4});
    CHECK(values(conv2d(x, Tensor({1, 1, 1, 1}, {1.0}), 1, 0)) == values(x));
    CHECK(values(conv2d(x, Tensor({1, 1, 2, 2}, {1, 0, 0, 1}), 1, 0)) == std::vector<double>{5});
    CHECK_THROWS_AS(conv2d(x, Tensor({1, 1, 3, 3}), 1, 0), DimensionError);
    CHECK_THROWS_AS(conv2d(x, Tensor({1, 2, 1, 1}), 1, 0), DimensionError);
}

TEST_CASE("conv2d forward equals direct summation exactly on integer data") {
    std::mt19937_64 rng(2);
    const Tensor x = testing::integers({2, 3, 8, 8}, rng), k = testing::integers({4, 3, 3, 3}, rng);
    for (std::size_t s : {1, 2}) {
        for (std::size_t p : {0, 1}) CHECK(values(conv2d(x, k, s, p)) == conv_oracle(x, k, s, p));
    }
}

TEST_CASE("conv2d forward matches direct summation on real data") {
    std::mt19937_64 rng(3);
    const Tensor x = randn({2, 3, 8, 8}, rng), k = randn({4, 3, 3, 3}, rng);
    const auto got = values(conv2d(x, k, 1, 1));
    const auto want = conv_oracle(x, k, 1, 1);
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
}

TEST_CASE("conv2d gradients match finite differences") {
    std::mt19937_64 rng(4);
    const Tensor x = randn({2, 3, 8, 8}, rng, true), k = randn({4, 3, 3, 3}, rng, true);
    const Tensor pts[] = {x, k};
    CHECK(finite_diff_check([&] { return testing::probe(conv2d(x, k, 1, 1), 9); }, pts) < 1e-6);
}

TEST_CASE("conv2d_transpose examples and oracle") {
    const Tensor x({1, 1, 2, 2}, {1, 2, 3, 4});
    CHECK(values(conv2d_transpose(x, Tensor({1, 1, 1, 1}, {1.0}), 1, 0)) == values(x));
    std::mt19937_64 rng(5);
    const Tensor xi = testing::integers({2, 3, 3, 3}, rng), k = testing::integers({3, 2, 4, 4}, rng);
    const Tensor out = conv2d_transpose(xi, k, 2, 1);
    CHECK(out.shape() == Shape{2, 2, 6, 6});
    CHECK(values(out) == conv_transpose_oracle(xi, k, 2, 1));
    CHECK_THROWS_AS(conv2d_transpose(Tensor({1, 1, 1, 1}), Tensor({1, 1, 1, 1}), 1, 1), DimensionError);
}

TEST_CASE("conv2d_transpose gradients match finite differences") {
    std::mt19937_64 rng(6);
    const Tensor x = randn({2, 3, 3, 3}, rng, true), k = randn({3, 2, 5, 5}, rng, true);
    const Tensor pts[] = {x, k};
    CHECK(finite_diff_check([&] { return testing::probe(conv2d_transpose(x, k, 2, 1), 3); }, pts) < 1e-6);
}

TEST_CASE("property: conv2d and conv2d_transpose are adjoint") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t s = 1 + rng() % 3, kh = 1 + rng() % 4, p = rng() % kh, oh = 1 + rng() % 5;
        const long h = static_cast<long>((oh - 1) * s + kh) - 2 * static_cast<long>(p);
        if (h < 1) continue;
        const std::size_t n = 1 + rng() % 2, c = 1 + rng() % 3, f = 1 + rng() % 3;
        const Tensor x = randn({n, c, static_cast<std::size_t>(h), static_cast<std::size_t>(h)}, rng);
        const Tensor k = randn({f, c, kh, kh}, rng);
        const Tensor y = randn({n, f, oh, oh}, rng);
        const auto lhs = values(conv2d(x, k, s, p)), rhs = values(conv2d_transpose(y, k, s, p));
        const double a = std::inner_product(lhs.begin(), lhs.end(), y.data().begin(), 0.0);
        const double b = std::inner_product(x.data().begin(), x.data().end(), rhs.begin(), 0.0);
        CHECK(std::abs(a - b) <= 1e-10);
    }
}

TEST_CASE("activation examples") {
    CHECK(values(relu(Tensor({3}, {-1, 0, 2}))) == std::vector<double>{0, 0, 2});
    CHECK(values(leaky_relu(Tensor({2}, {-1, 3}))) == std::vector<double>{-0.2, 3});
    CHECK(sigmoid(Tensor::scalar(0.0)).item() == 0.5);
    CHECK(degan::tanh(Tensor::scalar(0.0)).item() == 0.0);
}

TEST_CASE("activation gradients away from the kink") {
    std::mt19937_64 rng(8);
    Tensor x = randn({4, 6}, rng, true);
    for (auto& v : x.data()) {
        if (std::abs(v) < 1e-3) v += 0.01;
    }
    CHECK(finite_diff_check([&] { return testing::probe(relu(x), 1); }, x) < 1e-6);
    CHECK(finite_diff_check([&] { return testing::probe(leaky_relu(x, 0.2), 1); }, x) < 1e-6);
    CHECK(finite_diff_check([&] { return testing::probe(degan::tanh(x), 1); }, x) < 1e-6);
    CHECK(finite_diff_check([&] { return testing::probe(sigmoid(x), 1); }, x) < 1e-6);
}

TEST_CASE("softmax cross-entropy examples") {
    const std::vector<int> t{3};
    CHECK(softmax_cross_entropy(Tensor({1, 7}, 0.0), t).loss.item() == doctest::Approx(std::log(7.0)).epsilon(1e-12));
    CHECK(std::log(7.0) == doctest::Approx(1.9459).epsilon(1e-4));
    Tensor sat({1, 7}, 0.0);
    sat.data()[3] = 1000.0;
    CHECK(softmax_cross_entropy(sat, t).loss.item() == doctest::Approx(0.0));
    const std::vector<int> bad{7};
    CHECK_THROWS_AS(softmax_cross_entropy(Tensor({1, 7}), bad), LabelError);
    const std::vector<int> neg{-1};
    CHECK_THROWS_AS(softmax_cross_entropy(Tensor({1, 7}), neg), LabelError);
}

TEST_CASE("softmax cross-entropy gradient") {
    std::mt19937_64 rng(9);
    const Tensor logits = randn({5, 7}, rng, true);
    const std::vector<int> targets{0, 6, 2, 2, 4};
    CHECK(finite_diff_check([&] { return softmax_cross_entropy(logits, targets).loss; }, logits) < 1e-6);
}

TEST_CASE("property: softmax rows normalize and ignore constant shifts") {
    std::mt19937_64 rng(10);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t rows = 1 + rng() % 5, cols = 2 + rng() % 9;
        const Tensor logits = randn({rows, cols}, rng, false, 1.0 + static_cast<double>(trial));
        Tensor shifted = logits.detach();
        const double c = static_cast<double>(static_cast<int>(rng() % 200) - 100);
        for (auto& v : shifted.data()) v += c;
        const auto p = softmax_rows(logits), q = softmax_rows(shifted);
        for (std::size_t r = 0; r < rows; ++r) {
            double total = 0.0;
            for (std::size_t k = 0; k < cols; ++k) {
                total += p[r * cols + k];
                CHECK(std::abs(p[r * cols + k] - q[r * cols + k]) <= 1e-6);
            }
            CHECK(std::abs(total - 1.0) <= 1e-6);
        }
    }
}

TEST_CASE("backward examples") {
    std::mt19937_64 rng(11);
    const Tensor x = randn({3, 4}, rng, true);
    sum(x).backward();
    for (double g : x.grad()) CHECK(g == 1.0);

    const Tensor y = randn({2, 5}, rng, true);
    scale(sum(mul(y, y)), 0.5).backward();
    for (std::size_t i = 0; i < y.numel(); ++i) CHECK(y.grad()[i] == doctest::Approx(y.data()[i]).epsilon(1e-14));
}

TEST_CASE("backward accumulates and is deterministic after reset") {
    std::mt19937_64 rng(12);
    Tensor x = randn({2, 3}, rng, true);
    const Tensor w = randn({3, 2}, rng, true);
    auto loss = [&] { return sum(degan::tanh(matmul(x, w))); };
    loss().backward();
    const auto first = std::vector<double>(x.grad().begin(), x.grad().end());
    loss().backward();
    for (std::size_t i = 0; i < first.size(); ++i) CHECK(x.grad()[i] == doctest::Approx(2 * first[i]).epsilon(1e-14));
    x.zero_grad();
    loss().backward();
    for (std::size_t i = 0; i < first.size(); ++i) CHECK(x.grad()[i] == first[i]);
}

TEST_CASE("backward contract errors") {
    const Tensor x({2, 2}, 1.0, true);
    CHECK_THROWS_AS(mul(x, x).backward(), ContractError);
    CHECK_THROWS_AS(sum(Tensor({2}, 1.0)).backward(), ContractError);
}

TEST_CASE("composite graph gradients") {
    std::mt19937_64 rng(13);
    const Tensor x = randn({3, 2, 6, 6}, rng);
    const Tensor k = randn({4, 2, 3, 3}, rng, true), kb = randn({4}, rng, true);
    const Tensor w = randn({36, 5}, rng, true), b = randn({5}, rng, true);
    const std::vector<int> y{0, 4, 2};
    auto f = [&] {
        const Tensor h = leaky_relu(add_channel_bias(conv2d(x, k, 2, 1), kb));
        return softmax_cross_entropy(add_bias(matmul(reshape(h, {3, 36}), w), b), y).loss;
    };
    const Tensor pts[] = {k, kb, w, b};
    CHECK(finite_diff_check(f, pts) < 1e-4);
}

TEST_CASE("finite_diff_check examples") {
    std::mt19937_64 rng(14);
    const Tensor x = randn({3, 3}, rng, true);
    CHECK(finite_diff_check([&] { return sum(mul(x, x)); }, x) < 1e-9);

    const Tensor logits = randn({4, 5}, rng, true);
    const std::vector<int> t{1, 2, 3, 4};
    CHECK(finite_diff_check([&] { return softmax_cross_entropy(logits, t).loss; }, logits) < 1e-6);
}

TEST_CASE("finite differences detect a corrupted gradient") {
    std::mt19937_64 rng(15);
    const Tensor x = randn({3, 4}, rng, true);
    auto f = [&] { return sum(degan::tanh(x)); };
    f().backward();
    std::vector<double> corrupted(x.grad().begin(), x.grad().end());
    for (auto& g : corrupted) g *= 1.1;
    CHECK(max_relative_error(corrupted, numeric_gradient(f, x)) > 1e-2);
}

TEST_CASE("remaining ops: values and gradients") {
    std::mt19937_64 rng(16);
    const Tensor a = randn({2, 3}, rng, true), b = randn({2, 3}, rng, true), bias = randn({3}, rng, true);
    CHECK(values(add(a, b))[0] == a.data()[0] + b.data()[0]);
    CHECK(values(sub(a, b))[1] == a.data()[1] - b.data()[1]);
    CHECK(mean(a).item() == doctest::Approx(sum(a).item() / 6));
    CHECK_THROWS_AS(add(a, Tensor({3, 2})), DimensionError);
    CHECK_THROWS_AS(add_bias(a, Tensor({2})), DimensionError);
    CHECK_THROWS_AS(reshape(a, {4, 2}), DimensionError);
    const Tensor pts[] = {a, b, bias};
    CHECK(finite_diff_check([&] { return testing::probe(add_bias(sub(mul(a, b), scale(a, 3)), bias), 2); }, pts) < 1e-6);
    const Tensor parts[] = {a, b};
    const Tensor cat = concat_columns(parts);
    CHECK(cat.shape() == Shape{2, 6});
    CHECK(cat.data()[3] == b.data()[0]);
    Tensor target = randn({2, 3}, rng);
    CHECK(l1_loss(target, target).item() == 0.0);
}

TEST_CASE("graph is topologically ordered and only tracks what needs gradients") {
    std::mt19937_64 rng(17);
    const Tensor x = randn({2, 2}, rng, true), c = randn({2, 2}, rng);
    const Tensor loss = sum(mul(add(x, c), x));
    const auto g = trace(loss);
    for (std::size_t i = 0; i < g.nodes.size(); ++i) {
        for (std::size_t in : g.nodes[i].inputs) CHECK(in < i);
    }
    CHECK(g.nodes.back().op == "sum");
    CHECK(add(c, c).is_leaf());
    CHECK_FALSE(add(c, c).requires_grad());
}

TEST_CASE("detach copies values and drops history") {
    const Tensor x({2}, {1.0, 2.0}, true);
    const Tensor y = scale(x, 2.0);
    const Tensor d = y.detach();
    CHECK(values(d) == values(y));
    CHECK(d.is_leaf());
    CHECK_FALSE(d.requires_grad());
    CHECK_FALSE(d.same_storage(y));
}

TEST_CASE("property: gradients stay finite under large logits") {
    std::mt19937_64 rng(18);
    for (int trial = 0; trial < 20; ++trial) {
        const Tensor logits = randn({3, 6}, rng, true, 300.0);
        const std::vector<int> t{0, 3, 5};
        const auto ce = softmax_cross_entropy(logits, t);
        ce.loss.backward();
        CHECK(std::isfinite(ce.loss.item()));
        CHECK(testing::all_finite(logits.grad()));
    }
}
