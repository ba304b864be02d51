#include "degan/gradcheck.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <random>

namespace degan {

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, bool requires_grad = true) {
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = dist(rng);
    return Tensor(std::move(shape), std::move(v), requires_grad);
}

// Keeps every coordinate at least `margin` away from zero.
Tensor away_from_zero(Tensor t, double margin) {
    for (auto& x : t.data()) {
        if (std::abs(x) < margin) x = x < 0 ? x - margin : x + margin;
    }
    return t;
}

// sum(w * x) with fixed random w, so every output coordinate gets its own
// upstream gradient.
std::function<Tensor(const Tensor&)> weighted_sum(const Shape& shape, std::mt19937_64& rng) {
    Tensor w = random_tensor(shape, rng, false);
    return [w](const Tensor& x) { return sum(mul(x, w)); };
}

std::vector<Tensor> tensors(const std::vector<nn::Parameter>& params) {
    std::vector<Tensor> out;
    for (const auto& p : params) out.push_back(p.value);
    return out;
}

struct TinyBatch {
    Tensor images, codes, noise;
    std::vector<int> y_e, y_id, y_idx;
};

TinyBatch tiny_batch(const DeGanConfig& c, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> pixel(-1.0, 1.0);
    const std::size_t n = 2;
    TinyBatch b;
    std::vector<double> px(n * c.image_size * c.image_size);
    for (auto& p : px) p = pixel(rng);
    b.images = Tensor({n, 1, c.image_size, c.image_size}, std::move(px));
    b.y_e = {0, 1};
    b.y_id = {1, 0};
    b.y_idx = {0, 1};
    b.codes = one_hot_rows(b.y_idx, c.n_id);
    b.noise = random_tensor({n, c.noise_dim}, rng, false);
    return b;
}

}  // namespace

bool GradCheckReport::passed() const {
    for (const auto& c : cases) {
        if (!c.passed()) return false;
    }
    return !cases.empty();
}

DeGanConfig tiny_model_config() {
    DeGanConfig c;
    c.n_expr = 2;
    c.n_id = 2;
    c.noise_dim = 3;
    c.rep_dim = 6;
    c.image_size = 4;
    c.conv_channels = {2, 3};
    c.disc_hidden = 5;
    c.seed = 3;
    return c;
}

void randomize_parameters(DeGanModel& model, double stddev, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, stddev);
    for (auto params : {model.generator_parameters(), model.discriminator_parameters()}) {
        for (auto& p : params) {
            for (auto& x : p.value.data()) x = dist(rng);
        }
    }
}

double check_generator_loss(DeGanModel& model, std::uint64_t seed) {
    const TinyBatch b = tiny_batch(model.config(), seed);
    auto f = [&] {
        const Tensor fake = model.generate(b.images, b.codes, b.noise);
        return generator_loss(model.discriminate(fake), b.y_e, b.y_idx).total;
    };
    auto points = tensors(model.generator_parameters());
    for (auto& t : tensors(model.discriminator_parameters())) points.push_back(t);
    model.zero_grad();
    const double err = finite_diff_check(f, points);
    model.zero_grad();
    return err;
}

double check_discriminator_loss(DeGanModel& model, std::uint64_t seed) {
    const TinyBatch b = tiny_batch(model.config(), seed);
    const Tensor fake = model.generate(b.images, b.codes, b.noise).detach();
    auto f = [&] {
        return discriminator_loss(model.discriminate(b.images), b.y_e, b.y_id, model.discriminate(fake))
            .total;
    };
    model.zero_grad();
    const double err = finite_diff_check(f, tensors(model.discriminator_parameters()));
    model.zero_grad();
    return err;
}

GradCheckReport run_gradcheck_suite(std::uint64_t seed, double tolerance) {
    const auto start = std::chrono::steady_clock::now();
    std::mt19937_64 rng(seed);
    GradCheckReport report;
    auto record = [&](const std::string& name, double err) {
        report.cases.push_back({name, err, tolerance});
        report.max_error = std::max(report.max_error, err);
    };
    auto check = [&](const std::string& name, const std::function<Tensor()>& f,
                     std::vector<Tensor> points) { record(name, finite_diff_check(f, points)); };

    {
        Tensor a = random_tensor({4, 5}, rng), b = random_tensor({5, 3}, rng);
        auto w = weighted_sum({4, 3}, rng);
        check("matmul", [=] { return w(matmul(a, b)); }, {a, b});
    }
    {
        Tensor a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng);
        auto w = weighted_sum({3, 4}, rng);
        check("add", [=] { return w(add(a, b)); }, {a, b});
        check("sub", [=] { return w(sub(a, b)); }, {a, b});
        check("mul", [=] { return w(mul(a, b)); }, {a, b});
        check("scale", [=] { return w(scale(a, -1.7)); }, {a});
    }
    {
        Tensor x = random_tensor({3, 4}, rng), bias = random_tensor({4}, rng);
        auto w = weighted_sum({3, 4}, rng);
        check("add_bias", [=] { return w(add_bias(x, bias)); }, {x, bias});
    }
    {
        Tensor x = random_tensor({2, 3, 4, 4}, rng), bias = random_tensor({3}, rng);
        auto w = weighted_sum({2, 3, 4, 4}, rng);
        check("add_channel_bias", [=] { return w(add_channel_bias(x, bias)); }, {x, bias});
    }
    {
        Tensor x = random_tensor({2, 3, 8, 8}, rng), k = random_tensor({4, 3, 3, 3}, rng);
        auto w = weighted_sum({2, 4, 8, 8}, rng);
        check("conv2d", [=] { return w(conv2d(x, k, 1, 1)); }, {x, k});
        Tensor k4 = random_tensor({4, 3, 4, 4}, rng);
        auto w2 = weighted_sum({2, 4, 4, 4}, rng);
        check("conv2d_stride2", [=] { return w2(conv2d(x, k4, 2, 1)); }, {x, k4});
    }
    {
        Tensor x = random_tensor({2, 3, 3, 3}, rng), k = random_tensor({3, 2, 4, 4}, rng);
        auto w = weighted_sum({2, 2, 6, 6}, rng);
        check("conv2d_transpose", [=] { return w(conv2d_transpose(x, k, 2, 1)); }, {x, k});
        Tensor k5 = random_tensor({3, 2, 5, 5}, rng);
        auto w2 = weighted_sum({2, 2, 7, 7}, rng);
        check("conv2d_transpose_k5", [=] { return w2(conv2d_transpose(x, k5, 2, 1)); }, {x, k5});
    }
    {
        Tensor x = away_from_zero(random_tensor({3, 5}, rng), 1e-2);
        auto w = weighted_sum({3, 5}, rng);
        check("relu", [=] { return w(relu(x)); }, {x});
        check("leaky_relu", [=] { return w(leaky_relu(x, 0.2)); }, {x});
        check("tanh", [=] { return w(degan::tanh(x)); }, {x});
        check("sigmoid", [=] { return w(sigmoid(x)); }, {x});
        auto w2 = weighted_sum({5, 3}, rng);
        check("reshape", [=] { return w2(reshape(x, {5, 3})); }, {x});
        check("sum", [=] { return sum(mul(x, x)); }, {x});
        check("mean", [=] { return mean(mul(x, x)); }, {x});
    }
    {
        Tensor a = random_tensor({3, 2}, rng), b = random_tensor({3, 4}, rng);
        auto w = weighted_sum({3, 6}, rng);
        check("concat_columns", [=] {
            const Tensor parts[] = {a, b};
            return w(concat_columns(parts));
        }, {a, b});
    }
    {
        Tensor target = random_tensor({3, 4}, rng, false);
        Tensor diff = away_from_zero(random_tensor({3, 4}, rng, false), 1e-2);
        Tensor a(target.shape(), std::vector<double>(target.numel()), true);
        for (std::size_t i = 0; i < a.numel(); ++i) a.data()[i] = target.data()[i] + diff.data()[i];
        check("l1_loss", [=] { return l1_loss(a, target); }, {a});
    }
    {
        Tensor logits = random_tensor({5, 7}, rng);
        const std::vector<int> targets{0, 3, 6, 2, 3};
        check("softmax_cross_entropy", [=] { return softmax_cross_entropy(logits, targets).loss; },
              {logits});
    }
    {
        // conv -> leaky_relu -> dense -> softmax cross-entropy
        Tensor x = random_tensor({3, 2, 5, 5}, rng, false);
        Tensor k = random_tensor({3, 2, 3, 3}, rng), cb = random_tensor({3}, rng);
        Tensor wd = random_tensor({27, 4}, rng), bd = random_tensor({4}, rng);
        const std::vector<int> targets{1, 0, 3};
        check("composite_conv_dense_ce", [=] {
            Tensor h = leaky_relu(add_channel_bias(conv2d(x, k, 2, 1), cb), 0.2);
            Tensor logits = add_bias(matmul(reshape(h, {3, 27}), wd), bd);
            return softmax_cross_entropy(logits, targets).loss;
        }, {k, cb, wd, bd});
    }
    {
        DeGanModel model(tiny_model_config());
        randomize_parameters(model, 0.3, seed + 100);
        record("generator_loss_tiny_model", check_generator_loss(model, seed + 200));
        record("discriminator_loss_tiny_model", check_discriminator_loss(model, seed + 300));
    }

    report.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

}  // namespace degan
