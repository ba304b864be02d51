#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "degan/data.hpp"
#include "degan/errors.hpp"
#include "degan/fer.hpp"
#include "degan/model.hpp"
#include "helpers.hpp"

using namespace degan;
using namespace degan::fer;
namespace fs = std::filesystem;

namespace {

RepresentationSet blobs(std::size_t per_class, std::size_t n_classes, double separation, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    RepresentationSet r;
    r.dim = 4;
    for (std::size_t c = 0; c < n_classes; ++c) {
        for (std::size_t i = 0; i < per_class; ++i) {
            for (std::size_t d = 0; d < r.dim; ++d) r.values.push_back(noise(rng) + (d == c % r.dim ? separation * (c + 1) : 0.0));
            r.y_e.push_back(static_cast<int>(c));
            r.y_id.push_back(static_cast<int>(i % 3));
        }
    }
    return r;
}

RepresentationSet noise_reps(std::size_t n_ids, std::size_t n_expr, std::size_t per_cell, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    RepresentationSet r;
    r.dim = 16;
    for (std::size_t id = 0; id < n_ids; ++id)
        for (std::size_t e = 0; e < n_expr; ++e)
            for (std::size_t k = 0; k < per_cell; ++k) {
                for (std::size_t d = 0; d < r.dim; ++d) r.values.push_back(noise(rng));
                r.y_e.push_back(static_cast<int>(e));
                r.y_id.push_back(static_cast<int>(id));
            }
    return r;
}

MlpConfig quick(std::size_t epochs = 60) {
    MlpConfig c;
    c.epochs = epochs;
    c.seed = 3;
    return c;
}

}  // namespace

TEST_CASE("extract_representations shapes and determinism") {
    const auto ds = data::synth_dataset({});
    DeGanModel m{DeGanConfig{}};
    const auto a = extract_representations(m, ds.samples);
    CHECK(a.rows() == 480);
    CHECK(a.dim == 350);
    CHECK(a.values.size() == 480 * 350);
    CHECK(extract_representations(m, ds.samples).values == a.values);
    // A different batch size changes GEMM blocking, so only rounding may differ.
    const auto b = extract_representations(m, ds.samples, 7);
    REQUIRE(b.values.size() == a.values.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i) worst = std::max(worst, std::abs(a.values[i] - b.values[i]));
    CHECK(worst < 1e-12);
    CHECK(a.y_e == b.y_e);
    DeGanConfig small;
    small.image_size = 16;
    CHECK_THROWS_AS(extract_representations(DeGanModel(small), ds.samples), DimensionError);
}

TEST_CASE("representation files round trip") {
    auto r = blobs(5, 3, 2.0, 1);
    r.split.assign(r.rows(), data::Split::Train);
    r.split[2] = data::Split::Test;
    r.source_model = "model.ckpt";
    r.source_dataset = "toy";
    const auto path = fs::temp_directory_path() / "degan_unit_reps.txt";
    save_representations(r, path);
    const auto back = load_representations(path);
    fs::remove(path);
    CHECK(back.values == r.values);
    CHECK(back.y_id == r.y_id);
    CHECK(back.split == r.split);
    CHECK(back.source_model == "model.ckpt");
    CHECK(back.tagged(data::Split::Test).rows() == 1);
}

TEST_CASE("mlp separates well separated blobs") {
    const auto r = blobs(40, 2, 10.0, 2);
    const auto t = train_mlp(r, Target::Expression, quick());
    CHECK(evaluate(t.classifier, r, Target::Expression).accuracy >= 99.0);
}

TEST_CASE("mlp on shuffled labels stays near chance") {
    auto train = blobs(30, 6, 0.0, 3), test = blobs(30, 6, 0.0, 4);
    std::mt19937_64 rng(5);
    std::shuffle(train.y_e.begin(), train.y_e.end(), rng);
    const auto t = train_mlp(train, Target::Expression, quick(), 6);
    const double acc = evaluate(t.classifier, test, Target::Expression).accuracy;
    CHECK(std::abs(acc - 100.0 / 6.0) <= 10.0);
}

TEST_CASE("mlp training is reproducible and rejects one class") {
    const auto r = blobs(10, 3, 3.0, 6);
    CHECK(train_mlp(r, Target::Expression, quick(20)).loss_curve == train_mlp(r, Target::Expression, quick(20)).loss_curve);
    const auto single = blobs(10, 1, 3.0, 7);
    CHECK_THROWS_AS(train_mlp(single, Target::Expression, quick()), DegenerateDataError);
}

TEST_CASE("mlp classifier file round trip") {
    const auto r = blobs(10, 3, 3.0, 8);
    const auto t = train_mlp(r, Target::Identity, quick(10));
    const auto path = fs::temp_directory_path() / "degan_unit_mlp.txt";
    t.classifier.save(path, Target::Identity);
    Target target = Target::Expression;
    const auto back = MlpClassifier::load(path, &target);
    fs::remove(path);
    CHECK(target == Target::Identity);
    CHECK(back.predict(r) == t.classifier.predict(r));
    CHECK(testing::values(back.logits(r)) == testing::values(t.classifier.logits(r)));
}

TEST_CASE("evaluate examples") {
    const std::vector<int> truth{0, 1, 2, 1};
    CHECK(evaluate_predictions(truth, truth, 3).accuracy == 100.0);
    const std::vector<int> pred{0, 1, 2, 2};
    const auto rep = evaluate_predictions(pred, truth, 3);
    CHECK(rep.accuracy == 75.0);
    CHECK(rep.confusion[0][0] + rep.confusion[1][1] + rep.confusion[2][2] == 3);
    CHECK(rep.per_class_accuracy[1] == 50.0);
    CHECK(rep.samples == 4);
    const std::vector<int> short_pred{0};
    CHECK_THROWS_AS(evaluate_predictions(short_pred, truth, 3), DimensionError);

    const auto r = blobs(5, 2, 1.0, 9);
    const auto t = train_mlp(r, Target::Expression, quick(5));
    RepresentationSet wrong = r;
    wrong.dim = 3;
    wrong.values.resize(wrong.rows() * 3);
    CHECK_THROWS_AS(evaluate(t.classifier, wrong, Target::Expression), DimensionError);
}

TEST_CASE("property: evaluate ignores row order and confusion totals add up") {
    const auto r = blobs(12, 3, 1.5, 10);
    const auto t = train_mlp(r, Target::Expression, quick(10));
    const auto base = evaluate(t.classifier, r, Target::Expression);
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 5; ++trial) {
        std::vector<std::size_t> order(r.rows());
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        const auto rep = evaluate(t.classifier, r.subset(order), Target::Expression);
        CHECK(rep.accuracy == base.accuracy);
        CHECK(rep.confusion == base.confusion);
        std::size_t total = 0;
        for (const auto& row : rep.confusion) total += std::accumulate(row.begin(), row.end(), std::size_t{0});
        CHECK(total == rep.samples);
        for (double a : rep.per_class_accuracy) CHECK((a >= 0.0 && a <= 100.0));
    }
}

TEST_CASE("report serialization and reference table") {
    const std::vector<int> pred{0, 1, 2, 2}, truth{0, 1, 2, 1};
    const auto rep = evaluate_predictions(pred, truth, 3);
    const auto back = parse_report(serialize_report(rep));
    CHECK(back.accuracy == rep.accuracy);
    CHECK(back.confusion == rep.confusion);
    CHECK(back.method == "DE-GAN");

    const auto refs = reference_results();
    auto find = [&](const std::string& ds, const std::string& method) {
        for (const auto& r : refs) {
            if (r.dataset == ds && r.method == method) return r.accuracy;
        }
        return -1.0;
    };
    CHECK(find("CK+", "DE-GAN") == 97.28);
    CHECK(find("MMI", "DE-GAN") == 72.97);
    CHECK(find("Oulu-CASIA", "DE-GAN") == 89.17);
    CHECK(find("CK+", "CNN(baseline)") == 90.34);
    CHECK(find("MMI", "CNN(baseline)") == 58.46);
    CHECK(find("Oulu-CASIA", "CNN(baseline)") == 73.14);

    const TableRow rows[] = {{"CNN(baseline)", "Static", 90.34}, {"DE-GAN", "Static", 97.28}};
    const auto table = render_table("CK+", rows);
    CHECK(table.find("Method") != std::string::npos);
    CHECK(table.find("97.28") != std::string::npos);
    CHECK(table.find("Static") != std::string::npos);
}

TEST_CASE("stratified cell split") {
    const auto r = noise_reps(8, 6, 10, 12);
    const auto s = stratified_cell_split(r, 0.3);
    CHECK(s.test.size() == 48 * 3);
    CHECK(s.train.size() == 48 * 7);
    std::vector<std::size_t> all(s.train);
    all.insert(all.end(), s.test.begin(), s.test.end());
    std::sort(all.begin(), all.end());
    for (std::size_t i = 0; i < all.size(); ++i) CHECK(all[i] == i);
}

TEST_CASE("identity probe oracles") {
    const auto noise = noise_reps(8, 6, 10, 13);
    const double chance_acc = identity_probe(noise, stratified_cell_split(noise, 0.3), quick());
    CHECK(std::abs(chance_acc - 12.5) <= 10.0);

    const auto ds = data::synth_dataset({});
    const auto pixels = pixel_representations(ds.samples);
    CHECK(pixels.dim == 1024);
    MlpConfig cfg;
    cfg.seed = 4;
    CHECK(identity_probe(pixels, stratified_cell_split(pixels, 0.3), cfg) >= 90.0);

    RepresentationSet one = noise_reps(1, 3, 4, 14);
    CHECK_THROWS_AS(identity_probe(one, stratified_cell_split(one, 0.3), quick()), DegenerateDataError);
}

TEST_CASE("baseline cnn contract and reproducibility") {
    const auto ds = data::synth_dataset({});
    const std::vector<int> held{6, 7};
    const auto parts = data::split(ds.samples, held);
    DeGanConfig arch;
    BaselineConfig bc;
    bc.steps = 30;
    const auto a = baseline_cnn(parts.train, parts.test, arch, bc);
    const auto b = baseline_cnn(parts.train, parts.test, arch, bc);
    CHECK(a.report.samples == 120);
    CHECK(std::isfinite(a.report.accuracy));
    CHECK((a.report.accuracy >= 0.0 && a.report.accuracy <= 100.0));
    CHECK(a.report.confusion.size() == 6);
    CHECK(a.loss_curve == b.loss_curve);
    CHECK(a.report.accuracy == b.report.accuracy);
}
