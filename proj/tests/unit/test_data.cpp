#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "degan/data.hpp"
#include "degan/errors.hpp"
#include "helpers.hpp"

using namespace degan;
using namespace degan::data;
namespace fs = std::filesystem;

namespace {

fs::path temp(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("degan_unit_" + name);
    fs::remove_all(p);
    return p;
}

Image random_image(std::size_t h, std::size_t w, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    Image img(h, w);
    for (auto& v : img.pixels) v = d(rng);
    return img;
}

// Sum of a few random low-frequency waves, so bilinear resampling is accurate.
Image smooth_image(std::size_t n, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Image img(n, n, 0.0);
    for (int k = 0; k < 3; ++k) {
        const double fx = u(rng) * 0.2, fy = u(rng) * 0.2, ph = u(rng) * 6.28;
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < n; ++c) img.at(r, c) += std::sin(fx * c + fy * r + ph) / 3.0;
    }
    return img;
}

Image slice(const Image& img, std::size_t top, std::size_t left, std::size_t size) {
    Image out(size, size);
    for (std::size_t r = 0; r < size; ++r)
        for (std::size_t c = 0; c < size; ++c) out.at(r, c) = img.pixels[(top + r) * img.width + left + c];
    return out;
}

void write_pgm(const fs::path& p, std::size_t w, std::size_t h, std::uint8_t value) {
    std::ofstream out(p, std::ios::binary);
    out << "P5\n" << w << ' ' << h << "\n255\n";
    for (std::size_t i = 0; i < w * h; ++i) out.put(static_cast<char>(value));
}

}  // namespace

TEST_CASE("image io examples") {
    const auto dir = temp("io");
    fs::create_directories(dir);
    write_pgm(dir / "black.pgm", 3, 2, 0);
    write_pgm(dir / "white.pgm", 3, 2, 255);
    const auto black = load_image(dir / "black.pgm"), white = load_image(dir / "white.pgm");
    CHECK(black.height == 2);
    CHECK(black.width == 3);
    for (double v : black.pixels) CHECK(v == -1.0);
    for (double v : white.pixels) CHECK(v == 1.0);

    std::ofstream(dir / "ascii.pgm") << "P2\n# comment\n2 1\n255\n0 255\n";
    CHECK(load_image(dir / "ascii.pgm").pixels == std::vector<double>{-1.0, 1.0});

    CHECK_THROWS_AS(load_image(dir / "missing.pgm"), IoError);
    std::ofstream(dir / "bad.png") << "\x89PNG not really";
    try {
        load_image(dir / "bad.png");
        FAIL("expected IoError");
    } catch (const IoError& e) {
        CHECK(std::string(e.what()).find("bad.png") != std::string::npos);
    }
    fs::remove_all(dir);
}

TEST_CASE("image round trip within one grey level") {
    std::mt19937_64 rng(1);
    const auto dir = temp("roundtrip");
    fs::create_directories(dir);
    for (int trial = 0; trial < 5; ++trial) {
        const Image img = random_image(1 + rng() % 20, 1 + rng() % 20, rng);
        save_image(img, dir / "x.pgm");
        const Image back = load_image(dir / "x.pgm");
        REQUIRE(back.pixels.size() == img.pixels.size());
        for (std::size_t i = 0; i < img.pixels.size(); ++i) CHECK(std::abs(back.pixels[i] - img.pixels[i]) <= 1.0 / 255.0 + 1e-12);
    }
    for (int b = 0; b < 256; ++b) CHECK(to_byte(from_byte(static_cast<std::uint8_t>(b))) == b);
    CHECK(to_byte(-5.0) == 0);
    CHECK(to_byte(5.0) == 255);
    fs::remove_all(dir);
}

TEST_CASE("crop_five examples") {
    std::mt19937_64 rng(2);
    const Image sq = random_image(6, 6, rng);
    for (const auto& p : crop_five(sq, 6)) CHECK(p == sq);

    const Image img = random_image(100, 100, rng);
    const auto patches = crop_five(img, 75);
    REQUIRE(patches.size() == 5);
    CHECK(patches[0] == slice(img, 0, 0, 75));
    CHECK(patches[1] == slice(img, 0, 25, 75));
    CHECK(patches[2] == slice(img, 25, 0, 75));
    CHECK(patches[3] == slice(img, 25, 25, 75));
    CHECK(patches[4] == slice(img, 12, 12, 75));
    CHECK_THROWS_AS(crop_five(img, 101), DimensionError);
}

TEST_CASE("crop matches index slicing on random shapes") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t h = 5 + rng() % 20, w = 5 + rng() % 20, s = 1 + rng() % std::min(h, w);
        const Image img = random_image(h, w, rng);
        CHECK(crop_at(img, CropLocation::BottomRight, s) == crop(img, h - s, w - s, s));
        CHECK(crop_at(img, CropLocation::Center, s) == crop(img, (h - s) / 2, (w - s) / 2, s));
        const auto c = crop(img, 1, 2, std::min(s, std::min(h - 1, w - 2)));
        CHECK(c.at(0, 0) == img.at(1, 2));
    }
}

TEST_CASE("rotate examples") {
    std::mt19937_64 rng(4);
    const Image img = random_image(9, 7, rng);
    CHECK(rotate(img, 0.0) == img);
    CHECK(rotate(img, 360.0) == img);

    Image two(2, 2);
    two.pixels = {1, 2, 3, 4};  // a b / c d
    CHECK(rotate(two, 90.0).pixels == std::vector<double>{2, 4, 1, 3});
    CHECK(rotate(two, 180.0).pixels == std::vector<double>{4, 3, 2, 1});
    CHECK(rotate(two, -90.0).pixels == std::vector<double>{3, 1, 4, 2});

    const Image r = rotate(img, 45.0);
    CHECK(r.height == 9);
    CHECK(r.width == 7);
    // On a square frame the 45 degree corner samples more than a pixel outside.
    const Image sq = rotate(random_image(9, 9, rng), 45.0);
    CHECK(sq.at(0, 0) == -1.0);
}

TEST_CASE("rotate then unrotate on smooth images") {
    std::mt19937_64 rng(5);
    for (double angle : {30.0, 60.0, 120.0, 150.0, 17.0}) {
        const Image img = smooth_image(40, rng);
        const Image back = rotate(rotate(img, angle), -angle);
        double err = 0.0;
        std::size_t n = 0;
        for (std::size_t r = 10; r < 30; ++r)
            for (std::size_t c = 10; c < 30; ++c, ++n) err += std::abs(back.at(r, c) - img.at(r, c));
        CHECK(err / static_cast<double>(n) < 0.1);
    }
}

TEST_CASE("hflip examples") {
    Image two(2, 2);
    two.pixels = {1, 2, 3, 4};
    CHECK(hflip(two).pixels == std::vector<double>{2, 1, 4, 3});
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 10; ++trial) {
        const Image img = random_image(1 + rng() % 12, 1 + rng() % 12, rng);
        CHECK(hflip(hflip(img)) == img);
        std::multiset<double> a, b;
        const Image f = hflip(img);
        for (std::size_t c = 0; c < img.width; ++c) {
            double sa = 0, sb = 0;
            for (std::size_t r = 0; r < img.height; ++r) sa += img.at(r, c), sb += f.at(r, c);
            a.insert(sa);
            b.insert(sb);
        }
        CHECK(a == b);
    }
}

TEST_CASE("augment examples") {
    std::mt19937_64 rng(7);
    const ImageSample s{random_image(100, 100, rng), 2, 5};
    const auto all = augment(s, AugmentationSpec{});
    CHECK(all.size() == 110);
    CHECK(all[0].image == crop_at(s.image, CropLocation::Center, 75));
    CHECK(all[1].image == hflip(all[0].image));
    CHECK(all[2].image == rotate(all[0].image, -150.0));

    AugmentationSpec one;
    one.crop_locations = {CropLocation::TopLeft};
    one.angles.clear();
    one.hflip = false;
    const auto single = augment(s, one);
    REQUIRE(single.size() == 1);
    CHECK(single[0].image == crop(s.image, 0, 0, 75));

    AugmentationSpec mid;
    mid.crop_locations = {CropLocation::TopLeft, CropLocation::Center};
    mid.angles = {10, 20, 30};
    CHECK(augment(s, mid).size() == 16);
    CHECK(mid.expansion_factor() == 16);

    AugmentationSpec too_big;
    too_big.crop_size = 101;
    CHECK_THROWS_AS(augment(s, too_big), DimensionError);
}

TEST_CASE("property: augmentation keeps labels and the pixel range") {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 20; ++trial) {
        AugmentationSpec spec;
        spec.crop_size = 4 + rng() % 10;
        spec.angles.clear();
        for (std::size_t i = 0, n = rng() % 5; i < n; ++i) spec.angles.push_back(static_cast<double>(rng() % 720) - 360.0);
        spec.hflip = rng() % 2;
        const ImageSample s{random_image(16, 16, rng), static_cast<int>(rng() % 6), static_cast<int>(rng() % 8)};
        const auto out = augment(s, spec);
        CHECK(out.size() == spec.expansion_factor());
        for (const auto& o : out) {
            CHECK(o.y_e == s.y_e);
            CHECK(o.y_id == s.y_id);
            for (double v : o.image.pixels) CHECK((v >= -1.0 && v <= 1.0));
        }
    }
}

TEST_CASE("augmentation spec files") {
    const auto dir = temp("spec");
    fs::create_directories(dir);
    std::ofstream(dir / "a.spec") << "crop_size = 20\ncrops = center, top_left\nangles = 90\nhflip = false\n";
    const auto spec = load_augmentation_spec(dir / "a.spec");
    CHECK(spec.crop_size == 20);
    CHECK(spec.crop_locations == std::vector<CropLocation>{CropLocation::Center, CropLocation::TopLeft});
    CHECK(spec.expansion_factor() == 4);
    std::ofstream(dir / "b.spec") << "crop_sise = 20\n";
    CHECK_THROWS_AS(load_augmentation_spec(dir / "b.spec"), ConfigError);
    fs::remove_all(dir);
}

TEST_CASE("synthetic dataset examples") {
    const auto ds = synth_dataset({});
    CHECK(ds.samples.size() == 480);
    CHECK(ds.clean.size() == 48);
    std::map<std::pair<int, int>, int> cells;
    for (const auto& s : ds.samples) {
        ++cells[{s.y_id, s.y_e}];
        CHECK(s.image.height == 32);
        for (double v : s.image.pixels) CHECK((v >= -1.0 && v <= 1.0));
    }
    CHECK(cells.size() == 48);
    for (const auto& [cell, n] : cells) CHECK(n == 10);

    const auto again = synth_dataset({});
    bool identical = true;
    for (std::size_t i = 0; i < ds.samples.size(); ++i) identical = identical && ds.samples[i].image == again.samples[i].image;
    CHECK(identical);
    SynthConfig other;
    other.seed = 8;
    CHECK_FALSE(synth_dataset(other).samples[0].image == ds.samples[0].image);

    SynthConfig bad;
    bad.n_exprs = 1;
    CHECK_THROWS_AS(synth_dataset(bad), ContractError);
    bad = {};
    bad.samples_per_cell = 0;
    CHECK_THROWS_AS(synth_dataset(bad), ContractError);
}

TEST_CASE("clean renders are separable by nearest centroid") {
    const auto ds = synth_dataset({});
    const std::size_t ni = 8, ne = 6, px = 32 * 32;
    std::vector<std::vector<double>> id_centroid(ni, std::vector<double>(px, 0.0)), ex_centroid(ne, std::vector<double>(px, 0.0));
    for (std::size_t i = 0; i < ni; ++i)
        for (std::size_t e = 0; e < ne; ++e)
            for (std::size_t p = 0; p < px; ++p) {
                id_centroid[i][p] += ds.clean_render(i, e).pixels[p] / ne;
                ex_centroid[e][p] += ds.clean_render(i, e).pixels[p] / ni;
            }
    auto nearest = [&](const std::vector<std::vector<double>>& cs, const Image& img) {
        std::size_t best = 0;
        double bd = INFINITY;
        for (std::size_t k = 0; k < cs.size(); ++k) {
            double d = 0;
            for (std::size_t p = 0; p < px; ++p) d += (cs[k][p] - img.pixels[p]) * (cs[k][p] - img.pixels[p]);
            if (d < bd) bd = d, best = k;
        }
        return best;
    };
    std::size_t id_ok = 0, ex_ok = 0;
    for (std::size_t i = 0; i < ni; ++i)
        for (std::size_t e = 0; e < ne; ++e) {
            id_ok += nearest(id_centroid, ds.clean_render(i, e)) == i;
            ex_ok += nearest(ex_centroid, ds.clean_render(i, e)) == e;
        }
    CHECK(id_ok == ni * ne);
    CHECK(ex_ok == ni * ne);
}

TEST_CASE("property: factor encodings are injective") {
    for (std::size_t n : {2, 5, 8, 12}) {
        std::set<std::tuple<double, double, double, double, int, double>> ids;
        for (std::size_t i = 0; i < n; ++i) {
            const auto g = identity_geometry(i, n);
            ids.insert({g.face_rx, g.face_ry, g.eye_spacing, g.eye_height, g.nose_kind, g.nose_length});
        }
        CHECK(ids.size() == n);
        std::set<std::pair<double, double>> exprs;
        for (std::size_t e = 0; e < n; ++e) {
            const auto g = expression_geometry(e, n);
            exprs.insert({g.mouth_curve, g.brow_angle});
        }
        CHECK(exprs.size() == n);
    }
}

TEST_CASE("manifest round trip and validation") {
    const auto dir = temp("manifest");
    SynthConfig sc;
    sc.samples_per_cell = 2;
    const auto ds = synth_dataset(sc);
    const std::vector<int> held{6, 7};
    write_dataset(ds, dir, held);
    const auto m = load_manifest(dir / "manifest.txt");
    CHECK(m.n_expr == 6);
    CHECK(m.n_id == 8);
    CHECK(m.image_size == 32);
    CHECK(m.records.size() == 96);
    CHECK(load_samples(m, Split::Test).size() == 24);
    CHECK(load_samples(m)[0].image.pixels.size() == 32 * 32);

    std::ofstream(dir / "bad_label.txt") << "N_E=6 N_D=8 SIZE=32\n" << m.records[0].path << " 6 0 train\n";
    CHECK_THROWS_AS(load_manifest(dir / "bad_label.txt"), LabelError);
    std::ofstream(dir / "missing.txt") << "# comment\nN_E=6 N_D=8 SIZE=32\nimages/nope.pgm 0 0 train\n";
    CHECK_THROWS_AS(load_manifest(dir / "missing.txt"), IoError);
    std::ofstream(dir / "header.txt") << "N_E=6 SIZE=32\n";
    CHECK_THROWS_AS(load_manifest(dir / "header.txt"), IoError);

    save_manifest(m, dir / "copy.txt");
    const auto copy = load_manifest(dir / "copy.txt");
    REQUIRE(copy.records.size() == m.records.size());
    CHECK(copy.records[5].path == m.records[5].path);
    CHECK(copy.records.back().split == Split::Test);
    fs::remove_all(dir);
}

TEST_CASE("held-out identity split") {
    const auto ds = synth_dataset({});
    const std::vector<int> held{6, 7};
    const auto parts = split(ds.samples, held);
    CHECK(parts.test.size() == 120);
    CHECK(parts.train.size() == 360);
    for (const auto& s : parts.test) CHECK((s.y_id == 6 || s.y_id == 7));
    for (const auto& s : parts.train) CHECK(s.y_id < 6);

    const auto none = split(ds.samples, std::span<const int>{});
    CHECK(none.test.empty());
    CHECK(none.train.size() == 480);

    const std::vector<int> absent{6, 42};
    const auto warn = split(ds.samples, absent);
    CHECK(warn.missing_ids == std::vector<int>{42});
    CHECK(warn.test.size() == 60);
}

TEST_CASE("training-only augmentation") {
    std::mt19937_64 rng(9);
    const std::vector<ImageSample> train{{random_image(20, 20, rng), 0, 0}, {random_image(20, 20, rng), 1, 1}};
    AugmentationSpec spec;
    spec.crop_size = 16;
    const auto out = augment_training(train, spec);
    CHECK(out.size() == 220);
    CHECK(to_tensor(out).shape() == Shape{220, 1, 16, 16});
}
