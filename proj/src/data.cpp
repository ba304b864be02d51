#include "degan/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "degan/config.hpp"
#include "degan/errors.hpp"

namespace degan::data {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Pixels and PGM

std::uint8_t to_byte(double pixel) {
    const double v = std::floor((pixel + 1.0) * 127.5 + 0.5);
    return static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
}

double from_byte(std::uint8_t byte) { return static_cast<double>(byte) / 127.5 - 1.0; }

namespace {

// Next whitespace-delimited header token, skipping '#' comments.
std::string pgm_token(std::istream& in, const fs::path& path) {
    std::string tok;
    char ch = 0;
    while (in.get(ch)) {
        if (ch == '#') {
            std::string rest;
            std::getline(in, rest);
            if (!tok.empty()) break;
        } else if (std::isspace(static_cast<unsigned char>(ch))) {
            if (!tok.empty()) break;
        } else {
            tok.push_back(ch);
        }
    }
    if (tok.empty()) throw IoError(path.string() + ": truncated PGM header");
    return tok;
}

std::size_t pgm_number(std::istream& in, const fs::path& path) {
    const std::string tok = pgm_token(in, path);
    if (tok.find_first_not_of("0123456789") != std::string::npos) {
        throw IoError(path.string() + ": bad PGM header field '" + tok + "'");
    }
    return std::stoull(tok);
}

}  // namespace

Image load_image(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open image " + path.string());
    char magic[2] = {0, 0};
    in.read(magic, 2);
    if (!in || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '2')) {
        throw IoError(path.string() + ": unsupported image format (expected 8-bit PGM)");
    }
    const std::size_t width = pgm_number(in, path);
    const std::size_t height = pgm_number(in, path);
    const std::size_t maxval = pgm_number(in, path);
    if (width == 0 || height == 0) throw IoError(path.string() + ": empty image");
    if (maxval == 0 || maxval > 255) {
        throw IoError(path.string() + ": only 8-bit PGM is supported (maxval " +
                      std::to_string(maxval) + ")");
    }
    Image img(height, width);
    const double scale = 255.0 / static_cast<double>(maxval);
    if (magic[1] == '5') {
        std::vector<unsigned char> raw(width * height);
        in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
        if (in.gcount() != static_cast<std::streamsize>(raw.size())) {
            throw IoError(path.string() + ": truncated pixel data");
        }
        for (std::size_t i = 0; i < raw.size(); ++i) {
            img.pixels[i] = maxval == 255 ? from_byte(raw[i]) : raw[i] * scale / 127.5 - 1.0;
        }
    } else {
        for (auto& p : img.pixels) {
            std::size_t v = 0;
            if (!(in >> v) || v > maxval) throw IoError(path.string() + ": bad ASCII pixel data");
            p = maxval == 255 ? from_byte(static_cast<std::uint8_t>(v)) : v * scale / 127.5 - 1.0;
        }
    }
    return img;
}

void save_image(const Image& image, const fs::path& path) {
    if (image.pixels.size() != image.height * image.width || image.pixels.empty()) {
        throw DimensionError("save_image: inconsistent image dimensions");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write image " + path.string());
    out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
    std::vector<char> raw(image.pixels.size());
    std::transform(image.pixels.begin(), image.pixels.end(), raw.begin(),
                   [](double p) { return static_cast<char>(to_byte(p)); });
    out.write(raw.data(), static_cast<std::streamsize>(raw.size()));
    if (!out) throw IoError("failed writing image " + path.string());
}

// ---------------------------------------------------------------------------
// Geometric transforms

std::string to_string(CropLocation loc) {
    switch (loc) {
        case CropLocation::TopLeft: return "top_left";
        case CropLocation::TopRight: return "top_right";
        case CropLocation::BottomLeft: return "bottom_left";
        case CropLocation::BottomRight: return "bottom_right";
        case CropLocation::Center: return "center";
    }
    return "?";
}

CropLocation parse_crop_location(const std::string& name) {
    for (auto loc : {CropLocation::TopLeft, CropLocation::TopRight, CropLocation::BottomLeft,
                     CropLocation::BottomRight, CropLocation::Center}) {
        if (to_string(loc) == name) return loc;
    }
    throw ConfigError("unknown crop location '" + name + "'");
}

Image crop(const Image& image, std::size_t top, std::size_t left, std::size_t size) {
    if (size == 0 || top + size > image.height || left + size > image.width) {
        throw DimensionError("crop of " + std::to_string(size) + "x" + std::to_string(size) + " at (" +
                             std::to_string(top) + "," + std::to_string(left) + ") exceeds " +
                             std::to_string(image.height) + "x" + std::to_string(image.width) +
                             " image");
    }
    Image out(size, size);
    for (std::size_t r = 0; r < size; ++r) {
        std::copy_n(image.pixels.begin() + static_cast<std::ptrdiff_t>((top + r) * image.width + left),
                    size, out.pixels.begin() + static_cast<std::ptrdiff_t>(r * size));
    }
    return out;
}

Image crop_at(const Image& image, CropLocation loc, std::size_t size) {
    if (image.height < size || image.width < size) {
        throw DimensionError("image " + std::to_string(image.height) + "x" +
                             std::to_string(image.width) + " is smaller than crop " +
                             std::to_string(size));
    }
    const std::size_t bottom = image.height - size, right = image.width - size;
    switch (loc) {
        case CropLocation::TopLeft: return crop(image, 0, 0, size);
        case CropLocation::TopRight: return crop(image, 0, right, size);
        case CropLocation::BottomLeft: return crop(image, bottom, 0, size);
        case CropLocation::BottomRight: return crop(image, bottom, right, size);
        case CropLocation::Center: return crop(image, bottom / 2, right / 2, size);
    }
    return {};
}

std::vector<Image> crop_five(const Image& image, std::size_t size) {
    std::vector<Image> out;
    for (auto loc : {CropLocation::TopLeft, CropLocation::TopRight, CropLocation::BottomLeft,
                     CropLocation::BottomRight, CropLocation::Center}) {
        out.push_back(crop_at(image, loc, size));
    }
    return out;
}

Image rotate(const Image& image, double degrees) {
    double turns = std::fmod(degrees, 360.0);
    if (turns < 0) turns += 360.0;
    double c = std::cos(turns * std::numbers::pi / 180.0);
    double s = std::sin(turns * std::numbers::pi / 180.0);
    if (turns == 0.0) c = 1, s = 0;
    else if (turns == 90.0) c = 0, s = 1;
    else if (turns == 180.0) c = -1, s = 0;
    else if (turns == 270.0) c = 0, s = -1;

    constexpr double kFill = -1.0;
    const double cx = (static_cast<double>(image.width) - 1.0) / 2.0;
    const double cy = (static_cast<double>(image.height) - 1.0) / 2.0;
    const auto H = static_cast<std::ptrdiff_t>(image.height);
    const auto W = static_cast<std::ptrdiff_t>(image.width);
    const auto sample = [&](std::ptrdiff_t r, std::ptrdiff_t col) {
        return (r < 0 || r >= H || col < 0 || col >= W)
                   ? kFill
                   : image.pixels[static_cast<std::size_t>(r * W + col)];
    };
    Image out(image.height, image.width);
    for (std::size_t r = 0; r < image.height; ++r) {
        for (std::size_t col = 0; col < image.width; ++col) {
            const double x = static_cast<double>(col) - cx;
            const double y = static_cast<double>(r) - cy;
            const double sx = c * x - s * y + cx;
            const double sy = s * x + c * y + cy;
            const double fx0 = std::floor(sx), fy0 = std::floor(sy);
            const double fx = sx - fx0, fy = sy - fy0;
            const auto x0 = static_cast<std::ptrdiff_t>(fx0);
            const auto y0 = static_cast<std::ptrdiff_t>(fy0);
            double v = (1 - fy) * (1 - fx) * sample(y0, x0);
            if (fx > 0) v += (1 - fy) * fx * sample(y0, x0 + 1);
            if (fy > 0) v += fy * (1 - fx) * sample(y0 + 1, x0);
            if (fx > 0 && fy > 0) v += fy * fx * sample(y0 + 1, x0 + 1);
            out.at(r, col) = v;
        }
    }
    return out;
}

Image hflip(const Image& image) {
    Image out = image;
    for (std::size_t r = 0; r < image.height; ++r) {
        auto row = out.pixels.begin() + static_cast<std::ptrdiff_t>(r * image.width);
        std::reverse(row, row + static_cast<std::ptrdiff_t>(image.width));
    }
    return out;
}

AugmentationSpec load_augmentation_spec(const fs::path& path) {
    AugmentationSpec spec;
    for (const auto& e : config::read_key_values(path)) {
        if (e.key == "crop_size") {
            spec.crop_size = config::parse_size(e.value, e.key);
        } else if (e.key == "crops") {
            spec.crop_locations.clear();
            for (const auto& name : config::split_list(e.value)) {
                spec.crop_locations.push_back(parse_crop_location(name));
            }
        } else if (e.key == "angles") {
            spec.angles.clear();
            for (const auto& a : config::split_list(e.value)) {
                spec.angles.push_back(config::parse_double(a, e.key));
            }
        } else if (e.key == "hflip") {
            spec.hflip = config::parse_bool(e.value, e.key);
        } else {
            throw ConfigError(path.string() + ":" + std::to_string(e.line) +
                              ": unknown augmentation key '" + e.key + "'");
        }
    }
    return spec;
}

std::vector<ImageSample> augment(const ImageSample& sample, const AugmentationSpec& spec) {
    std::vector<ImageSample> out;
    out.reserve(spec.expansion_factor());
    const auto emit = [&](const Image& img) {
        out.push_back({img, sample.y_e, sample.y_id});
        if (spec.hflip) out.push_back({hflip(img), sample.y_e, sample.y_id});
    };
    for (auto loc : spec.crop_locations) {
        const Image patch = crop_at(sample.image, loc, spec.crop_size);
        emit(patch);
        for (double a : spec.angles) emit(rotate(patch, a));
    }
    return out;
}

std::vector<ImageSample> augment_training(std::span<const ImageSample> train,
                                          const AugmentationSpec& spec) {
    std::vector<ImageSample> out;
    out.reserve(train.size() * spec.expansion_factor());
    for (const auto& s : train) {
        auto more = augment(s, spec);
        std::move(more.begin(), more.end(), std::back_inserter(out));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Manifests

namespace {

const char* split_name(Split s) { return s == Split::Train ? "train" : "test"; }

}  // namespace

DatasetManifest load_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest " + path.string());
    DatasetManifest m;
    m.base_dir = path.parent_path();
    bool have_header = false;
    std::string line;
    std::size_t lineno = 0;
    const auto fail = [&](const std::string& why) {
        throw IoError(path.string() + ":" + std::to_string(lineno) + ": " + why);
    };
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        std::istringstream ls(line);
        std::vector<std::string> toks;
        for (std::string t; ls >> t;) toks.push_back(t);
        if (toks.empty()) continue;
        if (!have_header) {
            if (toks.size() != 3) fail("expected header 'N_E=<int> N_D=<int> SIZE=<int>'");
            const auto field = [&](const std::string& tok, const std::string& name) -> std::size_t {
                if (tok.rfind(name + "=", 0) != 0) fail("expected " + name + "=<int>, got '" + tok + "'");
                try {
                    return config::parse_size(tok.substr(name.size() + 1), name);
                } catch (const ConfigError& e) {
                    fail(e.what());
                }
                return 0;
            };
            m.n_expr = field(toks[0], "N_E");
            m.n_id = field(toks[1], "N_D");
            m.image_size = field(toks[2], "SIZE");
            have_header = true;
            continue;
        }
        if (toks.size() != 4) fail("expected '<path> <y_e> <y_id> <train|test>'");
        ManifestRecord rec;
        rec.path = toks[0];
        try {
            rec.y_e = std::stoi(toks[1]);
            rec.y_id = std::stoi(toks[2]);
        } catch (const std::exception&) {
            fail("labels must be integers");
        }
        if (rec.y_e < 0 || static_cast<std::size_t>(rec.y_e) >= m.n_expr) {
            throw LabelError(path.string() + ":" + std::to_string(lineno) + ": expression label " +
                             toks[1] + " outside [0, " + std::to_string(m.n_expr) + ")");
        }
        if (rec.y_id < 0 || static_cast<std::size_t>(rec.y_id) >= m.n_id) {
            throw LabelError(path.string() + ":" + std::to_string(lineno) + ": identity label " +
                             toks[2] + " outside [0, " + std::to_string(m.n_id) + ")");
        }
        if (toks[3] == "train") rec.split = Split::Train;
        else if (toks[3] == "test") rec.split = Split::Test;
        else fail("split tag must be train or test, got '" + toks[3] + "'");
        if (!fs::exists(m.base_dir / rec.path)) fail("missing image file " + rec.path);
        m.records.push_back(std::move(rec));
    }
    if (!have_header) throw IoError(path.string() + ": empty manifest");
    return m;
}

void save_manifest(const DatasetManifest& m, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write manifest " + path.string());
    out << "N_E=" << m.n_expr << " N_D=" << m.n_id << " SIZE=" << m.image_size << '\n';
    for (const auto& r : m.records) {
        out << r.path << ' ' << r.y_e << ' ' << r.y_id << ' ' << split_name(r.split) << '\n';
    }
    if (!out) throw IoError("failed writing manifest " + path.string());
}

std::vector<ImageSample> load_samples(const DatasetManifest& m) {
    std::vector<ImageSample> out;
    out.reserve(m.records.size());
    for (const auto& r : m.records) {
        Image img = load_image(m.base_dir / r.path);
        if (img.height != m.image_size || img.width != m.image_size) {
            throw DimensionError(r.path + " is " + std::to_string(img.height) + "x" +
                                 std::to_string(img.width) + ", manifest SIZE is " +
                                 std::to_string(m.image_size));
        }
        out.push_back({std::move(img), r.y_e, r.y_id});
    }
    return out;
}

std::vector<ImageSample> load_samples(const DatasetManifest& m, Split which) {
    DatasetManifest filtered = m;
    filtered.records.clear();
    for (const auto& r : m.records) {
        if (r.split == which) filtered.records.push_back(r);
    }
    return load_samples(filtered);
}

namespace {

template <typename T>
SplitResult<T> split_by_identity(std::span<const T> items, std::span<const int> held_out) {
    SplitResult<T> out;
    const std::set<int> ids(held_out.begin(), held_out.end());
    std::set<int> seen;
    for (const auto& it : items) {
        if (ids.count(it.y_id)) {
            out.test.push_back(it);
            seen.insert(it.y_id);
        } else {
            out.train.push_back(it);
        }
    }
    for (int id : ids) {
        if (!seen.count(id)) {
            out.missing_ids.push_back(id);
            std::cerr << "warning: held-out identity " << id << " does not occur in the data\n";
        }
    }
    return out;
}

}  // namespace

SplitResult<ImageSample> split(std::span<const ImageSample> samples, std::span<const int> held_out) {
    return split_by_identity(samples, held_out);
}

SplitResult<ManifestRecord> split(std::span<const ManifestRecord> records,
                                  std::span<const int> held_out) {
    return split_by_identity(records, held_out);
}

Tensor to_tensor(std::span<const Image> images) {
    if (images.empty()) throw ContractError("to_tensor: no images");
    const std::size_t h = images[0].height, w = images[0].width;
    std::vector<double> values;
    values.reserve(images.size() * h * w);
    for (const auto& img : images) {
        if (img.height != h || img.width != w) {
            throw DimensionError("to_tensor: images have different sizes");
        }
        values.insert(values.end(), img.pixels.begin(), img.pixels.end());
    }
    return Tensor({images.size(), 1, h, w}, std::move(values));
}

Tensor to_tensor(std::span<const ImageSample> samples) {
    std::vector<Image> images;
    images.reserve(samples.size());
    for (const auto& s : samples) images.push_back(s.image);
    return to_tensor(images);
}

// ---------------------------------------------------------------------------
// Synthetic glyph faces

IdentityGeometry identity_geometry(std::size_t id, std::size_t n_ids) {
    if (n_ids < 2 || id >= n_ids) throw ContractError("identity_geometry: bad identity index");
    const double t = static_cast<double>(id) / static_cast<double>(n_ids - 1);
    IdentityGeometry g;
    g.face_rx = 0.60 + 0.07 * static_cast<double>(id % 4);
    g.face_ry = 0.76 + 0.06 * static_cast<double>((id / 2) % 3);
    g.eye_spacing = 0.22 + 0.20 * t;  // strictly increasing in id, so geometry is injective
    g.eye_height = -0.20 + 0.06 * (static_cast<double>(id % 3) - 1.0);
    g.nose_kind = static_cast<int>(id % 3);
    g.nose_length = 0.16 + 0.07 * static_cast<double>((id / 3) % 3);
    return g;
}

ExpressionGeometry expression_geometry(std::size_t expr, std::size_t n_exprs) {
    if (n_exprs < 2 || expr >= n_exprs) throw ContractError("expression_geometry: bad expression index");
    ExpressionGeometry g;
    g.mouth_curve = -1.0 + 2.0 * static_cast<double>(expr) / static_cast<double>(n_exprs - 1);
    g.brow_angle = 0.38 * (static_cast<double>(expr % 3) - 1.0);
    g.mouth_open = 0.035 * static_cast<double>((expr / 3) % 2);
    return g;
}

namespace {

double segment_distance(double px, double py, double ax, double ay, double bx, double by) {
    const double vx = bx - ax, vy = by - ay;
    const double t = std::clamp(((px - ax) * vx + (py - ay) * vy) / (vx * vx + vy * vy), 0.0, 1.0);
    return std::hypot(px - ax - t * vx, py - ay - t * vy);
}

}  // namespace

Image render_face(const IdentityGeometry& id, const ExpressionGeometry& ex, std::size_t size,
                  const Jitter& jitter) {
    constexpr double kBackground = -0.9, kSkin = 0.55, kInk = -0.7;
    const double px = 2.0 / static_cast<double>(size);
    // Coverage of a shape with signed distance d, antialiased over one pixel.
    const auto cover = [px](double d) { return std::clamp(0.5 - d / px, 0.0, 1.0); };

    Image img(size, size);
    for (std::size_t r = 0; r < size; ++r) {
        for (std::size_t c = 0; c < size; ++c) {
            const double u = (static_cast<double>(c) + 0.5 - jitter.dx) * px - 1.0;
            const double v = (static_cast<double>(r) + 0.5 - jitter.dy) * px - 1.0;

            const double rho = std::hypot(u / id.face_rx, v / id.face_ry);
            const double face = cover((rho - 1.0) * std::min(id.face_rx, id.face_ry));

            double ink = 0.0;
            for (double side : {-1.0, 1.0}) {
                const double ex_c = side * id.eye_spacing;
                ink = std::max(ink, cover(std::hypot(u - ex_c, v - id.eye_height) - 0.085));
                // Brow: inner end (toward the midline) rises for positive angles.
                const double by = id.eye_height - 0.22;
                const double dx = 0.15 * std::cos(ex.brow_angle);
                const double dy = 0.15 * std::sin(ex.brow_angle);
                const double inner_x = ex_c - side * dx, inner_y = by - dy;
                const double outer_x = ex_c + side * dx, outer_y = by + dy;
                ink = std::max(ink, cover(segment_distance(u, v, inner_x, inner_y, outer_x, outer_y) - 0.045));
            }
            switch (id.nose_kind) {
                case 0:
                    ink = std::max(ink, cover(segment_distance(u, v, 0.0, -0.05, 0.0, -0.05 + id.nose_length) - 0.04));
                    break;
                case 1:
                    ink = std::max(ink, cover(std::hypot(u, v - 0.08) - 0.35 * id.nose_length));
                    break;
                default:
                    ink = std::max(ink, cover(segment_distance(u, v, -0.5 * id.nose_length, 0.1,
                                                               0.5 * id.nose_length, 0.1) - 0.04));
                    break;
            }
            // Mouth: parabola through the corners, centre displaced by the curve.
            {
                constexpr double kHalfWidth = 0.34, kMouthY = 0.46, kAmplitude = 0.24;
                const double uu = std::clamp(u, -kHalfWidth, kHalfWidth);
                const double q = uu / kHalfWidth;
                const double my = kMouthY + kAmplitude * ex.mouth_curve * (0.5 - q * q);
                const double d = std::hypot(u - uu, v - my) - (0.045 + ex.mouth_open);
                ink = std::max(ink, cover(d));
            }
            ink = std::min(ink, face);
            double value = kBackground + face * (kSkin - kBackground);
            value += ink * (kInk - value);
            img.at(r, c) = std::clamp(value + jitter.brightness, -1.0, 1.0);
        }
    }
    return img;
}

SynthDataset synth_dataset(const SynthConfig& cfg) {
    if (cfg.n_ids < 2 || cfg.n_exprs < 2 || cfg.samples_per_cell == 0 || cfg.image_size < 8) {
        throw ContractError("synth_dataset: need >= 2 identities, >= 2 expressions, >= 1 sample per "
                            "cell and image size >= 8");
    }
    SynthDataset ds;
    ds.config = cfg;
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> shift(-1.0, 1.0);
    std::uniform_real_distribution<double> bright(-0.1, 0.1);
    for (std::size_t id = 0; id < cfg.n_ids; ++id) {
        const auto ig = identity_geometry(id, cfg.n_ids);
        for (std::size_t e = 0; e < cfg.n_exprs; ++e) {
            const auto eg = expression_geometry(e, cfg.n_exprs);
            ds.clean.push_back(render_face(ig, eg, cfg.image_size));
            for (std::size_t k = 0; k < cfg.samples_per_cell; ++k) {
                Jitter j;
                j.dx = shift(rng);
                j.dy = shift(rng);
                j.brightness = bright(rng);
                ds.samples.push_back({render_face(ig, eg, cfg.image_size, j), static_cast<int>(e),
                                      static_cast<int>(id)});
            }
        }
    }
    return ds;
}

DatasetManifest write_dataset(const SynthDataset& ds, const fs::path& dir,
                              std::span<const int> held_out) {
    std::error_code ec;
    fs::create_directories(dir / "images", ec);
    fs::create_directories(dir / "clean", ec);
    if (ec) throw IoError("cannot create dataset directory " + dir.string() + ": " + ec.message());
    const std::set<int> test_ids(held_out.begin(), held_out.end());

    DatasetManifest m;
    m.n_expr = ds.config.n_exprs;
    m.n_id = ds.config.n_ids;
    m.image_size = ds.config.image_size;
    m.base_dir = dir;
    char name[64];
    std::size_t index = 0;
    for (const auto& s : ds.samples) {
        const std::size_t k = index++ % ds.config.samples_per_cell;
        std::snprintf(name, sizeof name, "images/id%02d_e%02d_s%03zu.pgm", s.y_id, s.y_e, k);
        save_image(s.image, dir / name);
        m.records.push_back({name, s.y_e, s.y_id, test_ids.count(s.y_id) ? Split::Test : Split::Train});
    }
    for (std::size_t id = 0; id < ds.config.n_ids; ++id) {
        for (std::size_t e = 0; e < ds.config.n_exprs; ++e) {
            std::snprintf(name, sizeof name, "clean/id%02zu_e%02zu.pgm", id, e);
            save_image(ds.clean_render(id, e), dir / name);
        }
    }
    save_manifest(m, dir / "manifest.txt");
    return m;
}

}  // namespace degan::data
