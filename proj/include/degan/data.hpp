#pragma once

// Grayscale images, PGM I/O, the crop/rotate/flip augmentation pipeline,
// dataset manifests and the procedural glyph-face dataset.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "degan/tensor.hpp"

namespace degan::data {

/// Row-major grayscale image with pixels in [-1, 1].
struct Image {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> pixels;

    Image() = default;
    Image(std::size_t h, std::size_t w, double fill = -1.0) : height(h), width(w), pixels(h * w, fill) {}

    double& at(std::size_t r, std::size_t c) { return pixels[r * width + c]; }
    double at(std::size_t r, std::size_t c) const { return pixels[r * width + c]; }
    bool operator==(const Image&) const = default;
};

struct ImageSample {
    Image image;
    int y_e = 0;
    int y_id = 0;
};

/// Reads 8-bit binary (P5) or ASCII (P2) PGM and maps [0, 255] to [-1, 1].
Image load_image(const std::filesystem::path& path);
/// Writes binary PGM; inverse map with round-half-up, clamped to [0, 255].
void save_image(const Image& image, const std::filesystem::path& path);

std::uint8_t to_byte(double pixel);
double from_byte(std::uint8_t byte);

// ---------------------------------------------------------------------------
// Augmentation

enum class CropLocation { TopLeft, TopRight, BottomLeft, BottomRight, Center };

std::string to_string(CropLocation loc);
CropLocation parse_crop_location(const std::string& name);

Image crop(const Image& image, std::size_t top, std::size_t left, std::size_t size);
Image crop_at(const Image& image, CropLocation loc, std::size_t size);
/// Top-left, top-right, bottom-left, bottom-right, center.
std::vector<Image> crop_five(const Image& image, std::size_t size);

/// Counter-clockwise rotation about the image center, bilinear sampling,
/// out-of-frame pixels filled with -1. Multiples of 90 degrees are exact.
Image rotate(const Image& image, double degrees);
Image hflip(const Image& image);

struct AugmentationSpec {
    std::size_t crop_size = 75;
    std::vector<CropLocation> crop_locations{CropLocation::Center, CropLocation::TopLeft,
                                             CropLocation::TopRight, CropLocation::BottomLeft,
                                             CropLocation::BottomRight};
    std::vector<double> angles{-150, -120, -90, -60, -30, 30, 60, 90, 120, 150};
    bool hflip = true;

    std::size_t expansion_factor() const {
        return crop_locations.size() * (1 + angles.size()) * (hflip ? 2 : 1);
    }
};

/// Parses "key = value" lines: crop_size, crops (comma list of center,
/// top_left, top_right, bottom_left, bottom_right), angles (comma list), hflip.
AugmentationSpec load_augmentation_spec(const std::filesystem::path& path);

/// Crop-major, then angle (unrotated first), then flip (unflipped first).
std::vector<ImageSample> augment(const ImageSample& sample, const AugmentationSpec& spec);

// ---------------------------------------------------------------------------
// Manifests

enum class Split { Train, Test };

struct ManifestRecord {
    std::string path;  // relative to the manifest directory
    int y_e = 0;
    int y_id = 0;
    Split split = Split::Train;
};

struct DatasetManifest {
    std::size_t n_expr = 0;
    std::size_t n_id = 0;
    std::size_t image_size = 0;
    std::vector<ManifestRecord> records;
    std::filesystem::path base_dir;
};

/// Parses the header line `N_E=<int> N_D=<int> SIZE=<int>` and one
/// `<path> <y_e> <y_id> <train|test>` record per line; '#' starts a comment.
/// Checks label ranges and that every referenced file exists.
DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

std::vector<ImageSample> load_samples(const DatasetManifest& manifest);
std::vector<ImageSample> load_samples(const DatasetManifest& manifest, Split which);

template <typename T>
struct SplitResult {
    std::vector<T> train;
    std::vector<T> test;
    std::vector<int> missing_ids;  // held-out ids that never occur (a warning, not an error)
};

/// Test gets every sample whose identity is held out; train gets the rest.
SplitResult<ImageSample> split(std::span<const ImageSample> samples, std::span<const int> held_out);
SplitResult<ManifestRecord> split(std::span<const ManifestRecord> records,
                                  std::span<const int> held_out);

/// Training samples expanded by augment(); test samples pass through.
std::vector<ImageSample> augment_training(std::span<const ImageSample> train,
                                          const AugmentationSpec& spec);

/// N x 1 x H x W tensor from equally sized images.
Tensor to_tensor(std::span<const ImageSample> samples);
Tensor to_tensor(std::span<const Image> images);

// ---------------------------------------------------------------------------
// Synthetic glyph faces

/// Static, identity-owned geometry, in normalized coordinates ([-1, 1] square).
struct IdentityGeometry {
    double face_rx = 0.0, face_ry = 0.0;
    double eye_spacing = 0.0, eye_height = 0.0;
    int nose_kind = 0;  // 0 vertical bar, 1 dot, 2 horizontal bar
    double nose_length = 0.0;
};

/// Expression-owned geometry.
struct ExpressionGeometry {
    double mouth_curve = 0.0;  // >0 smiles (corners up)
    double brow_angle = 0.0;   // radians, >0 raises the inner ends
    double mouth_open = 0.0;
};

IdentityGeometry identity_geometry(std::size_t id, std::size_t n_ids);
ExpressionGeometry expression_geometry(std::size_t expr, std::size_t n_exprs);

struct Jitter {
    double dx = 0.0, dy = 0.0;  // pixels
    double brightness = 0.0;
};

Image render_face(const IdentityGeometry& id, const ExpressionGeometry& ex, std::size_t size,
                  const Jitter& jitter = {});

struct SynthConfig {
    std::size_t n_ids = 8;
    std::size_t n_exprs = 6;
    std::size_t samples_per_cell = 10;
    std::size_t image_size = 32;
    std::uint64_t seed = 7;
};

struct SynthDataset {
    SynthConfig config;
    std::vector<ImageSample> samples;  // identity-major, then expression, then sample
    std::vector<Image> clean;          // jitter-free renders, index id * n_exprs + expr

    const Image& clean_render(std::size_t id, std::size_t expr) const {
        return clean[id * config.n_exprs + expr];
    }
};

SynthDataset synth_dataset(const SynthConfig& config);

/// Writes images/, clean/ and manifest.txt under dir; held-out identities
/// are tagged as test records.
DatasetManifest write_dataset(const SynthDataset& ds, const std::filesystem::path& dir,
                              std::span<const int> held_out = {});

}  // namespace degan::data
