#pragma once

// Line-oriented `key = value` configuration files and the run configuration
// shared by the CLI, the acceptance suite and the Python module.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "degan/data.hpp"
#include "degan/fer.hpp"
#include "degan/model.hpp"

namespace degan::config {

struct Entry {
    std::string key;
    std::string value;
    std::size_t line = 0;
};

/// '#' starts a comment; blank lines are skipped; keys may not repeat.
std::vector<Entry> parse_key_values(std::string_view text, const std::string& source);
std::vector<Entry> read_key_values(const std::filesystem::path& path);

std::vector<std::string> split_list(std::string_view text, char sep = ',');
double parse_double(const std::string& value, const std::string& key);
std::size_t parse_size(const std::string& value, const std::string& key);
std::uint64_t parse_u64(const std::string& value, const std::string& key);
bool parse_bool(const std::string& value, const std::string& key);
std::vector<std::size_t> parse_size_list(const std::string& value, const std::string& key);
std::vector<int> parse_int_list(const std::string& value, const std::string& key);

struct RunConfig {
    // Model
    std::size_t noise_dim = 50;
    std::size_t rep_dim = 350;
    std::size_t image_size = 32;
    std::vector<std::size_t> conv_channels{16, 32, 64};
    std::size_t kernel = 4;
    std::size_t disc_hidden = 128;
    double leaky_slope = 0.2;
    // Optimization
    double lr = 1e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::size_t batch_size = 150;
    std::size_t total_steps = 2000;
    double k_switch_fraction = 0.5;
    std::size_t k_early = 1;
    std::size_t k_late = 2;
    double recon_weight = 0.0;
    bool train_identities_only = false;
    std::uint64_t seed = 7;
    // Data
    std::string manifest;
    std::vector<int> held_out_ids;
    bool augment = false;
    std::size_t crop_size = 75;
    std::vector<double> angles{-150, -120, -90, -60, -30, 30, 60, 90, 120, 150};
    bool hflip = true;
    // Shallow classifier
    std::size_t mlp_hidden = 64;
    std::size_t mlp_epochs = 150;
    std::size_t mlp_batch = 32;
    double mlp_lr = 1e-3;
    double probe_test_fraction = 0.3;
    // Outputs
    std::string log_path;
};

/// Every key with its default rendered as a config line, for --help output
/// and documentation.
std::string describe_defaults();

/// Unknown keys raise ConfigError.
RunConfig parse_run_config(const std::vector<Entry>& entries);
RunConfig load_run_config(const std::filesystem::path& path);
/// Applies DEGAN_SEED from the environment, if set.
void apply_environment(RunConfig& config);

DeGanConfig model_config(const RunConfig& run, std::size_t n_expr, std::size_t n_id);
data::AugmentationSpec augmentation_spec(const RunConfig& run);
fer::MlpConfig mlp_config(const RunConfig& run);

}  // namespace degan::config
