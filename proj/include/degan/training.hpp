#pragma once

// Full training runs driven by a RunConfig and a dataset manifest.

#include <functional>
#include <string>
#include <vector>

#include "degan/config.hpp"
#include "degan/data.hpp"
#include "degan/model.hpp"

namespace degan {

struct TrainingData {
    std::vector<data::ImageSample> train;
    std::vector<data::ImageSample> test;
    std::vector<int> train_ids;  // sorted identities present in train
    std::size_t n_expr = 0;
    std::size_t n_id = 0;
    /// Clean renders indexed id * n_expr + expr; empty unless the manifest
    /// directory carries a clean/ grid.
    std::vector<data::Image> clean;
};

/// Splits by run.held_out_ids when given, otherwise by the manifest's split
/// tags, then augments the training part when run.augment is set.
TrainingData prepare_training_data(const config::RunConfig& run, const data::DatasetManifest& manifest);

/// Reads clean/idXX_eXX.pgm for every (identity, expression) cell next to
/// the manifest; returns an empty vector if any is missing.
std::vector<data::Image> load_clean_grid(const data::DatasetManifest& manifest);

struct TrainingResult {
    DeGanModel model;
    std::vector<StepReport> log;
};

using StepCallback = std::function<void(const StepReport&)>;

/// run.total_steps train_step calls over shuffled epochs of run.batch_size
/// samples. Every random draw comes from run.seed.
TrainingResult train_degan(const config::RunConfig& run, const TrainingData& data,
                           const StepCallback& on_step = {});

/// Loss log lines: header `step\td_loss\tg_loss\tk`, values in %.17g.
std::string loss_log_header();
std::string loss_log_line(const StepReport& report);

}  // namespace degan
