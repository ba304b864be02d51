#include "degan/training.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <random>
#include <set>

#include "degan/errors.hpp"

namespace degan {

namespace fs = std::filesystem;

std::vector<data::Image> load_clean_grid(const data::DatasetManifest& manifest) {
    std::vector<data::Image> grid;
    char name[64];
    for (std::size_t id = 0; id < manifest.n_id; ++id) {
        for (std::size_t e = 0; e < manifest.n_expr; ++e) {
            std::snprintf(name, sizeof name, "clean/id%02zu_e%02zu.pgm", id, e);
            const fs::path p = manifest.base_dir / name;
            if (!fs::exists(p)) return {};
            grid.push_back(data::load_image(p));
        }
    }
    return grid;
}

TrainingData prepare_training_data(const config::RunConfig& run, const data::DatasetManifest& manifest) {
    TrainingData out;
    out.n_expr = manifest.n_expr;
    out.n_id = manifest.n_id;
    if (run.held_out_ids.empty()) {
        out.train = data::load_samples(manifest, data::Split::Train);
        out.test = data::load_samples(manifest, data::Split::Test);
    } else {
        const auto all = data::load_samples(manifest);
        auto parts = data::split(all, run.held_out_ids);
        out.train = std::move(parts.train);
        out.test = std::move(parts.test);
    }
    if (out.train.empty()) throw DegenerateDataError("no training samples after the identity split");
    if (run.augment) out.train = data::augment_training(out.train, config::augmentation_spec(run));
    std::set<int> ids;
    for (const auto& s : out.train) ids.insert(s.y_id);
    out.train_ids.assign(ids.begin(), ids.end());
    out.clean = load_clean_grid(manifest);
    return out;
}

TrainingResult train_degan(const config::RunConfig& run, const TrainingData& data,
                           const StepCallback& on_step) {
    if (run.batch_size == 0) throw ConfigError("batch_size must be positive");
    const DeGanConfig cfg = config::model_config(run, data.n_expr, data.n_id);
    TrainingResult result{DeGanModel(cfg), {}};
    DeGanModel& model = result.model;

    TrainOptions options;
    if (run.train_identities_only) options.identity_pool = data.train_ids;
    if (cfg.recon_weight > 0.0) {
        if (data.clean.empty()) {
            throw ConfigError("recon_weight > 0 needs the clean/ render grid next to the manifest");
        }
        const std::size_t px = cfg.image_size * cfg.image_size;
        if (data.clean.front().pixels.size() != px) {
            throw DimensionError("clean renders do not match image_size");
        }
        options.paired_target = [&data, px, n_expr = data.n_expr](std::span<const int> y_e,
                                                                   std::span<const int> y_idx) {
            const std::size_t side = data.clean.front().width;
            Tensor t({y_e.size(), 1, side, side});
            for (std::size_t r = 0; r < y_e.size(); ++r) {
                const auto& img = data.clean[y_idx[r] * n_expr + y_e[r]];
                std::copy(img.pixels.begin(), img.pixels.end(), t.data().begin() + r * px);
            }
            return t;
        };
    }

    std::mt19937_64 rng(nn::derive_seed(run.seed, 77));
    std::vector<std::size_t> order(data.train.size());
    std::iota(order.begin(), order.end(), 0);
    std::size_t cursor = order.size();
    const std::size_t batch = std::min(run.batch_size, order.size());
    std::vector<data::ImageSample> picked;
    result.log.reserve(run.total_steps);
    for (std::size_t step = 0; step < run.total_steps; ++step) {
        picked.clear();
        while (picked.size() < batch) {
            if (cursor == order.size()) {
                std::shuffle(order.begin(), order.end(), rng);
                cursor = 0;
            }
            picked.push_back(data.train[order[cursor++]]);
        }
        TrainBatch tb;
        tb.images = data::to_tensor(picked);
        for (const auto& s : picked) {
            tb.y_e.push_back(s.y_e);
            tb.y_id.push_back(s.y_id);
        }
        result.log.push_back(model.train_step(tb, rng, options));
        if (on_step) on_step(result.log.back());
    }
    return result;
}

std::string loss_log_header() { return "step\td_loss\tg_loss\tk"; }

std::string loss_log_line(const StepReport& r) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%llu\t%.17g\t%.17g\t%zu", static_cast<unsigned long long>(r.step),
                  r.d_loss, r.g_loss, r.k);
    return buf;
}

}  // namespace degan
