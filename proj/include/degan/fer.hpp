#pragma once

// Expression recognition on extracted representations: the shallow MLP,
// accuracy reports, the identity probe and the plain-CNN baseline.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "degan/data.hpp"
#include "degan/model.hpp"
#include "degan/nn.hpp"

namespace degan::fer {

struct RepresentationSet {
    std::size_t dim = 0;
    std::vector<double> values;  // rows x dim, row-major
    std::vector<int> y_e;
    std::vector<int> y_id;
    std::vector<data::Split> split;  // optional; empty or one tag per row
    std::string source_model;
    std::string source_dataset;

    std::size_t rows() const { return y_e.size(); }
    std::span<const double> row(std::size_t i) const { return {values.data() + i * dim, dim}; }
    void validate() const;
    /// Rows at the given indices, in that order.
    RepresentationSet subset(std::span<const std::size_t> indices) const;
    /// Rows tagged with the given split.
    RepresentationSet tagged(data::Split which) const;
};

/// One encoder pass per sample; no augmentation.
RepresentationSet extract_representations(const DeGanModel& model,
                                          std::span<const data::ImageSample> samples,
                                          std::size_t batch_size = 64);
/// Flattened pixels as representations (the identity-probe control).
RepresentationSet pixel_representations(std::span<const data::ImageSample> samples);

/// Text format: header lines `dim`, `rows`, `source_model`, `source_dataset`,
/// then `<y_e> <y_id> <train|test|-> <values...>` per row (hex floats).
void save_representations(const RepresentationSet& reps, const std::filesystem::path& path);
RepresentationSet load_representations(const std::filesystem::path& path);

enum class Target { Expression, Identity };
std::string to_string(Target t);
Target parse_target(const std::string& name);

struct MlpConfig {
    std::size_t hidden = 64;
    std::size_t epochs = 150;
    std::size_t batch_size = 32;
    double learning_rate = 1e-3;
    double leaky_slope = 0.2;
    std::uint64_t seed = 0;
};

/// Standardizes inputs with training-set statistics, then one leaky-ReLU
/// hidden layer and a linear output layer.
class MlpClassifier {
public:
    MlpClassifier() = default;
    MlpClassifier(std::size_t input_dim, std::size_t n_classes, const MlpConfig& config);

    std::size_t input_dim() const { return mean_.size(); }
    std::size_t num_classes() const { return n_classes_; }

    Tensor logits(const RepresentationSet& reps) const;
    std::vector<int> predict(const RepresentationSet& reps) const;

    nn::Network& network() { return net_; }
    std::vector<double>& feature_mean() { return mean_; }
    std::vector<double>& feature_scale() { return scale_; }

    void save(const std::filesystem::path& path, Target target) const;
    static MlpClassifier load(const std::filesystem::path& path, Target* target = nullptr);

private:
    Tensor standardized(const RepresentationSet& reps) const;

    nn::Network net_;
    std::vector<double> mean_, scale_;
    std::size_t n_classes_ = 0;
    MlpConfig config_;
};

struct TrainedMlp {
    MlpClassifier classifier;
    std::vector<double> loss_curve;  // mean loss per epoch
};

const std::vector<int>& labels_of(const RepresentationSet& reps, Target target);

/// n_classes = 0 infers it as max label + 1. Throws DegenerateDataError when
/// fewer than two classes are present.
TrainedMlp train_mlp(const RepresentationSet& reps, Target target, const MlpConfig& config,
                     std::size_t n_classes = 0);

struct EvalReport {
    std::string method = "DE-GAN";
    std::string setting = "Static";
    std::size_t samples = 0;
    double accuracy = 0.0;                     // percent
    std::vector<double> per_class_accuracy;    // percent; 0 for classes without samples
    std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
};

EvalReport evaluate_predictions(std::span<const int> predicted, std::span<const int> truth,
                                std::size_t n_classes);
EvalReport evaluate(const MlpClassifier& classifier, const RepresentationSet& reps, Target target);

/// key=value header followed by `confusion` rows.
std::string serialize_report(const EvalReport& report);
EvalReport parse_report(const std::string& text);

struct TableRow {
    std::string method;
    std::string setting;
    double accuracy = 0.0;
};

/// Method / Setting / Accuracy table with aligned columns.
std::string render_table(const std::string& title, std::span<const TableRow> rows);

struct ReferenceResult {
    std::string dataset;
    std::string method;
    double accuracy;
};

/// Published static-setting accuracies (percent) on CK+, MMI and Oulu-CASIA.
std::span<const ReferenceResult> reference_results();

/// Train indices and test indices: within each (identity, expression) cell
/// the last ceil(test_fraction * cell_size) rows go to test.
struct IndexSplit {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};
IndexSplit stratified_cell_split(const RepresentationSet& reps, double test_fraction);

/// Trains the shallow MLP to predict identity on the train rows and returns
/// test accuracy in percent.
double identity_probe(const RepresentationSet& reps, const IndexSplit& split,
                      const MlpConfig& config);

struct BaselineConfig {
    std::size_t steps = 2000;
    std::size_t batch_size = 32;
    nn::AdamConfig adam;
    std::uint64_t seed = 11;
};

struct BaselineResult {
    EvalReport report;
    std::vector<double> loss_curve;
};

/// Conv trunk of the discriminator plus a single expression head, trained
/// end to end on the training samples and evaluated on the test samples.
BaselineResult baseline_cnn(std::span<const data::ImageSample> train,
                            std::span<const data::ImageSample> test, const DeGanConfig& arch,
                            const BaselineConfig& config);

}  // namespace degan::fer
