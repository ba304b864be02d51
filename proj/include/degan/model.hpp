#pragma once

// The DE-GAN networks: encoder G_en, decoder G_de and the multi-task
// discriminator D with an expression head over N^e + 1 classes (the last one
// is "fake") and an identity head over N^d classes.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "degan/nn.hpp"
#include "degan/tensor.hpp"

namespace degan {

/// Number of generator updates per train_step: k_early before
/// switch_fraction * total_steps completed steps, k_late afterwards.
struct KSchedule {
    std::size_t total_steps = 2000;
    double switch_fraction = 0.5;
    std::size_t k_early = 1;
    std::size_t k_late = 2;

    std::size_t k_at(std::uint64_t completed_steps) const;
};

struct DeGanConfig {
    std::size_t n_expr = 6;
    std::size_t n_id = 8;
    std::size_t noise_dim = 50;
    std::size_t rep_dim = 350;
    std::size_t image_size = 32;
    std::vector<std::size_t> conv_channels{16, 32, 64};
    std::size_t kernel = 4;
    std::size_t disc_hidden = 128;
    double leaky_slope = 0.2;
    KSchedule schedule;
    double recon_weight = 0.0;
    nn::AdamConfig adam;
    std::uint64_t seed = 7;

    void validate() const;
};

class IdentityCode {
public:
    static IdentityCode one_hot(std::size_t index, std::size_t n_id);
    /// Throws ContractError unless exactly one entry is 1 and the rest are 0.
    explicit IdentityCode(std::vector<double> values);

    std::size_t index() const { return index_; }
    std::size_t size() const { return values_.size(); }
    std::span<const double> values() const { return values_; }

private:
    std::vector<double> values_;
    std::size_t index_ = 0;
};

struct NoiseVector {
    std::vector<double> values;
    static NoiseVector sample(std::size_t dim, std::mt19937_64& rng);
};

struct ExpressionRepresentation {
    std::vector<double> values;
};

/// Batched logits; rows are samples.
struct DiscriminatorOutput {
    Tensor expr_logits;  // N x (N^e + 1)
    Tensor id_logits;    // N x N^d
};

/// A loss together with its separately evaluated terms.
struct LossTerms {
    Tensor total;
    double expr_term = 0.0;
    double id_term = 0.0;
    double fake_term = 0.0;
    double recon_term = 0.0;
};

/// CE(expr head, y_e) + CE(identity head, y_idx) on generated images.
/// The fake class is not a valid y_e.
LossTerms generator_loss(const DiscriminatorOutput& fake, std::span<const int> y_e,
                         std::span<const int> y_idx);

/// CE(real expr, y_e) + CE(real identity, y_id) + CE(fake expr, fake class).
/// There is no identity term for fake images.
LossTerms discriminator_loss(const DiscriminatorOutput& real, std::span<const int> y_e,
                             std::span<const int> y_id, const DiscriminatorOutput& fake);

struct TrainBatch {
    Tensor images;  // N x 1 x S x S, pixels in [-1, 1]
    std::vector<int> y_e;
    std::vector<int> y_id;
};

/// Renders the ground-truth target image batch for (y_e, y_idx) pairs; used
/// only by the optional L1 reconstruction term.
using PairedTargetFn = std::function<Tensor(std::span<const int> y_e, std::span<const int> y_idx)>;

struct TrainOptions {
    /// Identities that y_idx is drawn from; empty means all N^d.
    std::vector<int> identity_pool;
    PairedTargetFn paired_target;
};

struct StepReport {
    std::uint64_t step = 0;  // 1-based index of the step just taken
    double d_loss = 0.0;
    double g_loss = 0.0;
    std::size_t k = 0;
};

class DeGanModel {
public:
    explicit DeGanModel(DeGanConfig config);

    const DeGanConfig& config() const { return config_; }
    Shape image_shape() const { return {1, config_.image_size, config_.image_size}; }

    Tensor encode(const Tensor& images) const;
    /// Concatenates (f_exp, I, z) per row and runs the decoder.
    Tensor decode(const Tensor& reps, const Tensor& codes, const Tensor& noise) const;
    Tensor generate(const Tensor& images, const Tensor& codes, const Tensor& noise) const;
    DiscriminatorOutput discriminate(const Tensor& images) const;

    ExpressionRepresentation encode(std::span<const double> image) const;
    std::vector<double> decode(const ExpressionRepresentation& rep, const IdentityCode& code,
                               const NoiseVector& z) const;
    /// decode(encode(image), one_hot(target_id), z); needs a trained model.
    std::vector<double> transfer_expression(std::span<const double> image, std::size_t target_id,
                                            const NoiseVector& z) const;

    /// One discriminator update followed by k generator updates.
    StepReport train_step(const TrainBatch& batch, std::mt19937_64& rng,
                          const TrainOptions& options = {});

    std::uint64_t steps_taken() const { return steps_; }
    bool trained() const { return steps_ > 0; }
    std::uint64_t generator_updates() const { return g_updates_; }
    std::uint64_t discriminator_updates() const { return d_updates_; }

    nn::Network& encoder() { return encoder_; }
    nn::Network& decoder() { return decoder_; }
    nn::Network& disc_trunk() { return disc_trunk_; }
    nn::Network& expr_head() { return expr_head_; }
    nn::Network& id_head() { return id_head_; }
    const nn::Network& encoder() const { return encoder_; }

    std::vector<nn::Parameter> generator_parameters() const;
    std::vector<nn::Parameter> discriminator_parameters() const;
    void zero_grad();

    const nn::OptimizerState& generator_optimizer() const { return g_opt_; }
    const nn::OptimizerState& discriminator_optimizer() const { return d_opt_; }

    nn::Checkpoint to_checkpoint() const;
    static DeGanModel from_checkpoint(const nn::Checkpoint& ckpt);
    void save(const std::filesystem::path& path) const;
    static DeGanModel load(const std::filesystem::path& path);

private:
    void check_images(const Tensor& images, const char* op) const;

    DeGanConfig config_;
    nn::Network encoder_, decoder_, disc_trunk_, expr_head_, id_head_;
    nn::OptimizerState g_opt_, d_opt_;
    std::uint64_t steps_ = 0;
    std::uint64_t g_updates_ = 0;
    std::uint64_t d_updates_ = 0;
};

/// Default layer stacks, exposed for the baseline CNN and for tests.
std::vector<nn::LayerSpec> encoder_specs(const DeGanConfig& config);
std::vector<nn::LayerSpec> decoder_specs(const DeGanConfig& config);
std::vector<nn::LayerSpec> discriminator_trunk_specs(const DeGanConfig& config);

/// Rows of one-hot identity codes.
Tensor one_hot_rows(std::span<const int> ids, std::size_t n_id);

}  // namespace degan
