#include "degan/model.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "degan/errors.hpp"

namespace degan {

using nn::Activation;
using nn::LayerSpec;

std::size_t KSchedule::k_at(std::uint64_t completed_steps) const {
    const double boundary = switch_fraction * static_cast<double>(total_steps);
    return static_cast<double>(completed_steps) < boundary ? k_early : k_late;
}

namespace {

// Spatial sizes after each strided conv: s -> (s + 2 - k) / 2 + 1.
std::vector<std::size_t> encoder_sizes(const DeGanConfig& c) {
    std::vector<std::size_t> sizes{c.image_size};
    for (std::size_t i = 0; i < c.conv_channels.size(); ++i) {
        const std::size_t s = sizes.back();
        if (s + 2 < c.kernel) {
            throw DimensionError("image size " + std::to_string(c.image_size) +
                                 " too small for " + std::to_string(c.conv_channels.size()) +
                                 " stride-2 convolutions with kernel " + std::to_string(c.kernel));
        }
        sizes.push_back((s + 2 - c.kernel) / 2 + 1);
    }
    return sizes;
}

std::vector<LayerSpec> conv_trunk(const DeGanConfig& c) {
    std::vector<LayerSpec> specs;
    for (auto ch : c.conv_channels) {
        specs.push_back(LayerSpec::conv(ch, c.kernel, 2, 1));
        specs.push_back(LayerSpec::act(Activation::LeakyRelu, c.leaky_slope));
    }
    specs.push_back(LayerSpec::flatten());
    return specs;
}

void check_labels(std::span<const int> labels, std::size_t limit, const char* what) {
    for (int v : labels) {
        if (v < 0 || static_cast<std::size_t>(v) >= limit) {
            throw LabelError(std::string(what) + " label " + std::to_string(v) + " outside [0, " +
                             std::to_string(limit) + ")");
        }
    }
}

std::vector<Tensor> tensors_of(const std::vector<nn::Parameter>& params) {
    std::vector<Tensor> out;
    out.reserve(params.size());
    for (const auto& p : params) out.push_back(p.value);
    return out;
}

void append(std::vector<nn::Parameter>& dst, const nn::Network& net) {
    dst.insert(dst.end(), net.parameters().begin(), net.parameters().end());
}

std::string hex(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%a", v);
    return buf;
}

}  // namespace

void DeGanConfig::validate() const {
    if (n_expr < 2) throw ContractError("n_expr must be at least 2");
    if (n_id < 2) throw ContractError("n_id must be at least 2");
    if (noise_dim == 0 || rep_dim == 0 || image_size == 0 || kernel == 0 || disc_hidden == 0) {
        throw ContractError("noise_dim, rep_dim, image_size, kernel and disc_hidden must be positive");
    }
    if (conv_channels.empty()) throw ContractError("conv_channels must not be empty");
    if (schedule.k_early == 0 || schedule.k_late == 0) {
        throw ContractError("generator updates per step must be positive");
    }
    if (recon_weight < 0.0) throw ContractError("recon_weight must be nonnegative");
    encoder_sizes(*this);
}

std::vector<LayerSpec> encoder_specs(const DeGanConfig& c) {
    auto specs = conv_trunk(c);
    specs.push_back(LayerSpec::dense(c.rep_dim));
    return specs;
}

std::vector<LayerSpec> decoder_specs(const DeGanConfig& c) {
    const auto sizes = encoder_sizes(c);
    const std::size_t L = c.conv_channels.size();
    std::vector<LayerSpec> specs;
    specs.push_back(LayerSpec::dense(c.conv_channels.back() * sizes[L] * sizes[L]));
    specs.push_back(LayerSpec::act(Activation::LeakyRelu, c.leaky_slope));
    specs.push_back(LayerSpec::reshape({c.conv_channels.back(), sizes[L], sizes[L]}));
    for (std::size_t i = L; i > 0; --i) {
        // Undo the stride-2 conv that mapped sizes[i-1] -> sizes[i].
        const std::size_t kernel = sizes[i - 1] + 2 - 2 * (sizes[i] - 1);
        const std::size_t out_ch = i > 1 ? c.conv_channels[i - 2] : 1;
        specs.push_back(LayerSpec::conv_transpose(out_ch, kernel, 2, 1));
        specs.push_back(i > 1 ? LayerSpec::act(Activation::LeakyRelu, c.leaky_slope)
                              : LayerSpec::act(Activation::Tanh));
    }
    return specs;
}

std::vector<LayerSpec> discriminator_trunk_specs(const DeGanConfig& c) {
    auto specs = conv_trunk(c);
    specs.push_back(LayerSpec::dense(c.disc_hidden));
    specs.push_back(LayerSpec::act(Activation::LeakyRelu, c.leaky_slope));
    return specs;
}

Tensor one_hot_rows(std::span<const int> ids, std::size_t n_id) {
    check_labels(ids, n_id, "identity");
    Tensor out({ids.size(), n_id}, 0.0);
    for (std::size_t r = 0; r < ids.size(); ++r) out.data()[r * n_id + ids[r]] = 1.0;
    return out;
}

// ---------------------------------------------------------------------------
// Value types

IdentityCode IdentityCode::one_hot(std::size_t index, std::size_t n_id) {
    if (index >= n_id) {
        throw LabelError("identity index " + std::to_string(index) + " outside [0, " +
                         std::to_string(n_id) + ")");
    }
    std::vector<double> v(n_id, 0.0);
    v[index] = 1.0;
    return IdentityCode(std::move(v));
}

IdentityCode::IdentityCode(std::vector<double> values) : values_(std::move(values)) {
    std::size_t ones = 0;
    for (std::size_t i = 0; i < values_.size(); ++i) {
        if (values_[i] == 1.0) {
            ++ones;
            index_ = i;
        } else if (values_[i] != 0.0) {
            throw ContractError("identity code entries must be 0 or 1");
        }
    }
    if (ones != 1) throw ContractError("identity code must have exactly one entry equal to 1");
}

NoiseVector NoiseVector::sample(std::size_t dim, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    NoiseVector z;
    z.values.resize(dim);
    for (auto& v : z.values) v = normal(rng);
    return z;
}

// ---------------------------------------------------------------------------
// Losses

LossTerms generator_loss(const DiscriminatorOutput& fake, std::span<const int> y_e,
                         std::span<const int> y_idx) {
    const std::size_t real_classes = fake.expr_logits.dim(1) - 1;
    check_labels(y_e, real_classes, "expression");
    check_labels(y_idx, fake.id_logits.dim(1), "target identity");
    auto expr = softmax_cross_entropy(fake.expr_logits, y_e);
    auto id = softmax_cross_entropy(fake.id_logits, y_idx);
    LossTerms out;
    out.expr_term = expr.loss.item();
    out.id_term = id.loss.item();
    out.total = add(expr.loss, id.loss);
    return out;
}

LossTerms discriminator_loss(const DiscriminatorOutput& real, std::span<const int> y_e,
                             std::span<const int> y_id, const DiscriminatorOutput& fake) {
    const std::size_t real_classes = real.expr_logits.dim(1) - 1;
    check_labels(y_e, real_classes, "expression");
    check_labels(y_id, real.id_logits.dim(1), "identity");
    const std::vector<int> fake_class(fake.expr_logits.dim(0), static_cast<int>(real_classes));
    auto expr = softmax_cross_entropy(real.expr_logits, y_e);
    auto id = softmax_cross_entropy(real.id_logits, y_id);
    auto fk = softmax_cross_entropy(fake.expr_logits, fake_class);
    LossTerms out;
    out.expr_term = expr.loss.item();
    out.id_term = id.loss.item();
    out.fake_term = fk.loss.item();
    out.total = add(add(expr.loss, id.loss), fk.loss);
    return out;
}

// ---------------------------------------------------------------------------
// Model

DeGanModel::DeGanModel(DeGanConfig config) : config_(std::move(config)) {
    config_.validate();
    const auto& c = config_;
    const auto enc = encoder_specs(c);
    const auto dec = decoder_specs(c);
    const auto trunk = discriminator_trunk_specs(c);
    const LayerSpec expr_head[] = {LayerSpec::dense(c.n_expr + 1)};
    const LayerSpec id_head[] = {LayerSpec::dense(c.n_id)};
    encoder_ = nn::build_network(enc, image_shape(), nn::derive_seed(c.seed, 1), "encoder");
    decoder_ = nn::build_network(dec, {c.rep_dim + c.n_id + c.noise_dim},
                                 nn::derive_seed(c.seed, 2), "decoder");
    disc_trunk_ = nn::build_network(trunk, image_shape(), nn::derive_seed(c.seed, 3), "disc");
    expr_head_ = nn::build_network(expr_head, {c.disc_hidden}, nn::derive_seed(c.seed, 4), "expr_head");
    id_head_ = nn::build_network(id_head, {c.disc_hidden}, nn::derive_seed(c.seed, 5), "id_head");
    if (decoder_.output_shape() != image_shape()) {
        throw DimensionError("decoder produces " + shape_str(decoder_.output_shape()) +
                             ", expected " + shape_str(image_shape()));
    }
    g_opt_ = nn::make_optimizer_state(tensors_of(generator_parameters()), c.adam);
    d_opt_ = nn::make_optimizer_state(tensors_of(discriminator_parameters()), c.adam);
}

void DeGanModel::check_images(const Tensor& images, const char* op) const {
    const Shape want = image_shape();
    const Shape& s = images.shape();
    if (s.size() != 4 || !std::equal(want.begin(), want.end(), s.begin() + 1)) {
        throw DimensionError(std::string(op) + ": expected N x " + shape_str(want) + " images, got " +
                             shape_str(s));
    }
}

Tensor DeGanModel::encode(const Tensor& images) const {
    check_images(images, "encode");
    return encoder_.forward(images);
}

Tensor DeGanModel::decode(const Tensor& reps, const Tensor& codes, const Tensor& noise) const {
    const auto& c = config_;
    const std::size_t n = reps.ndim() == 2 ? reps.dim(0) : 0;
    if (reps.ndim() != 2 || reps.dim(1) != c.rep_dim || codes.ndim() != 2 ||
        codes.dim(0) != n || codes.dim(1) != c.n_id || noise.ndim() != 2 || noise.dim(0) != n ||
        noise.dim(1) != c.noise_dim) {
        throw DimensionError("decode: got reps " + shape_str(reps.shape()) + ", codes " +
                             shape_str(codes.shape()) + ", noise " + shape_str(noise.shape()));
    }
    for (std::size_t r = 0; r < n; ++r) {
        IdentityCode(std::vector<double>(codes.data().begin() + r * c.n_id,
                                         codes.data().begin() + (r + 1) * c.n_id));
    }
    const Tensor parts[] = {reps, codes, noise};
    return decoder_.forward(concat_columns(parts));
}

Tensor DeGanModel::generate(const Tensor& images, const Tensor& codes, const Tensor& noise) const {
    return decode(encode(images), codes, noise);
}

DiscriminatorOutput DeGanModel::discriminate(const Tensor& images) const {
    check_images(images, "discriminate");
    const Tensor h = disc_trunk_.forward(images);
    return {expr_head_.forward(h), id_head_.forward(h)};
}

ExpressionRepresentation DeGanModel::encode(std::span<const double> image) const {
    const Shape s = image_shape();
    if (image.size() != shape_numel(s)) {
        throw DimensionError("encode: image has " + std::to_string(image.size()) + " pixels, expected " +
                             std::to_string(shape_numel(s)));
    }
    Shape batched{1};
    batched.insert(batched.end(), s.begin(), s.end());
    const Tensor out = encode(Tensor(batched, std::vector<double>(image.begin(), image.end())));
    return {{out.data().begin(), out.data().end()}};
}

std::vector<double> DeGanModel::decode(const ExpressionRepresentation& rep, const IdentityCode& code,
                                       const NoiseVector& z) const {
    const Tensor out = decode(Tensor({1, rep.values.size()}, rep.values),
                              Tensor({1, code.size()}, {code.values().begin(), code.values().end()}),
                              Tensor({1, z.values.size()}, z.values));
    return {out.data().begin(), out.data().end()};
}

std::vector<double> DeGanModel::transfer_expression(std::span<const double> image,
                                                    std::size_t target_id,
                                                    const NoiseVector& z) const {
    if (!trained()) throw StateError("transfer_expression: model has not been trained");
    return decode(encode(image), IdentityCode::one_hot(target_id, config_.n_id), z);
}

std::vector<nn::Parameter> DeGanModel::generator_parameters() const {
    std::vector<nn::Parameter> out;
    append(out, encoder_);
    append(out, decoder_);
    return out;
}

std::vector<nn::Parameter> DeGanModel::discriminator_parameters() const {
    std::vector<nn::Parameter> out;
    append(out, disc_trunk_);
    append(out, expr_head_);
    append(out, id_head_);
    return out;
}

void DeGanModel::zero_grad() {
    for (auto* net : {&encoder_, &decoder_, &disc_trunk_, &expr_head_, &id_head_}) net->zero_grad();
}

StepReport DeGanModel::train_step(const TrainBatch& batch, std::mt19937_64& rng,
                                  const TrainOptions& options) {
    const auto& c = config_;
    check_images(batch.images, "train_step");
    const std::size_t n = batch.images.dim(0);
    if (n == 0 || batch.y_e.size() != n || batch.y_id.size() != n) {
        throw ContractError("train_step: batch needs one expression and identity label per image");
    }
    check_labels(batch.y_e, c.n_expr, "expression");
    check_labels(batch.y_id, c.n_id, "identity");
    check_labels(options.identity_pool, c.n_id, "identity pool");
    if (c.recon_weight > 0.0 && !options.paired_target) {
        throw ContractError("train_step: recon_weight > 0 needs paired targets");
    }

    // Target identities and noise are drawn once and shared by every update of this step.
    std::vector<int> y_idx(n);
    if (options.identity_pool.empty()) {
        std::uniform_int_distribution<int> pick(0, static_cast<int>(c.n_id) - 1);
        for (auto& v : y_idx) v = pick(rng);
    } else {
        std::uniform_int_distribution<std::size_t> pick(0, options.identity_pool.size() - 1);
        for (auto& v : y_idx) v = options.identity_pool[pick(rng)];
    }
    const Tensor codes = one_hot_rows(y_idx, c.n_id);
    Tensor noise({n, c.noise_dim});
    {
        std::normal_distribution<double> normal(0.0, 1.0);
        for (auto& v : noise.data()) v = normal(rng);
    }
    Tensor target;
    if (c.recon_weight > 0.0) target = options.paired_target(batch.y_e, y_idx);

    const auto g_params = tensors_of(generator_parameters());
    const auto d_params = tensors_of(discriminator_parameters());
    std::vector<Tensor> g_mut(g_params), d_mut(d_params);

    StepReport report;
    report.k = c.schedule.k_at(steps_);

    // Discriminator: the fake batch is detached, so no gradient reaches G.
    {
        const Tensor fake = generate(batch.images, codes, noise).detach();
        zero_grad();
        const LossTerms d_loss =
            discriminator_loss(discriminate(batch.images), batch.y_e, batch.y_id, discriminate(fake));
        d_loss.total.backward();
        nn::adam_step(d_mut, d_opt_);
        ++d_updates_;
        report.d_loss = d_loss.total.item();
    }

    for (std::size_t j = 0; j < report.k; ++j) {
        zero_grad();
        const Tensor fake = generate(batch.images, codes, noise);
        LossTerms g_loss = generator_loss(discriminate(fake), batch.y_e, y_idx);
        Tensor total = g_loss.total;
        if (c.recon_weight > 0.0) total = add(total, scale(l1_loss(fake, target), c.recon_weight));
        total.backward();
        nn::adam_step(g_mut, g_opt_);
        ++g_updates_;
        report.g_loss = total.item();
    }
    zero_grad();
    report.step = ++steps_;
    return report;
}

// ---------------------------------------------------------------------------
// Checkpoints

nn::Checkpoint DeGanModel::to_checkpoint() const {
    const auto& c = config_;
    nn::Checkpoint ck;
    ck.set("format", "degan-model");
    ck.set("n_expr", std::to_string(c.n_expr));
    ck.set("n_id", std::to_string(c.n_id));
    ck.set("noise_dim", std::to_string(c.noise_dim));
    ck.set("rep_dim", std::to_string(c.rep_dim));
    ck.set("image_size", std::to_string(c.image_size));
    ck.set("step", std::to_string(steps_));
    ck.set("k_total_steps", std::to_string(c.schedule.total_steps));
    ck.set("k_switch_fraction", hex(c.schedule.switch_fraction));
    ck.set("k_early", std::to_string(c.schedule.k_early));
    ck.set("k_late", std::to_string(c.schedule.k_late));
    std::string channels;
    for (std::size_t i = 0; i < c.conv_channels.size(); ++i) {
        channels += (i ? "," : "") + std::to_string(c.conv_channels[i]);
    }
    ck.set("conv_channels", channels);
    ck.set("kernel", std::to_string(c.kernel));
    ck.set("disc_hidden", std::to_string(c.disc_hidden));
    ck.set("leaky_slope", hex(c.leaky_slope));
    ck.set("recon_weight", hex(c.recon_weight));
    ck.set("seed", std::to_string(c.seed));
    ck.set("generator_updates", std::to_string(g_updates_));
    ck.set("discriminator_updates", std::to_string(d_updates_));
    nn::store_network(ck, "encoder", encoder_);
    nn::store_network(ck, "decoder", decoder_);
    nn::store_network(ck, "disc", disc_trunk_);
    nn::store_network(ck, "disc", expr_head_);
    nn::store_network(ck, "disc", id_head_);
    nn::store_optimizer(ck, "g_opt", generator_parameters(), g_opt_);
    nn::store_optimizer(ck, "d_opt", discriminator_parameters(), d_opt_);
    return ck;
}

DeGanModel DeGanModel::from_checkpoint(const nn::Checkpoint& ck) {
    if (!ck.has("format") || ck.get("format") != "degan-model") {
        throw IoError("checkpoint does not hold a DE-GAN model");
    }
    const auto size = [&](const char* k) { return static_cast<std::size_t>(std::stoull(ck.get(k))); };
    const auto real = [&](const char* k) { return std::strtod(ck.get(k).c_str(), nullptr); };
    DeGanConfig c;
    c.n_expr = size("n_expr");
    c.n_id = size("n_id");
    c.noise_dim = size("noise_dim");
    c.rep_dim = size("rep_dim");
    c.image_size = size("image_size");
    c.schedule.total_steps = size("k_total_steps");
    c.schedule.switch_fraction = real("k_switch_fraction");
    c.schedule.k_early = size("k_early");
    c.schedule.k_late = size("k_late");
    c.conv_channels.clear();
    std::istringstream chs(ck.get("conv_channels"));
    for (std::string tok; std::getline(chs, tok, ',');) c.conv_channels.push_back(std::stoull(tok));
    c.kernel = size("kernel");
    c.disc_hidden = size("disc_hidden");
    c.leaky_slope = real("leaky_slope");
    c.recon_weight = real("recon_weight");
    c.seed = std::stoull(ck.get("seed"));

    DeGanModel model(c);
    nn::restore_network(ck, "encoder", model.encoder_);
    nn::restore_network(ck, "decoder", model.decoder_);
    nn::restore_network(ck, "disc", model.disc_trunk_);
    nn::restore_network(ck, "disc", model.expr_head_);
    nn::restore_network(ck, "disc", model.id_head_);
    nn::restore_optimizer(ck, "g_opt", model.generator_parameters(), model.g_opt_);
    nn::restore_optimizer(ck, "d_opt", model.discriminator_parameters(), model.d_opt_);
    model.config_.adam = model.g_opt_.config;
    model.steps_ = std::stoull(ck.get("step"));
    model.g_updates_ = std::stoull(ck.get("generator_updates"));
    model.d_updates_ = std::stoull(ck.get("discriminator_updates"));
    return model;
}

void DeGanModel::save(const std::filesystem::path& path) const {
    nn::save_checkpoint(to_checkpoint(), path);
}

DeGanModel DeGanModel::load(const std::filesystem::path& path) {
    return from_checkpoint(nn::load_checkpoint(path));
}

}  // namespace degan
