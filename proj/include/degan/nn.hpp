#pragma once

// Layers, weight initialization, Adam, and the checkpoint container.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "degan/tensor.hpp"

namespace degan::nn {

inline constexpr double kInitStddev = 0.02;

/// i.i.d. normal(0, 0.02) samples from a seeded mt19937_64.
Tensor init_weights(const Shape& shape, std::uint64_t seed, double stddev = kInitStddev);

/// Mixes a base seed with a stream index (splitmix64) so that every
/// parameter of every network gets an independent, reproducible stream.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

enum class LayerKind { Dense, Conv, ConvTranspose, Activation, Reshape };
enum class Activation { Identity, Relu, LeakyRelu, Tanh, Sigmoid };

struct LayerSpec {
    LayerKind kind = LayerKind::Activation;
    std::size_t units = 0;  // dense outputs or output channels
    std::size_t kernel = 0;
    std::size_t stride = 1;
    std::size_t padding = 0;
    Activation activation = Activation::Identity;
    double slope = 0.2;
    Shape target_shape;     // per-sample shape for Reshape; empty means flatten

    static LayerSpec dense(std::size_t units);
    static LayerSpec conv(std::size_t channels, std::size_t kernel, std::size_t stride,
                          std::size_t padding);
    static LayerSpec conv_transpose(std::size_t channels, std::size_t kernel, std::size_t stride,
                                    std::size_t padding);
    static LayerSpec act(Activation a, double slope = 0.2);
    static LayerSpec reshape(Shape per_sample);
    static LayerSpec flatten() { return reshape({}); }
};

std::string to_string(LayerKind kind);

struct Parameter {
    std::string name;
    Tensor value;
};

/// A feed-forward stack. Shapes are per sample; forward() takes a leading
/// batch dimension.
class Network {
public:
    Network() = default;

    Tensor forward(const Tensor& x) const;

    const Shape& input_shape() const { return input_shape_; }
    const Shape& output_shape() const { return output_shape_; }
    std::size_t parameter_count() const;

    std::vector<Parameter>& parameters() { return params_; }
    const std::vector<Parameter>& parameters() const { return params_; }
    std::vector<Tensor> parameter_tensors() const;
    void zero_grad();

private:
    struct Layer {
        LayerSpec spec;
        Shape in_shape, out_shape;
        std::size_t first_param = 0;  // index of weight, bias follows
        std::size_t n_params = 0;
    };

    friend Network build_network(std::span<const LayerSpec>, const Shape&, std::uint64_t,
                                 const std::string&);

    Shape input_shape_, output_shape_;
    std::vector<Layer> layers_;
    std::vector<Parameter> params_;
};

/// Validates shapes layer by layer and initializes parameters; throws
/// DimensionError naming the offending layer.
Network build_network(std::span<const LayerSpec> specs, const Shape& input_shape,
                      std::uint64_t seed, const std::string& name = "net");

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
    double learning_rate = 1e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct OptimizerState {
    AdamConfig config;
    std::uint64_t step = 0;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
};

OptimizerState make_optimizer_state(std::span<const Tensor> params, const AdamConfig& config);

/// One bias-corrected Adam update using each tensor's accumulated gradient
/// (a tensor without a gradient is treated as having a zero one).
void adam_step(std::span<Tensor> params, OptimizerState& state);

/// Same update on raw arrays, with explicit gradients.
void adam_step(std::span<std::span<double>> params, std::span<const std::span<const double>> grads,
               OptimizerState& state);

// ---------------------------------------------------------------------------
// Checkpoints

struct NamedArray {
    std::string name;
    Shape shape;
    std::vector<double> values;
};

/// Ordered header plus named arrays. Values are written as hexadecimal
/// floating point so a save/load round trip is exact.
struct Checkpoint {
    std::vector<std::pair<std::string, std::string>> header;
    std::vector<NamedArray> arrays;

    void set(const std::string& key, const std::string& value);
    const std::string& get(const std::string& key) const;
    bool has(const std::string& key) const;
    const NamedArray& array(const std::string& name) const;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Parameters under "<prefix>/<name>", optimizer moments under
/// "<prefix>/adam_m/<name>" and "<prefix>/adam_v/<name>".
void store_network(Checkpoint& ckpt, const std::string& prefix, const Network& net);
void restore_network(const Checkpoint& ckpt, const std::string& prefix, Network& net);
void store_optimizer(Checkpoint& ckpt, const std::string& prefix, const Network& net,
                     const OptimizerState& state);
void store_optimizer(Checkpoint& ckpt, const std::string& prefix,
                     std::span<const Parameter> params, const OptimizerState& state);
void restore_optimizer(const Checkpoint& ckpt, const std::string& prefix,
                       std::span<const Parameter> params, OptimizerState& state);

}  // namespace degan::nn
