#include "degan/nn.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <random>
#include <sstream>

#include "degan/errors.hpp"

namespace degan::nn {

Tensor init_weights(const Shape& shape, std::uint64_t seed, double stddev) {
    if (shape.empty()) throw ContractError("init_weights: empty shape");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, stddev);
    std::vector<double> values(shape_numel(shape));
    for (auto& v : values) v = normal(rng);
    return Tensor(shape, std::move(values), true);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
    std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

LayerSpec LayerSpec::dense(std::size_t units) {
    LayerSpec s;
    s.kind = LayerKind::Dense;
    s.units = units;
    return s;
}

LayerSpec LayerSpec::conv(std::size_t channels, std::size_t kernel, std::size_t stride,
                          std::size_t padding) {
    LayerSpec s;
    s.kind = LayerKind::Conv;
    s.units = channels;
    s.kernel = kernel;
    s.stride = stride;
    s.padding = padding;
    return s;
}

LayerSpec LayerSpec::conv_transpose(std::size_t channels, std::size_t kernel, std::size_t stride,
                                    std::size_t padding) {
    LayerSpec s = conv(channels, kernel, stride, padding);
    s.kind = LayerKind::ConvTranspose;
    return s;
}

LayerSpec LayerSpec::act(Activation a, double slope) {
    LayerSpec s;
    s.kind = LayerKind::Activation;
    s.activation = a;
    s.slope = slope;
    return s;
}

LayerSpec LayerSpec::reshape(Shape per_sample) {
    LayerSpec s;
    s.kind = LayerKind::Reshape;
    s.target_shape = std::move(per_sample);
    return s;
}

std::string to_string(LayerKind kind) {
    switch (kind) {
        case LayerKind::Dense: return "dense";
        case LayerKind::Conv: return "conv";
        case LayerKind::ConvTranspose: return "conv_transpose";
        case LayerKind::Activation: return "activation";
        case LayerKind::Reshape: return "reshape";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// Network

Network build_network(std::span<const LayerSpec> specs, const Shape& input_shape,
                      std::uint64_t seed, const std::string& name) {
    if (input_shape.empty()) throw DimensionError(name + ": empty input shape");
    Network net;
    net.input_shape_ = input_shape;
    Shape cur = input_shape;
    std::uint64_t stream = 0;
    for (std::size_t i = 0; i < specs.size(); ++i) {
        const LayerSpec& spec = specs[i];
        const std::string where =
            name + " layer " + std::to_string(i) + " (" + to_string(spec.kind) + ")";
        Network::Layer layer{spec, cur, {}, net.params_.size(), 0};
        const auto add_param = [&](const std::string& pname, const Shape& shape, bool is_bias) {
            Tensor t = is_bias ? Tensor(shape, 0.0, true)
                               : init_weights(shape, derive_seed(seed, stream));
            ++stream;
            net.params_.push_back({name + "." + std::to_string(i) + "." + pname, t});
            ++layer.n_params;
        };
        switch (spec.kind) {
            case LayerKind::Dense: {
                if (cur.size() != 1) {
                    throw DimensionError(where + ": expects a flat input, got " + shape_str(cur));
                }
                if (spec.units == 0) throw DimensionError(where + ": zero units");
                add_param("weight", {cur[0], spec.units}, false);
                add_param("bias", {spec.units}, true);
                cur = {spec.units};
                break;
            }
            case LayerKind::Conv:
            case LayerKind::ConvTranspose: {
                if (cur.size() != 3) {
                    throw DimensionError(where + ": expects C x H x W input, got " + shape_str(cur));
                }
                if (spec.units == 0 || spec.kernel == 0 || spec.stride == 0) {
                    throw DimensionError(where + ": channels, kernel and stride must be positive");
                }
                const std::size_t k = spec.kernel, s = spec.stride, p = spec.padding;
                std::size_t h = 0, w = 0;
                if (spec.kind == LayerKind::Conv) {
                    if (k > cur[1] + 2 * p || k > cur[2] + 2 * p) {
                        throw DimensionError(where + ": kernel " + std::to_string(k) +
                                             " larger than padded input " + shape_str(cur));
                    }
                    h = (cur[1] + 2 * p - k) / s + 1;
                    w = (cur[2] + 2 * p - k) / s + 1;
                    add_param("weight", {spec.units, cur[0], k, k}, false);
                } else {
                    const auto out = [&](std::size_t in) {
                        return static_cast<std::ptrdiff_t>((in - 1) * s + k) -
                               static_cast<std::ptrdiff_t>(2 * p);
                    };
                    if (out(cur[1]) <= 0 || out(cur[2]) <= 0) {
                        throw DimensionError(where + ": nonpositive output size from input " +
                                             shape_str(cur));
                    }
                    h = static_cast<std::size_t>(out(cur[1]));
                    w = static_cast<std::size_t>(out(cur[2]));
                    add_param("weight", {cur[0], spec.units, k, k}, false);
                }
                add_param("bias", {spec.units}, true);
                cur = {spec.units, h, w};
                break;
            }
            case LayerKind::Activation:
                break;
            case LayerKind::Reshape: {
                Shape target = spec.target_shape.empty() ? Shape{shape_numel(cur)} : spec.target_shape;
                if (shape_numel(target) != shape_numel(cur)) {
                    throw DimensionError(where + ": cannot reshape " + shape_str(cur) + " to " +
                                         shape_str(target));
                }
                cur = target;
                break;
            }
        }
        layer.out_shape = cur;
        net.layers_.push_back(std::move(layer));
    }
    net.output_shape_ = cur;
    return net;
}

Tensor Network::forward(const Tensor& x) const {
    const Shape& s = x.shape();
    if (s.size() != input_shape_.size() + 1 || !std::equal(input_shape_.begin(), input_shape_.end(),
                                                           s.begin() + 1)) {
        throw DimensionError("network expects batches of " + shape_str(input_shape_) + ", got " +
                             shape_str(s));
    }
    const std::size_t batch = s[0];
    Tensor h = x;
    for (const Layer& layer : layers_) {
        const LayerSpec& spec = layer.spec;
        switch (spec.kind) {
            case LayerKind::Dense:
                h = add_bias(matmul(h, params_[layer.first_param].value),
                             params_[layer.first_param + 1].value);
                break;
            case LayerKind::Conv:
                h = add_channel_bias(
                    conv2d(h, params_[layer.first_param].value, spec.stride, spec.padding),
                    params_[layer.first_param + 1].value);
                break;
            case LayerKind::ConvTranspose:
                h = add_channel_bias(
                    conv2d_transpose(h, params_[layer.first_param].value, spec.stride, spec.padding),
                    params_[layer.first_param + 1].value);
                break;
            case LayerKind::Activation:
                switch (spec.activation) {
                    case Activation::Identity: break;
                    case Activation::Relu: h = relu(h); break;
                    case Activation::LeakyRelu: h = leaky_relu(h, spec.slope); break;
                    case Activation::Tanh: h = degan::tanh(h); break;
                    case Activation::Sigmoid: h = sigmoid(h); break;
                }
                break;
            case LayerKind::Reshape: {
                Shape target{batch};
                target.insert(target.end(), layer.out_shape.begin(), layer.out_shape.end());
                h = reshape(h, std::move(target));
                break;
            }
        }
    }
    return h;
}

std::size_t Network::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.numel();
    return n;
}

std::vector<Tensor> Network::parameter_tensors() const {
    std::vector<Tensor> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p.value);
    return out;
}

void Network::zero_grad() {
    for (auto& p : params_) p.value.zero_grad();
}

// ---------------------------------------------------------------------------
// Adam

OptimizerState make_optimizer_state(std::span<const Tensor> params, const AdamConfig& config) {
    OptimizerState state;
    state.config = config;
    for (const auto& p : params) {
        state.m.emplace_back(p.numel(), 0.0);
        state.v.emplace_back(p.numel(), 0.0);
    }
    return state;
}

namespace {

void adam_update(std::span<double> param, std::span<const double> grad, std::vector<double>& m,
                 std::vector<double>& v, const AdamConfig& cfg, double bc1, double bc2) {
    for (std::size_t i = 0; i < param.size(); ++i) {
        const double g = grad.empty() ? 0.0 : grad[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        const double m_hat = m[i] / bc1;
        const double v_hat = v[i] / bc2;
        param[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    }
}

void check_state(std::size_t n, OptimizerState& state) {
    if (state.m.size() != n || state.v.size() != n) {
        throw DimensionError("adam_step: optimizer tracks " + std::to_string(state.m.size()) +
                             " parameters, got " + std::to_string(n));
    }
}

}  // namespace

void adam_step(std::span<Tensor> params, OptimizerState& state) {
    check_state(params.size(), state);
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto g = params[i].grad();
        if (state.m[i].size() != params[i].numel() || (!g.empty() && g.size() != params[i].numel())) {
            throw DimensionError("adam_step: moment/gradient size mismatch for parameter " +
                                 std::to_string(i) + " " + shape_str(params[i].shape()));
        }
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(state.config.beta1, t);
    const double bc2 = 1.0 - std::pow(state.config.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        adam_update(params[i].data(), params[i].grad(), state.m[i], state.v[i], state.config, bc1, bc2);
    }
}

void adam_step(std::span<std::span<double>> params, std::span<const std::span<const double>> grads,
               OptimizerState& state) {
    check_state(params.size(), state);
    if (grads.size() != params.size()) throw DimensionError("adam_step: params/grads count differ");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (grads[i].size() != params[i].size() || state.m[i].size() != params[i].size()) {
            throw DimensionError("adam_step: size mismatch for parameter " + std::to_string(i));
        }
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(state.config.beta1, t);
    const double bc2 = 1.0 - std::pow(state.config.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        adam_update(params[i], grads[i], state.m[i], state.v[i], state.config, bc1, bc2);
    }
}

// ---------------------------------------------------------------------------
// Checkpoints

void Checkpoint::set(const std::string& key, const std::string& value) {
    if (key.empty() || key.find_first_of(" \t\n=") != std::string::npos) {
        throw ContractError("checkpoint header key '" + key + "' must be a single token");
    }
    if (value.find('\n') != std::string::npos) {
        throw ContractError("checkpoint header value for '" + key + "' spans lines");
    }
    for (auto& [k, v] : header) {
        if (k == key) {
            v = value;
            return;
        }
    }
    header.emplace_back(key, value);
}

bool Checkpoint::has(const std::string& key) const {
    for (const auto& [k, v] : header) {
        if (k == key) return true;
    }
    return false;
}

const std::string& Checkpoint::get(const std::string& key) const {
    for (const auto& [k, v] : header) {
        if (k == key) return v;
    }
    throw IoError("checkpoint header has no key '" + key + "'");
}

const NamedArray& Checkpoint::array(const std::string& name) const {
    for (const auto& a : arrays) {
        if (a.name == name) return a;
    }
    throw IoError("checkpoint has no array '" + name + "'");
}

namespace {
constexpr const char* kMagic = "DEGAN-CHECKPOINT 1";
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    out << kMagic << '\n';
    for (const auto& [k, v] : ckpt.header) out << "meta " << k << ' ' << v << '\n';
    char buf[64];
    for (const auto& a : ckpt.arrays) {
        if (a.name.find_first_of(" \t\n") != std::string::npos) {
            throw ContractError("checkpoint array name '" + a.name + "' contains whitespace");
        }
        out << "array " << a.name << ' ' << a.shape.size();
        for (auto d : a.shape) out << ' ' << d;
        out << ' ' << a.values.size() << '\n';
        for (std::size_t i = 0; i < a.values.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%a", a.values[i]);
            out << buf << ((i + 1) % 8 == 0 || i + 1 == a.values.size() ? '\n' : ' ');
        }
    }
    out << "end\n";
    if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read checkpoint " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != kMagic) {
        throw IoError(path.string() + ": not a checkpoint file");
    }
    Checkpoint ckpt;
    bool ended = false;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string tag;
        ls >> tag;
        if (tag == "meta") {
            std::string key;
            ls >> key;
            std::string value;
            std::getline(ls, value);
            if (!value.empty() && value.front() == ' ') value.erase(0, 1);
            ckpt.header.emplace_back(key, value);
        } else if (tag == "array") {
            NamedArray a;
            std::size_t rank = 0, count = 0;
            ls >> a.name >> rank;
            a.shape.resize(rank);
            for (auto& d : a.shape) ls >> d;
            ls >> count;
            if (!ls || (rank > 0 && shape_numel(a.shape) != count)) {
                throw IoError(path.string() + ": malformed array header '" + line + "'");
            }
            a.values.resize(count);
            std::string tok;
            for (auto& v : a.values) {
                if (!(in >> tok)) throw IoError(path.string() + ": truncated array " + a.name);
                char* end = nullptr;
                v = std::strtod(tok.c_str(), &end);
                if (end == tok.c_str() || *end != '\0') {
                    throw IoError(path.string() + ": bad value '" + tok + "' in " + a.name);
                }
            }
            ckpt.arrays.push_back(std::move(a));
        } else if (tag == "end") {
            ended = true;
            break;
        } else {
            throw IoError(path.string() + ": unexpected line '" + line + "'");
        }
    }
    if (!ended) throw IoError(path.string() + ": truncated checkpoint");
    return ckpt;
}

void store_network(Checkpoint& ckpt, const std::string& prefix, const Network& net) {
    for (const auto& p : net.parameters()) {
        const auto d = p.value.data();
        ckpt.arrays.push_back({prefix + "/" + p.name, p.value.shape(), {d.begin(), d.end()}});
    }
}

void restore_network(const Checkpoint& ckpt, const std::string& prefix, Network& net) {
    for (auto& p : net.parameters()) {
        const NamedArray& a = ckpt.array(prefix + "/" + p.name);
        if (a.shape != p.value.shape()) {
            throw DimensionError("checkpoint array " + a.name + " has shape " + shape_str(a.shape) +
                                 ", network expects " + shape_str(p.value.shape()));
        }
        std::copy(a.values.begin(), a.values.end(), p.value.data().begin());
    }
}

void store_optimizer(Checkpoint& ckpt, const std::string& prefix, const Network& net,
                     const OptimizerState& state) {
    store_optimizer(ckpt, prefix, net.parameters(), state);
}

void store_optimizer(Checkpoint& ckpt, const std::string& prefix,
                     std::span<const Parameter> params, const OptimizerState& state) {
    if (state.m.size() != params.size()) {
        throw DimensionError("store_optimizer: state does not match parameter list");
    }
    char buf[64];
    ckpt.set(prefix + ".adam_step", std::to_string(state.step));
    const std::pair<const char*, double> consts[] = {{"lr", state.config.learning_rate},
                                                     {"beta1", state.config.beta1},
                                                     {"beta2", state.config.beta2},
                                                     {"epsilon", state.config.epsilon}};
    for (const auto& [k, v] : consts) {
        std::snprintf(buf, sizeof buf, "%a", v);
        ckpt.set(prefix + ".adam_" + k, buf);
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const Shape& s = params[i].value.shape();
        ckpt.arrays.push_back({prefix + "/adam_m/" + params[i].name, s, state.m[i]});
        ckpt.arrays.push_back({prefix + "/adam_v/" + params[i].name, s, state.v[i]});
    }
}

void restore_optimizer(const Checkpoint& ckpt, const std::string& prefix,
                       std::span<const Parameter> params, OptimizerState& state) {
    const auto num = [&](const char* k) { return std::strtod(ckpt.get(prefix + ".adam_" + k).c_str(), nullptr); };
    state.step = std::stoull(ckpt.get(prefix + ".adam_step"));
    state.config = {num("lr"), num("beta1"), num("beta2"), num("epsilon")};
    state.m.clear();
    state.v.clear();
    for (const auto& p : params) {
        const auto& m = ckpt.array(prefix + "/adam_m/" + p.name);
        const auto& v = ckpt.array(prefix + "/adam_v/" + p.name);
        if (m.values.size() != p.value.numel() || v.values.size() != p.value.numel()) {
            throw DimensionError("optimizer moments for " + p.name + " have the wrong size");
        }
        state.m.push_back(m.values);
        state.v.push_back(v.values);
    }
}

}  // namespace degan::nn
