#pragma once

// Dense double-precision tensors with define-by-run reverse-mode autodiff.
//
// A Tensor is a shared handle: copying it aliases the same storage, which is
// what lets an optimizer update parameters that a network also holds. Use
// detach() for an independent deep copy. A graph is built only when at least
// one input requires a gradient, and is confined to the thread that built it.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace degan {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct TensorImpl;

struct GradFn {
    std::string op;
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    // Reads the output gradient and accumulates into the inputs that require
    // a gradient. Input grad buffers are allocated before this is called.
    std::function<void(std::span<const double> out_grad)> backward;
};

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
    std::shared_ptr<GradFn> grad_fn;
};

}  // namespace detail

class Tensor {
public:
    Tensor();
    explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false);
    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

    static Tensor scalar(double value, bool requires_grad = false);

    const Shape& shape() const;
    std::size_t ndim() const { return shape().size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const;

    std::span<double> data();
    std::span<const double> data() const;
    double item() const;

    /// Empty until a backward pass reaches this tensor.
    std::span<const double> grad() const;
    bool has_grad() const;
    void zero_grad();

    bool requires_grad() const;
    Tensor& set_requires_grad(bool on);
    bool is_leaf() const;
    std::string op_name() const;

    /// Deep copy with no history.
    Tensor detach() const;

    /// Reverse-mode sweep from a scalar. Leaf gradients accumulate across
    /// calls; intermediate gradients are recomputed each time.
    void backward() const;

    bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

private:
    explicit Tensor(std::shared_ptr<detail::TensorImpl> impl);
    std::shared_ptr<detail::TensorImpl> impl_;

    friend struct TensorAccess;
};

/// Builds result tensors for op implementations; not part of the public API.
struct TensorAccess {
    static const std::shared_ptr<detail::TensorImpl>& impl(const Tensor& t) { return t.impl_; }
    static Tensor wrap(std::shared_ptr<detail::TensorImpl> impl) { return Tensor(std::move(impl)); }
};

// ---------------------------------------------------------------------------
// Computation graph inspection

struct GraphNode {
    std::string op;                    // "leaf" for tensors without history
    std::vector<std::size_t> inputs;   // indices into ComputationGraph::nodes
    bool requires_grad = false;
};

/// Nodes reachable from a root, in topological order (inputs first).
struct ComputationGraph {
    std::vector<GraphNode> nodes;
};

ComputationGraph trace(const Tensor& root);

// ---------------------------------------------------------------------------
// Operations

Tensor matmul(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

/// x[N x F] + bias[F], broadcast over rows.
Tensor add_bias(const Tensor& x, const Tensor& bias);
/// x[N x C x H x W] + bias[C], broadcast over batch and space.
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);

/// Cross-correlation, kernel laid out F x C x kh x kw.
Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t padding);
/// Adjoint of conv2d w.r.t. its input; kernel laid out C x F x kh x kw.
Tensor conv2d_transpose(const Tensor& input, const Tensor& kernel, std::size_t stride,
                        std::size_t padding);

Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope = 0.2);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);
/// Concatenate 2-D tensors with equal row counts along columns.
Tensor concat_columns(std::span<const Tensor> parts);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// mean |a - target|; target is treated as a constant.
Tensor l1_loss(const Tensor& a, const Tensor& target);

struct CrossEntropy {
    Tensor loss;                        // scalar, mean over rows
    std::vector<double> probabilities;  // N x K, row-major
};

/// Row-wise softmax followed by mean negative log-likelihood of the targets.
CrossEntropy softmax_cross_entropy(const Tensor& logits, std::span<const int> targets);

/// Softmax without a graph, for inference.
std::vector<double> softmax_rows(const Tensor& logits);

// ---------------------------------------------------------------------------
// Finite-difference verification

/// Central-difference gradient of a scalar function w.r.t. every coordinate
/// of point. The function must rebuild its graph from point on every call.
std::vector<double> numeric_gradient(const std::function<Tensor()>& f, Tensor point,
                                     double eps = 1e-5);

/// max_i |analytic_i - numeric_i| / (|numeric_i| + 1e-8)
double max_relative_error(std::span<const double> analytic, std::span<const double> numeric);

/// Compares backward() against central differences for each tensor in points
/// and returns the worst relative error over all coordinates.
double finite_diff_check(const std::function<Tensor()>& f, std::span<const Tensor> points,
                         double eps = 1e-5);
double finite_diff_check(const std::function<Tensor()>& f, const Tensor& point, double eps = 1e-5);

}  // namespace degan
