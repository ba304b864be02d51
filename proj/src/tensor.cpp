#include "degan/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "degan/errors.hpp"

namespace degan {

using detail::GradFn;
using detail::TensorImpl;

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

using ImplPtr = std::shared_ptr<TensorImpl>;

const ImplPtr& impl_of(const Tensor& t) {
    const auto& p = TensorAccess::impl(t);
    if (!p) throw ContractError("use of an empty tensor handle");
    return p;
}

// Builds a result tensor and, if any input is tracked, attaches its history.
// make_backward is only invoked when a graph node is actually needed.
template <typename MakeBackward>
Tensor make_result(Shape shape, std::vector<double> data, std::string op,
                   std::initializer_list<Tensor> inputs, MakeBackward&& make_backward) {
    auto out = std::make_shared<TensorImpl>();
    out->shape = std::move(shape);
    out->data = std::move(data);
    bool tracked = false;
    for (const auto& in : inputs) tracked = tracked || impl_of(in)->requires_grad;
    if (tracked) {
        auto fn = std::make_shared<GradFn>();
        fn->op = std::move(op);
        for (const auto& in : inputs) fn->inputs.push_back(impl_of(in));
        fn->backward = make_backward();
        out->grad_fn = std::move(fn);
        out->requires_grad = true;
    }
    return TensorAccess::wrap(std::move(out));
}

// Accumulation target for an input, or nullptr when it needs no gradient.
double* grad_target(TensorImpl* t) { return t->requires_grad ? t->grad.data() : nullptr; }

std::vector<TensorImpl*> topo_order(TensorImpl* root) {
    std::vector<TensorImpl*> order;
    std::unordered_set<TensorImpl*> visited;
    // Iterative post-order DFS; (node, next-child-index) frames.
    std::vector<std::pair<TensorImpl*, std::size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
        auto& [node, child] = stack.back();
        const auto n_inputs = node->grad_fn ? node->grad_fn->inputs.size() : 0;
        if (child < n_inputs) {
            TensorImpl* next = node->grad_fn->inputs[child++].get();
            if (visited.insert(next).second) stack.emplace_back(next, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    return order;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
    }
}

template <typename Forward, typename Derivative>
Tensor unary(const Tensor& x, const char* op, Forward f, Derivative df) {
    const auto& xi = impl_of(x);
    std::vector<double> out(xi->data.size());
    std::transform(xi->data.begin(), xi->data.end(), out.begin(), f);
    auto y = std::make_shared<std::vector<double>>(out);
    return make_result(xi->shape, std::move(out), op, {x}, [xp = xi.get(), y, df] {
        return [xp, y, df](std::span<const double> g) {
            double* gx = grad_target(xp);
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(xp->data[i], (*y)[i]);
        };
    });
}

void im2col(const double* img, std::size_t channels, std::size_t height, std::size_t width,
            std::size_t kh, std::size_t kw, std::size_t stride, std::size_t pad,
            std::size_t out_h, std::size_t out_w, double* cols) {
    const auto H = static_cast<std::ptrdiff_t>(height);
    const auto W = static_cast<std::ptrdiff_t>(width);
    for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t ki = 0; ki < kh; ++ki) {
            for (std::size_t kj = 0; kj < kw; ++kj) {
                double* row = cols + ((c * kh + ki) * kw + kj) * out_h * out_w;
                for (std::size_t oh = 0; oh < out_h; ++oh) {
                    const auto ih = static_cast<std::ptrdiff_t>(oh * stride + ki) -
                                    static_cast<std::ptrdiff_t>(pad);
                    double* dst = row + oh * out_w;
                    if (ih < 0 || ih >= H) {
                        std::fill(dst, dst + out_w, 0.0);
                        continue;
                    }
                    const double* src = img + (c * height + static_cast<std::size_t>(ih)) * width;
                    for (std::size_t ow = 0; ow < out_w; ++ow) {
                        const auto iw = static_cast<std::ptrdiff_t>(ow * stride + kj) -
                                        static_cast<std::ptrdiff_t>(pad);
                        dst[ow] = (iw < 0 || iw >= W) ? 0.0 : src[iw];
                    }
                }
            }
        }
    }
}

// Scatter-add counterpart of im2col.
void col2im(const double* cols, std::size_t channels, std::size_t height, std::size_t width,
            std::size_t kh, std::size_t kw, std::size_t stride, std::size_t pad,
            std::size_t out_h, std::size_t out_w, double* img) {
    const auto H = static_cast<std::ptrdiff_t>(height);
    const auto W = static_cast<std::ptrdiff_t>(width);
    for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t ki = 0; ki < kh; ++ki) {
            for (std::size_t kj = 0; kj < kw; ++kj) {
                const double* row = cols + ((c * kh + ki) * kw + kj) * out_h * out_w;
                for (std::size_t oh = 0; oh < out_h; ++oh) {
                    const auto ih = static_cast<std::ptrdiff_t>(oh * stride + ki) -
                                    static_cast<std::ptrdiff_t>(pad);
                    if (ih < 0 || ih >= H) continue;
                    const double* src = row + oh * out_w;
                    double* dst = img + (c * height + static_cast<std::size_t>(ih)) * width;
                    for (std::size_t ow = 0; ow < out_w; ++ow) {
                        const auto iw = static_cast<std::ptrdiff_t>(ow * stride + kj) -
                                        static_cast<std::ptrdiff_t>(pad);
                        if (iw >= 0 && iw < W) dst[iw] += src[ow];
                    }
                }
            }
        }
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// Shapes

std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor() : Tensor(Shape{}, 0.0) {}

Tensor::Tensor(Shape shape, double fill, bool requires_grad)
    : impl_(std::make_shared<TensorImpl>()) {
    for (auto d : shape) {
        if (d == 0) throw DimensionError("tensor dimensions must be positive: " + shape_str(shape));
    }
    impl_->data.assign(shape_numel(shape), fill);
    impl_->shape = std::move(shape);
    impl_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : impl_(std::make_shared<TensorImpl>()) {
    for (auto d : shape) {
        if (d == 0) throw DimensionError("tensor dimensions must be positive: " + shape_str(shape));
    }
    if (shape_numel(shape) != values.size()) {
        throw DimensionError("shape " + shape_str(shape) + " does not hold " +
                             std::to_string(values.size()) + " values");
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(values);
    impl_->requires_grad = requires_grad;
}

Tensor::Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return Tensor(Shape{}, std::vector<double>{value}, requires_grad);
}

const Shape& Tensor::shape() const { return impl_of(*this)->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
    const auto& s = shape();
    if (axis >= s.size()) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    }
    return s[axis];
}

std::size_t Tensor::numel() const { return impl_of(*this)->data.size(); }

std::span<double> Tensor::data() { return impl_of(*this)->data; }
std::span<const double> Tensor::data() const { return impl_of(*this)->data; }

double Tensor::item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return data()[0];
}

std::span<const double> Tensor::grad() const { return impl_of(*this)->grad; }
bool Tensor::has_grad() const { return !impl_of(*this)->grad.empty(); }

void Tensor::zero_grad() {
    auto& g = impl_of(*this)->grad;
    std::fill(g.begin(), g.end(), 0.0);
}

bool Tensor::requires_grad() const { return impl_of(*this)->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
    if (!is_leaf()) throw ContractError("requires_grad can only be changed on leaf tensors");
    impl_->requires_grad = on;
    return *this;
}

bool Tensor::is_leaf() const { return impl_of(*this)->grad_fn == nullptr; }

std::string Tensor::op_name() const {
    const auto& fn = impl_of(*this)->grad_fn;
    return fn ? fn->op : "leaf";
}

Tensor Tensor::detach() const {
    const auto& p = impl_of(*this);
    return Tensor(p->shape, p->data, false);
}

void Tensor::backward() const {
    const auto& root = impl_of(*this);
    if (root->data.size() != 1) {
        throw ContractError("backward() needs a scalar loss, got " + shape_str(root->shape));
    }
    if (!root->requires_grad) {
        throw ContractError("backward() on a tensor that does not depend on tracked tensors");
    }
    const auto order = topo_order(root.get());
    for (TensorImpl* node : order) {
        if (!node->requires_grad) continue;
        if (node->grad_fn) {
            node->grad.assign(node->data.size(), 0.0);
        } else if (node->grad.size() != node->data.size()) {
            node->grad.assign(node->data.size(), 0.0);
        }
    }
    root->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorImpl* node = *it;
        if (node->grad_fn) node->grad_fn->backward(node->grad);
    }
    for (TensorImpl* node : order) {
        if (node->grad_fn) std::vector<double>().swap(node->grad);
    }
    // Intermediate gradients are released above; only leaves keep theirs.
}

ComputationGraph trace(const Tensor& root) {
    const auto order = topo_order(impl_of(root).get());
    std::unordered_map<const TensorImpl*, std::size_t> index;
    ComputationGraph graph;
    for (TensorImpl* node : order) {
        GraphNode g;
        g.requires_grad = node->requires_grad;
        if (node->grad_fn) {
            g.op = node->grad_fn->op;
            for (const auto& in : node->grad_fn->inputs) g.inputs.push_back(index.at(in.get()));
        } else {
            g.op = "leaf";
        }
        index.emplace(node, graph.nodes.size());
        graph.nodes.push_back(std::move(g));
    }
    return graph;
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0)) {
        throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    }
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<double> out(m * n);
    MatMap(out.data(), m, n).noalias() =
        ConstMatMap(a.data().data(), m, k) * ConstMatMap(b.data().data(), k, n);
    return make_result({m, n}, std::move(out), "matmul", {a, b},
                       [ap = impl_of(a).get(), bp = impl_of(b).get(), m, k, n] {
                           return [ap, bp, m, k, n](std::span<const double> g) {
                               ConstMatMap dc(g.data(), m, n);
                               if (double* ga = grad_target(ap)) {
                                   MatMap(ga, m, k).noalias() +=
                                       dc * ConstMatMap(bp->data.data(), k, n).transpose();
                               }
                               if (double* gb = grad_target(bp)) {
                                   MatMap(gb, k, n).noalias() +=
                                       ConstMatMap(ap->data.data(), m, k).transpose() * dc;
                               }
                           };
                       });
}

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    return make_result(a.shape(), std::move(out), "add", {a, b},
                       [ap = impl_of(a).get(), bp = impl_of(b).get()] {
                           return [ap, bp](std::span<const double> g) {
                               for (TensorImpl* p : {ap, bp}) {
                                   if (double* gp = grad_target(p)) {
                                       for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i];
                                   }
                               }
                           };
                       });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
    return make_result(a.shape(), std::move(out), "sub", {a, b},
                       [ap = impl_of(a).get(), bp = impl_of(b).get()] {
                           return [ap, bp](std::span<const double> g) {
                               if (double* ga = grad_target(ap)) {
                                   for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                               }
                               if (double* gb = grad_target(bp)) {
                                   for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                               }
                           };
                       });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    return make_result(a.shape(), std::move(out), "mul", {a, b},
                       [ap = impl_of(a).get(), bp = impl_of(b).get()] {
                           return [ap, bp](std::span<const double> g) {
                               if (double* ga = grad_target(ap)) {
                                   for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bp->data[i];
                               }
                               if (double* gb = grad_target(bp)) {
                                   for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ap->data[i];
                               }
                           };
                       });
}

Tensor scale(const Tensor& a, double factor) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * factor;
    return make_result(a.shape(), std::move(out), "scale", {a}, [ap = impl_of(a).get(), factor] {
        return [ap, factor](std::span<const double> g) {
            double* ga = grad_target(ap);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
        };
    });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
    if (x.ndim() != 2 || bias.ndim() != 1 || bias.dim(0) != x.dim(1)) {
        throw DimensionError("add_bias: shapes " + shape_str(x.shape()) + " and " +
                             shape_str(bias.shape()));
    }
    const std::size_t rows = x.dim(0), cols = x.dim(1);
    std::vector<double> out(x.data().begin(), x.data().end());
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += bias.data()[c];
    }
    return make_result(x.shape(), std::move(out), "add_bias", {x, bias},
                       [xp = impl_of(x).get(), bp = impl_of(bias).get(), rows, cols] {
                           return [xp, bp, rows, cols](std::span<const double> g) {
                               if (double* gx = grad_target(xp)) {
                                   for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                               }
                               if (double* gb = grad_target(bp)) {
                                   for (std::size_t r = 0; r < rows; ++r) {
                                       for (std::size_t c = 0; c < cols; ++c) gb[c] += g[r * cols + c];
                                   }
                               }
                           };
                       });
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
    if (x.ndim() != 4 || bias.ndim() != 1 || bias.dim(0) != x.dim(1)) {
        throw DimensionError("add_channel_bias: shapes " + shape_str(x.shape()) + " and " +
                             shape_str(bias.shape()));
    }
    const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
    std::vector<double> out(x.data().begin(), x.data().end());
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            double* p = out.data() + (i * c + ch) * plane;
            const double b = bias.data()[ch];
            for (std::size_t j = 0; j < plane; ++j) p[j] += b;
        }
    }
    return make_result(x.shape(), std::move(out), "add_channel_bias", {x, bias},
                       [xp = impl_of(x).get(), bp = impl_of(bias).get(), n, c, plane] {
                           return [xp, bp, n, c, plane](std::span<const double> g) {
                               if (double* gx = grad_target(xp)) {
                                   for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                               }
                               if (double* gb = grad_target(bp)) {
                                   for (std::size_t i = 0; i < n; ++i) {
                                       for (std::size_t ch = 0; ch < c; ++ch) {
                                           const double* p = g.data() + (i * c + ch) * plane;
                                           double s = 0.0;
                                           for (std::size_t j = 0; j < plane; ++j) s += p[j];
                                           gb[ch] += s;
                                       }
                                   }
                               }
                           };
                       });
}

// ---------------------------------------------------------------------------
// Convolutions

Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t padding) {
    if (input.ndim() != 4 || kernel.ndim() != 4 || kernel.dim(1) != input.dim(1)) {
        throw DimensionError("conv2d: input " + shape_str(input.shape()) + " and kernel " +
                             shape_str(kernel.shape()) + " are incompatible");
    }
    if (stride == 0) throw ContractError("conv2d: stride must be positive");
    const std::size_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const std::size_t F = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
    if (kh > H + 2 * padding || kw > W + 2 * padding) {
        throw DimensionError("conv2d: kernel " + shape_str(kernel.shape()) +
                             " larger than padded input " + shape_str(input.shape()) +
                             " (padding " + std::to_string(padding) + ")");
    }
    const std::size_t Ho = (H + 2 * padding - kh) / stride + 1;
    const std::size_t Wo = (W + 2 * padding - kw) / stride + 1;
    const std::size_t ckk = C * kh * kw, hw = Ho * Wo;

    auto cols = std::make_shared<std::vector<double>>(N * ckk * hw);
    std::vector<double> out(N * F * hw);
    ConstMatMap kmat(kernel.data().data(), F, ckk);
    for (std::size_t n = 0; n < N; ++n) {
        double* c = cols->data() + n * ckk * hw;
        im2col(input.data().data() + n * C * H * W, C, H, W, kh, kw, stride, padding, Ho, Wo, c);
        MatMap(out.data() + n * F * hw, F, hw).noalias() = kmat * ConstMatMap(c, ckk, hw);
    }
    return make_result(
        {N, F, Ho, Wo}, std::move(out), "conv2d", {input, kernel},
        [ip = impl_of(input).get(), kp = impl_of(kernel).get(), cols, N, C, H, W, F, kh, kw, Ho, Wo,
         stride, padding] {
            return [=](std::span<const double> g) {
                const std::size_t ckk = C * kh * kw, hw = Ho * Wo;
                double* gk = grad_target(kp);
                double* gi = grad_target(ip);
                ConstMatMap kmat(kp->data.data(), F, ckk);
                std::vector<double> dcols(gi ? ckk * hw : 0);
                for (std::size_t n = 0; n < N; ++n) {
                    ConstMatMap dout(g.data() + n * F * hw, F, hw);
                    if (gk) {
                        MatMap(gk, F, ckk).noalias() +=
                            dout * ConstMatMap(cols->data() + n * ckk * hw, ckk, hw).transpose();
                    }
                    if (gi) {
                        MatMap(dcols.data(), ckk, hw).noalias() = kmat.transpose() * dout;
                        col2im(dcols.data(), C, H, W, kh, kw, stride, padding, Ho, Wo,
                               gi + n * C * H * W);
                    }
                }
            };
        });
}

Tensor conv2d_transpose(const Tensor& input, const Tensor& kernel, std::size_t stride,
                        std::size_t padding) {
    if (input.ndim() != 4 || kernel.ndim() != 4 || kernel.dim(0) != input.dim(1)) {
        throw DimensionError("conv2d_transpose: input " + shape_str(input.shape()) +
                             " and kernel " + shape_str(kernel.shape()) + " are incompatible");
    }
    if (stride == 0) throw ContractError("conv2d_transpose: stride must be positive");
    const std::size_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const std::size_t F = kernel.dim(1), kh = kernel.dim(2), kw = kernel.dim(3);
    const auto out_extent = [&](std::size_t in, std::size_t k) {
        return static_cast<std::ptrdiff_t>((in - 1) * stride + k) -
               static_cast<std::ptrdiff_t>(2 * padding);
    };
    if (out_extent(H, kh) <= 0 || out_extent(W, kw) <= 0) {
        throw DimensionError("conv2d_transpose: input " + shape_str(input.shape()) + ", kernel " +
                             shape_str(kernel.shape()) + ", stride " + std::to_string(stride) +
                             ", padding " + std::to_string(padding) +
                             " give a nonpositive output size");
    }
    const auto Ho = static_cast<std::size_t>(out_extent(H, kh));
    const auto Wo = static_cast<std::size_t>(out_extent(W, kw));
    const std::size_t fkk = F * kh * kw, hw = H * W;

    std::vector<double> out(N * F * Ho * Wo, 0.0);
    std::vector<double> cols(fkk * hw);
    ConstMatMap kmat(kernel.data().data(), C, fkk);
    for (std::size_t n = 0; n < N; ++n) {
        MatMap(cols.data(), fkk, hw).noalias() =
            kmat.transpose() * ConstMatMap(input.data().data() + n * C * hw, C, hw);
        col2im(cols.data(), F, Ho, Wo, kh, kw, stride, padding, H, W, out.data() + n * F * Ho * Wo);
    }
    return make_result(
        {N, F, Ho, Wo}, std::move(out), "conv2d_transpose", {input, kernel},
        [ip = impl_of(input).get(), kp = impl_of(kernel).get(), N, C, H, W, F, kh, kw, Ho, Wo, stride,
         padding] {
            return [=](std::span<const double> g) {
                const std::size_t fkk = F * kh * kw, hw = H * W;
                double* gk = grad_target(kp);
                double* gi = grad_target(ip);
                ConstMatMap kmat(kp->data.data(), C, fkk);
                std::vector<double> gcols(fkk * hw);
                for (std::size_t n = 0; n < N; ++n) {
                    im2col(g.data() + n * F * Ho * Wo, F, Ho, Wo, kh, kw, stride, padding, H, W,
                           gcols.data());
                    ConstMatMap gc(gcols.data(), fkk, hw);
                    if (gi) MatMap(gi + n * C * hw, C, hw).noalias() += kmat * gc;
                    if (gk) {
                        MatMap(gk, C, fkk).noalias() +=
                            ConstMatMap(ip->data.data() + n * C * hw, C, hw) * gc.transpose();
                    }
                }
            };
        });
}

// ---------------------------------------------------------------------------
// Activations

Tensor relu(const Tensor& x) {
    return unary(
        x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
        [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& x, double slope) {
    return unary(
        x, "leaky_relu", [slope](double v) { return v > 0.0 ? v : slope * v; },
        [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

Tensor tanh(const Tensor& x) {
    return unary(
        x, "tanh", [](double v) { return std::tanh(v); },
        [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& x) {
    return unary(
        x, "sigmoid", [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
        [](double, double y) { return y * (1.0 - y); });
}

// ---------------------------------------------------------------------------
// Shape manipulation and reductions

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                             shape_str(shape));
    }
    std::vector<double> out(x.data().begin(), x.data().end());
    return make_result(std::move(shape), std::move(out), "reshape", {x}, [xp = impl_of(x).get()] {
        return [xp](std::span<const double> g) {
            double* gx = grad_target(xp);
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        };
    });
}

Tensor concat_columns(std::span<const Tensor> parts) {
    if (parts.empty()) throw ContractError("concat_columns: no inputs");
    const std::size_t rows = parts[0].ndim() == 2 ? parts[0].dim(0) : 0;
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p.ndim() != 2 || p.dim(0) != rows) {
            throw DimensionError("concat_columns: expected 2-D parts with " + std::to_string(rows) +
                                 " rows, got " + shape_str(p.shape()));
        }
        total += p.dim(1);
    }
    std::vector<double> out(rows * total);
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const std::size_t w = p.dim(1);
        for (std::size_t r = 0; r < rows; ++r) {
            std::copy_n(p.data().data() + r * w, w, out.data() + r * total + offset);
        }
        offset += w;
    }

    auto result = std::make_shared<TensorImpl>();
    result->shape = {rows, total};
    result->data = std::move(out);
    bool tracked = false;
    for (const auto& p : parts) tracked = tracked || p.requires_grad();
    if (tracked) {
        auto fn = std::make_shared<GradFn>();
        fn->op = "concat_columns";
        std::vector<std::pair<TensorImpl*, std::size_t>> segs;
        for (const auto& p : parts) {
            fn->inputs.push_back(impl_of(p));
            segs.emplace_back(impl_of(p).get(), p.dim(1));
        }
        fn->backward = [segs, rows, total](std::span<const double> g) {
            std::size_t off = 0;
            for (const auto& [p, w] : segs) {
                if (double* gp = grad_target(p)) {
                    for (std::size_t r = 0; r < rows; ++r) {
                        for (std::size_t c = 0; c < w; ++c) gp[r * w + c] += g[r * total + off + c];
                    }
                }
                off += w;
            }
        };
        result->grad_fn = std::move(fn);
        result->requires_grad = true;
    }
    return TensorAccess::wrap(std::move(result));
}

Tensor sum(const Tensor& x) {
    const double s = std::accumulate(x.data().begin(), x.data().end(), 0.0);
    return make_result({}, {s}, "sum", {x}, [xp = impl_of(x).get()] {
        return [xp](std::span<const double> g) {
            double* gx = grad_target(xp);
            for (std::size_t i = 0; i < xp->data.size(); ++i) gx[i] += g[0];
        };
    });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor l1_loss(const Tensor& a, const Tensor& target) {
    check_same_shape(a, target, "l1_loss");
    const std::size_t n = a.numel();
    auto diff = std::make_shared<std::vector<double>>(n);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        (*diff)[i] = a.data()[i] - target.data()[i];
        total += std::abs((*diff)[i]);
    }
    return make_result({}, {total / static_cast<double>(n)}, "l1_loss", {a},
                       [ap = impl_of(a).get(), diff, n] {
                           return [ap, diff, n](std::span<const double> g) {
                               double* ga = grad_target(ap);
                               const double k = g[0] / static_cast<double>(n);
                               for (std::size_t i = 0; i < n; ++i) {
                                   const double d = (*diff)[i];
                                   ga[i] += d > 0.0 ? k : (d < 0.0 ? -k : 0.0);
                               }
                           };
                       });
}

std::vector<double> softmax_rows(const Tensor& logits) {
    if (logits.ndim() != 2) {
        throw DimensionError("softmax: expected N x K logits, got " + shape_str(logits.shape()));
    }
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    std::vector<double> p(n * k);
    for (std::size_t r = 0; r < n; ++r) {
        const double* z = logits.data().data() + r * k;
        const double mx = *std::max_element(z, z + k);
        double s = 0.0;
        for (std::size_t c = 0; c < k; ++c) s += (p[r * k + c] = std::exp(z[c] - mx));
        for (std::size_t c = 0; c < k; ++c) p[r * k + c] /= s;
    }
    return p;
}

CrossEntropy softmax_cross_entropy(const Tensor& logits, std::span<const int> targets) {
    if (logits.ndim() != 2) {
        throw DimensionError("softmax_cross_entropy: expected N x K logits, got " +
                             shape_str(logits.shape()));
    }
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    if (targets.size() != n) {
        throw DimensionError("softmax_cross_entropy: " + std::to_string(targets.size()) +
                             " targets for " + std::to_string(n) + " rows");
    }
    for (int t : targets) {
        if (t < 0 || static_cast<std::size_t>(t) >= k) {
            throw LabelError("softmax_cross_entropy: target " + std::to_string(t) +
                             " outside [0, " + std::to_string(k) + ")");
        }
    }
    auto probs = softmax_rows(logits);
    double total = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        // -log p[t] = logsumexp(z) - z[t], evaluated around the row maximum.
        const double* z = logits.data().data() + r * k;
        const double mx = *std::max_element(z, z + k);
        double s = 0.0;
        for (std::size_t c = 0; c < k; ++c) s += std::exp(z[c] - mx);
        total += mx + std::log(s) - z[targets[r]];
    }
    auto cached = std::make_shared<std::vector<double>>(probs);
    std::vector<int> tgt(targets.begin(), targets.end());
    Tensor loss = make_result({}, {total / static_cast<double>(n)}, "softmax_cross_entropy", {logits},
                              [lp = impl_of(logits).get(), cached, tgt = std::move(tgt), n, k] {
                                  return [lp, cached, tgt, n, k](std::span<const double> g) {
                                      double* gl = grad_target(lp);
                                      const double w = g[0] / static_cast<double>(n);
                                      for (std::size_t r = 0; r < n; ++r) {
                                          for (std::size_t c = 0; c < k; ++c) {
                                              const double onehot =
                                                  static_cast<int>(c) == tgt[r] ? 1.0 : 0.0;
                                              gl[r * k + c] += w * ((*cached)[r * k + c] - onehot);
                                          }
                                      }
                                  };
                              });
    return {std::move(loss), std::move(probs)};
}

// ---------------------------------------------------------------------------
// Finite differences

std::vector<double> numeric_gradient(const std::function<Tensor()>& f, Tensor point, double eps) {
    auto values = point.data();
    std::vector<double> out(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double saved = values[i];
        values[i] = saved + eps;
        const double up = f().item();
        values[i] = saved - eps;
        const double down = f().item();
        values[i] = saved;
        out[i] = (up - down) / (2.0 * eps);
    }
    return out;
}

double max_relative_error(std::span<const double> analytic, std::span<const double> numeric) {
    if (analytic.size() != numeric.size()) {
        throw DimensionError("max_relative_error: gradient lengths differ");
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / (std::abs(numeric[i]) + 1e-8));
    }
    return worst;
}

double finite_diff_check(const std::function<Tensor()>& f, std::span<const Tensor> points,
                         double eps) {
    std::vector<Tensor> pts(points.begin(), points.end());
    for (auto& p : pts) {
        if (!p.requires_grad()) throw ContractError("finite_diff_check: point does not require grad");
        p.zero_grad();
    }
    f().backward();
    double worst = 0.0;
    for (auto& p : pts) {
        std::vector<double> analytic(p.grad().begin(), p.grad().end());
        analytic.resize(p.numel(), 0.0);
        worst = std::max(worst, max_relative_error(analytic, numeric_gradient(f, p, eps)));
    }
    return worst;
}

double finite_diff_check(const std::function<Tensor()>& f, const Tensor& point, double eps) {
    return finite_diff_check(f, std::span<const Tensor>(&point, 1), eps);
}

}  // namespace degan
