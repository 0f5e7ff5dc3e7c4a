#include "wavesep/tensor.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <memory>
#include <sstream>
#include <unordered_set>

namespace wavesep {

std::string shape_str(const Shape &shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::size_t shape_numel(const Shape &shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

namespace {

using RowMatrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstRowMap = Eigen::Map<const RowMatrix>;

}  // namespace

namespace detail {

std::vector<Real> &Node::ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), Real(0));
    return grad;
}

}  // namespace detail

namespace {

thread_local bool g_grad_enabled = true;

void check_shape(const Shape &shape) {
    if (shape.empty()) throw ShapeError("tensor shape must have at least one extent");
    for (auto d : shape)
        if (d == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
}

void require_rank(const Tensor &t, std::size_t rank, const char *what) {
    if (!t.defined()) throw ShapeError(std::string(what) + ": undefined tensor");
    if (t.rank() != rank)
        throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) +
                         ", got " + shape_str(t.shape()));
}

bool any_requires_grad(const std::vector<Tensor> &ts) {
    return std::any_of(ts.begin(), ts.end(), [](const Tensor &t) { return t.requires_grad(); });
}

// Elementwise unary op with derivative expressed from (x, y).
template <typename F, typename D>
Tensor unary(const Tensor &x, F f, D dfdx) {
    auto in = x.data();
    std::vector<Real> out(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
    return Tensor::make_result(x.shape(), std::move(out), {x}, [dfdx](detail::Node &self) {
        auto &p = *self.parents[0];
        if (!p.requires_grad) return;
        auto &g = p.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i)
            g[i] += self.grad[i] * dfdx(p.data[i], self.data[i]);
    });
}

enum class Broadcast { kNone, kChannel };

Broadcast broadcast_kind(const Tensor &a, const Tensor &b, const char *what) {
    if (a.shape() == b.shape()) return Broadcast::kNone;
    if (a.rank() == 2 && b.rank() == 2 && b.dim(0) == a.dim(0) && b.dim(1) == 1)
        return Broadcast::kChannel;
    throw ShapeError(std::string(what) + ": cannot broadcast " + shape_str(b.shape()) +
                     " against " + shape_str(a.shape()));
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0, requires_grad); }

Tensor Tensor::full(Shape shape, Real value, bool requires_grad) {
    check_shape(shape);
    auto n = shape_numel(shape);
    return from(std::move(shape), std::vector<Real>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<Real> data, bool requires_grad) {
    check_shape(shape);
    if (shape_numel(shape) != data.size())
        throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                         shape_str(shape));
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(Real value, bool requires_grad) { return from({1}, {value}, requires_grad); }

const Shape &Tensor::shape() const { return node_->shape; }
std::size_t Tensor::dim(std::size_t axis) const { return node_->shape.at(axis); }
std::size_t Tensor::numel() const { return node_->data.size(); }
std::span<const Real> Tensor::data() const { return node_->data; }
std::span<Real> Tensor::mutable_data() { return node_->data; }

Real Tensor::item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
}

Real Tensor::at(std::size_t row, std::size_t col) const {
    return node_->data.at(row * node_->shape.back() + col);
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }
std::span<const Real> Tensor::grad() const { return node_->grad; }
std::span<Real> Tensor::mutable_grad() { return node_->ensure_grad(); }

void Tensor::zero_grad() {
    if (node_) std::fill(node_->grad.begin(), node_->grad.end(), Real(0));
}

Tensor Tensor::make_result(Shape shape, std::vector<Real> data, std::vector<Tensor> parents,
                           std::function<void(detail::Node &)> backward_fn) {
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = g_grad_enabled && any_requires_grad(parents);
    if (node->requires_grad) {
        node->parents.reserve(parents.size());
        for (auto &p : parents) node->parents.push_back(p.node_);
        node->backward_fn = std::move(backward_fn);
    }
    return Tensor(std::move(node));
}

void Tensor::backward() const {
    if (!node_) throw ShapeError("backward on undefined tensor");
    if (numel() != 1) throw ShapeError("backward requires a scalar loss, got " + shape_str(shape()));
    if (!node_->requires_grad) return;

    // Iterative post-order DFS gives a topological order (parents first).
    std::vector<detail::Node *> order;
    std::unordered_set<detail::Node *> visited;
    std::vector<std::pair<detail::Node *, std::size_t>> stack{{node_.get(), 0}};
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto &[node, next] = stack.back();
        if (next < node->parents.size()) {
            auto *parent = node->parents[next++].get();
            if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (auto *n : order)
        if (!n->is_leaf()) n->grad.assign(n->data.size(), Real(0));
    node_->grad[0] += Real(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        auto *n = *it;
        if (!n->is_leaf() && n->backward_fn) n->backward_fn(*n);
    }
}

// ---------------------------------------------------------------------------
// Ops

Tensor conv1d_valid(const Tensor &input, const Tensor &kernels, const Tensor &bias) {
    require_rank(input, 2, "conv1d_valid input");
    require_rank(kernels, 3, "conv1d_valid kernels");
    require_rank(bias, 1, "conv1d_valid bias");
    const std::size_t c_in = input.dim(0), len = input.dim(1);
    const std::size_t c_out = kernels.dim(0), k = kernels.dim(2);
    if (kernels.dim(1) != c_in)
        throw ShapeError("conv1d_valid: kernel expects " + std::to_string(kernels.dim(1)) +
                         " input channels, input has " + std::to_string(c_in));
    if (bias.dim(0) != c_out)
        throw ShapeError("conv1d_valid: bias length " + std::to_string(bias.dim(0)) +
                         " != output channels " + std::to_string(c_out));
    if (len < k) throw ShapeError("input shorter than kernel");
    const std::size_t out_len = len - k + 1;

    // im2col: row (i * k + j) of cols holds input[i, j : j + out_len], so the
    // convolution is one GEMM against the [c_out, c_in * k] kernel matrix.
    auto cols = std::make_shared<RowMatrix>(c_in * k, out_len);
    {
        const Real *x = input.data().data();
        for (std::size_t i = 0; i < c_in; ++i)
            for (std::size_t j = 0; j < k; ++j)
                std::copy_n(x + i * len + j, out_len, cols->data() + (i * k + j) * out_len);
    }
    std::vector<Real> out(c_out * out_len);
    {
        // Operands go through Eigen-owned (aligned) storage: Eigen's kernels
        // peel by pointer alignment, which would make rounding depend on
        // heap layout.
        const RowMatrix w = ConstRowMap(kernels.data().data(), Eigen::Index(c_out), Eigen::Index(c_in * k));
        RowMatrix y = w * *cols;
        const Real *b = bias.data().data();
        for (std::size_t o = 0; o < c_out; ++o) y.row(Eigen::Index(o)).array() += b[o];
        std::copy_n(y.data(), out.size(), out.data());
    }

    return Tensor::make_result(
        {c_out, out_len}, std::move(out), {input, kernels, bias},
        [c_in, c_out, len, k, out_len, cols](detail::Node &self) {
            auto &in = *self.parents[0];
            auto &ker = *self.parents[1];
            auto &bi = *self.parents[2];
            const RowMatrix g = ConstRowMap(self.grad.data(), Eigen::Index(c_out), Eigen::Index(out_len));
            if (bi.requires_grad) {
                auto &gb = bi.ensure_grad();
                for (std::size_t o = 0; o < c_out; ++o) gb[o] += g.row(Eigen::Index(o)).sum();
            }
            if (ker.requires_grad) {
                const RowMatrix dw = g * cols->transpose();
                auto &gw = ker.ensure_grad();
                for (std::size_t i = 0; i < gw.size(); ++i) gw[i] += dw.data()[i];
            }
            if (in.requires_grad) {
                const RowMatrix w = ConstRowMap(ker.data.data(), Eigen::Index(c_out), Eigen::Index(c_in * k));
                const RowMatrix gcols = w.transpose() * g;
                Real *gx = in.ensure_grad().data();
                for (std::size_t i = 0; i < c_in; ++i)
                    for (std::size_t j = 0; j < k; ++j) {
                        const Real *src = gcols.data() + (i * k + j) * out_len;
                        Real *dst = gx + i * len + j;
                        for (std::size_t t = 0; t < out_len; ++t) dst[t] += src[t];
                    }
            }
        });
}

Tensor decimate2(const Tensor &input) {
    require_rank(input, 2, "decimate2");
    const std::size_t channels = input.dim(0), len = input.dim(1);
    const std::size_t out_len = (len + 1) / 2;
    auto x = input.data();
    std::vector<Real> out(channels * out_len);
    for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t t = 0; t < out_len; ++t) out[c * out_len + t] = x[c * len + 2 * t];
    return Tensor::make_result({channels, out_len}, std::move(out), {input},
                               [channels, len, out_len](detail::Node &self) {
                                   auto &p = *self.parents[0];
                                   auto &g = p.ensure_grad();
                                   for (std::size_t c = 0; c < channels; ++c)
                                       for (std::size_t t = 0; t < out_len; ++t)
                                           g[c * len + 2 * t] += self.grad[c * out_len + t];
                               });
}

Tensor lininterp_upsample2(const Tensor &input) {
    require_rank(input, 2, "lininterp_upsample2");
    const std::size_t channels = input.dim(0), len = input.dim(1);
    if (len < 2) throw ShapeError("lininterp_upsample2: need at least 2 samples, got " + std::to_string(len));
    const std::size_t out_len = 2 * len - 1;
    auto x = input.data();
    std::vector<Real> out(channels * out_len);
    for (std::size_t c = 0; c < channels; ++c) {
        const Real *xc = x.data() + c * len;
        Real *yc = out.data() + c * out_len;
        for (std::size_t t = 0; t + 1 < len; ++t) {
            yc[2 * t] = xc[t];
            yc[2 * t + 1] = Real(0.5) * (xc[t] + xc[t + 1]);
        }
        yc[out_len - 1] = xc[len - 1];
    }
    return Tensor::make_result({channels, out_len}, std::move(out), {input},
                               [channels, len, out_len](detail::Node &self) {
                                   auto &g = self.parents[0]->ensure_grad();
                                   for (std::size_t c = 0; c < channels; ++c) {
                                       const Real *gy = self.grad.data() + c * out_len;
                                       Real *gx = g.data() + c * len;
                                       for (std::size_t t = 0; t + 1 < len; ++t) {
                                           const Real mid = Real(0.5) * gy[2 * t + 1];
                                           gx[t] += gy[2 * t] + mid;
                                           gx[t + 1] += mid;
                                       }
                                       gx[len - 1] += gy[out_len - 1];
                                   }
                               });
}

Tensor crop_concat(const Tensor &skip, const Tensor &up) {
    require_rank(skip, 2, "crop_concat skip");
    require_rank(up, 2, "crop_concat up");
    const std::size_t c1 = skip.dim(0), l1 = skip.dim(1);
    const std::size_t c2 = up.dim(0), l2 = up.dim(1);
    if (l1 < l2)
        throw ShapeError("crop_concat: skip length " + std::to_string(l1) + " shorter than " +
                         std::to_string(l2));
    if ((l1 - l2) % 2 != 0)
        throw ShapeError("crop_concat: odd length difference " + std::to_string(l1 - l2) +
                         " (mis-sized network)");
    const std::size_t off = (l1 - l2) / 2;
    std::vector<Real> out((c1 + c2) * l2);
    auto s = skip.data();
    auto u = up.data();
    for (std::size_t c = 0; c < c1; ++c)
        std::copy_n(s.begin() + c * l1 + off, l2, out.begin() + c * l2);
    std::copy(u.begin(), u.end(), out.begin() + c1 * l2);
    return Tensor::make_result({c1 + c2, l2}, std::move(out), {skip, up},
                               [c1, c2, l1, l2, off](detail::Node &self) {
                                   auto &ps = *self.parents[0];
                                   auto &pu = *self.parents[1];
                                   if (ps.requires_grad) {
                                       auto &g = ps.ensure_grad();
                                       for (std::size_t c = 0; c < c1; ++c)
                                           for (std::size_t t = 0; t < l2; ++t)
                                               g[c * l1 + off + t] += self.grad[c * l2 + t];
                                   }
                                   if (pu.requires_grad) {
                                       auto &g = pu.ensure_grad();
                                       for (std::size_t i = 0; i < c2 * l2; ++i)
                                           g[i] += self.grad[c1 * l2 + i];
                                   }
                               });
}

Tensor leaky_relu(const Tensor &x, Real slope) {
    return unary(
        x, [slope](Real v) { return v > 0 ? v : slope * v; },
        [slope](Real v, Real) { return v > 0 ? Real(1) : slope; });
}

Tensor tanh(const Tensor &x) {
    return unary(
        x, [](Real v) { return std::tanh(v); }, [](Real, Real y) { return Real(1) - y * y; });
}

Tensor sigmoid(const Tensor &x) {
    return unary(
        x,
        [](Real v) {
            if (v >= 0) return Real(1) / (Real(1) + std::exp(-v));
            const Real e = std::exp(v);
            return e / (Real(1) + e);
        },
        [](Real, Real y) { return y * (Real(1) - y); });
}

Tensor mul(const Tensor &a, const Tensor &b) {
    const auto kind = broadcast_kind(a, b, "mul");
    const std::size_t n = a.numel();
    const std::size_t len = kind == Broadcast::kChannel ? a.dim(1) : 1;
    auto x = a.data();
    auto y = b.data();
    std::vector<Real> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = x[i] * y[kind == Broadcast::kChannel ? i / len : i];
    return Tensor::make_result(a.shape(), std::move(out), {a, b}, [kind, n, len](detail::Node &self) {
        auto &pa = *self.parents[0];
        auto &pb = *self.parents[1];
        auto bi = [&](std::size_t i) { return kind == Broadcast::kChannel ? i / len : i; };
        if (pa.requires_grad) {
            auto &g = pa.ensure_grad();
            for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i] * pb.data[bi(i)];
        }
        if (pb.requires_grad) {
            auto &g = pb.ensure_grad();
            for (std::size_t i = 0; i < n; ++i) g[bi(i)] += self.grad[i] * pa.data[i];
        }
    });
}

Tensor add(const Tensor &a, const Tensor &b) {
    const auto kind = broadcast_kind(a, b, "add");
    const std::size_t n = a.numel();
    const std::size_t len = kind == Broadcast::kChannel ? a.dim(1) : 1;
    auto x = a.data();
    auto y = b.data();
    std::vector<Real> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = x[i] + y[kind == Broadcast::kChannel ? i / len : i];
    return Tensor::make_result(a.shape(), std::move(out), {a, b}, [kind, n, len](detail::Node &self) {
        auto &pa = *self.parents[0];
        auto &pb = *self.parents[1];
        if (pa.requires_grad) {
            auto &g = pa.ensure_grad();
            for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i];
        }
        if (pb.requires_grad) {
            auto &g = pb.ensure_grad();
            for (std::size_t i = 0; i < n; ++i) g[kind == Broadcast::kChannel ? i / len : i] += self.grad[i];
        }
    });
}

Tensor scale(const Tensor &x, Real factor) {
    return unary(
        x, [factor](Real v) { return v * factor; }, [factor](Real, Real) { return factor; });
}

Tensor sum(const Tensor &x) {
    Real acc = 0;
    for (auto v : x.data()) acc += v;
    return Tensor::make_result({1}, {acc}, {x}, [](detail::Node &self) {
        auto &g = self.parents[0]->ensure_grad();
        for (auto &v : g) v += self.grad[0];
    });
}

Tensor reshape(const Tensor &x, Shape shape) {
    check_shape(shape);
    if (shape_numel(shape) != x.numel())
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    std::vector<Real> copy(x.data().begin(), x.data().end());
    return Tensor::make_result(std::move(shape), std::move(copy), {x}, [](detail::Node &self) {
        auto &g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

Tensor mse_loss(const Tensor &pred, const Tensor &target) {
    if (pred.shape() != target.shape())
        throw ShapeError("mse_loss: shape " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
    const std::size_t n = pred.numel();
    auto p = pred.data();
    auto t = target.data();
    Real acc = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const Real d = p[i] - t[i];
        acc += d * d;
    }
    const Real inv_n = Real(1) / static_cast<Real>(n);
    return Tensor::make_result({1}, {acc * inv_n}, {pred, target}, [n, inv_n](detail::Node &self) {
        auto &pp = *self.parents[0];
        auto &pt = *self.parents[1];
        const Real s = Real(2) * inv_n * self.grad[0];
        if (pp.requires_grad) {
            auto &g = pp.ensure_grad();
            for (std::size_t i = 0; i < n; ++i) g[i] += s * (pp.data[i] - pt.data[i]);
        }
        if (pt.requires_grad) {
            auto &g = pt.ensure_grad();
            for (std::size_t i = 0; i < n; ++i) g[i] -= s * (pp.data[i] - pt.data[i]);
        }
    });
}

}  // namespace wavesep
