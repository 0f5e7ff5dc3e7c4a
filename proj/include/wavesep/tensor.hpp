#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace wavesep {

#ifdef WAVESEP_FLOAT32
using Real = float;
#else
using Real = double;
#endif

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

std::string shape_str(const Shape &shape);
std::size_t shape_numel(const Shape &shape);

namespace detail {

struct Node {
    Shape shape;
    std::vector<Real> data;
    std::vector<Real> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this->grad, accumulates into parents' grad.
    std::function<void(Node &)> backward_fn;

    bool is_leaf() const { return parents.empty(); }
    std::vector<Real> &ensure_grad();
};

}  // namespace detail

// Dense row-major tensor with a reverse-mode autodiff tape.
//
// A Tensor is a cheap handle; copies share the underlying buffer. Results of
// ops are immutable. Only leaves (parameters) are mutated, and only through
// mutable_data() by an optimizer or loader.
class Tensor {
   public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, Real value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<Real> data, bool requires_grad = false);
    static Tensor scalar(Real value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape &shape() const;
    std::size_t dim(std::size_t axis) const;
    std::size_t rank() const { return shape().size(); }
    std::size_t numel() const;

    std::span<const Real> data() const;
    std::span<Real> mutable_data();
    Real item() const;
    Real at(std::size_t row, std::size_t col) const;

    bool requires_grad() const;
    bool has_grad() const;
    std::span<const Real> grad() const;
    std::span<Real> mutable_grad();
    void zero_grad();

    // Accumulates d(this)/d(leaf) into every reachable leaf that requires grad.
    // Intermediate gradients are recomputed from scratch on each call; leaf
    // gradients accumulate until zero_grad().
    void backward() const;

    // Internal: op construction.
    static Tensor make_result(Shape shape, std::vector<Real> data,
                              std::vector<Tensor> parents,
                              std::function<void(detail::Node &)> backward_fn);
    const std::shared_ptr<detail::Node> &node() const { return node_; }

   private:
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    std::shared_ptr<detail::Node> node_;
};

// While alive, ops on this thread record no tape (inference mode).
class NoGradGuard {
   public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard &) = delete;
    NoGradGuard &operator=(const NoGradGuard &) = delete;

   private:
    bool previous_;
};

// Valid (unpadded) 1-D cross-correlation.
// input [C_in, L], kernels [C_out, C_in, k], bias [C_out] -> [C_out, L-k+1]
Tensor conv1d_valid(const Tensor &input, const Tensor &kernels, const Tensor &bias);

// Keeps samples 0, 2, 4, ... along the time axis: [C, L] -> [C, ceil(L/2)].
Tensor decimate2(const Tensor &input);

// Linear interpolation upsampler: [C, L] -> [C, 2L-1].
Tensor lininterp_upsample2(const Tensor &input);

// Center-crops `skip` to the length of `up` and stacks along channels.
Tensor crop_concat(const Tensor &skip, const Tensor &up);

Tensor leaky_relu(const Tensor &x, Real slope);
Tensor tanh(const Tensor &x);
Tensor sigmoid(const Tensor &x);

// Elementwise product/sum. `b` may also be [C, 1] against `a` of [C, L].
Tensor mul(const Tensor &a, const Tensor &b);
Tensor add(const Tensor &a, const Tensor &b);
Tensor scale(const Tensor &x, Real factor);
Tensor sum(const Tensor &x);
Tensor reshape(const Tensor &x, Shape shape);

// Mean of squared differences over all elements; returns a scalar tensor.
Tensor mse_loss(const Tensor &pred, const Tensor &target);

}  // namespace wavesep
