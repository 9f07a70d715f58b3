#ifndef PERTNET_AUTODIFF_HPP
#define PERTNET_AUTODIFF_HPP

#include "pertnet/tensor.hpp"

#include <functional>
#include <span>

namespace pertnet {

enum class OpKind : uint8_t {
    leaf,
    add,
    sub,
    mul,
    mul_scalar,
    affine,
    sum,
    mean,
    reshape,
    pick_sum,
    relu,
    maxpool,
    conv,
    conv_transpose,
    dense,
    softmax,
    cross_entropy,
    l1_distance,
    mse,
    frame_continuity,
};

const char* op_name(OpKind k);

/// Handle to a node on a Tape. Only meaningful together with the tape that
/// produced it.
struct Var {
    int id = -1;
    bool valid() const noexcept { return id >= 0; }
};

/// Gradients of a scalar loss with respect to the trainable leaves of a tape.
class GradMap {
public:
    const Tensor& at(Var v) const;
    bool contains(Var v) const noexcept;
    std::size_t size() const noexcept { return entries_.size(); }

private:
    friend class Tape;
    std::vector<std::pair<int, Tensor>> entries_;  // sorted by node id
};

/// Recorded computation graph for reverse-mode differentiation. Nodes are
/// appended in topological order; a tape is single-writer and owns every
/// forward value until it is destroyed.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Record an input tensor. Trainable leaves receive gradients from
    /// backward(); non-trainable leaves are constants.
    Var leaf(Tensor value, bool trainable);

    const Tensor& value(Var v) const;
    OpKind kind(Var v) const;
    bool trainable(Var v) const;
    int size() const noexcept { return static_cast<int>(nodes_.size()); }

    /// Reverse sweep from a scalar loss node. Every trainable leaf appears in
    /// the result; leaves the loss does not depend on get zero gradients.
    GradMap backward(Var loss);

    // --- implementation surface for op definitions ---
    using BackwardFn = std::function<void(Tape&, int node_id)>;
    Var record(OpKind kind, Tensor value, std::span<const Var> inputs, BackwardFn backward);
    const Eigen::ArrayXf& grad_flat(int id) const { return grads_[static_cast<std::size_t>(id)]; }
    bool has_grad(int id) const { return grad_set_[static_cast<std::size_t>(id)] != 0; }
    /// True when a gradient for this node can reach a trainable leaf; backward
    /// rules skip gradient work for nodes that cannot.
    bool needs_grad(int id) const { return requires_[static_cast<std::size_t>(id)] != 0; }
    template <typename Expr>
    void accum_grad(int id, const Expr& g) {
        auto i = static_cast<std::size_t>(id);
        if (!requires_[i]) return;
        if (!grad_set_[i]) {
            grads_[i] = g;
            grad_set_[i] = 1;
        } else {
            grads_[i] += g;
        }
    }
    /// Mutable zero-initialized gradient buffer for hand-written backward
    /// kernels; call only when needs_grad(id).
    Eigen::ArrayXf& grad_buffer(int id);
    void check_on_tape(Var v, const char* op) const;

private:
    struct Node {
        OpKind kind;
        Tensor value;
        bool trainable = false;
        BackwardFn backward;
    };
    std::vector<Node> nodes_;
    std::vector<char> requires_;
    std::vector<Eigen::ArrayXf> grads_;
    std::vector<char> grad_set_;
};

// Elementwise and reduction ops. Every op validates shapes and rejects
// non-finite values; forward results are bit-deterministic.
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
Var mul_scalar(Tape& t, Var a, Var c);  // c: one-element tensor, broadcast
Var mul_scalar(Tape& t, Var a, float c);
Var affine(Tape& t, Var a, float scale, float shift);
Var sum(Tape& t, Var a);
Var mean(Tape& t, Var a);
Var reshape(Tape& t, Var a, Shape shape);
Var pick_sum(Tape& t, Var a, std::span<const int> indices);

/// Generic entry point for the simple operator set (add, sub, mul,
/// mul_scalar, sum, mean); layer ops have their own typed constructors.
Var forward_op(Tape& t, OpKind kind, std::span<const Var> inputs);

GradMap backward(Tape& t, Var loss);

/// Max relative error between the analytic gradient of f at x and central
/// finite differences with the given step:
///   max_i |analytic_i - central_i| / max(|analytic_i|, |central_i|, 1e-8).
/// f must be deterministic and produce a finite scalar.
double finite_diff_check(const std::function<Var(Tape&, Var)>& f, const Tensor& x, double step);

}  // namespace pertnet

#endif
