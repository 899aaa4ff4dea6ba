#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "uatr/tensor.hpp"

namespace uatr {

/// A trainable tensor with its gradient accumulator and Adam moments.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    Tensor m;
    Tensor v;

    Parameter() = default;
    Parameter(std::string n, Tensor init)
        : name(std::move(n)), value(std::move(init)), grad(value.shape), m(value.shape), v(value.shape) {}
};

class Tape;

/// Handle to a node on a Tape.
struct Var {
    std::size_t id = static_cast<std::size_t>(-1);
};

/// Records tensor operations for one forward pass and replays them in
/// reverse. Nodes are appended in execution order, so reverse index order is
/// a valid topological order.
class Tape {
public:
    using Backward = std::function<void(Tape&, std::size_t self)>;

    Var constant(Tensor value);
    /// Leaf bound to a parameter; its gradient is added to `param.grad` by
    /// backward().
    Var parameter(Parameter& param);
    Var push(Tensor value, Backward backward, const char* op);

    const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
    /// Gradient buffer of a node, allocated as zeros on first access.
    Tensor& grad(Var v) { return grad(v.id); }
    Tensor& grad(std::size_t id);
    bool has_grad(std::size_t id) const { return !nodes_[id].grad.data.empty(); }

    /// Seeds d(loss)/d(loss) = 1 and propagates to every node. `loss` must be
    /// a single-element tensor.
    void backward(Var loss);

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        Backward backward;
        Parameter* param = nullptr;
    };
    std::vector<Node> nodes_;
};

/// Throws NumericError naming `op` if any value is NaN or infinite.
void guard_finite(const Tensor& t, const char* op);

namespace ops {

Var add(Tape& tape, Var a, Var b);
Var relu(Tape& tape, Var x);
Var scale(Tape& tape, Var x, double factor);

/// x: [n, ci, T, F], w: [co, ci, kt, 3], b: [co]. Zero padding kt/2 in time
/// and 1 in frequency; stride 1 in time, `stride_f` in frequency.
Var conv2d(Tape& tape, Var x, Var w, Var b, std::size_t stride_f);

/// [n, c, T, F] -> [n, T, c], mean over frequency.
Var freq_mean(Tape& tape, Var x);

/// y = x W^T (+ b) over the last axis. W: [out, in], b: [out] or invalid Var.
Var linear(Tape& tape, Var x, Var w, Var b = {});

/// Multi-head attention of one query over a sequence.
/// q: [E], keys and values: [n, T, E]; heads split E evenly. Returns [n, E].
Var attend(Tape& tape, Var q, Var keys, Var values, std::size_t heads);

/// Mean over the batch of -log softmax(z_i)[y_i]. z: [n, C].
Var cross_entropy(Tape& tape, Var z, std::span<const int> labels);

/// (1/n) sum_i sum_c p_ic log(p_ic / q_ic), p = softmax(z), q = softmax(z_other),
/// probabilities floored at kProbFloor before the log ratio.
Var kl_divergence(Tape& tape, Var z, Var z_other);

/// Stacks [n1, ...] and [n2, ...] along the first axis.
Var concat_rows(Tape& tape, Var a, Var b);

}  // namespace ops

}  // namespace uatr
