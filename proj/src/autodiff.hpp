#pragma once

#include "tensor.hpp"

#include <functional>
#include <memory>
#include <vector>

namespace gazediff {

class Tape;

// Value flowing through model code, optionally attached to a tape node.
// Ops on detached Vars just compute values; that is the inference path.
class Var {
public:
    Var() = default;
    explicit Var(Tensor value) : value_(std::make_shared<Tensor>(std::move(value))) {}

    const Tensor & value() const { return *value_; }
    bool defined() const { return static_cast<bool>(value_); }
    bool on_tape() const { return tape_ != nullptr; }

private:
    friend class Tape;
    friend struct VarAccess;

    std::shared_ptr<const Tensor> value_;
    Tape * tape_ = nullptr;
    int node_ = -1;
};

// Dynamically recorded computation graph. One tape per training step; the
// graph is consumed by backward(). Confined to a single thread.
class Tape {
public:
    Tape() = default;
    Tape(const Tape &) = delete;
    Tape & operator=(const Tape &) = delete;

    // Leaf node. If grad_sink is non-null its shape must match value and the
    // leaf's gradient is accumulated into it by backward().
    Var leaf(const Tensor & value, Tensor * grad_sink = nullptr);

    // Reverse sweep from a scalar loss. Throws ShapeError for non-scalar
    // losses; a tape can only be swept once.
    void backward(const Var & loss);

    // Gradient of a node after backward (zeros if the node was unreachable).
    Tensor grad(const Var & v) const;

    size_t size() const { return nodes_.size(); }

    // Accumulates g into the grad buffer of node id (used by op closures).
    void accumulate(int node, const Tensor & g);

private:
    friend struct VarAccess;

    struct Node {
        std::function<void(Tape &, const Tensor & out_grad)> back;
        std::vector<int64_t> shape;
        Tensor * sink = nullptr;
    };

    int add_node(const Tensor & value, std::function<void(Tape &, const Tensor &)> back,
                 Tensor * sink = nullptr);

    std::vector<Node> nodes_;
    std::vector<Tensor> grads_;
    bool consumed_ = false;
};

// ---- differentiable ops -------------------------------------------------

Var matmul(const Var & a, const Var & b);
Var transpose(const Var & a);
Var add(const Var & a, const Var & b); // same shape, or b a broadcast row
Var sub(const Var & a, const Var & b);
Var mul(const Var & a, const Var & b); // elementwise
Var scale(const Var & a, double c);
Var affine(const Var & a, double mul, double add); // mul*x + add elementwise
Var add_const(const Var & a, const Tensor & c);
Var mul_const(const Var & a, const Tensor & c);
Var relu(const Var & a);
Var sigmoid(const Var & a);
Var vlog(const Var & a);
Var vabs(const Var & a);
Var square(const Var & a);
Var clamp(const Var & a, double lo, double hi);
Var softmax_rows(const Var & a);
Var layer_norm_rows(const Var & x, const Var & gain, const Var & bias, double eps = 1e-5);
Var concat_cols(const Var & a, const Var & b);
Var slice_cols(const Var & a, int64_t first, int64_t count);
Var repeat_rows(const Var & a, int64_t times); // a is 1 x C
Var sum_all(const Var & a);                    // 1x1
Var mean_all(const Var & a);                   // 1x1

double scalar_value(const Var & a);

} // namespace gazediff
