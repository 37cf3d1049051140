#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "advens/tensor.hpp"

namespace advens {

using NodeId = int;

enum class Op {
    Input,
    MatMul,
    Add,
    MulScalar,
    Relu,
    Conv2d,
    AvgPool2d,
    Softmax,
    LogSoftmax,
    Log,
    Mean,
    Sum,
    Pick,
    ClampMin,
    Margin,
    Reshape,
};

const char* op_name(Op op);

// Eager tape: every primitive appends a node, backward() walks the tape in
// reverse. A Graph lives for one forward/backward pass and is then discarded.
class Graph {
public:
    NodeId input(Tensor t);

    NodeId matmul(NodeId a, NodeId b);
    // Elementwise when shapes match; otherwise b must match a trailing suffix
    // of a's shape and is broadcast across the leading dimensions.
    NodeId add(NodeId a, NodeId b);
    NodeId mul_scalar(NodeId a, double s);
    NodeId relu(NodeId a);
    // x: [B,C,H,W], w: [F,C,kh,kw], bias: [F]; zero padding, square stride.
    NodeId conv2d(NodeId x, NodeId w, NodeId bias, int stride, int pad);
    // Non-overlapping window; H and W must be divisible by the window.
    NodeId avg_pool2d(NodeId x, int window);
    NodeId softmax(NodeId a);      // last axis
    NodeId log_softmax(NodeId a);  // last axis
    NodeId log(NodeId a);
    NodeId mean(NodeId a);  // -> scalar
    NodeId sum(NodeId a);   // -> scalar
    // a: [B,C], labels: one class index per row -> [B].
    NodeId pick(NodeId a, std::vector<int> labels);
    // max(a, floor); each clamped coordinate bumps the warning counter.
    NodeId clamp_min(NodeId a, double floor);
    // logits [B,C] -> [B]: z[t] - max_{i != t} z[i]; lowest-index ties.
    NodeId margin(NodeId logits, std::vector<int> labels);
    NodeId reshape(NodeId a, std::vector<int> new_shape);

    const Tensor& val(NodeId id) const { return nodes_[static_cast<size_t>(id)].out; }
    int size() const { return static_cast<int>(nodes_.size()); }

    // Gradients of the scalar root w.r.t. every node, indexed by node id.
    // Nodes the root does not depend on get an all-zero gradient.
    std::vector<Tensor> backward(NodeId root) const;

    long clamp_warnings() const { return clamp_warnings_; }

private:
    struct Node {
        Op op;
        std::vector<NodeId> parents;
        Tensor out;
        std::vector<int> iattrs;   // per-op integer attributes
        double dattr = 0.0;        // per-op scalar attribute
        std::vector<int> labels;   // Pick/Margin class indices
    };

    NodeId push(Node n);
    const Node& node(NodeId id) const { return nodes_[static_cast<size_t>(id)]; }

    void backward_one(const Node& n, const Tensor& up, std::vector<Tensor>& grads) const;

    std::vector<Node> nodes_;
    long clamp_warnings_ = 0;
};

}  // namespace advens
