#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "advens/graph.hpp"
#include "advens/tensor.hpp"

namespace advens {

enum class ArchKind { Mlp, SmallCnn };

struct MlpSpec {
    int input_dim = 2;
    std::vector<int> hidden = {16, 16};
    int classes = 2;

    bool operator==(const MlpSpec&) const = default;
};

// Stack of stride-1 same-padded convolutions with relu, optional average
// pooling after the stack, then flatten -> dense hidden -> logits.
struct CnnSpec {
    int in_channels = 1;
    int in_h = 2;
    int in_w = 4;
    std::vector<int> channels = {8};
    int kernel = 3;
    int pool = 1;  // 1 = no pooling
    int dense_hidden = 16;
    int classes = 2;

    bool operator==(const CnnSpec&) const = default;
};

struct ModelSpec {
    ArchKind kind = ArchKind::Mlp;
    MlpSpec mlp;
    CnnSpec cnn;

    static ModelSpec make_mlp(int input_dim, std::vector<int> hidden, int classes);
    static ModelSpec make_cnn(CnnSpec c);

    int classes() const { return kind == ArchKind::Mlp ? mlp.classes : cnn.classes; }
    int input_dim() const;
    void validate() const;
    bool operator==(const ModelSpec&) const = default;
};

long param_count(const ModelSpec& spec);

// Shapes of the weight/bias tensors, in layer order (weights then bias per layer).
std::vector<std::vector<int>> layer_shapes(const ModelSpec& spec);

struct ModelParams {
    ModelSpec spec;
    std::vector<Tensor> layers;  // order matches layer_shapes(spec)
    uint64_t seed = 0;
};

// Weights ~ N(0, 1/fan_in), biases zero; fully determined by (spec, seed).
ModelParams init_params(const ModelSpec& spec, uint64_t seed);

std::vector<double> flatten_params(const ModelParams& p);
void unflatten_params(ModelParams& p, std::span<const double> flat);

// Inserts each layer tensor as a graph input; use when gradients w.r.t. the
// parameters are needed.
std::vector<NodeId> insert_params(Graph& g, const ModelParams& p);

// x: [B, input_dim] (or [input_dim], treated as one row) -> logits [B, classes].
NodeId forward_logits(Graph& g, const ModelSpec& spec, std::span<const NodeId> layers, NodeId x);
Tensor forward_logits(const ModelParams& p, const Tensor& x);

enum class Averaging { Probability, Logit };

struct Ensemble {
    std::vector<ModelParams> members;
    Averaging mode = Averaging::Probability;

    int classes() const;
    void validate() const;
};

// Probability mode: mean of softmax(member logits); logit mode: mean of raw
// logits, no softmax.
NodeId ensemble_forward(Graph& g, const Ensemble& e, const std::vector<std::vector<NodeId>>& member_layers,
                        NodeId x);
NodeId ensemble_forward(Graph& g, const Ensemble& e, NodeId x);
Tensor ensemble_forward(const Ensemble& e, const Tensor& x);

// Scales every hidden width / channel count by a common factor so that the
// parameter count lands as close as possible to target_params; ties prefer
// the smaller widths.
ModelSpec match_width(const ModelSpec& base, long target_params);

}  // namespace advens
