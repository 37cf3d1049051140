#pragma once

#include <string>
#include <vector>

#include "advens/graph.hpp"

namespace advens {

enum class LossKind {
    CrossEntropyProbs,   // -log p[t], expects a probability vector
    CrossEntropyLogits,  // -log softmax(z)[t]
    Margin,              // z[t] - max_{i != t} z[i]; negative iff misclassified
};

std::string loss_kind_name(LossKind k);
LossKind loss_kind_from_name(const std::string& name);

// Numerical floor inside -log(p): the probability-averaged ensemble can emit
// an exact 0 for the true class.
inline constexpr double kProbFloor = 1e-12;

enum class Reduce { Mean, Sum };

// Per-row loss for a batch of model outputs [B,C] -> [B].
NodeId batch_loss_rows(Graph& g, LossKind kind, NodeId outputs, const std::vector<int>& labels);

// Scalar reduction of the per-row loss.
NodeId batch_loss(Graph& g, LossKind kind, NodeId outputs, const std::vector<int>& labels,
                  Reduce reduce = Reduce::Mean);

// Single-example loss: output is a vector of length |classes|.
NodeId loss(Graph& g, LossKind kind, NodeId model_output, int true_label);

// Argmax with lowest-index tie-breaking; the prediction rule everywhere.
int argmax_lowest(const double* row, int n);
int predict_row(const Tensor& outputs, int row);

}  // namespace advens
