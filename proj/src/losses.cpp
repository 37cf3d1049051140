#include "advens/losses.hpp"

namespace advens {

std::string loss_kind_name(LossKind k) {
    switch (k) {
        case LossKind::CrossEntropyProbs: return "cross-entropy-from-probabilities";
        case LossKind::CrossEntropyLogits: return "cross-entropy-from-logits";
        case LossKind::Margin: return "margin";
    }
    return "?";
}

LossKind loss_kind_from_name(const std::string& name) {
    if (name == "cross-entropy-from-probabilities" || name == "ce-probs") return LossKind::CrossEntropyProbs;
    if (name == "cross-entropy-from-logits" || name == "ce-logits") return LossKind::CrossEntropyLogits;
    if (name == "margin") return LossKind::Margin;
    throw std::invalid_argument("unknown loss kind: " + name);
}

NodeId batch_loss_rows(Graph& g, LossKind kind, NodeId outputs, const std::vector<int>& labels) {
    switch (kind) {
        case LossKind::CrossEntropyProbs:
            return g.mul_scalar(g.log(g.clamp_min(g.pick(outputs, labels), kProbFloor)), -1.0);
        case LossKind::CrossEntropyLogits:
            return g.mul_scalar(g.pick(g.log_softmax(outputs), labels), -1.0);
        case LossKind::Margin:
            return g.margin(outputs, labels);
    }
    throw std::invalid_argument("batch_loss_rows: bad loss kind");
}

NodeId batch_loss(Graph& g, LossKind kind, NodeId outputs, const std::vector<int>& labels, Reduce reduce) {
    NodeId rows = batch_loss_rows(g, kind, outputs, labels);
    return reduce == Reduce::Mean ? g.mean(rows) : g.sum(rows);
}

NodeId loss(Graph& g, LossKind kind, NodeId model_output, int true_label) {
    const Tensor& out = g.val(model_output);
    NodeId as_row = model_output;
    if (out.shape.size() == 1) as_row = g.reshape(model_output, {1, out.numel()});
    return batch_loss(g, kind, as_row, {true_label}, Reduce::Sum);
}

int argmax_lowest(const double* row, int n) {
    int best = 0;
    for (int i = 1; i < n; ++i)
        if (row[i] > row[best]) best = i;
    return best;
}

int predict_row(const Tensor& outputs, int row) {
    int cols = outputs.shape.back();
    return argmax_lowest(outputs.v.data() + static_cast<size_t>(row) * cols, cols);
}

}  // namespace advens
