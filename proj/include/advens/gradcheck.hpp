#pragma once

#include <functional>
#include <vector>

#include "advens/graph.hpp"

namespace advens {

// A differentiable scalar function of one tensor, expressed as graph
// construction: given a graph and the input node, return the scalar root.
using ScalarFn = std::function<NodeId(Graph&, NodeId)>;

struct GradCheckReport {
    bool pass = false;
    double max_rel_err = 0.0;
    std::vector<double> rel_err;       // per coordinate; 0 for skipped coords
    std::vector<bool> coord_pass;      // skipped coords count as passing
    std::vector<double> analytic;      // reverse-mode gradient
    std::vector<double> numeric;       // central differences
    int skipped = 0;
    bool finite = true;                // false if any probe value was non-finite
};

// Compares the reverse-mode gradient of f at `point` against central finite
// differences (f(x + h e_i) - f(x - h e_i)) / 2h. Relative error uses
// denominator max(1, |analytic|, |numeric|). Coordinates flagged in `skip`
// (kink mask, e.g. relu inputs at exactly 0) are excluded.
GradCheckReport grad_check(const ScalarFn& f, const Tensor& point, double step, double tol,
                           const std::vector<bool>* skip = nullptr);

}  // namespace advens
