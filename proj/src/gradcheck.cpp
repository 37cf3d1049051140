#include "advens/gradcheck.hpp"

#include <cmath>
#include <limits>

namespace advens {

namespace {

// A probe that leaves the function's domain (e.g. log crossing 0) counts as a
// non-finite value rather than escaping as an exception.
double eval_scalar(const ScalarFn& f, const Tensor& point) {
    try {
        Graph g;
        NodeId x = g.input(point);
        NodeId root = f(g, x);
        return g.val(root).item();
    } catch (const DomainError&) {
        return std::numeric_limits<double>::quiet_NaN();
    }
}

}  // namespace

GradCheckReport grad_check(const ScalarFn& f, const Tensor& point, double step, double tol,
                           const std::vector<bool>* skip) {
    GradCheckReport rep;
    int n = point.numel();
    rep.rel_err.assign(static_cast<size_t>(n), 0.0);
    rep.coord_pass.assign(static_cast<size_t>(n), true);
    rep.numeric.assign(static_cast<size_t>(n), 0.0);

    Graph g;
    NodeId x = g.input(point);
    NodeId root = f(g, x);
    auto grads = g.backward(root);
    rep.analytic = grads[static_cast<size_t>(x)].v;

    bool all_pass = true;
    for (int i = 0; i < n; ++i) {
        if (skip && (*skip)[static_cast<size_t>(i)]) {
            ++rep.skipped;
            continue;
        }
        Tensor probe = point;
        probe.v[static_cast<size_t>(i)] = point.v[static_cast<size_t>(i)] + step;
        double fp = eval_scalar(f, probe);
        probe.v[static_cast<size_t>(i)] = point.v[static_cast<size_t>(i)] - step;
        double fm = eval_scalar(f, probe);
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
            rep.finite = false;
            rep.coord_pass[static_cast<size_t>(i)] = false;
            all_pass = false;
            continue;
        }
        double numeric = (fp - fm) / (2.0 * step);
        double analytic = rep.analytic[static_cast<size_t>(i)];
        rep.numeric[static_cast<size_t>(i)] = numeric;
        double denom = std::max({1.0, std::fabs(analytic), std::fabs(numeric)});
        double err = std::fabs(analytic - numeric) / denom;
        rep.rel_err[static_cast<size_t>(i)] = err;
        rep.max_rel_err = std::max(rep.max_rel_err, err);
        if (err > tol) {
            rep.coord_pass[static_cast<size_t>(i)] = false;
            all_pass = false;
        }
    }
    rep.pass = all_pass && rep.finite;
    return rep;
}

}  // namespace advens
