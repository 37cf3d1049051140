#include "advens/gradsuite.hpp"

#include <cmath>
#include <ostream>

#include "advens/losses.hpp"
#include "advens/model.hpp"
#include "advens/rng.hpp"

namespace advens {

namespace {

Tensor randn(Rng& rng, std::vector<int> shape, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (double& x : t.v) x = scale * rng.next_gaussian();
    return t;
}

struct Runner {
    GradSuiteResult& res;
    double tol;
    double step = 1e-5;

    void operator()(const std::string& name, const ScalarFn& fn, const Tensor& point,
                    const std::vector<bool>* skip = nullptr) {
        GradCheckReport r = grad_check(fn, point, step, tol, skip);
        ++res.checks;
        res.max_rel_err = std::max(res.max_rel_err, r.max_rel_err);
        if (!r.pass) {
            ++res.failures;
            res.failed_cases.push_back(name);
        }
    }
};

std::vector<bool> kink_mask(const Tensor& t, double kink, double margin = 1e-4) {
    std::vector<bool> m(t.v.size());
    for (size_t i = 0; i < t.v.size(); ++i) m[i] = std::fabs(t.v[i] - kink) < margin;
    return m;
}

std::vector<int> random_labels(Rng& rng, int rows, int classes) {
    std::vector<int> ys(static_cast<size_t>(rows));
    for (int& y : ys) y = static_cast<int>(rng.next_below(static_cast<uint64_t>(classes)));
    return ys;
}

void check_primitives(Runner& check, Rng& rng) {
    const int B = 2, C = 4;
    std::vector<int> ys = random_labels(rng, B, C);

    Tensor a = randn(rng, {B, 3});
    Tensor w = randn(rng, {3, C});
    check("matmul/lhs", [&](Graph& g, NodeId x) { return g.sum(g.matmul(x, g.input(w))); }, a);
    check("matmul/rhs", [&](Graph& g, NodeId x) { return g.sum(g.matmul(g.input(a), x)); }, w);

    Tensor m = randn(rng, {B, C});
    Tensor bias = randn(rng, {C});
    check("add/elementwise", [&](Graph& g, NodeId x) { return g.sum(g.add(x, g.input(m))); }, randn(rng, {B, C}));
    check("add/broadcast", [&](Graph& g, NodeId x) { return g.sum(g.add(g.input(m), x)); }, bias);

    check("mul_scalar", [&](Graph& g, NodeId x) { return g.sum(g.mul_scalar(x, 1.7)); }, m);

    Tensor r = randn(rng, {B, C});
    auto rmask = kink_mask(r, 0.0);
    check("relu", [&](Graph& g, NodeId x) { return g.sum(g.relu(x)); }, r, &rmask);

    Tensor img = randn(rng, {1, 2, 4, 4});
    Tensor kw = randn(rng, {3, 2, 3, 3}, 0.5);
    Tensor kb = randn(rng, {3});
    check("conv2d/input", [&](Graph& g, NodeId x) { return g.sum(g.conv2d(x, g.input(kw), g.input(kb), 1, 1)); }, img);
    check("conv2d/weight", [&](Graph& g, NodeId x) { return g.sum(g.conv2d(g.input(img), x, g.input(kb), 1, 1)); }, kw);
    check("conv2d/bias", [&](Graph& g, NodeId x) { return g.sum(g.conv2d(g.input(img), g.input(kw), x, 1, 1)); }, kb);
    check("avg_pool2d", [&](Graph& g, NodeId x) { return g.sum(g.avg_pool2d(x, 2)); }, img);

    check("softmax", [&](Graph& g, NodeId x) { return g.sum(g.pick(g.softmax(x), ys)); }, m);
    check("log_softmax", [&](Graph& g, NodeId x) { return g.sum(g.pick(g.log_softmax(x), ys)); }, m);

    Tensor pos = randn(rng, {B, C});
    for (double& x : pos.v) x = std::fabs(x) + 0.5;
    check("log", [&](Graph& g, NodeId x) { return g.sum(g.log(x)); }, pos);

    check("mean", [&](Graph& g, NodeId x) { return g.mean(x); }, m);
    check("sum", [&](Graph& g, NodeId x) { return g.sum(x); }, m);
    check("pick", [&](Graph& g, NodeId x) { return g.sum(g.pick(x, ys)); }, m);

    Tensor cl = randn(rng, {B, C});
    auto cmask = kink_mask(cl, 0.3);
    check("clamp_min", [&](Graph& g, NodeId x) { return g.sum(g.clamp_min(x, 0.3)); }, cl, &cmask);

    Tensor logits = randn(rng, {B, C});
    std::vector<bool> mmask(logits.v.size(), false);
    for (int b = 0; b < B; ++b) {
        double top1 = -1e300, top2 = -1e300;
        for (int c = 0; c < C; ++c) {
            if (c == ys[static_cast<size_t>(b)]) continue;
            double z = logits.v[static_cast<size_t>(b * C + c)];
            if (z > top1) {
                top2 = top1;
                top1 = z;
            } else if (z > top2) {
                top2 = z;
            }
        }
        if (top1 - top2 < 1e-3)
            for (int c = 0; c < C; ++c) mmask[static_cast<size_t>(b * C + c)] = true;
    }
    check("margin", [&](Graph& g, NodeId x) { return g.sum(g.margin(x, ys)); }, logits, &mmask);

    Tensor flat = randn(rng, {B * C});
    check("reshape", [&](Graph& g, NodeId x) { return g.sum(g.pick(g.softmax(g.reshape(x, {B, C})), ys)); }, flat);
}

void check_losses(Runner& check, Rng& rng) {
    const int B = 3, C = 4;
    std::vector<int> ys = random_labels(rng, B, C);
    Tensor logits = randn(rng, {B, C});
    check("loss/ce-probs",
          [&](Graph& g, NodeId x) { return batch_loss(g, LossKind::CrossEntropyProbs, g.softmax(x), ys); }, logits);
    check("loss/ce-logits",
          [&](Graph& g, NodeId x) { return batch_loss(g, LossKind::CrossEntropyLogits, x, ys); }, logits);
    check("loss/margin", [&](Graph& g, NodeId x) { return batch_loss(g, LossKind::Margin, x, ys); }, logits);
}

// Zero-initialized biases put dead relu rows exactly on the kink, where
// relu'(0) = 0 disagrees with a central difference; jitter all parameters off
// the init point.
ModelParams jittered_params(Rng& rng, const ModelSpec& spec, uint64_t seed) {
    ModelParams p = init_params(spec, seed);
    for (Tensor& t : p.layers)
        for (double& x : t.v) x += 0.1 * rng.next_gaussian();
    return p;
}

void check_model(Runner& check, Rng& rng, const ModelSpec& spec, const std::string& tag, uint64_t seed) {
    const int B = 2;
    ModelParams p = jittered_params(rng, spec, seed);
    std::vector<int> ys = random_labels(rng, B, spec.classes());
    Tensor x = randn(rng, {B, spec.input_dim()}, 0.5);

    check(tag + "/input",
          [&](Graph& g, NodeId xn) {
              auto layers = insert_params(g, p);
              return batch_loss(g, LossKind::CrossEntropyProbs, g.softmax(forward_logits(g, spec, layers, xn)), ys);
          },
          x);

    for (size_t li = 0; li < p.layers.size(); ++li) {
        check(tag + "/layer" + std::to_string(li),
              [&](Graph& g, NodeId pn) {
                  std::vector<NodeId> layers;
                  for (size_t j = 0; j < p.layers.size(); ++j)
                      layers.push_back(j == li ? pn : g.input(p.layers[j]));
                  NodeId xn = g.input(x);
                  return batch_loss(g, LossKind::CrossEntropyProbs, g.softmax(forward_logits(g, spec, layers, xn)),
                                    ys);
              },
              p.layers[li]);
    }
}

void check_ensemble_loss(Runner& check, Rng& rng, uint64_t seed) {
    const int B = 2;
    ModelSpec spec = ModelSpec::make_mlp(3, {4}, 3);
    Ensemble e{{jittered_params(rng, spec, mix_seed(seed, 0)), jittered_params(rng, spec, mix_seed(seed, 1))},
               Averaging::Probability};
    std::vector<int> ys = random_labels(rng, B, 3);
    Tensor x_clean = randn(rng, {B, 3}, 0.5);
    Tensor x_adv = x_clean;
    for (double& v : x_adv.v) v += 0.05 * rng.next_gaussian();
    const double rho = 0.5;

    check("ensemble-loss/member0-weights",
          [&](Graph& g, NodeId pn) {
              std::vector<std::vector<NodeId>> layers;
              for (size_t mi = 0; mi < e.members.size(); ++mi) {
                  std::vector<NodeId> lay;
                  for (size_t j = 0; j < e.members[mi].layers.size(); ++j)
                      lay.push_back(mi == 0 && j == 0 ? pn : g.input(e.members[mi].layers[j]));
                  layers.push_back(std::move(lay));
              }
              NodeId clean = batch_loss(g, LossKind::CrossEntropyProbs,
                                        ensemble_forward(g, e, layers, g.input(x_clean)), ys);
              NodeId adv = batch_loss(g, LossKind::CrossEntropyProbs,
                                      ensemble_forward(g, e, layers, g.input(x_adv)), ys);
              return g.add(clean, g.mul_scalar(adv, rho));
          },
          e.members[0].layers[0]);
}

}  // namespace

GradSuiteResult gradcheck_suite(int n_seeds, double tol, std::ostream* log) {
    GradSuiteResult res;
    Runner check{res, tol};
    for (int s = 0; s < n_seeds; ++s) {
        uint64_t seed = mix_seed(0x6772616463686bULL, static_cast<uint64_t>(s));
        Rng rng(seed);
        check_primitives(check, rng);
        check_losses(check, rng);
        check_model(check, rng, ModelSpec::make_mlp(3, {4, 4}, 3), "mlp", mix_seed(seed, 2));
        CnnSpec c;
        c.in_channels = 1;
        c.in_h = 2;
        c.in_w = 4;
        c.channels = {3};
        c.kernel = 3;
        c.pool = 2;
        c.dense_hidden = 4;
        c.classes = 3;
        check_model(check, rng, ModelSpec::make_cnn(c), "cnn", mix_seed(seed, 3));
        check_ensemble_loss(check, rng, mix_seed(seed, 4));
    }
    if (log) {
        *log << "gradcheck: " << res.checks << " checks, " << res.failures << " failures, max rel err "
             << res.max_rel_err << "\n";
        for (const std::string& name : res.failed_cases) *log << "  FAIL " << name << "\n";
    }
    return res;
}

}  // namespace advens
