#include "advens/attack.hpp"

#include <algorithm>
#include <cmath>

#include "advens/rng.hpp"

namespace advens {

void AttackConfig::validate() const {
    if (!(delta > 0.0)) throw std::invalid_argument("attack config: delta must be > 0");
    if (steps < 1) throw std::invalid_argument("attack config: steps must be >= 1");
    if (!(step_size > 0.0)) throw std::invalid_argument("attack config: step size must be > 0");
    if (init_sigma < 0.0) throw std::invalid_argument("attack config: init sigma must be >= 0");
    if (rule == UpdateRule::Adam) {
        if (adam.beta1 < 0.0 || adam.beta1 >= 1.0 || adam.beta2 < 0.0 || adam.beta2 >= 1.0 || !(adam.eps > 0.0))
            throw std::invalid_argument("attack config: adam parameters out of range");
    }
}

AttackConfig AttackConfig::ifgsm(double delta, int steps) {
    AttackConfig c;
    c.delta = delta;
    c.steps = steps;
    c.step_size = 2.5 * delta / steps;
    c.init_sigma = delta / 2.0;
    c.rule = UpdateRule::Sign;
    return c;
}

AttackConfig AttackConfig::pgd_adam(double delta, int steps) {
    AttackConfig c;
    c.delta = delta;
    c.steps = steps;
    c.step_size = delta / 4.0;
    c.init_sigma = delta / 2.0;
    c.rule = UpdateRule::Adam;
    return c;
}

Tensor project_linf(const Tensor& x, const Tensor& x_nom, double delta,
                    const std::optional<std::pair<double, double>>& domain_clamp) {
    if (!x.same_shape(x_nom))
        throw ShapeError("project_linf: " + shape_str(x.shape) + " vs " + shape_str(x_nom.shape));
    Tensor out = x;
    for (size_t i = 0; i < out.v.size(); ++i) {
        // ball first, then domain; keeps the bounds ordered even if the
        // nominal point sits outside the domain interval
        out.v[i] = std::clamp(out.v[i], x_nom.v[i] - delta, x_nom.v[i] + delta);
        if (domain_clamp) out.v[i] = std::clamp(out.v[i], domain_clamp->first, domain_clamp->second);
    }
    return out;
}

namespace {

double sign0(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

void project_rows(Tensor& x, const Tensor& nom, double delta,
                  const std::optional<std::pair<double, double>>& clamp, const std::vector<char>& frozen,
                  int row_len) {
    int rows = x.numel() / row_len;
    for (int r = 0; r < rows; ++r) {
        if (frozen[static_cast<size_t>(r)]) continue;
        for (int i = 0; i < row_len; ++i) {
            size_t k = static_cast<size_t>(r) * row_len + i;
            x.v[k] = std::clamp(x.v[k], nom.v[k] - delta, nom.v[k] + delta);
            if (clamp) x.v[k] = std::clamp(x.v[k], clamp->first, clamp->second);
        }
    }
}

// Margin attacks always go through the logit mean; a logit-mean target has no
// probabilities for CE-probs to consume, so it falls back to CE-from-logits.
std::pair<Ensemble const*, LossKind> attack_objective(const Ensemble& target, LossKind loss, Ensemble& scratch) {
    if (loss == LossKind::Margin) {
        scratch = target;
        scratch.mode = Averaging::Logit;
        return {&scratch, loss};
    }
    if (target.mode == Averaging::Logit && loss == LossKind::CrossEntropyProbs)
        return {&target, LossKind::CrossEntropyLogits};
    return {&target, loss};
}

}  // namespace

BatchAttackResult attack_batch(const Ensemble& target, const Tensor& xs, const std::vector<int>& ys,
                               const AttackConfig& cfg, uint64_t rng_seed, int index_offset) {
    cfg.validate();
    target.validate();
    int classes = target.classes();
    for (int y : ys)
        if (y < 0 || y >= classes) throw std::invalid_argument("attack: label out of range");
    int rows = static_cast<int>(ys.size());
    if (rows == 0 || xs.numel() % rows != 0) throw ShapeError("attack: input rows do not match labels");
    int row_len = xs.numel() / rows;

    Ensemble scratch;
    auto [objective_model, objective_loss] = attack_objective(target, cfg.loss, scratch);

    BatchAttackResult res;
    res.success.assign(static_cast<size_t>(rows), 0);
    res.aborted.assign(static_cast<size_t>(rows), 0);

    // Noisy init, one generator per example.
    Tensor x_adv = xs;
    std::vector<char> frozen(static_cast<size_t>(rows), 0);
    for (int r = 0; r < rows; ++r) {
        Rng rng(mix_seed(rng_seed, static_cast<uint64_t>(index_offset + r), 0x61747461636bULL));
        for (int i = 0; i < row_len; ++i)
            x_adv.v[static_cast<size_t>(r) * row_len + i] += cfg.init_sigma * rng.next_gaussian();
    }
    project_rows(x_adv, xs, cfg.delta, cfg.domain_clamp, frozen, row_len);

    std::vector<double> m, v;
    if (cfg.rule == UpdateRule::Adam) {
        m.assign(x_adv.v.size(), 0.0);
        v.assign(x_adv.v.size(), 0.0);
    }

    for (int step = 1; step <= cfg.steps; ++step) {
        Graph g;
        NodeId xin = g.input(x_adv);
        NodeId out = ensemble_forward(g, *objective_model, xin);
        NodeId loss_rows = batch_loss_rows(g, objective_loss, out, ys);
        // Sum keeps each row's gradient equal to its single-example gradient.
        NodeId objective = objective_loss == LossKind::Margin ? g.sum(g.mul_scalar(loss_rows, -1.0)) : g.sum(loss_rows);
        auto grads = g.backward(objective);
        const Tensor& gx = grads[static_cast<size_t>(xin)];
        res.loss_trace.push_back(g.val(loss_rows).v);

        for (int r = 0; r < rows; ++r) {
            if (frozen[static_cast<size_t>(r)]) continue;
            const double* grow = gx.v.data() + static_cast<size_t>(r) * row_len;
            bool finite = true;
            for (int i = 0; i < row_len; ++i)
                if (!std::isfinite(grow[i])) finite = false;
            if (!finite) {
                res.aborted[static_cast<size_t>(r)] = 1;
                frozen[static_cast<size_t>(r)] = 1;
                continue;
            }
            double* xrow = x_adv.v.data() + static_cast<size_t>(r) * row_len;
            switch (cfg.rule) {
                case UpdateRule::Sign:
                    for (int i = 0; i < row_len; ++i) xrow[i] += cfg.step_size * sign0(grow[i]);
                    break;
                case UpdateRule::Gradient:
                    for (int i = 0; i < row_len; ++i) xrow[i] += cfg.step_size * grow[i];
                    break;
                case UpdateRule::Adam: {
                    double bc1 = 1.0 - std::pow(cfg.adam.beta1, step);
                    double bc2 = 1.0 - std::pow(cfg.adam.beta2, step);
                    for (int i = 0; i < row_len; ++i) {
                        size_t k = static_cast<size_t>(r) * row_len + i;
                        m[k] = cfg.adam.beta1 * m[k] + (1.0 - cfg.adam.beta1) * grow[i];
                        v[k] = cfg.adam.beta2 * v[k] + (1.0 - cfg.adam.beta2) * grow[i] * grow[i];
                        xrow[i] += cfg.step_size * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + cfg.adam.eps);
                    }
                    break;
                }
            }
        }
        project_rows(x_adv, xs, cfg.delta, cfg.domain_clamp, frozen, row_len);
    }

    Tensor final_out = ensemble_forward(target, x_adv);
    for (int r = 0; r < rows; ++r)
        res.success[static_cast<size_t>(r)] = predict_row(final_out, r) != ys[static_cast<size_t>(r)];
    res.adversarial = std::move(x_adv);
    return res;
}

AttackResult attack(const Ensemble& target, const Tensor& x, int y, const AttackConfig& cfg, uint64_t rng_seed) {
    Tensor xs({1, x.numel()}, x.v);
    BatchAttackResult b = attack_batch(target, xs, {y}, cfg, rng_seed);
    AttackResult res;
    res.adversarial = Tensor(x.shape, std::move(b.adversarial.v));
    res.success = b.success[0] != 0;
    res.aborted = b.aborted[0] != 0;
    for (const auto& row : b.loss_trace) res.loss_trace.push_back(row[0]);
    return res;
}

AttackResult transfer_attack(const std::vector<ModelParams>& members, const Tensor& x, int y,
                             const AttackConfig& cfg, TransferStrategy strategy, uint64_t rng_seed) {
    cfg.validate();
    if (members.empty()) throw std::invalid_argument("transfer_attack: empty member list");
    int row_len = x.numel();

    AttackResult res;
    Rng noise_rng(mix_seed(rng_seed, 0, 0x61747461636bULL));  // matches attack() example 0
    Rng choice_rng(mix_seed(rng_seed, 0x63686f696365ULL));
    Tensor x_adv = x;
    for (double& c : x_adv.v) c += cfg.init_sigma * noise_rng.next_gaussian();
    x_adv = project_linf(x_adv, x, cfg.delta, cfg.domain_clamp);

    std::vector<double> m, v;
    if (cfg.rule == UpdateRule::Adam) {
        m.assign(x_adv.v.size(), 0.0);
        v.assign(x_adv.v.size(), 0.0);
    }

    LossKind kind = cfg.loss;
    for (int step = 1; step <= cfg.steps; ++step) {
        Graph g;
        NodeId xin = g.input(Tensor({1, row_len}, x_adv.v));
        std::vector<NodeId> member_losses;
        for (const ModelParams& mem : members) {
            NodeId logits = forward_logits(g, mem.spec, insert_params(g, mem), xin);
            NodeId l;
            if (kind == LossKind::Margin)
                l = g.sum(g.mul_scalar(g.margin(logits, {y}), -1.0));
            else if (kind == LossKind::CrossEntropyProbs)
                l = batch_loss(g, LossKind::CrossEntropyProbs, g.softmax(logits), {y}, Reduce::Sum);
            else
                l = batch_loss(g, LossKind::CrossEntropyLogits, logits, {y}, Reduce::Sum);
            member_losses.push_back(l);
        }
        NodeId objective = -1;
        switch (strategy) {
            case TransferStrategy::RandomMember:
                objective = member_losses[choice_rng.next_below(member_losses.size())];
                break;
            case TransferStrategy::MeanLoss: {
                NodeId acc = member_losses[0];
                for (size_t i = 1; i < member_losses.size(); ++i) acc = g.add(acc, member_losses[i]);
                objective = g.mul_scalar(acc, 1.0 / static_cast<double>(member_losses.size()));
                break;
            }
            case TransferStrategy::MaxLoss: {
                size_t best = 0;
                for (size_t i = 1; i < member_losses.size(); ++i)
                    if (g.val(member_losses[i]).item() > g.val(member_losses[best]).item()) best = i;
                objective = member_losses[best];
                break;
            }
        }
        auto grads = g.backward(objective);
        const Tensor& gx = grads[static_cast<size_t>(xin)];
        bool finite = gx.all_finite();
        res.loss_trace.push_back(g.val(objective).item());
        if (!finite) {
            res.aborted = true;
            break;
        }
        double bc1 = 1.0 - std::pow(cfg.adam.beta1, step);
        double bc2 = 1.0 - std::pow(cfg.adam.beta2, step);
        for (int i = 0; i < row_len; ++i) {
            switch (cfg.rule) {
                case UpdateRule::Sign: x_adv.v[static_cast<size_t>(i)] += cfg.step_size * sign0(gx.v[static_cast<size_t>(i)]); break;
                case UpdateRule::Gradient: x_adv.v[static_cast<size_t>(i)] += cfg.step_size * gx.v[static_cast<size_t>(i)]; break;
                case UpdateRule::Adam: {
                    size_t k = static_cast<size_t>(i);
                    m[k] = cfg.adam.beta1 * m[k] + (1.0 - cfg.adam.beta1) * gx.v[k];
                    v[k] = cfg.adam.beta2 * v[k] + (1.0 - cfg.adam.beta2) * gx.v[k] * gx.v[k];
                    x_adv.v[k] += cfg.step_size * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + cfg.adam.eps);
                    break;
                }
            }
        }
        x_adv = project_linf(x_adv, x, cfg.delta, cfg.domain_clamp);
    }

    // Judge success against the probability-averaged ensemble of the members.
    Ensemble judge{members, Averaging::Probability};
    Tensor out = ensemble_forward(judge, Tensor({1, row_len}, x_adv.v));
    res.success = predict_row(out, 0) != y;
    res.adversarial = std::move(x_adv);
    return res;
}

StrongestAttackResult strongest_attack(const Ensemble& target, const Dataset& data, AttackConfig cfg,
                                       int start_steps, int max_steps, uint64_t rng_seed, double tol) {
    if (start_steps < 1) throw std::invalid_argument("strongest_attack: start steps must be >= 1");
    data.validate();
    StrongestAttackResult res;
    auto accuracy_at = [&](int steps) {
        AttackConfig c = cfg;
        c.steps = steps;
        size_t n = data.size();
        size_t correct = 0;
        constexpr size_t kChunk = 256;
        for (size_t start = 0; start < n; start += kChunk) {
            std::vector<int> idx;
            for (size_t i = start; i < std::min(n, start + kChunk); ++i) idx.push_back(static_cast<int>(i));
            auto b = attack_batch(target, stack_inputs(data, idx), select_labels(data, idx), c, rng_seed,
                                  static_cast<int>(start));
            for (char s : b.success)
                if (!s) ++correct;
        }
        return static_cast<double>(correct) / static_cast<double>(n);
    };

    int steps = start_steps;
    double min_so_far = 1.0;
    while (true) {
        double acc = accuracy_at(steps);
        res.accuracy_by_steps.emplace_back(steps, acc);
        bool improved = min_so_far - acc > tol;
        min_so_far = std::min(min_so_far, acc);
        res.envelope.emplace_back(steps, min_so_far);
        if (res.accuracy_by_steps.size() > 1 && !improved) break;
        if (steps * 2 > max_steps) break;
        steps *= 2;
    }
    res.final_accuracy = min_so_far;
    return res;
}

}  // namespace advens
