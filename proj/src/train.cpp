#include "advens/train.hpp"

#include <cmath>

#include "advens/rng.hpp"

namespace advens {

void TrainConfig::validate() const {
    if (total_steps < 0) throw std::invalid_argument("train config: total steps must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("train config: batch size must be >= 1");
    if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw std::invalid_argument("train config: decay must be in (0,1]");
    if (rho < 0.0) throw std::invalid_argument("train config: rho must be >= 0");
    for (size_t i = 1; i < lr_boundaries.size(); ++i)
        if (lr_boundaries[i] <= lr_boundaries[i - 1])
            throw std::invalid_argument("train config: lr boundaries must be strictly increasing");
    if (eval_cadence < 1) throw std::invalid_argument("train config: eval cadence must be >= 1");
}

double lr_schedule(const TrainConfig& cfg, int step) {
    if (step < 0) throw std::invalid_argument("lr_schedule: negative step");
    int decays = 0;
    for (int b : cfg.lr_boundaries)
        if (b <= step) ++decays;
    return cfg.lr0 * std::pow(cfg.lr_decay, decays);
}

TrainState make_train_state(Ensemble init) {
    init.validate();
    TrainState s;
    s.model = std::move(init);
    for (const ModelParams& m : s.model.members) {
        std::vector<Tensor> bufs;
        for (const Tensor& t : m.layers) bufs.emplace_back(t.shape, 0.0);
        s.momentum.push_back(std::move(bufs));
    }
    return s;
}

void momentum_step(TrainState& state, const std::vector<std::vector<Tensor>>& grads, double mu, double lr) {
    if (grads.size() != state.model.members.size())
        throw std::invalid_argument("momentum_step: gradient/member count mismatch");
    for (size_t i = 0; i < grads.size(); ++i) {
        if (grads[i].size() != state.model.members[i].layers.size())
            throw std::invalid_argument("momentum_step: gradient/layer count mismatch");
        for (size_t l = 0; l < grads[i].size(); ++l) {
            if (!grads[i][l].same_shape(state.model.members[i].layers[l]))
                throw ShapeError("momentum_step: gradient shape " + shape_str(grads[i][l].shape) +
                                 " vs parameter " + shape_str(state.model.members[i].layers[l].shape));
            if (!grads[i][l].all_finite()) {
                state.flagged = true;
                return;  // step aborted
            }
        }
    }
    for (size_t i = 0; i < grads.size(); ++i)
        for (size_t l = 0; l < grads[i].size(); ++l) {
            Tensor& buf = state.momentum[i][l];
            Tensor& par = state.model.members[i].layers[l];
            for (size_t k = 0; k < buf.v.size(); ++k) {
                buf.v[k] = mu * buf.v[k] + grads[i][l].v[k];
                par.v[k] -= lr * buf.v[k];
            }
        }
}

namespace {

void take_snapshot(TrainState& state, const SnapshotHook& hook) {
    state.history.push_back({state.step, state.model});
    if (hook) hook(state.history.back());
}

TrainState run_training(const Ensemble& init, const Dataset& data, const TrainConfig& cfg, bool adversarial,
                        const SnapshotHook& hook) {
    cfg.validate();
    data.validate();
    if (adversarial && !cfg.train_attack)
        throw std::invalid_argument("train_adversarial: config has no train attack");
    if (!adversarial && cfg.train_attack)
        throw std::invalid_argument("train_standard: config carries a train attack");
    TrainState state = make_train_state(init);
    take_snapshot(state, hook);
    // rho = 0 short-circuits the attack entirely.
    bool attack_on = adversarial && cfg.rho > 0.0;

    int epoch = 0;
    while (state.step < cfg.total_steps) {
        auto epoch_batches = batches(data, cfg.batch_size, mix_seed(cfg.seed, static_cast<uint64_t>(epoch)));
        for (const Batch& batch : epoch_batches) {
            if (state.step >= cfg.total_steps) break;

            Tensor x_adv;
            if (attack_on) {
                auto b = attack_batch(state.model, batch.x, batch.y, *cfg.train_attack,
                                      mix_seed(cfg.seed, static_cast<uint64_t>(state.step), 0x747261696eULL));
                x_adv = std::move(b.adversarial);
            }

            Graph g;
            std::vector<std::vector<NodeId>> layer_nodes;
            for (const ModelParams& m : state.model.members) layer_nodes.push_back(insert_params(g, m));
            NodeId xin = g.input(batch.x);
            NodeId clean_out = ensemble_forward(g, state.model, layer_nodes, xin);
            LossKind kind =
                state.model.mode == Averaging::Probability ? LossKind::CrossEntropyProbs : LossKind::CrossEntropyLogits;
            NodeId total = batch_loss(g, kind, clean_out, batch.y);
            if (attack_on) {
                NodeId adv_in = g.input(x_adv);
                NodeId adv_out = ensemble_forward(g, state.model, layer_nodes, adv_in);
                total = g.add(total, g.mul_scalar(batch_loss(g, kind, adv_out, batch.y), cfg.rho));
            }
            auto grads = g.backward(total);
            std::vector<std::vector<Tensor>> pgrads;
            for (const auto& member : layer_nodes) {
                std::vector<Tensor> gm;
                for (NodeId id : member) gm.push_back(grads[static_cast<size_t>(id)]);
                pgrads.push_back(std::move(gm));
            }
            momentum_step(state, pgrads, cfg.momentum, lr_schedule(cfg, state.step));
            ++state.step;
            if (state.step % cfg.eval_cadence == 0 || state.step == cfg.total_steps) take_snapshot(state, hook);
        }
        ++epoch;
    }
    return state;
}

}  // namespace

TrainState train_standard(const Ensemble& init, const Dataset& train, const TrainConfig& cfg,
                          const SnapshotHook& hook) {
    return run_training(init, train, cfg, false, hook);
}

TrainState train_adversarial(const Ensemble& init, const Dataset& train, const TrainConfig& cfg,
                             const SnapshotHook& hook) {
    return run_training(init, train, cfg, true, hook);
}

Ensemble build_separate_ensemble(const std::vector<TrainState>& members) {
    if (members.empty()) throw std::invalid_argument("build_separate_ensemble: no members");
    Ensemble e;
    e.mode = Averaging::Probability;
    for (const TrainState& s : members) {
        if (s.model.members.size() != 1)
            throw std::invalid_argument("build_separate_ensemble: members must be single-model runs");
        e.members.push_back(s.model.members.front());
    }
    e.validate();
    return e;
}

}  // namespace advens
