#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "advens/attack.hpp"
#include "advens/data.hpp"
#include "advens/model.hpp"

namespace advens {

struct TrainConfig {
    int total_steps = 5000;
    int batch_size = 64;
    double lr0 = 0.1;
    double momentum = 0.9;
    std::vector<int> lr_boundaries = {3000, 6000, 9000};
    double lr_decay = 0.2;
    double rho = 1.0;  // weight of the adversarial loss term
    std::optional<AttackConfig> train_attack;
    int eval_cadence = 50;
    uint64_t seed = 0;

    void validate() const;
};

// lr0 * decay^(number of boundaries <= step).
double lr_schedule(const TrainConfig& cfg, int step);

struct Snapshot {
    int step;
    Ensemble model;
};

struct TrainState {
    int step = 0;
    Ensemble model;
    std::vector<std::vector<Tensor>> momentum;  // mirrors members' layer shapes
    std::vector<Snapshot> history;
    bool flagged = false;  // a step was aborted on a non-finite gradient
};

TrainState make_train_state(Ensemble init);

// buffer <- mu*buffer + grad; param <- param - lr*buffer. Gradients are laid
// out per member, per layer, matching the model. Aborts (flags) the run on a
// non-finite gradient.
void momentum_step(TrainState& state, const std::vector<std::vector<Tensor>>& grads, double mu, double lr);

using SnapshotHook = std::function<void(const Snapshot&)>;

// Standard training (no attack): cross-entropy through the ensemble's
// probability mean. This is the Baseline / Ensemble-k regime.
TrainState train_standard(const Ensemble& init, const Dataset& train, const TrainConfig& cfg,
                          const SnapshotHook& hook = {});

// Adversarial training of the ensemble as one model: per minibatch, attack
// the whole ensemble, then take one momentum step on L_clean + rho * L_adv.
// rho = 0 short-circuits the attack and reduces exactly to train_standard.
TrainState train_adversarial(const Ensemble& init, const Dataset& train, const TrainConfig& cfg,
                             const SnapshotHook& hook = {});

// Test-time ensembling of independently trained states (Separate-k-Adv).
Ensemble build_separate_ensemble(const std::vector<TrainState>& members);

}  // namespace advens
