#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "advens/data.hpp"
#include "advens/losses.hpp"
#include "advens/model.hpp"

namespace advens {

enum class UpdateRule { Sign, Gradient, Adam };

struct AdamParams {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AttackConfig {
    double delta = 0.1;       // L-infinity radius
    int steps = 7;            // ascent iterations
    double step_size = 0.0;   // eta-hat
    double init_sigma = 0.0;  // std of Gaussian init noise
    UpdateRule rule = UpdateRule::Sign;
    AdamParams adam;
    LossKind loss = LossKind::CrossEntropyProbs;
    std::optional<std::pair<double, double>> domain_clamp;

    void validate() const;

    // IFGSM defaults: eta = 2.5 * delta / steps, sigma = delta / 2.
    static AttackConfig ifgsm(double delta, int steps);
    // PGD with the Adam update: eta = delta / 4, sigma = delta / 2.
    static AttackConfig pgd_adam(double delta, int steps);
};

struct AttackResult {
    Tensor adversarial;
    std::vector<double> loss_trace;  // objective value per step (after the step)
    bool success = false;            // prediction != true label at the final iterate
    bool aborted = false;            // non-finite gradient encountered
};

struct BatchAttackResult {
    Tensor adversarial;  // [B, ...]
    std::vector<char> success;
    std::vector<char> aborted;
    std::vector<std::vector<double>> loss_trace;  // per step, per row
};

// Coordinatewise clamp into the L-infinity ball around x_nom, then into the
// domain interval if set. Idempotent.
Tensor project_linf(const Tensor& x, const Tensor& x_nom, double delta,
                    const std::optional<std::pair<double, double>>& domain_clamp);

// White-box attack on the ensemble as a single differentiable model.
// Margin loss always differentiates through logit-mean averaging.
// Per-example RNG is mix(rng_seed, example_index + index_offset), so batched
// and one-at-a-time execution produce identical iterates.
AttackResult attack(const Ensemble& target, const Tensor& x, int y, const AttackConfig& cfg, uint64_t rng_seed);
BatchAttackResult attack_batch(const Ensemble& target, const Tensor& xs, const std::vector<int>& ys,
                               const AttackConfig& cfg, uint64_t rng_seed, int index_offset = 0);

enum class TransferStrategy { RandomMember, MeanLoss, MaxLoss };

// Ascent over member losses instead of the ensemble output: a random member
// per iteration, the mean member loss, or the max member loss (subgradient
// through the argmax member, lowest index on ties).
AttackResult transfer_attack(const std::vector<ModelParams>& members, const Tensor& x, int y,
                             const AttackConfig& cfg, TransferStrategy strategy, uint64_t rng_seed);

struct StrongestAttackResult {
    std::vector<std::pair<int, double>> accuracy_by_steps;  // raw accuracy per N
    std::vector<std::pair<int, double>> envelope;           // running minimum
    double final_accuracy = 1.0;
};

// Iteration doubling: N = start, 2*start, ... until accuracy stops dropping
// by more than `tol` or the next doubling would exceed max_steps.
StrongestAttackResult strongest_attack(const Ensemble& target, const Dataset& data, AttackConfig cfg,
                                       int start_steps, int max_steps, uint64_t rng_seed, double tol = 0.001);

}  // namespace advens
