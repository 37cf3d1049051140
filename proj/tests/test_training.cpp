#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "advens/eval.hpp"
#include "advens/graph.hpp"
#include "advens/losses.hpp"
#include "advens/rng.hpp"
#include "advens/train.hpp"

using namespace advens;

namespace {

Ensemble tiny_ensemble(int members, uint64_t seed0) {
    ModelSpec spec = ModelSpec::make_mlp(2, {4}, 2);
    Ensemble e;
    for (int i = 0; i < members; ++i) e.members.push_back(init_params(spec, seed0 + static_cast<uint64_t>(i)));
    return e;
}

std::vector<std::vector<Tensor>> constant_grads(const Ensemble& e, double value) {
    std::vector<std::vector<Tensor>> g;
    for (const ModelParams& m : e.members) {
        std::vector<Tensor> layers;
        for (const Tensor& t : m.layers) layers.push_back(Tensor(t.shape, value));
        g.push_back(layers);
    }
    return g;
}

std::vector<double> flatten_all(const Ensemble& e) {
    std::vector<double> out;
    for (const ModelParams& m : e.members)
        for (double v : flatten_params(m)) out.push_back(v);
    return out;
}

}  // namespace

TEST_CASE("lr schedule applies one decay per passed boundary") {
    TrainConfig cfg;
    cfg.lr0 = 0.1;
    cfg.lr_boundaries = {3000, 6000, 9000};
    cfg.lr_decay = 0.2;
    CHECK(lr_schedule(cfg, 0) == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(lr_schedule(cfg, 3500) == doctest::Approx(0.02).epsilon(1e-12));
    CHECK(lr_schedule(cfg, 9500) == doctest::Approx(0.0008).epsilon(1e-12));
    for (int s = 1; s < 10000; s += 37) CHECK(lr_schedule(cfg, s) <= lr_schedule(cfg, s - 1));
}

TEST_CASE("momentum step with mu zero is plain gradient descent") {
    Ensemble e = tiny_ensemble(1, 1);
    for (Tensor& t : e.members[0].layers) std::fill(t.v.begin(), t.v.end(), 1.0);
    TrainState st = make_train_state(e);
    momentum_step(st, constant_grads(e, 0.5), 0.0, 0.1);
    for (double v : flatten_all(st.model)) CHECK(v == doctest::Approx(0.95).epsilon(1e-12));
}

TEST_CASE("zero gradient is a fixed point") {
    Ensemble e = tiny_ensemble(1, 2);
    TrainState st = make_train_state(e);
    std::vector<double> before = flatten_all(st.model);
    for (int i = 0; i < 5; ++i) momentum_step(st, constant_grads(e, 0.0), 0.9, 0.1);
    CHECK(flatten_all(st.model) == before);
}

TEST_CASE("two constant-gradient steps displace by -0.29 g") {
    Ensemble e = tiny_ensemble(1, 3);
    TrainState st = make_train_state(e);
    std::vector<double> before = flatten_all(st.model);
    double g = 0.7;
    momentum_step(st, constant_grads(e, g), 0.9, 0.1);
    momentum_step(st, constant_grads(e, g), 0.9, 0.1);
    std::vector<double> after = flatten_all(st.model);
    for (size_t i = 0; i < before.size(); ++i)
        CHECK(after[i] - before[i] == doctest::Approx(-0.29 * g).epsilon(1e-12));
}

TEST_CASE("non-finite gradient aborts the step and flags the state") {
    Ensemble e = tiny_ensemble(1, 4);
    TrainState st = make_train_state(e);
    std::vector<double> before = flatten_all(st.model);
    auto g = constant_grads(e, 0.5);
    g[0][0].v[0] = std::numeric_limits<double>::quiet_NaN();
    momentum_step(st, g, 0.9, 0.1);
    CHECK(st.flagged);
    CHECK(flatten_all(st.model) == before);
}

TEST_CASE("standard training separates linearly separable blobs") {
    Dataset d = gen_blobs(200, 2, 2, 0.1, 5);
    TrainConfig cfg;
    cfg.total_steps = 500;
    cfg.batch_size = 32;
    cfg.lr_boundaries = {};
    cfg.seed = 6;
    TrainState st = train_standard(tiny_ensemble(1, 7), d, cfg);
    CHECK(accuracy(st.model, d) >= 0.99);
    CHECK(st.step == 500);
}

TEST_CASE("zero-step training returns the initial parameters") {
    Ensemble e = tiny_ensemble(2, 8);
    TrainConfig cfg;
    cfg.total_steps = 0;
    Dataset d = gen_blobs(20, 2, 2, 0.2, 1);
    TrainState st = train_standard(e, d, cfg);
    CHECK(flatten_all(st.model) == flatten_all(e));
}

TEST_CASE("training is bit deterministic per seed and snapshots follow the cadence") {
    Dataset d = gen_blobs(100, 2, 2, 0.3, 2);
    TrainConfig cfg;
    cfg.total_steps = 120;
    cfg.eval_cadence = 50;
    cfg.seed = 13;
    TrainState a = train_standard(tiny_ensemble(1, 9), d, cfg);
    TrainState b = train_standard(tiny_ensemble(1, 9), d, cfg);
    CHECK(flatten_all(a.model) == flatten_all(b.model));
    REQUIRE(a.history.size() == b.history.size());
    for (size_t i = 0; i < a.history.size(); ++i) {
        CHECK(a.history[i].step == b.history[i].step);
        CHECK(flatten_all(a.history[i].model) == flatten_all(b.history[i].model));
    }
    CHECK(a.history.back().step == 120);  // final state snapshotted even off-cadence
    for (size_t i = 0; i + 1 < a.history.size(); ++i) CHECK(a.history[i].step % 50 == 0);
}

TEST_CASE("rho zero short-circuits the attack and matches standard training exactly") {
    Dataset d = gen_blobs(100, 2, 2, 0.3, 3);
    TrainConfig cfg;
    cfg.total_steps = 150;
    cfg.seed = 14;
    TrainState std_run = train_standard(tiny_ensemble(2, 10), d, cfg);
    cfg.rho = 0.0;
    cfg.train_attack = AttackConfig::ifgsm(0.1, 7);
    TrainState adv_run = train_adversarial(tiny_ensemble(2, 10), d, cfg);
    CHECK(flatten_all(std_run.model) == flatten_all(adv_run.model));
}

TEST_CASE("one adversarial step moves every member") {
    Dataset d = gen_blobs(64, 2, 2, 0.3, 4);
    Ensemble e = tiny_ensemble(3, 20);
    TrainConfig cfg;
    cfg.total_steps = 1;
    cfg.train_attack = AttackConfig::ifgsm(0.1, 3);
    cfg.seed = 15;
    TrainState st = train_adversarial(e, d, cfg);
    for (size_t m = 0; m < e.members.size(); ++m)
        CHECK(flatten_params(st.model.members[m]) != flatten_params(e.members[m]));
}

TEST_CASE("adversarial training beats standard training on robust accuracy") {
    Dataset d = gen_two_moons(400, 0.1, 30);
    ModelSpec spec = ModelSpec::make_mlp(2, {16, 16}, 2);
    Ensemble init{{init_params(spec, 31)}, Averaging::Probability};
    TrainConfig cfg;
    cfg.total_steps = 800;
    cfg.lr_boundaries = {};
    cfg.seed = 32;
    TrainState std_run = train_standard(init, d, cfg);
    cfg.train_attack = AttackConfig::ifgsm(0.1, 7);
    TrainState adv_run = train_adversarial(init, d, cfg);
    AttackConfig eval_cfg = AttackConfig::ifgsm(0.1, 5);
    double r_std = robust_accuracy(std_run.model, d, eval_cfg, 33);
    double r_adv = robust_accuracy(adv_run.model, d, eval_cfg, 33);
    CHECK(r_adv > r_std);
}

TEST_CASE("attacked batches carry at least the clean loss on average") {
    // the attack ascends the very objective being compared, so the batch-mean
    // inequality can only be broken by projection; a small violation quota
    Dataset d = gen_blobs(640, 4, 4, 0.4, 40);
    ModelSpec spec = ModelSpec::make_mlp(4, {4}, 4);
    Ensemble e{{init_params(spec, 41), init_params(spec, 42)}, Averaging::Probability};
    TrainConfig warm;
    warm.total_steps = 100;
    warm.seed = 43;
    e = train_standard(e, d, warm).model;
    AttackConfig atk = AttackConfig::ifgsm(0.2, 3);
    int violations = 0, total = 0;
    for (uint64_t epoch = 0; epoch < 10; ++epoch)
        for (const Batch& b : batches(d, 64, epoch)) {
            auto adv = attack_batch(e, b.x, b.y, atk, mix_seed(99, epoch));
            Graph g;
            double clean = g.val(batch_loss(g, LossKind::CrossEntropyProbs, ensemble_forward(g, e, g.input(b.x)), b.y)).item();
            Graph g2;
            double advl = g2.val(batch_loss(g2, LossKind::CrossEntropyProbs,
                                            ensemble_forward(g2, e, g2.input(adv.adversarial)), b.y))
                              .item();
            ++total;
            if (advl < clean) ++violations;
        }
    CHECK(total >= 100);
    CHECK(violations <= total / 20);
}

TEST_CASE("separate ensemble contracts") {
    Dataset d = gen_blobs(100, 2, 2, 0.3, 50);
    ModelSpec spec = ModelSpec::make_mlp(2, {4}, 2);
    TrainConfig cfg;
    cfg.total_steps = 100;
    cfg.train_attack = AttackConfig::ifgsm(0.1, 3);
    cfg.seed = 51;
    TrainState a = train_adversarial(Ensemble{{init_params(spec, 52)}, Averaging::Probability}, d, cfg);
    cfg.seed = 53;
    TrainState b = train_adversarial(Ensemble{{init_params(spec, 54)}, Averaging::Probability}, d, cfg);
    CHECK(flatten_params(a.model.members[0]) != flatten_params(b.model.members[0]));

    Ensemble lone = build_separate_ensemble({a});
    Tensor x = Tensor::vec({0.3, -0.4});
    CHECK(ensemble_forward(lone, x).v == ensemble_forward(a.model, x).v);

    Ensemble ab = build_separate_ensemble({a, b});
    Ensemble ba = build_separate_ensemble({b, a});
    Tensor pa = ensemble_forward(ab, x), pb = ensemble_forward(ba, x);
    for (size_t i = 0; i < pa.v.size(); ++i) CHECK(pa.v[i] == doctest::Approx(pb.v[i]).epsilon(1e-15));

    TrainState odd = b;
    odd.model.members[0] = init_params(ModelSpec::make_mlp(2, {4}, 3), 1);
    CHECK_THROWS_AS(build_separate_ensemble({a, odd}), std::invalid_argument);
}

TEST_CASE("train config validation") {
    TrainConfig cfg;
    cfg.lr_boundaries = {100, 50};
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = TrainConfig{};
    cfg.lr_decay = 0.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = TrainConfig{};
    cfg.rho = -1.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}
