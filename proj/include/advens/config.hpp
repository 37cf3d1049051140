#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "advens/model.hpp"
#include "advens/train.hpp"

namespace advens {

// Flat key=value run configuration. Every key has a CLI flag equivalent;
// unknown keys are errors. See README for the documented key set.
struct HarnessConfig {
    // dataset
    std::string dataset = "blobs10";  // blobs10 | two-moons | cifar10:<path>
    int data_n = 4000;
    int data_dim = 64;
    int data_classes = 10;
    double data_spread = 0.25;
    double data_noise = 0.1;  // two-moons only
    uint64_t data_seed = 1;
    double test_fraction = 0.25;
    int eval_subset = 400;     // snapshot-evaluation examples
    int eval_500_subset = 200; // examples for the 500-step table

    // base model
    std::string model_arch = "mlp";  // mlp | small-cnn
    std::vector<int> model_hidden = {12, 12};
    int cnn_channels = 6;
    int cnn_kernel = 3;
    int cnn_dense = 16;

    // grid
    std::vector<std::string> classes = {"baseline",      "ensemble2",     "ensemble4",
                                        "single-adv",    "double-adv",    "ensemble2-adv",
                                        "ensemble4-adv", "separate-ensemble2-adv"};
    std::vector<uint64_t> seeds = {1, 2, 3, 4, 5};
    std::string out_dir = "runs";
    int parallelism = 1;

    // training
    int train_steps = 3000;
    int batch_size = 64;
    double lr0 = 0.1;
    double momentum = 0.9;
    std::vector<int> lr_boundaries = {1800, 2400};
    double lr_decay = 0.2;
    double rho = 1.0;
    int eval_cadence = 50;

    // threat model
    double delta = 0.1;
    int train_attack_steps = 7;

    // evaluation
    std::vector<std::string> metrics = {"clean", "ifgsm-5", "pgd-5", "pgd-20", "blackbox"};
    std::string selection_metric = "ifgsm-5";
    int blackbox_max_steps = 512;
    int strongest_start = 20;
    int strongest_max = 512;

    ModelSpec base_spec() const;
    ModelSpec cnn_spec() const;  // the second (source) architecture
    TrainConfig train_config(uint64_t seed, bool adversarial) const;
    AttackConfig train_attack() const;
};

// One "key = value" per line; '#' starts a comment; unknown keys throw,
// naming the key.
HarnessConfig parse_config_file(const std::string& path);
HarnessConfig parse_config_text(const std::string& text, HarnessConfig base = {});
void apply_config_key(HarnessConfig& cfg, const std::string& key, const std::string& value);

std::string config_to_text(const HarnessConfig& cfg);
uint64_t config_digest(const HarnessConfig& cfg);

// Named evaluation attacks: "ifgsm-N" (sign rule) and "pgd-N" (Adam rule).
AttackConfig eval_attack_from_name(const std::string& name, double delta);

Dataset build_dataset(const HarnessConfig& cfg);

}  // namespace advens
