#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "advens/tensor.hpp"

namespace advens {

struct Dataset {
    std::vector<Tensor> inputs;  // uniform shape
    std::vector<int> labels;
    int classes = 2;
    std::string provenance;
    std::optional<std::pair<double, double>> domain_clamp;  // images: [0,1]

    size_t size() const { return inputs.size(); }
    void validate() const;
};

// Two interleaved unit half-circles in the plane, balanced classes,
// Gaussian coordinate noise. Deterministic per seed.
Dataset gen_two_moons(int n, double noise, uint64_t seed);

// Gaussian blobs around deterministic hypercube-corner centers drawn from a
// per-class seeded bit stream. The first half of the coordinates carries a
// +/-1/sqrt(dim) code with the full spread; the second half carries a smaller
// (adversarially fragile) code with a fraction of the spread, giving standard
// training a clean-but-brittle shortcut.
Dataset gen_blobs(int n, int class_count, int dim, double spread, uint64_t seed);
Tensor blob_center(int cls, int dim);

// CIFAR-10 binary format: records of 3073 bytes, 1 label byte then 3x32x32
// pixel planes; pixels scaled to [0,1].
Dataset load_cifar10_binary(const std::string& path);
Dataset parse_cifar10_bytes(const std::vector<unsigned char>& bytes, const std::string& origin);

// Stratified by class; deterministic per seed.
std::pair<Dataset, Dataset> split(const Dataset& d, double test_fraction, uint64_t seed);

struct Batch {
    Tensor x;  // [B, dims...]
    std::vector<int> y;
    std::vector<int> indices;  // positions in the source dataset
};

// Deterministic reshuffle per epoch_seed; the last short batch is kept.
std::vector<Batch> batches(const Dataset& d, int batch_size, uint64_t epoch_seed);

// Stack selected examples into one [B, ...] tensor.
Tensor stack_inputs(const Dataset& d, const std::vector<int>& idx);
std::vector<int> select_labels(const Dataset& d, const std::vector<int>& idx);

Dataset subset(const Dataset& d, size_t max_n);

}  // namespace advens
