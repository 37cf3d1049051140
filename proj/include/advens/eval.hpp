#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "advens/attack.hpp"
#include "advens/data.hpp"
#include "advens/model.hpp"

namespace advens {

struct EvalSeries {
    std::vector<std::pair<double, double>> points;  // (training step, value), steps strictly increasing
    std::string metric;
    std::string model_class;
    int seed = 0;

    void validate() const;
};

double accuracy(const Ensemble& target, const Dataset& data);
double robust_accuracy(const Ensemble& target, const Dataset& data, AttackConfig cfg, uint64_t seed);

// One robust accuracy per attack step count; init noise is shared across the
// step counts (per-example seeds depend only on the example index).
EvalSeries attack_curve(const Ensemble& target, const Dataset& data, const AttackConfig& cfg,
                        const std::vector<int>& steps_list, uint64_t seed);

struct BlackboxSet {
    std::vector<Tensor> inputs;  // adversarial examples
    std::vector<int> labels;     // original labels
    int classes = 2;
    std::vector<std::string> source_descriptors;
    std::vector<std::vector<char>> fooled;  // per example, per source member
    AttackConfig generation_cfg;
    double coverage = 0.0;  // retained / total
};

// Attacks the logit-mean ensemble of the source members, doubling the step
// count up to max_steps until an example fools every member; only such
// examples are retained.
BlackboxSet blackbox_generate(const std::vector<ModelParams>& sources, const Dataset& data, AttackConfig cfg,
                              int max_steps, uint64_t seed);

double blackbox_eval(const Ensemble& target, const BlackboxSet& set);

// Re-checks the "fools all members" invariant; used on load.
bool blackbox_verify(const BlackboxSet& set, const std::vector<ModelParams>& sources);

struct SubmodelRow {
    std::string name;
    double clean = 0.0;
    double robust = 0.0;
};

// Per-member breakdown: margin attack on each member in isolation plus whole-
// ensemble rows under probability-mean and logit-mean inference.
std::vector<SubmodelRow> submodel_eval(const Ensemble& ensemble, const Dataset& data, AttackConfig cfg,
                                       uint64_t seed);

// Centered rolling median (window 50, shrunk symmetrically at the edges);
// replaces a point iff its absolute deviation from the median exceeds
// mean(d) + 3*std(d) over the whole deviation series.
EvalSeries smooth_outliers(const EvalSeries& series, int window = 50);

// Linear interpolation onto an even grid spanning the series' own step range.
EvalSeries interpolate(const EvalSeries& series, int grid_size = 1000);

// Interpolates every series onto a common even grid over the overlap of the
// step ranges. Errors if the overlap is empty.
std::vector<EvalSeries> interpolate_common(const std::vector<EvalSeries>& series, int grid_size = 1000);

// Pointwise mean; all series must share the same step grid.
EvalSeries aggregate_seeds(const std::vector<EvalSeries>& series);

struct RunSummary {
    std::map<std::string, double> last10;  // mean of the final 10 points per metric
    std::map<std::string, double> best;    // all metrics at the argmax step of the selection metric
    double best_step = 0.0;
};

// `series_by_metric` holds one (already smoothed/aggregated) series per metric
// on a shared grid.
RunSummary summarize(const std::map<std::string, EvalSeries>& series_by_metric,
                     const std::string& selection_metric);

}  // namespace advens
