#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "advens/config.hpp"
#include "advens/eval.hpp"
#include "advens/train.hpp"

namespace advens {

// One entry of the model-class menu: baseline, ensembleK, single-adv,
// double-adv, ensembleK-adv, separate-ensembleK-adv.
struct ClassSpec {
    enum class Kind { Baseline, EnsembleK, SingleAdv, DoubleAdv, EnsembleKAdv, SeparateK };
    Kind kind = Kind::Baseline;
    int k = 1;
    std::string name;

    bool adversarial() const { return kind == Kind::SingleAdv || kind == Kind::DoubleAdv || kind == Kind::EnsembleKAdv; }
    bool derived() const { return kind == Kind::SeparateK; }
};

ClassSpec parse_model_class(const std::string& name);

// Member i is initialized from seed mix(cell_seed, i); double-adv widens the
// base spec to k times its parameter count.
Ensemble initial_ensemble_for(const HarnessConfig& cfg, const ClassSpec& cls, uint64_t cell_seed);

TrainState train_cell(const HarnessConfig& cfg, const ClassSpec& cls, const Dataset& train_set, uint64_t cell_seed,
                      const SnapshotHook& hook = {});

// Separate-k ensembles pair the single-adv runs of k consecutive seeds
// (wrapping around); their snapshot histories are combined step by step.
std::vector<Snapshot> separate_history(const std::vector<const TrainState*>& single_adv_runs);

// Per-snapshot metric series for one grid cell.
std::map<std::string, EvalSeries> evaluate_history(const HarnessConfig& cfg, const std::vector<Snapshot>& history,
                                                   const Dataset& eval_set, const BlackboxSet* blackbox,
                                                   const std::string& class_name, int seed_index);

uint64_t metric_eval_seed(const std::string& metric);

// Full grid driver: trains classes x seeds, evaluates snapshots, writes
// runs/<class>/<seed>/{checkpoints,series.csv,meta.json} plus
// report/{table_last10.csv,table_best.csv,table_500.csv,curves.csv},
// appendix.json and manifest.json under cfg.out_dir. Returns a process exit
// code (0 only if every cell succeeded).
int run_grid(const HarnessConfig& cfg, std::ostream& log);

std::string format_g17(double x);

}  // namespace advens
