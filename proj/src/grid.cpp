#include "advens/grid.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <ostream>
#include <thread>

#include <json.hpp>

#include "advens/checkpoint.hpp"
#include "advens/rng.hpp"

namespace advens {

namespace fs = std::filesystem;
using nlohmann::json;

std::string format_g17(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

ClassSpec parse_model_class(const std::string& name) {
    auto numeric_suffix = [](const std::string& s, const std::string& prefix, const std::string& suffix, int& k) {
        if (s.size() <= prefix.size() + suffix.size()) return false;
        if (s.rfind(prefix, 0) != 0) return false;
        if (s.substr(s.size() - suffix.size()) != suffix) return false;
        std::string mid = s.substr(prefix.size(), s.size() - prefix.size() - suffix.size());
        for (char c : mid)
            if (!std::isdigit(c)) return false;
        k = std::stoi(mid);
        return true;
    };
    ClassSpec c;
    c.name = name;
    int k = 0;
    if (name == "baseline") {
        c.kind = ClassSpec::Kind::Baseline;
        c.k = 1;
    } else if (name == "single-adv") {
        c.kind = ClassSpec::Kind::SingleAdv;
        c.k = 1;
    } else if (name == "double-adv") {
        c.kind = ClassSpec::Kind::DoubleAdv;
        c.k = 2;
    } else if (numeric_suffix(name, "ensemble", "-adv", k)) {
        c.kind = ClassSpec::Kind::EnsembleKAdv;
        c.k = k;
    } else if (numeric_suffix(name, "ensemble", "", k)) {
        c.kind = ClassSpec::Kind::EnsembleK;
        c.k = k;
    } else if (numeric_suffix(name, "separate-ensemble", "-adv", k)) {
        c.kind = ClassSpec::Kind::SeparateK;
        c.k = k;
    } else {
        throw std::invalid_argument("unknown model class '" + name + "'");
    }
    if (c.k < 1) throw std::invalid_argument("model class '" + name + "': k must be >= 1");
    return c;
}

Ensemble initial_ensemble_for(const HarnessConfig& cfg, const ClassSpec& cls, uint64_t cell_seed) {
    ModelSpec base = cfg.base_spec();
    Ensemble e;
    e.mode = Averaging::Probability;
    switch (cls.kind) {
        case ClassSpec::Kind::Baseline:
        case ClassSpec::Kind::SingleAdv:
            e.members.push_back(init_params(base, mix_seed(cell_seed, 0)));
            break;
        case ClassSpec::Kind::DoubleAdv: {
            ModelSpec wide = match_width(base, static_cast<long>(cls.k) * param_count(base));
            e.members.push_back(init_params(wide, mix_seed(cell_seed, 0)));
            break;
        }
        case ClassSpec::Kind::EnsembleK:
        case ClassSpec::Kind::EnsembleKAdv:
            for (int i = 0; i < cls.k; ++i) e.members.push_back(init_params(base, mix_seed(cell_seed, static_cast<uint64_t>(i))));
            break;
        case ClassSpec::Kind::SeparateK:
            throw std::invalid_argument("separate-ensemble classes are derived from single-adv runs, not initialized");
    }
    return e;
}

TrainState train_cell(const HarnessConfig& cfg, const ClassSpec& cls, const Dataset& train_set, uint64_t cell_seed,
                      const SnapshotHook& hook) {
    Ensemble init = initial_ensemble_for(cfg, cls, cell_seed);
    TrainConfig tc = cfg.train_config(cell_seed, cls.adversarial());
    return cls.adversarial() ? train_adversarial(init, train_set, tc, hook)
                             : train_standard(init, train_set, tc, hook);
}

std::vector<Snapshot> separate_history(const std::vector<const TrainState*>& single_adv_runs) {
    if (single_adv_runs.empty()) throw std::invalid_argument("separate_history: no member runs");
    size_t n = single_adv_runs.front()->history.size();
    for (const TrainState* s : single_adv_runs)
        if (s->history.size() != n) throw std::invalid_argument("separate_history: member histories differ in length");
    std::vector<Snapshot> out;
    for (size_t i = 0; i < n; ++i) {
        Snapshot snap;
        snap.step = single_adv_runs.front()->history[i].step;
        snap.model.mode = Averaging::Probability;
        for (const TrainState* s : single_adv_runs)
            snap.model.members.push_back(s->history[i].model.members.front());
        out.push_back(std::move(snap));
    }
    return out;
}

uint64_t metric_eval_seed(const std::string& metric) {
    return mix_seed(0x6576616c5f736472ULL, fnv1a64(reinterpret_cast<const unsigned char*>(metric.data()), metric.size()));
}

std::map<std::string, EvalSeries> evaluate_history(const HarnessConfig& cfg, const std::vector<Snapshot>& history,
                                                   const Dataset& eval_set, const BlackboxSet* blackbox,
                                                   const std::string& class_name, int seed_value) {
    std::map<std::string, EvalSeries> out;
    for (const std::string& metric : cfg.metrics) {
        EvalSeries s;
        s.metric = metric;
        s.model_class = class_name;
        s.seed = seed_value;
        out[metric] = std::move(s);
    }
    for (const Snapshot& snap : history) {
        for (const std::string& metric : cfg.metrics) {
            double value;
            if (metric == "clean") {
                value = accuracy(snap.model, eval_set);
            } else if (metric == "blackbox") {
                if (!blackbox) throw std::invalid_argument("evaluate_history: blackbox metric without a blackbox set");
                value = blackbox_eval(snap.model, *blackbox);
            } else {
                value = robust_accuracy(snap.model, eval_set, eval_attack_from_name(metric, cfg.delta),
                                        metric_eval_seed(metric));
            }
            out[metric].points.emplace_back(static_cast<double>(snap.step), value);
        }
    }
    return out;
}

namespace {

struct CellResult {
    std::string class_name;
    uint64_t seed = 0;
    std::string status = "pending";
    std::map<std::string, EvalSeries> raw;
    std::map<std::string, EvalSeries> smoothed;
    int best_index = -1;
    Ensemble best_model;
    Ensemble final_model;
    int best_step = 0;
    int final_step = 0;
};

EvalSeries smooth_or_copy(const EvalSeries& s) { return s.points.size() < 2 ? s : smooth_outliers(s); }

void write_series_csv(const std::string& path, const CellResult& cell) {
    std::ofstream f(path, std::ios::trunc);
    f << "step,model_class,seed,metric,value,smoothed_value\n";
    for (const auto& [metric, raw] : cell.raw) {
        const EvalSeries& sm = cell.smoothed.at(metric);
        for (size_t i = 0; i < raw.points.size(); ++i)
            f << format_g17(raw.points[i].first) << "," << cell.class_name << "," << cell.seed << "," << metric << ","
              << format_g17(raw.points[i].second) << "," << format_g17(sm.points[i].second) << "\n";
    }
}

// Mean of the last min(10, n) points; a degenerate one-snapshot grid still
// produces a table row.
double last10_mean(const EvalSeries& s) {
    size_t n = s.points.size();
    size_t take = std::min<size_t>(10, n);
    double acc = 0.0;
    for (size_t i = n - take; i < n; ++i) acc += s.points[i].second;
    return acc / static_cast<double>(take);
}

size_t argmax_series(const EvalSeries& s) {
    size_t best = 0;
    for (size_t i = 1; i < s.points.size(); ++i)
        if (s.points[i].second > s.points[best].second) best = i;
    return best;
}

// Per-class post-processing: smooth (already done per cell), interpolate to a
// common 1000-step grid, average across seeds. Falls back to the raw shared
// grid when the series are too short to interpolate.
std::map<std::string, EvalSeries> aggregate_class(const std::vector<const CellResult*>& cells,
                                                  const std::vector<std::string>& metrics, int grid_size) {
    std::map<std::string, EvalSeries> out;
    for (const std::string& metric : metrics) {
        std::vector<EvalSeries> per_seed;
        for (const CellResult* c : cells) per_seed.push_back(c->smoothed.at(metric));
        bool can_interp = true;
        for (const EvalSeries& s : per_seed)
            if (s.points.size() < 2) can_interp = false;
        if (can_interp) per_seed = interpolate_common(per_seed, grid_size);
        out[metric] = aggregate_seeds(per_seed);
        out[metric].model_class = cells.front()->class_name;
    }
    return out;
}

void write_table(const std::string& path, const std::vector<std::string>& classes,
                 const std::vector<std::string>& metrics,
                 const std::map<std::string, std::map<std::string, double>>& values) {
    std::ofstream f(path, std::ios::trunc);
    f << "model_class";
    for (const auto& m : metrics) f << "," << m;
    f << "\n";
    for (const auto& cls : classes) {
        f << cls;
        for (const auto& m : metrics) {
            auto it = values.find(cls);
            f << ",";
            if (it != values.end() && it->second.count(m)) f << format_g17(it->second.at(m));
        }
        f << "\n";
    }
}

}  // namespace

int run_grid(const HarnessConfig& cfg, std::ostream& log) {
    fs::create_directories(cfg.out_dir);
    fs::create_directories(fs::path(cfg.out_dir) / "report");

    Dataset full = build_dataset(cfg);
    auto [train_set, test_set] = split(full, cfg.test_fraction, cfg.data_seed);
    Dataset eval_set = subset(test_set, static_cast<size_t>(cfg.eval_subset));

    std::vector<std::string> metrics = cfg.metrics;
    bool want_blackbox = std::find(metrics.begin(), metrics.end(), "blackbox") != metrics.end();

    // Black-box source pair: the base architecture plus the small-cnn, both
    // standard-trained, combined by a logit mean for generation.
    BlackboxSet blackbox;
    std::vector<ModelParams> bb_sources;
    if (want_blackbox) {
        log << "[grid] training black-box source models\n";
        TrainConfig tc = cfg.train_config(mix_seed(cfg.data_seed, 0xb10cb0a1ULL), false);
        Ensemble src_a{{init_params(cfg.base_spec(), mix_seed(cfg.data_seed, 0xa1ULL))}, Averaging::Probability};
        Ensemble src_b{{init_params(cfg.cnn_spec(), mix_seed(cfg.data_seed, 0xb2ULL))}, Averaging::Probability};
        TrainState sa = train_standard(src_a, train_set, tc);
        TrainConfig tcb = tc;
        tcb.seed = mix_seed(cfg.data_seed, 0xb10cb0a2ULL);
        TrainState sb = train_standard(src_b, train_set, tcb);
        bb_sources = {sa.model.members.front(), sb.model.members.front()};
        AttackConfig gen = AttackConfig::pgd_adam(cfg.delta, 20);
        blackbox = blackbox_generate(bb_sources, eval_set, gen, cfg.blackbox_max_steps,
                                     mix_seed(cfg.data_seed, 0xb10cULL));
        log << "[grid] black-box set coverage " << blackbox.coverage << " (" << blackbox.inputs.size() << " examples)\n";
        if (blackbox.inputs.empty()) {
            log << "[grid] warning: black-box coverage 0, dropping blackbox metric\n";
            metrics.erase(std::remove(metrics.begin(), metrics.end(), "blackbox"), metrics.end());
            want_blackbox = false;
        }
    }
    HarnessConfig eff = cfg;
    eff.metrics = metrics;

    // Phase 1: trained classes; phase 2: derived separate-ensembles.
    std::vector<ClassSpec> class_specs;
    for (const std::string& name : cfg.classes) class_specs.push_back(parse_model_class(name));

    struct CellJob {
        ClassSpec cls;
        uint64_t seed;
        size_t seed_index;
    };
    std::vector<CellJob> phase1, phase2;
    for (const ClassSpec& cls : class_specs)
        for (size_t si = 0; si < cfg.seeds.size(); ++si)
            (cls.derived() ? phase2 : phase1).push_back({cls, cfg.seeds[si], si});

    std::map<std::string, std::vector<CellResult>> results;  // class -> per seed
    for (const ClassSpec& cls : class_specs) results[cls.name].resize(cfg.seeds.size());
    std::map<std::string, std::vector<TrainState>> states;  // trained classes only
    for (const ClassSpec& cls : class_specs)
        if (!cls.derived()) states[cls.name].resize(cfg.seeds.size());

    std::mutex log_mutex;
    const BlackboxSet* bb = want_blackbox ? &blackbox : nullptr;

    auto finish_cell = [&](CellResult& cell, const std::vector<Snapshot>& history) {
        cell.raw = evaluate_history(eff, history, eval_set, bb, cell.class_name, static_cast<int>(cell.seed));
        for (const auto& [metric, s] : cell.raw) cell.smoothed[metric] = smooth_or_copy(s);
        const std::string& sel = eff.selection_metric;
        const EvalSeries& sel_series =
            cell.smoothed.count(sel) ? cell.smoothed.at(sel) : cell.smoothed.begin()->second;
        cell.best_index = static_cast<int>(argmax_series(sel_series));
        cell.best_model = history[static_cast<size_t>(cell.best_index)].model;
        cell.best_step = history[static_cast<size_t>(cell.best_index)].step;
        cell.final_model = history.back().model;
        cell.final_step = history.back().step;

        fs::path dir = fs::path(cfg.out_dir) / cell.class_name / std::to_string(cell.seed);
        fs::create_directories(dir / "checkpoints");
        uint64_t digest = config_digest(cfg);
        save_checkpoint({kCheckpointVersion, cell.final_step, mix_seed(cell.seed, static_cast<uint64_t>(cell.final_step)),
                         digest, cell.final_model},
                        (dir / "checkpoints" / "final.ckpt").string());
        save_checkpoint({kCheckpointVersion, cell.best_step, mix_seed(cell.seed, static_cast<uint64_t>(cell.best_step)),
                         digest, cell.best_model},
                        (dir / "checkpoints" / "best.ckpt").string());
        write_series_csv((dir / "series.csv").string(), cell);
        json meta;
        meta["model_class"] = cell.class_name;
        meta["seed"] = cell.seed;
        meta["best_step"] = cell.best_step;
        meta["final_step"] = cell.final_step;
        meta["selection_metric"] = eff.selection_metric;
        meta["outlier_rule"] = "replace value_i with rolling median_i iff |value_i - median_i| > mean(d) + 3*std(d)";
        meta["ensemble_member_spec"] = "all ensemble-k members use the base spec";
        meta["config"] = config_to_text(cfg);
        std::ofstream mf(dir / "meta.json", std::ios::trunc);
        mf << meta.dump(2) << "\n";
        cell.status = "ok";
    };

    auto run_phase1 = [&](const CellJob& job) {
        CellResult& cell = results[job.cls.name][job.seed_index];
        cell.class_name = job.cls.name;
        cell.seed = job.seed;
        try {
            {
                std::lock_guard<std::mutex> lk(log_mutex);
                log << "[grid] training " << job.cls.name << " seed " << job.seed << "\n";
            }
            TrainState st = train_cell(cfg, job.cls, train_set, job.seed);
            finish_cell(cell, st.history);
            if (st.flagged) cell.status = "flagged: non-finite gradient aborted a step";
            states[job.cls.name][job.seed_index] = std::move(st);
        } catch (const std::exception& e) {
            cell.status = std::string("failed: ") + e.what();
        }
    };

    std::atomic<size_t> next{0};
    int workers = std::max(1, std::min<int>(cfg.parallelism, static_cast<int>(phase1.size())));
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            while (true) {
                size_t i = next.fetch_add(1);
                if (i >= phase1.size()) break;
                run_phase1(phase1[i]);
            }
        });
    for (auto& t : pool) t.join();

    for (const CellJob& job : phase2) {
        CellResult& cell = results[job.cls.name][job.seed_index];
        cell.class_name = job.cls.name;
        cell.seed = job.seed;
        try {
            auto it = states.find("single-adv");
            if (it == states.end() || cfg.seeds.size() < static_cast<size_t>(job.cls.k))
                throw std::invalid_argument("separate-ensemble" + std::to_string(job.cls.k) +
                                            "-adv needs single-adv runs over >= k seeds");
            std::vector<const TrainState*> members;
            for (int m = 0; m < job.cls.k; ++m) {
                const TrainState& st = it->second[(job.seed_index + static_cast<size_t>(m)) % cfg.seeds.size()];
                if (st.history.empty()) throw std::invalid_argument("separate-ensemble member run unavailable");
                members.push_back(&st);
            }
            finish_cell(cell, separate_history(members));
        } catch (const std::exception& e) {
            cell.status = std::string("failed: ") + e.what();
        }
    }

    // Report tables over the successfully evaluated classes.
    std::vector<std::string> ok_classes;
    for (const ClassSpec& cls : class_specs) {
        bool all_ok = true;
        for (const CellResult& c : results[cls.name])
            if (c.status.rfind("failed", 0) == 0 || c.raw.empty()) all_ok = false;
        if (all_ok) ok_classes.push_back(cls.name);
    }

    std::map<std::string, std::map<std::string, double>> last10_table, best_table;
    std::ofstream curves(fs::path(cfg.out_dir) / "report" / "curves.csv", std::ios::trunc);
    curves << "step,model_class,metric,value\n";
    for (const std::string& cls : ok_classes) {
        std::vector<const CellResult*> cells;
        for (const CellResult& c : results[cls]) cells.push_back(&c);
        auto agg = aggregate_class(cells, metrics, 1000);
        const std::string& sel = eff.selection_metric;
        size_t best_idx = agg.count(sel) ? argmax_series(agg.at(sel)) : 0;
        for (const std::string& metric : metrics) {
            const EvalSeries& s = agg.at(metric);
            last10_table[cls][metric] = last10_mean(s);
            best_table[cls][metric] = s.points[std::min(best_idx, s.points.size() - 1)].second;
            for (const auto& [step, value] : s.points)
                curves << format_g17(step) << "," << cls << "," << metric << "," << format_g17(value) << "\n";
        }
    }
    write_table((fs::path(cfg.out_dir) / "report" / "table_last10.csv").string(), ok_classes, metrics, last10_table);
    write_table((fs::path(cfg.out_dir) / "report" / "table_best.csv").string(), ok_classes, metrics, best_table);

    // 500-step attacks on the best checkpoints.
    {
        Dataset strong_set = subset(eval_set, static_cast<size_t>(cfg.eval_500_subset));
        std::map<std::string, std::map<std::string, double>> t500;
        for (const std::string& cls : ok_classes) {
            double acc_ifgsm = 0.0, acc_pgd = 0.0;
            for (const CellResult& c : results[cls]) {
                acc_ifgsm += robust_accuracy(c.best_model, strong_set, AttackConfig::ifgsm(cfg.delta, 500),
                                             metric_eval_seed("ifgsm-500"));
                acc_pgd += robust_accuracy(c.best_model, strong_set, AttackConfig::pgd_adam(cfg.delta, 500),
                                           metric_eval_seed("pgd-500"));
            }
            t500[cls]["ifgsm-500"] = acc_ifgsm / static_cast<double>(results[cls].size());
            t500[cls]["pgd-500"] = acc_pgd / static_cast<double>(results[cls].size());
        }
        write_table((fs::path(cfg.out_dir) / "report" / "table_500.csv").string(), ok_classes,
                    {"ifgsm-500", "pgd-500"}, t500);
    }

    // Report appendix: deep-dive on the best adversarially trained ensemble.
    {
        std::string appendix_class;
        int best_k = 0;
        for (const ClassSpec& cls : class_specs) {
            bool ok = std::find(ok_classes.begin(), ok_classes.end(), cls.name) != ok_classes.end();
            if (ok && cls.kind == ClassSpec::Kind::EnsembleKAdv && cls.k > best_k) {
                best_k = cls.k;
                appendix_class = cls.name;
            }
        }
        if (!appendix_class.empty()) {
            const std::string& sel = eff.selection_metric;
            const CellResult* best_cell = nullptr;
            double best_val = -1.0;
            for (const CellResult& c : results[appendix_class]) {
                double v = c.smoothed.count(sel) ? c.smoothed.at(sel).points[static_cast<size_t>(c.best_index)].second
                                                 : 0.0;
                if (v > best_val) {
                    best_val = v;
                    best_cell = &c;
                }
            }
            Dataset strong_set = subset(eval_set, static_cast<size_t>(cfg.eval_500_subset));
            AttackConfig margin_cfg = AttackConfig::pgd_adam(cfg.delta, cfg.strongest_start);
            margin_cfg.loss = LossKind::Margin;
            auto strongest = strongest_attack(best_cell->best_model, strong_set, margin_cfg, cfg.strongest_start,
                                              cfg.strongest_max, metric_eval_seed("strongest"));
            // The member-vs-ensemble table uses half the training radius: at
            // the full radius the margin attack saturates and every row
            // collapses into noise around zero.
            AttackConfig sub_cfg = AttackConfig::pgd_adam(cfg.delta / 2, 20);
            sub_cfg.loss = LossKind::Margin;
            auto rows = submodel_eval(best_cell->best_model, eval_set, sub_cfg, metric_eval_seed("submodel"));
            json appendix;
            appendix["model_class"] = appendix_class;
            appendix["seed"] = best_cell->seed;
            for (const auto& [steps, acc] : strongest.accuracy_by_steps)
                appendix["strongest_attack"]["accuracy_by_steps"].push_back({{"steps", steps}, {"accuracy", acc}});
            for (const auto& [steps, acc] : strongest.envelope)
                appendix["strongest_attack"]["envelope"].push_back({{"steps", steps}, {"accuracy", acc}});
            appendix["strongest_attack"]["final_accuracy"] = strongest.final_accuracy;
            appendix["submodel_delta"] = sub_cfg.delta;
            for (const SubmodelRow& r : rows)
                appendix["submodel_eval"].push_back({{"name", r.name}, {"clean", r.clean}, {"robust", r.robust}});
            std::ofstream af(fs::path(cfg.out_dir) / "report" / "appendix.json", std::ios::trunc);
            af << appendix.dump(2) << "\n";
        }
    }

    // Manifest: one terminal status per cell, no silent omissions.
    bool all_ok = true;
    json manifest;
    manifest["blackbox_coverage"] = want_blackbox ? blackbox.coverage : 0.0;
    manifest["metrics"] = metrics;
    for (const ClassSpec& cls : class_specs)
        for (size_t si = 0; si < cfg.seeds.size(); ++si) {
            const CellResult& c = results[cls.name][si];
            manifest["cells"].push_back({{"model_class", cls.name}, {"seed", cfg.seeds[si]}, {"status", c.status}});
            if (c.status.rfind("failed", 0) == 0 || c.status == "pending") all_ok = false;
        }
    std::ofstream mf(fs::path(cfg.out_dir) / "manifest.json", std::ios::trunc);
    mf << manifest.dump(2) << "\n";

    for (const auto& [cls, cells] : results)
        for (const CellResult& c : cells)
            if (c.status != "ok") log << "[grid] " << cls << "/" << c.seed << ": " << c.status << "\n";
    log << "[grid] done, " << (all_ok ? "all cells ok" : "FAILURES present") << "\n";
    return all_ok ? 0 : 1;
}

}  // namespace advens
