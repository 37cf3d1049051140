#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "advens/checkpoint.hpp"
#include "advens/config.hpp"
#include "advens/eval.hpp"
#include "advens/gradsuite.hpp"
#include "advens/grid.hpp"
#include "advens/rng.hpp"

using namespace advens;
using nlohmann::json;

namespace {

struct CommonOpts {
    std::string config_path;
    std::vector<std::string> sets;  // key=value overrides
    std::string out_dir;
    int n_seeds = 0;  // --seeds N -> seeds 1..N
};

void add_common(CLI::App* app, CommonOpts& o) {
    app->add_option("--config", o.config_path, "config file (key = value lines)");
    app->add_option("--set", o.sets, "override a config key, key=value (repeatable)");
    app->add_option("--out", o.out_dir, "output directory (default from config or $ADVENS_OUT)");
    app->add_option("--seeds", o.n_seeds, "use seeds 1..N");
}

HarnessConfig load_config(const CommonOpts& o) {
    HarnessConfig cfg;
    if (const char* env = std::getenv("ADVENS_OUT")) cfg.out_dir = env;
    if (!o.config_path.empty()) cfg = parse_config_file(o.config_path);
    for (const std::string& kv : o.sets) {
        size_t eq = kv.find('=');
        if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
        apply_config_key(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (!o.out_dir.empty()) cfg.out_dir = o.out_dir;
    if (o.n_seeds > 0) {
        cfg.seeds.clear();
        for (int s = 1; s <= o.n_seeds; ++s) cfg.seeds.push_back(static_cast<uint64_t>(s));
    }
    return cfg;
}

Dataset eval_set_for(const HarnessConfig& cfg) {
    Dataset full = build_dataset(cfg);
    auto [train_set, test_set] = split(full, cfg.test_fraction, cfg.data_seed);
    (void)train_set;
    return subset(test_set, static_cast<size_t>(cfg.eval_subset));
}

AttackConfig named_attack(const std::string& name, int steps, double delta) {
    return eval_attack_from_name(name + "-" + std::to_string(steps), delta);
}

std::ofstream open_out(const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw FormatError("cannot open " + path + " for writing");
    return f;
}

json params_to_json(const ModelParams& m) {
    json j;
    j["spec"] = json::parse(spec_to_json(m.spec));
    j["seed"] = m.seed;
    std::vector<double> flat = flatten_params(m);
    j["params"] = flat;
    return j;
}

ModelParams params_from_json(const json& j) {
    ModelParams m;
    m.spec = spec_from_json(j.at("spec").dump());
    m.seed = j.at("seed");
    for (const auto& shape : layer_shapes(m.spec)) m.layers.emplace_back(shape);
    std::vector<double> flat = j.at("params").get<std::vector<double>>();
    unflatten_params(m, flat);
    return m;
}

void save_blackbox(const BlackboxSet& set, const std::vector<ModelParams>& sources, const std::string& path) {
    json j;
    j["classes"] = set.classes;
    j["coverage"] = set.coverage;
    j["source_descriptors"] = set.source_descriptors;
    j["delta"] = set.generation_cfg.delta;
    j["steps"] = set.generation_cfg.steps;
    for (size_t i = 0; i < set.inputs.size(); ++i) {
        json ex;
        ex["label"] = set.labels[i];
        ex["shape"] = set.inputs[i].shape;
        ex["values"] = set.inputs[i].v;
        ex["fooled"] = std::vector<int>(set.fooled[i].begin(), set.fooled[i].end());
        j["examples"].push_back(std::move(ex));
    }
    for (const ModelParams& m : sources) j["sources"].push_back(params_to_json(m));
    auto f = open_out(path);
    f << j.dump() << "\n";
}

BlackboxSet load_blackbox(const std::string& path, std::vector<ModelParams>& sources) {
    std::ifstream f(path);
    if (!f) throw FormatError("cannot open " + path);
    json j = json::parse(f);
    BlackboxSet set;
    set.classes = j.at("classes");
    set.coverage = j.at("coverage");
    set.source_descriptors = j.at("source_descriptors").get<std::vector<std::string>>();
    set.generation_cfg.delta = j.at("delta");
    set.generation_cfg.steps = j.at("steps");
    if (j.contains("examples"))
        for (const auto& ex : j.at("examples")) {
            Tensor t(ex.at("shape").get<std::vector<int>>());
            t.v = ex.at("values").get<std::vector<double>>();
            set.inputs.push_back(std::move(t));
            set.labels.push_back(ex.at("label"));
            auto fl = ex.at("fooled").get<std::vector<int>>();
            set.fooled.emplace_back(fl.begin(), fl.end());
        }
    if (j.contains("sources"))
        for (const auto& s : j.at("sources")) sources.push_back(params_from_json(s));
    return set;
}

std::pair<std::vector<ModelParams>, BlackboxSet> make_blackbox(const HarnessConfig& cfg, const Dataset& train_set,
                                                               const Dataset& eval_set) {
    TrainConfig tc = cfg.train_config(mix_seed(cfg.data_seed, 0xb10cb0a1ULL), false);
    Ensemble src_a{{init_params(cfg.base_spec(), mix_seed(cfg.data_seed, 0xa1ULL))}, Averaging::Probability};
    Ensemble src_b{{init_params(cfg.cnn_spec(), mix_seed(cfg.data_seed, 0xb2ULL))}, Averaging::Probability};
    TrainState sa = train_standard(src_a, train_set, tc);
    TrainConfig tcb = tc;
    tcb.seed = mix_seed(cfg.data_seed, 0xb10cb0a2ULL);
    TrainState sb = train_standard(src_b, train_set, tcb);
    std::vector<ModelParams> sources = {sa.model.members.front(), sb.model.members.front()};
    AttackConfig gen = AttackConfig::pgd_adam(cfg.delta, 20);
    BlackboxSet set =
        blackbox_generate(sources, eval_set, gen, cfg.blackbox_max_steps, mix_seed(cfg.data_seed, 0xb10cULL));
    return {sources, set};
}

// Report regeneration from the run directory: per-cell series.csv files in,
// aggregated tables and curves out.
int do_report(const HarnessConfig& cfg) {
    namespace fs = std::filesystem;
    std::map<std::string, std::map<uint64_t, std::map<std::string, EvalSeries>>> cells;
    for (const std::string& cls : cfg.classes)
        for (uint64_t seed : cfg.seeds) {
            fs::path p = fs::path(cfg.out_dir) / cls / std::to_string(seed) / "series.csv";
            std::ifstream f(p);
            if (!f) {
                std::cerr << "report: missing " << p.string() << ", skipping " << cls << "\n";
                cells.erase(cls);
                goto next_class;
            }
            {
                std::string line;
                std::getline(f, line);  // header
                while (std::getline(f, line)) {
                    std::stringstream ss(line);
                    std::string step, c, s, metric, value, smoothed;
                    std::getline(ss, step, ',');
                    std::getline(ss, c, ',');
                    std::getline(ss, s, ',');
                    std::getline(ss, metric, ',');
                    std::getline(ss, value, ',');
                    std::getline(ss, smoothed, ',');
                    EvalSeries& es = cells[cls][seed][metric];
                    es.metric = metric;
                    es.model_class = cls;
                    es.points.emplace_back(std::stod(step), std::stod(smoothed));
                }
            }
        next_class:;
        }

    fs::create_directories(fs::path(cfg.out_dir) / "report");
    std::map<std::string, std::map<std::string, double>> last10_table, best_table;
    std::ofstream curves(fs::path(cfg.out_dir) / "report" / "curves.csv", std::ios::trunc);
    curves << "step,model_class,metric,value\n";
    std::vector<std::string> ok_classes;
    std::vector<std::string> metrics;
    for (const std::string& cls : cfg.classes) {
        auto it = cells.find(cls);
        if (it == cells.end()) continue;
        ok_classes.push_back(cls);
        std::map<std::string, EvalSeries> agg;
        for (const auto& [metric, _] : it->second.begin()->second) {
            std::vector<EvalSeries> per_seed;
            for (auto& [seed, by_metric] : it->second) per_seed.push_back(by_metric.at(metric));
            bool can_interp = true;
            for (const auto& s : per_seed)
                if (s.points.size() < 2) can_interp = false;
            if (can_interp) per_seed = interpolate_common(per_seed, 1000);
            agg[metric] = aggregate_seeds(per_seed);
        }
        if (metrics.empty())
            for (const auto& [metric, _] : agg) metrics.push_back(metric);
        size_t best_idx = 0;
        if (agg.count(cfg.selection_metric)) {
            const auto& pts = agg.at(cfg.selection_metric).points;
            for (size_t i = 1; i < pts.size(); ++i)
                if (pts[i].second > pts[best_idx].second) best_idx = i;
        }
        for (const auto& [metric, s] : agg) {
            size_t n = s.points.size();
            size_t take = std::min<size_t>(10, n);
            double acc = 0.0;
            for (size_t i = n - take; i < n; ++i) acc += s.points[i].second;
            last10_table[cls][metric] = acc / static_cast<double>(take);
            best_table[cls][metric] = s.points[std::min(best_idx, n - 1)].second;
            for (const auto& [step, value] : s.points)
                curves << format_g17(step) << "," << cls << "," << metric << "," << format_g17(value) << "\n";
        }
    }
    auto write_table = [&](const std::string& name, const std::vector<std::string>& cols,
                           const std::map<std::string, std::map<std::string, double>>& values) {
        auto f = open_out((fs::path(cfg.out_dir) / "report" / name).string());
        f << "model_class";
        for (const auto& m : cols) f << "," << m;
        f << "\n";
        for (const auto& cls : ok_classes) {
            f << cls;
            for (const auto& m : cols) {
                f << ",";
                auto it = values.find(cls);
                if (it != values.end() && it->second.count(m)) f << format_g17(it->second.at(m));
            }
            f << "\n";
        }
    };
    write_table("table_last10.csv", metrics, last10_table);
    write_table("table_best.csv", metrics, best_table);

    Dataset full = build_dataset(cfg);
    auto [train_set, test_set] = split(full, cfg.test_fraction, cfg.data_seed);
    (void)train_set;
    Dataset strong_set = subset(subset(test_set, static_cast<size_t>(cfg.eval_subset)),
                                static_cast<size_t>(cfg.eval_500_subset));
    std::map<std::string, std::map<std::string, double>> t500;
    for (const std::string& cls : ok_classes) {
        double acc_ifgsm = 0.0, acc_pgd = 0.0;
        int n = 0;
        for (uint64_t seed : cfg.seeds) {
            fs::path ck = fs::path(cfg.out_dir) / cls / std::to_string(seed) / "checkpoints" / "best.ckpt";
            if (!fs::exists(ck)) continue;
            Checkpoint c = load_checkpoint(ck.string());
            acc_ifgsm += robust_accuracy(c.model, strong_set, AttackConfig::ifgsm(cfg.delta, 500),
                                         metric_eval_seed("ifgsm-500"));
            acc_pgd += robust_accuracy(c.model, strong_set, AttackConfig::pgd_adam(cfg.delta, 500),
                                       metric_eval_seed("pgd-500"));
            ++n;
        }
        if (n > 0) {
            t500[cls]["ifgsm-500"] = acc_ifgsm / n;
            t500[cls]["pgd-500"] = acc_pgd / n;
        }
    }
    write_table("table_500.csv", {"ifgsm-500", "pgd-500"}, t500);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"adversarial ensemble training harness"};
    app.require_subcommand(1);

    CommonOpts common;

    auto* c_grid = app.add_subcommand("grid", "train and evaluate the full model-class x seed grid");
    add_common(c_grid, common);

    auto* c_train = app.add_subcommand("train", "train one (model class, seed) cell");
    add_common(c_train, common);
    std::string train_class = "single-adv";
    uint64_t train_seed = 1;
    c_train->add_option("--class", train_class, "model class name")->required();
    c_train->add_option("--seed", train_seed, "training seed");

    auto* c_eval = app.add_subcommand("eval", "evaluate a checkpoint under a named attack");
    add_common(c_eval, common);
    std::string eval_ckpt, eval_attack_name = "pgd", eval_out;
    int eval_steps = 20;
    double eval_delta = -1.0;
    c_eval->add_option("--ckpt", eval_ckpt, "checkpoint path")->required();
    c_eval->add_option("--attack", eval_attack_name, "clean | ifgsm | pgd");
    c_eval->add_option("--steps", eval_steps, "attack iterations");
    c_eval->add_option("--delta", eval_delta, "L-infinity radius (default from config)");
    c_eval->add_option("--out-file", eval_out, "write results CSV here (default stdout)");

    auto* c_attack = app.add_subcommand("attack", "per-example attack results for a checkpoint");
    add_common(c_attack, common);
    std::string atk_ckpt, atk_name = "pgd", atk_out;
    int atk_steps = 20;
    double atk_delta = -1.0;
    c_attack->add_option("--ckpt", atk_ckpt, "checkpoint path")->required();
    c_attack->add_option("--attack", atk_name, "ifgsm | pgd");
    c_attack->add_option("--steps", atk_steps, "attack iterations");
    c_attack->add_option("--delta", atk_delta, "L-infinity radius (default from config)");
    c_attack->add_option("--out-file", atk_out, "write per-example CSV here (default stdout)");

    auto* c_bb = app.add_subcommand("blackbox", "black-box transfer set operations");
    c_bb->require_subcommand(1);
    auto* c_bb_gen = c_bb->add_subcommand("gen", "train source models and generate the transfer set");
    add_common(c_bb_gen, common);
    std::string bb_out = "blackbox.json";
    c_bb_gen->add_option("--out-file", bb_out, "output JSON path");
    auto* c_bb_eval = c_bb->add_subcommand("eval", "evaluate a checkpoint on a stored transfer set");
    add_common(c_bb_eval, common);
    std::string bb_set, bb_ckpt;
    c_bb_eval->add_option("--transfer-set", bb_set, "transfer set JSON")->required();
    c_bb_eval->add_option("--ckpt", bb_ckpt, "checkpoint path")->required();

    auto* c_report = app.add_subcommand("report", "rebuild report tables from an existing run directory");
    add_common(c_report, common);

    auto* c_gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient sweep");
    add_common(c_gradcheck, common);
    int gc_seeds = 100;
    double gc_tol = 1e-6;
    c_gradcheck->add_option("--gc-seeds", gc_seeds, "random repetitions");
    c_gradcheck->add_option("--tol", gc_tol, "relative tolerance");

    CLI11_PARSE(app, argc, argv);

    try {
        HarnessConfig cfg = load_config(common);

        if (c_grid->parsed()) return run_grid(cfg, std::cout);

        if (c_train->parsed()) {
            HarnessConfig one = cfg;
            one.classes = {train_class};
            one.seeds = {train_seed};
            if (parse_model_class(train_class).derived())
                throw std::invalid_argument("train: '" + train_class + "' is derived; train single-adv cells instead");
            return run_grid(one, std::cout);
        }

        if (c_eval->parsed() || c_attack->parsed()) {
            bool full = c_attack->parsed();
            std::string ckpt = full ? atk_ckpt : eval_ckpt;
            std::string name = full ? atk_name : eval_attack_name;
            int steps = full ? atk_steps : eval_steps;
            double delta = full ? atk_delta : eval_delta;
            if (delta < 0) delta = cfg.delta;
            Checkpoint c = load_checkpoint(ckpt);
            Dataset eval_set = eval_set_for(cfg);
            std::ostringstream out;
            if (!full) {
                double value = name == "clean"
                                   ? accuracy(c.model, eval_set)
                                   : robust_accuracy(c.model, eval_set, named_attack(name, steps, delta),
                                                     metric_eval_seed(name + "-" + std::to_string(steps)));
                out << "metric,value\n"
                    << (name == "clean" ? name : name + "-" + std::to_string(steps)) << ","
                    << format_g17(value) << "\n";
            } else {
                AttackConfig ac = named_attack(name, steps, delta);
                if (eval_set.domain_clamp) ac.domain_clamp = eval_set.domain_clamp;
                std::vector<int> all(eval_set.labels.size());
                for (size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
                Tensor xs = stack_inputs(eval_set, all);
                auto res = attack_batch(c.model, xs, eval_set.labels, ac,
                                        metric_eval_seed(name + "-" + std::to_string(steps)));
                out << "index,label,success,final_objective\n";
                for (size_t i = 0; i < eval_set.labels.size(); ++i)
                    out << i << "," << eval_set.labels[i] << "," << int(res.success[i]) << ","
                        << format_g17(res.loss_trace.back()[i]) << "\n";
            }
            std::string target = full ? atk_out : eval_out;
            if (target.empty())
                std::cout << out.str();
            else
                open_out(target) << out.str();
            return 0;
        }

        if (c_bb_gen->parsed()) {
            Dataset fullset = build_dataset(cfg);
            auto [train_set, test_set] = split(fullset, cfg.test_fraction, cfg.data_seed);
            Dataset eval_set = subset(test_set, static_cast<size_t>(cfg.eval_subset));
            auto [sources, set] = make_blackbox(cfg, train_set, eval_set);
            save_blackbox(set, sources, bb_out);
            std::cout << "coverage," << format_g17(set.coverage) << "\nexamples," << set.inputs.size() << "\n";
            return 0;
        }

        if (c_bb_eval->parsed()) {
            std::vector<ModelParams> sources;
            BlackboxSet set = load_blackbox(bb_set, sources);
            if (!sources.empty() && !blackbox_verify(set, sources))
                throw FormatError("transfer set " + bb_set + " fails the fools-all-members invariant");
            Checkpoint c = load_checkpoint(bb_ckpt);
            std::cout << "metric,value\nblackbox," << format_g17(blackbox_eval(c.model, set)) << "\n";
            return 0;
        }

        if (c_report->parsed()) return do_report(cfg);

        if (c_gradcheck->parsed()) {
            GradSuiteResult r = gradcheck_suite(gc_seeds, gc_tol, &std::cout);
            return r.pass() ? 0 : 1;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
