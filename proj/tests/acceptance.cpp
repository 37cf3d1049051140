// End-to-end acceptance harness: one line per criterion, exit 0 only if all
// pass. The grid-backed criteria share a single multi-seed run.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "advens/attack.hpp"
#include "advens/checkpoint.hpp"
#include "advens/config.hpp"
#include "advens/data.hpp"
#include "advens/eval.hpp"
#include "advens/gradsuite.hpp"
#include "advens/grid.hpp"
#include "advens/rng.hpp"
#include "advens/train.hpp"

using namespace advens;
namespace fs = std::filesystem;

namespace {

struct Criterion {
    int id;
    bool pass;
    std::string detail;
};

std::vector<Criterion> results;

void record(int id, bool pass, const std::string& detail) {
    results.push_back({id, pass, detail});
    std::printf("criterion %2d: %s  %s\n", id, pass ? "PASS" : "FAIL", detail.c_str());
    std::fflush(stdout);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4f", x);
    return buf;
}

// ---------- criterion 1: gradient correctness ----------

void criterion_1() {
    auto t0 = std::chrono::steady_clock::now();
    GradSuiteResult r = gradcheck_suite(100, 1e-6);
    double secs = seconds_since(t0);
    bool ok = r.pass() && secs < 60.0;
    std::ostringstream d;
    d << "gradient checks: " << r.checks << " checks, " << r.failures << " failures, max rel err " << r.max_rel_err
      << ", " << fmt(secs) << "s";
    record(1, ok, d.str());
}

// ---------- criterion 2: threat-model invariants ----------

void criterion_2() {
    Rng rng(0xacce97);
    ModelSpec spec = ModelSpec::make_mlp(4, {6}, 3);
    int runs = 0, bad = 0;
    while (runs < 1000) {
        Ensemble e{{init_params(spec, rng.next_u64())}, runs % 2 ? Averaging::Logit : Averaging::Probability};
        AttackConfig cfg;
        cfg.delta = 0.02 + 0.5 * rng.next_double();
        cfg.steps = 1 + static_cast<int>(rng.next_below(6));
        cfg.step_size = cfg.delta * (0.2 + rng.next_double());
        cfg.init_sigma = cfg.delta * rng.next_double();
        cfg.rule = runs % 3 == 0 ? UpdateRule::Sign : (runs % 3 == 1 ? UpdateRule::Gradient : UpdateRule::Adam);
        cfg.loss = runs % 3 == 0 ? LossKind::CrossEntropyProbs
                                 : (runs % 3 == 1 ? LossKind::CrossEntropyLogits : LossKind::Margin);
        bool clamped = runs % 4 == 0;
        if (clamped) cfg.domain_clamp = {{-0.5, 0.5}};
        Tensor x({4});
        for (double& v : x.v) v = rng.next_gaussian();
        if (clamped)
            for (double& v : x.v) v = std::clamp(v, -0.5, 0.5);
        AttackResult r = attack(e, x, static_cast<int>(rng.next_below(3)), cfg, rng.next_u64());
        if (linf_dist(r.adversarial, x) > cfg.delta + 1e-12) ++bad;
        if (clamped)
            for (double v : r.adversarial.v)
                if (v < -0.5 || v > 0.5) ++bad;
        // projection idempotence, exact
        Tensor p1 = project_linf(r.adversarial, x, cfg.delta, cfg.domain_clamp);
        Tensor p2 = project_linf(p1, x, cfg.delta, cfg.domain_clamp);
        if (p1.v != p2.v) ++bad;
        ++runs;
    }
    record(2, bad == 0, "threat model: " + std::to_string(runs) + " randomized attacks, " + std::to_string(bad) +
                            " invariant violations");
}

// ---------- criterion 3: closed-form attack oracle ----------

void criterion_3() {
    // logistic-linear model z0 = w.x, z1 = -w.x with w = (1, 0):
    // grad_x of -log p0 = -(1 - p0) * 2w, one sign step with eta = delta = 0.3
    // from x = (0.2, 0) lands exactly on (-0.1, 0) and flips the prediction;
    // the zero-gradient coordinate must not move (sign(0) = 0)
    ModelSpec spec = ModelSpec::make_mlp(2, {}, 2);
    ModelParams p = init_params(spec, 0);
    p.layers[0] = Tensor({2, 2}, {1.0, -1.0, 0.0, 0.0});
    p.layers[1] = Tensor({2});
    Ensemble e{{p}, Averaging::Probability};
    AttackConfig cfg;
    cfg.delta = 0.3;
    cfg.steps = 1;
    cfg.step_size = 0.3;
    cfg.init_sigma = 0.0;
    cfg.rule = UpdateRule::Sign;
    AttackResult r = attack(e, Tensor::vec({0.2, 0.0}), 0, cfg, 1);
    bool ok = std::fabs(r.adversarial.v[0] + 0.1) < 1e-12 && r.adversarial.v[1] == 0.0 && r.success;
    record(3, ok, "closed-form FGSM: x_adv = (" + fmt(r.adversarial.v[0]) + ", " + fmt(r.adversarial.v[1]) +
                      "), prediction flipped = " + (r.success ? "yes" : "no"));
}

// ---------- criteria 4-7: the shared desk grid ----------

std::map<std::string, std::map<std::string, double>> read_table(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("missing table: " + path.string());
    std::string line;
    std::getline(in, line);
    std::stringstream hdr(line);
    std::vector<std::string> cols;
    std::string c;
    while (std::getline(hdr, c, ',')) cols.push_back(c);
    std::map<std::string, std::map<std::string, double>> out;
    while (std::getline(in, line)) {
        std::stringstream row(line);
        std::string cls;
        std::getline(row, cls, ',');
        for (size_t i = 1; i < cols.size(); ++i) {
            std::string v;
            std::getline(row, v, ',');
            out[cls][cols[i]] = std::stod(v);
        }
    }
    return out;
}

void criteria_4_to_7(const fs::path& out_root) {
    auto t0 = std::chrono::steady_clock::now();
    HarnessConfig cfg;
    cfg.classes = {"baseline", "single-adv", "double-adv", "ensemble2-adv", "separate-ensemble2-adv"};
    cfg.seeds = {1, 2, 3, 4, 5};
    cfg.metrics = {"clean", "ifgsm-5", "pgd-20", "blackbox"};
    cfg.out_dir = (out_root / "grid").string();
    cfg.parallelism = static_cast<int>(std::max(2u, std::thread::hardware_concurrency()));
    std::ostringstream log;
    int rc = run_grid(cfg, log);
    double grid_secs = seconds_since(t0);
    if (rc != 0) {
        std::string why = "grid run failed (exit " + std::to_string(rc) + ")";
        for (int id : {4, 5, 6, 7}) record(id, false, why);
        return;
    }
    auto last10 = read_table(fs::path(cfg.out_dir) / "report" / "table_last10.csv");
    auto t500 = read_table(fs::path(cfg.out_dir) / "report" / "table_500.csv");

    const std::vector<std::string> adv = {"single-adv", "double-adv", "ensemble2-adv", "separate-ensemble2-adv"};
    const std::vector<std::string> nonadv = {"baseline"};

    // 4a: every adversarial class beats every non-adversarial one by >= 0.05
    double worst_adv = 1.0, best_non = 0.0;
    for (const auto& c : adv) worst_adv = std::min(worst_adv, last10[c]["pgd-20"]);
    for (const auto& c : nonadv) best_non = std::max(best_non, last10[c]["pgd-20"]);
    bool a = worst_adv >= best_non + 0.05;
    // 4b: ensemble2-adv >= single-adv + 0.02 and >= double-adv
    double e2 = last10["ensemble2-adv"]["pgd-20"];
    bool b = e2 >= last10["single-adv"]["pgd-20"] + 0.02 && e2 >= last10["double-adv"]["pgd-20"];
    // 4c: ensemble2-adv >= separate-ensemble2-adv
    bool c = e2 >= last10["separate-ensemble2-adv"]["pgd-20"];
    // 4d: baseline pgd-500 < 0.3 x its clean accuracy
    double base500 = t500["baseline"]["pgd-500"];
    bool d = base500 < 0.3 * last10["baseline"]["clean"];
    bool budget = grid_secs <= 1800.0;
    std::ostringstream d4;
    d4 << "grid orderings (pgd-20 last-10 means): adv>=non+0.05 " << (a ? "ok" : "VIOLATED") << " ("
       << fmt(worst_adv) << " vs " << fmt(best_non) << "); e2adv " << fmt(e2) << " vs sadv+0.02 "
       << fmt(last10["single-adv"]["pgd-20"] + 0.02) << " / dadv " << fmt(last10["double-adv"]["pgd-20"])
       << " " << (b ? "ok" : "VIOLATED") << "; vs separate " << fmt(last10["separate-ensemble2-adv"]["pgd-20"])
       << " " << (c ? "ok" : "VIOLATED") << "; baseline pgd-500 " << fmt(base500) << " < 0.3*clean "
       << (d ? "ok" : "VIOLATED") << "; " << fmt(grid_secs) << "s";
    record(4, a && b && c && d && budget, d4.str());

    // 5: clean-accuracy cost of adversarial training
    double clean_base = last10["baseline"]["clean"], clean_sadv = last10["single-adv"]["clean"];
    record(5, clean_sadv < clean_base,
           "clean cost: single-adv " + fmt(clean_sadv) + " < baseline " + fmt(clean_base));

    // 6: black-box construction invariant (fresh small sources) + grid ordering
    {
        HarnessConfig small = cfg;
        small.data_n = 600;
        small.train_steps = 400;
        small.eval_subset = 100;
        Dataset data = build_dataset(small);
        auto [train_set, test_set] = split(data, small.test_fraction, small.data_seed);
        Dataset eval_set = subset(test_set, static_cast<size_t>(small.eval_subset));
        TrainConfig tc = small.train_config(mix_seed(small.data_seed, 0xb10cb0a1ULL), false);
        Ensemble src_a{{init_params(small.base_spec(), mix_seed(small.data_seed, 0xa1ULL))},
                       Averaging::Probability};
        Ensemble src_b{{init_params(small.cnn_spec(), mix_seed(small.data_seed, 0xb2ULL))},
                       Averaging::Probability};
        ModelParams m1 = train_standard(src_a, train_set, tc).model.members.front();
        TrainConfig tcb = tc;
        tcb.seed = mix_seed(small.data_seed, 0xb10cb0a2ULL);
        ModelParams m2 = train_standard(src_b, train_set, tcb).model.members.front();
        BlackboxSet set = blackbox_generate({m1, m2}, eval_set, AttackConfig::pgd_adam(small.delta, 20),
                                            small.blackbox_max_steps, mix_seed(small.data_seed, 0xb10cULL));
        bool inv = blackbox_verify(set, {m1, m2}) && !set.inputs.empty();
        double worst_adv_bb = 1.0, best_non_bb = 0.0;
        for (const auto& cls : adv) worst_adv_bb = std::min(worst_adv_bb, last10[cls]["blackbox"]);
        for (const auto& cls : nonadv) best_non_bb = std::max(best_non_bb, last10[cls]["blackbox"]);
        bool order = worst_adv_bb > best_non_bb;
        record(6, inv && order,
               "blackbox: fools-all invariant " + std::string(inv ? "holds" : "VIOLATED") + " (coverage " +
                   fmt(set.coverage) + "), adv " + fmt(worst_adv_bb) + " > non-adv " + fmt(best_non_bb) +
                   (order ? "" : " VIOLATED"));
    }

    // 7: appendix protocol on the best adversarial ensemble
    {
        std::ifstream in(fs::path(cfg.out_dir) / "report" / "appendix.json");
        nlohmann::json j;
        in >> j;
        bool envelope_ok = true;
        double prev = 2.0;
        for (const auto& pt : j["strongest_attack"]["envelope"]) {
            double v = pt["accuracy"].get<double>();
            if (v > prev + 1e-15) envelope_ok = false;
            prev = v;
        }
        bool has_prob = false, has_logit = false;
        double ens_robust = -1.0;
        for (const auto& row : j["submodel_eval"]) {
            std::string name = row["name"].get<std::string>();
            if (name.find("probability") != std::string::npos) {
                has_prob = true;
                ens_robust = row["robust"].get<double>();
            }
            if (name.find("logit") != std::string::npos) has_logit = true;
        }
        bool members_below = true;
        for (const auto& row : j["submodel_eval"]) {
            std::string name = row["name"].get<std::string>();
            if (name.find("member") != std::string::npos && row["robust"].get<double>() > ens_robust + 1e-12)
                members_below = false;
        }
        bool ok = envelope_ok && has_prob && has_logit && members_below && ens_robust >= 0.0;
        record(7, ok, std::string("appendix: envelope nonincreasing ") + (envelope_ok ? "ok" : "VIOLATED") +
                          ", member robust <= ensemble " + (members_below ? "ok" : "VIOLATED") +
                          ", probability+logit rows " + (has_prob && has_logit ? "present" : "MISSING"));
    }
}

// ---------- criterion 8: time-series pipeline oracle ----------

EvalSeries oracle_smooth(const EvalSeries& in, int window) {
    size_t n = in.points.size();
    std::vector<double> med(n), dev(n);
    for (size_t i = 0; i < n; ++i) {
        size_t half = static_cast<size_t>(window) / 2;
        size_t reach = std::min({half, i, n - 1 - i});
        std::vector<double> vals;
        for (size_t j = i - reach; j <= i + reach; ++j) vals.push_back(in.points[j].second);
        std::sort(vals.begin(), vals.end());
        size_t m = vals.size();
        med[i] = m % 2 ? vals[m / 2] : 0.5 * (vals[m / 2 - 1] + vals[m / 2]);
        dev[i] = std::fabs(in.points[i].second - med[i]);
    }
    double mean = 0.0;
    for (double d : dev) mean += d;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double d : dev) var += (d - mean) * (d - mean);
    double sd = std::sqrt(var / static_cast<double>(n));
    EvalSeries out = in;
    for (size_t i = 0; i < n; ++i)
        if (dev[i] > mean + 3.0 * sd) out.points[i].second = med[i];
    return out;
}

void criterion_8() {
    Rng rng(88);
    int mismatches = 0;
    for (int trial = 0; trial < 50; ++trial) {
        int n = 5 + static_cast<int>(rng.next_below(150));
        EvalSeries s;
        s.metric = "m";
        for (int i = 0; i < n; ++i) s.points.emplace_back(i, 0.5 + 0.05 * rng.next_gaussian());
        int spikes = 1 + static_cast<int>(rng.next_below(3));
        for (int k = 0; k < spikes; ++k)
            s.points[rng.next_below(static_cast<uint64_t>(n))].second += (rng.next_double() < 0.5 ? -4.0 : 4.0);
        if (smooth_outliers(s).points != oracle_smooth(s, 50).points) ++mismatches;
    }
    // interpolation / aggregation identities
    EvalSeries two;
    two.metric = "m";
    two.points = {{0, 0.0}, {10, 1.0}};
    EvalSeries grid = interpolate(two, 11);
    bool interp_ok = grid.points.size() == 11 && std::fabs(grid.points[5].second - 0.5) < 1e-12;
    // (a+a)/2 is exact in IEEE; a three-way mean only agrees to rounding
    EvalSeries agg2 = aggregate_seeds({grid, grid});
    EvalSeries agg3 = aggregate_seeds({grid, grid, grid});
    bool agg_ok = agg2.points == grid.points && agg3.points.size() == grid.points.size();
    for (size_t i = 0; i < grid.points.size(); ++i)
        if (std::fabs(agg3.points[i].second - grid.points[i].second) > 1e-15) agg_ok = false;
    record(8, mismatches == 0 && interp_ok && agg_ok,
           "series pipeline: " + std::to_string(mismatches) + "/50 smoothing mismatches, interpolation midpoint " +
               (interp_ok ? "ok" : "VIOLATED") + ", mean-of-equals " + (agg_ok ? "ok" : "VIOLATED"));
}

// ---------- criterion 9: determinism and persistence ----------

void criterion_9(const fs::path& out_root) {
    HarnessConfig cfg;
    cfg.data_n = 200;
    cfg.data_dim = 8;
    cfg.data_classes = 3;
    cfg.classes = {"single-adv"};
    cfg.seeds = {1};
    cfg.train_steps = 120;
    cfg.eval_cadence = 40;
    cfg.eval_subset = 40;
    cfg.eval_500_subset = 10;
    cfg.metrics = {"clean", "ifgsm-5"};
    std::ostringstream log;
    auto run_once = [&](const char* tag) {
        cfg.out_dir = (out_root / tag).string();
        return run_grid(cfg, log);
    };
    bool rc_ok = run_once("det_a") == 0 && run_once("det_b") == 0;
    auto slurp = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        std::ostringstream ss;
        ss << in.rdbuf();
        return ss.str();
    };
    bool csv_same = slurp(out_root / "det_a" / "single-adv" / "1" / "series.csv") ==
                    slurp(out_root / "det_b" / "single-adv" / "1" / "series.csv");
    bool ckpt_same = slurp(out_root / "det_a" / "single-adv" / "1" / "checkpoints" / "final.ckpt") ==
                     slurp(out_root / "det_b" / "single-adv" / "1" / "checkpoints" / "final.ckpt");

    Checkpoint c = load_checkpoint((out_root / "det_a" / "single-adv" / "1" / "checkpoints" / "final.ckpt").string());
    auto bytes = serialize_checkpoint(c);
    bool round_trip = serialize_checkpoint(deserialize_checkpoint(bytes)) == bytes;
    Rng rng(99);
    int undetected = 0;
    for (int t = 0; t < 50; ++t) {
        auto mutant = bytes;
        size_t pos = 8 + rng.next_below(bytes.size() - 16);
        mutant[pos] ^= static_cast<unsigned char>(1u << rng.next_below(8));
        try {
            deserialize_checkpoint(mutant);
            ++undetected;
        } catch (const FormatError&) {
        }
    }
    bool ok = rc_ok && csv_same && ckpt_same && round_trip && undetected == 0;
    record(9, ok, std::string("determinism: series ") + (csv_same ? "identical" : "DIFFER") + ", checkpoints " +
                      (ckpt_same ? "identical" : "DIFFER") + ", round trip " + (round_trip ? "exact" : "BROKEN") +
                      ", " + std::to_string(undetected) + "/50 mutations undetected");
}

// ---------- criterion 10: CIFAR ingestion ----------

void criterion_10() {
    std::vector<unsigned char> bytes;
    for (int l : {3, 7, 0}) {
        bytes.push_back(static_cast<unsigned char>(l));
        for (int i = 0; i < 3072; ++i) bytes.push_back(static_cast<unsigned char>((l * 31 + i) % 256));
    }
    bool ok = true;
    std::string note = "cifar: ";
    try {
        Dataset d = parse_cifar10_bytes(bytes, "fixture");
        ok = ok && d.size() == 3 && d.labels == std::vector<int>{3, 7, 0} && d.inputs[0].numel() == 3072;
        for (const Tensor& t : d.inputs)
            for (double v : t.v) ok = ok && v >= 0.0 && v <= 1.0;
        // byte-exact round trip at 1/255 quantization
        std::vector<unsigned char> back;
        for (size_t i = 0; i < d.size(); ++i) {
            back.push_back(static_cast<unsigned char>(d.labels[i]));
            for (double p : d.inputs[i].v) back.push_back(static_cast<unsigned char>(std::lround(p * 255.0)));
        }
        ok = ok && back == bytes;
        note += "3-record fixture parsed, round trip exact";
    } catch (const std::exception& e) {
        ok = false;
        note += std::string("unexpected error: ") + e.what();
    }
    auto expect_error = [&](std::vector<unsigned char> b, const char* what) {
        try {
            parse_cifar10_bytes(b, "fixture");
            ok = false;
            note += std::string("; missing error for ") + what;
        } catch (const FormatError&) {
        }
    };
    std::vector<unsigned char> trunc(bytes.begin(), bytes.begin() + 3072);
    expect_error(trunc, "truncation");
    auto badlabel = bytes;
    badlabel[0] = 10;
    expect_error(badlabel, "label range");
    record(10, ok, note);
}

}  // namespace

int main() {
    fs::path out_root = fs::temp_directory_path() / "advens_acceptance";
    fs::remove_all(out_root);
    fs::create_directories(out_root);

    criterion_1();
    criterion_2();
    criterion_3();
    criteria_4_to_7(out_root);
    criterion_8();
    criterion_9(out_root);
    criterion_10();

    int failed = 0;
    for (const Criterion& c : results)
        if (!c.pass) ++failed;
    std::printf("%d/%zu criteria passed\n", static_cast<int>(results.size()) - failed, results.size());
    return failed == 0 ? 0 : 1;
}
