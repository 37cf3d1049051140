#include "advens/eval.hpp"

#include <algorithm>
#include <cmath>

#include "advens/rng.hpp"

namespace advens {

namespace {

constexpr size_t kChunk = 256;

double attacked_accuracy(const Ensemble& target, const Dataset& data, const AttackConfig& cfg, uint64_t seed) {
    size_t n = data.size();
    if (n == 0) throw std::invalid_argument("robust_accuracy: empty dataset");
    size_t correct = 0;
    for (size_t start = 0; start < n; start += kChunk) {
        std::vector<int> idx;
        for (size_t i = start; i < std::min(n, start + kChunk); ++i) idx.push_back(static_cast<int>(i));
        auto b = attack_batch(target, stack_inputs(data, idx), select_labels(data, idx), cfg, seed,
                              static_cast<int>(start));
        for (char s : b.success)
            if (!s) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

double mean_of(const std::vector<double>& xs) {
    double acc = 0.0;
    for (double x : xs) acc += x;
    return acc / static_cast<double>(xs.size());
}

double std_of(const std::vector<double>& xs, double mean) {
    double acc = 0.0;
    for (double x : xs) acc += (x - mean) * (x - mean);
    return std::sqrt(acc / static_cast<double>(xs.size()));
}

double median_of(std::vector<double> xs) {
    size_t n = xs.size();
    std::sort(xs.begin(), xs.end());
    return n % 2 == 1 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

}  // namespace

void EvalSeries::validate() const {
    for (size_t i = 1; i < points.size(); ++i)
        if (points[i].first <= points[i - 1].first)
            throw std::invalid_argument("eval series: steps must be strictly increasing");
}

double accuracy(const Ensemble& target, const Dataset& data) {
    target.validate();
    data.validate();
    if (data.size() == 0) throw std::invalid_argument("accuracy: empty dataset");
    size_t correct = 0;
    for (size_t start = 0; start < data.size(); start += kChunk) {
        std::vector<int> idx;
        for (size_t i = start; i < std::min(data.size(), start + kChunk); ++i) idx.push_back(static_cast<int>(i));
        Tensor out = ensemble_forward(target, stack_inputs(data, idx));
        for (size_t r = 0; r < idx.size(); ++r)
            if (predict_row(out, static_cast<int>(r)) == data.labels[static_cast<size_t>(idx[r])]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

double robust_accuracy(const Ensemble& target, const Dataset& data, AttackConfig cfg, uint64_t seed) {
    if (cfg.delta == 0.0) {
        // Empty perturbation ball: init noise forced off, result equals clean
        // accuracy without running the ascent.
        return accuracy(target, data);
    }
    if (!cfg.domain_clamp && data.domain_clamp) cfg.domain_clamp = data.domain_clamp;
    return attacked_accuracy(target, data, cfg, seed);
}

EvalSeries attack_curve(const Ensemble& target, const Dataset& data, const AttackConfig& cfg,
                        const std::vector<int>& steps_list, uint64_t seed) {
    if (steps_list.empty()) throw std::invalid_argument("attack_curve: empty step list");
    for (size_t i = 1; i < steps_list.size(); ++i)
        if (steps_list[i] <= steps_list[i - 1]) throw std::invalid_argument("attack_curve: steps must increase");
    EvalSeries s;
    s.metric = "robust-accuracy-by-attack-steps";
    for (int n : steps_list) {
        AttackConfig c = cfg;
        c.steps = n;
        s.points.emplace_back(static_cast<double>(n), robust_accuracy(target, data, c, seed));
    }
    return s;
}

BlackboxSet blackbox_generate(const std::vector<ModelParams>& sources, const Dataset& data, AttackConfig cfg,
                              int max_steps, uint64_t seed) {
    if (sources.size() < 2) throw std::invalid_argument("blackbox_generate: needs at least 2 source members");
    if (max_steps < cfg.steps) throw std::invalid_argument("blackbox_generate: max_steps below cfg.steps");
    data.validate();
    if (!cfg.domain_clamp && data.domain_clamp) cfg.domain_clamp = data.domain_clamp;

    Ensemble source{sources, Averaging::Logit};

    BlackboxSet set;
    set.classes = data.classes;
    set.generation_cfg = cfg;
    for (const ModelParams& m : sources)
        set.source_descriptors.push_back((m.spec.kind == ArchKind::Mlp ? std::string("mlp") : std::string("small-cnn")) +
                                         ":seed=" + std::to_string(m.seed));

    size_t n = data.size();
    int row_len = n ? data.inputs.front().numel() : 0;
    std::vector<char> done(n, 0);
    std::vector<Tensor> best(n);
    std::vector<std::vector<char>> best_fooled(n);

    auto member_fooled = [&](const Tensor& rows, int row, int label, std::vector<char>& fooled_out) {
        fooled_out.clear();
        bool all = true;
        Tensor x({1, row_len},
                 std::vector<double>(rows.v.begin() + static_cast<long>(row) * row_len,
                                     rows.v.begin() + static_cast<long>(row + 1) * row_len));
        for (const ModelParams& m : sources) {
            Tensor logits = forward_logits(m, x);
            bool f = predict_row(logits, 0) != label;
            fooled_out.push_back(f);
            all = all && f;
        }
        return all;
    };

    for (int steps = cfg.steps; steps <= max_steps; steps *= 2) {
        AttackConfig c = cfg;
        c.steps = steps;
        std::vector<int> todo;
        for (size_t i = 0; i < n; ++i)
            if (!done[i]) todo.push_back(static_cast<int>(i));
        if (todo.empty()) break;
        for (size_t start = 0; start < todo.size(); start += kChunk) {
            std::vector<int> idx(todo.begin() + static_cast<long>(start),
                                 todo.begin() + static_cast<long>(std::min(todo.size(), start + kChunk)));
            auto b = attack_batch(source, stack_inputs(data, idx), select_labels(data, idx), c, seed);
            for (size_t r = 0; r < idx.size(); ++r) {
                size_t i = static_cast<size_t>(idx[r]);
                std::vector<char> fooled;
                if (member_fooled(b.adversarial, static_cast<int>(r), data.labels[i], fooled)) {
                    done[i] = 1;
                    best[i] = Tensor(data.inputs[i].shape,
                                     std::vector<double>(b.adversarial.v.begin() + static_cast<long>(r) * row_len,
                                                         b.adversarial.v.begin() + static_cast<long>(r + 1) * row_len));
                    best_fooled[i] = std::move(fooled);
                }
            }
        }
    }

    for (size_t i = 0; i < n; ++i) {
        if (!done[i]) continue;
        set.inputs.push_back(std::move(best[i]));
        set.labels.push_back(data.labels[i]);
        set.fooled.push_back(std::move(best_fooled[i]));
    }
    set.coverage = n == 0 ? 0.0 : static_cast<double>(set.inputs.size()) / static_cast<double>(n);
    return set;
}

double blackbox_eval(const Ensemble& target, const BlackboxSet& set) {
    if (set.inputs.empty()) throw std::invalid_argument("blackbox_eval: empty evaluation set");
    Dataset d;
    d.inputs = set.inputs;
    d.labels = set.labels;
    d.classes = set.classes;
    d.provenance = "blackbox";
    return accuracy(target, d);
}

bool blackbox_verify(const BlackboxSet& set, const std::vector<ModelParams>& sources) {
    for (size_t i = 0; i < set.inputs.size(); ++i) {
        const Tensor& x = set.inputs[i];
        Tensor row({1, x.numel()}, x.v);
        for (const ModelParams& m : sources)
            if (predict_row(forward_logits(m, row), 0) == set.labels[i]) return false;
    }
    return true;
}

std::vector<SubmodelRow> submodel_eval(const Ensemble& ensemble, const Dataset& data, AttackConfig cfg,
                                       uint64_t seed) {
    if (cfg.loss != LossKind::Margin)
        throw std::invalid_argument("submodel_eval: requires the margin loss");
    std::vector<SubmodelRow> rows;
    for (size_t i = 0; i < ensemble.members.size(); ++i) {
        Ensemble solo{{ensemble.members[i]}, Averaging::Probability};
        SubmodelRow r;
        r.name = "member-" + std::to_string(i + 1);
        r.clean = accuracy(solo, data);
        r.robust = robust_accuracy(solo, data, cfg, seed);
        rows.push_back(r);
    }
    Ensemble prob = ensemble;
    prob.mode = Averaging::Probability;
    Ensemble logit = ensemble;
    logit.mode = Averaging::Logit;
    rows.push_back({"ensemble-probability", accuracy(prob, data), robust_accuracy(prob, data, cfg, seed)});
    rows.push_back({"ensemble-logit", accuracy(logit, data), robust_accuracy(logit, data, cfg, seed)});
    return rows;
}

EvalSeries smooth_outliers(const EvalSeries& series, int window) {
    series.validate();
    size_t n = series.points.size();
    if (n < 2) throw std::invalid_argument("smooth_outliers: needs at least 2 points");
    int half = window / 2;
    std::vector<double> med(n), dev(n);
    for (size_t i = 0; i < n; ++i) {
        int r = std::min<int>({half, static_cast<int>(i), static_cast<int>(n - 1 - i)});
        std::vector<double> win;
        for (int j = static_cast<int>(i) - r; j <= static_cast<int>(i) + r; ++j)
            win.push_back(series.points[static_cast<size_t>(j)].second);
        med[i] = median_of(std::move(win));
        dev[i] = std::fabs(series.points[i].second - med[i]);
    }
    double m = mean_of(dev);
    double s = std_of(dev, m);
    double threshold = m + 3.0 * s;
    EvalSeries out = series;
    for (size_t i = 0; i < n; ++i)
        if (dev[i] > threshold) out.points[i].second = med[i];
    return out;
}

EvalSeries interpolate(const EvalSeries& series, int grid_size) {
    series.validate();
    if (series.points.size() < 2) throw std::invalid_argument("interpolate: needs at least 2 points");
    if (grid_size < 2) throw std::invalid_argument("interpolate: grid size must be >= 2");
    double lo = series.points.front().first, hi = series.points.back().first;
    EvalSeries out = series;
    out.points.clear();
    size_t src = 0;
    for (int i = 0; i < grid_size; ++i) {
        double step = lo + (hi - lo) * i / (grid_size - 1);
        while (src + 2 < series.points.size() && series.points[src + 1].first <= step) ++src;
        auto [x0, y0] = series.points[src];
        auto [x1, y1] = series.points[src + 1];
        double t = (step - x0) / (x1 - x0);
        t = std::clamp(t, 0.0, 1.0);
        out.points.emplace_back(step, y0 + t * (y1 - y0));
    }
    return out;
}

std::vector<EvalSeries> interpolate_common(const std::vector<EvalSeries>& series, int grid_size) {
    if (series.empty()) throw std::invalid_argument("interpolate_common: no series");
    double lo = series.front().points.front().first;
    double hi = series.front().points.back().first;
    for (const EvalSeries& s : series) {
        s.validate();
        if (s.points.size() < 2) throw std::invalid_argument("interpolate_common: series with < 2 points");
        lo = std::max(lo, s.points.front().first);
        hi = std::min(hi, s.points.back().first);
    }
    if (!(lo < hi)) {
        std::string ranges;
        for (const EvalSeries& s : series)
            ranges += " [" + std::to_string(s.points.front().first) + "," + std::to_string(s.points.back().first) + "]";
        throw std::invalid_argument("interpolate_common: step ranges do not overlap:" + ranges);
    }
    std::vector<EvalSeries> out;
    for (const EvalSeries& s : series) {
        EvalSeries clipped = s;
        clipped.points.clear();
        // Interpolate the source onto the clipped range first, then the grid.
        for (int i = 0; i < grid_size; ++i) {
            double step = lo + (hi - lo) * i / (grid_size - 1);
            size_t src = 0;
            while (src + 2 < s.points.size() && s.points[src + 1].first <= step) ++src;
            auto [x0, y0] = s.points[src];
            auto [x1, y1] = s.points[src + 1];
            double t = std::clamp((step - x0) / (x1 - x0), 0.0, 1.0);
            clipped.points.emplace_back(step, y0 + t * (y1 - y0));
        }
        out.push_back(std::move(clipped));
    }
    return out;
}

EvalSeries aggregate_seeds(const std::vector<EvalSeries>& series) {
    if (series.empty()) throw std::invalid_argument("aggregate_seeds: no series");
    const EvalSeries& first = series.front();
    for (const EvalSeries& s : series) {
        if (s.metric != first.metric) throw std::invalid_argument("aggregate_seeds: metric mismatch");
        if (s.points.size() != first.points.size())
            throw std::invalid_argument("aggregate_seeds: grid size mismatch");
        for (size_t i = 0; i < s.points.size(); ++i)
            if (s.points[i].first != first.points[i].first)
                throw std::invalid_argument("aggregate_seeds: series are not on a shared grid");
    }
    EvalSeries out = first;
    out.seed = -1;
    for (size_t i = 0; i < out.points.size(); ++i) {
        double acc = 0.0;
        for (const EvalSeries& s : series) acc += s.points[i].second;
        out.points[i].second = acc / static_cast<double>(series.size());
    }
    return out;
}

RunSummary summarize(const std::map<std::string, EvalSeries>& series_by_metric,
                     const std::string& selection_metric) {
    auto it = series_by_metric.find(selection_metric);
    if (it == series_by_metric.end())
        throw std::invalid_argument("summarize: unknown selection metric " + selection_metric);
    RunSummary sum;
    for (const auto& [metric, s] : series_by_metric) {
        if (s.points.size() < 10) throw std::invalid_argument("summarize: series " + metric + " has < 10 points");
        double acc = 0.0;
        for (size_t i = s.points.size() - 10; i < s.points.size(); ++i) acc += s.points[i].second;
        sum.last10[metric] = acc / 10.0;
    }
    size_t best_idx = 0;
    const EvalSeries& sel = it->second;
    for (size_t i = 1; i < sel.points.size(); ++i)
        if (sel.points[i].second > sel.points[best_idx].second) best_idx = i;
    sum.best_step = sel.points[best_idx].first;
    for (const auto& [metric, s] : series_by_metric) {
        if (s.points.size() != sel.points.size())
            throw std::invalid_argument("summarize: metric " + metric + " is not on the selection grid");
        sum.best[metric] = s.points[best_idx].second;
    }
    return sum;
}

}  // namespace advens
