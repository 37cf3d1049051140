#include "advens/model.hpp"

#include <cmath>
#include <stdexcept>

#include "advens/rng.hpp"

namespace advens {

ModelSpec ModelSpec::make_mlp(int input_dim, std::vector<int> hidden, int classes) {
    ModelSpec s;
    s.kind = ArchKind::Mlp;
    s.mlp = {input_dim, std::move(hidden), classes};
    s.validate();
    return s;
}

ModelSpec ModelSpec::make_cnn(CnnSpec c) {
    ModelSpec s;
    s.kind = ArchKind::SmallCnn;
    s.cnn = std::move(c);
    s.validate();
    return s;
}

int ModelSpec::input_dim() const {
    return kind == ArchKind::Mlp ? mlp.input_dim : cnn.in_channels * cnn.in_h * cnn.in_w;
}

void ModelSpec::validate() const {
    if (classes() < 2) throw std::invalid_argument("model spec: class count must be >= 2");
    if (kind == ArchKind::Mlp) {
        if (mlp.input_dim < 1) throw std::invalid_argument("mlp spec: input dim must be >= 1");
        for (int h : mlp.hidden)
            if (h < 1) throw std::invalid_argument("mlp spec: every hidden width must be >= 1");
    } else {
        if (cnn.in_channels < 1 || cnn.in_h < 1 || cnn.in_w < 1)
            throw std::invalid_argument("cnn spec: input dims must be >= 1");
        if (cnn.channels.empty()) throw std::invalid_argument("cnn spec: needs at least one conv layer");
        for (int c : cnn.channels)
            if (c < 1) throw std::invalid_argument("cnn spec: every channel width must be >= 1");
        if (cnn.kernel < 1 || cnn.dense_hidden < 1 || cnn.pool < 1)
            throw std::invalid_argument("cnn spec: kernel, pool and dense width must be >= 1");
        if (cnn.kernel % 2 == 0)
            throw std::invalid_argument("cnn spec: kernel must be odd (same-padded convolutions)");
        if (cnn.in_h % cnn.pool != 0 || cnn.in_w % cnn.pool != 0)
            throw std::invalid_argument("cnn spec: pool window must divide the spatial dims");
    }
}

std::vector<std::vector<int>> layer_shapes(const ModelSpec& spec) {
    spec.validate();
    std::vector<std::vector<int>> shapes;
    if (spec.kind == ArchKind::Mlp) {
        int prev = spec.mlp.input_dim;
        std::vector<int> dims = spec.mlp.hidden;
        dims.push_back(spec.mlp.classes);
        for (int d : dims) {
            shapes.push_back({prev, d});
            shapes.push_back({d});
            prev = d;
        }
    } else {
        const CnnSpec& c = spec.cnn;
        int prev_c = c.in_channels;
        for (int ch : c.channels) {
            shapes.push_back({ch, prev_c, c.kernel, c.kernel});
            shapes.push_back({ch});
            prev_c = ch;
        }
        int flat = prev_c * (c.in_h / c.pool) * (c.in_w / c.pool);
        shapes.push_back({flat, c.dense_hidden});
        shapes.push_back({c.dense_hidden});
        shapes.push_back({c.dense_hidden, c.classes});
        shapes.push_back({c.classes});
    }
    return shapes;
}

long param_count(const ModelSpec& spec) {
    long n = 0;
    for (const auto& s : layer_shapes(spec)) n += shape_numel(s);
    return n;
}

namespace {

int fan_in(const std::vector<int>& shape) {
    if (shape.size() == 1) return 0;  // bias
    if (shape.size() == 2) return shape[0];
    return shape[1] * shape[2] * shape[3];  // conv [F,C,kh,kw]
}

}  // namespace

ModelParams init_params(const ModelSpec& spec, uint64_t seed) {
    ModelParams p;
    p.spec = spec;
    p.seed = seed;
    Rng rng(mix_seed(seed, 0x6d6f64656cULL));
    for (const auto& shape : layer_shapes(spec)) {
        Tensor t(shape);
        int fi = fan_in(shape);
        if (fi > 0) {
            double scale = 1.0 / std::sqrt(static_cast<double>(fi));
            for (double& x : t.v) x = rng.next_gaussian() * scale;
        }
        p.layers.push_back(std::move(t));
    }
    return p;
}

std::vector<double> flatten_params(const ModelParams& p) {
    std::vector<double> flat;
    for (const Tensor& t : p.layers) flat.insert(flat.end(), t.v.begin(), t.v.end());
    return flat;
}

void unflatten_params(ModelParams& p, std::span<const double> flat) {
    size_t off = 0;
    for (Tensor& t : p.layers) {
        if (off + t.v.size() > flat.size()) throw std::invalid_argument("unflatten_params: too few values");
        std::copy(flat.begin() + static_cast<long>(off), flat.begin() + static_cast<long>(off + t.v.size()),
                  t.v.begin());
        off += t.v.size();
    }
    if (off != flat.size()) throw std::invalid_argument("unflatten_params: too many values");
}

std::vector<NodeId> insert_params(Graph& g, const ModelParams& p) {
    std::vector<NodeId> ids;
    ids.reserve(p.layers.size());
    for (const Tensor& t : p.layers) ids.push_back(g.input(t));
    return ids;
}

namespace {

NodeId as_batch(Graph& g, const ModelSpec& spec, NodeId x) {
    const Tensor& tx = g.val(x);
    int d = spec.input_dim();
    if (tx.numel() % d != 0)
        throw ShapeError("forward: input " + shape_str(tx.shape) + " does not match model input dim " +
                         std::to_string(d));
    int batch = tx.numel() / d;
    if (tx.shape.size() == 1 && tx.numel() == d) batch = 1;
    return g.reshape(x, {batch, d});
}

}  // namespace

NodeId forward_logits(Graph& g, const ModelSpec& spec, std::span<const NodeId> layers, NodeId x) {
    auto shapes = layer_shapes(spec);
    if (layers.size() != shapes.size())
        throw std::invalid_argument("forward: expected " + std::to_string(shapes.size()) + " layer tensors, got " +
                                    std::to_string(layers.size()));
    NodeId h = as_batch(g, spec, x);
    int batch = g.val(h).shape[0];
    size_t li = 0;
    if (spec.kind == ArchKind::Mlp) {
        size_t nlayers = spec.mlp.hidden.size() + 1;
        for (size_t l = 0; l < nlayers; ++l) {
            h = g.add(g.matmul(h, layers[li]), layers[li + 1]);
            li += 2;
            if (l + 1 < nlayers) h = g.relu(h);
        }
    } else {
        const CnnSpec& c = spec.cnn;
        h = g.reshape(h, {batch, c.in_channels, c.in_h, c.in_w});
        for (size_t l = 0; l < c.channels.size(); ++l) {
            h = g.relu(g.conv2d(h, layers[li], layers[li + 1], 1, c.kernel / 2));
            li += 2;
        }
        if (c.pool > 1) h = g.avg_pool2d(h, c.pool);
        int flat = c.channels.back() * (c.in_h / c.pool) * (c.in_w / c.pool);
        h = g.reshape(h, {batch, flat});
        h = g.relu(g.add(g.matmul(h, layers[li]), layers[li + 1]));
        li += 2;
        h = g.add(g.matmul(h, layers[li]), layers[li + 1]);
    }
    return h;
}

Tensor forward_logits(const ModelParams& p, const Tensor& x) {
    Graph g;
    NodeId xin = g.input(x);
    NodeId out = forward_logits(g, p.spec, insert_params(g, p), xin);
    return g.val(out);
}

int Ensemble::classes() const {
    if (members.empty()) throw std::invalid_argument("ensemble: empty member list");
    return members.front().spec.classes();
}

void Ensemble::validate() const {
    int c = classes();
    for (const ModelParams& m : members)
        if (m.spec.classes() != c) throw std::invalid_argument("ensemble: members disagree on class count");
}

NodeId ensemble_forward(Graph& g, const Ensemble& e, const std::vector<std::vector<NodeId>>& member_layers,
                        NodeId x) {
    e.validate();
    if (member_layers.size() != e.members.size())
        throw std::invalid_argument("ensemble_forward: layer nodes for " + std::to_string(member_layers.size()) +
                                    " members, expected " + std::to_string(e.members.size()));
    NodeId acc = -1;
    for (size_t i = 0; i < e.members.size(); ++i) {
        NodeId logits = forward_logits(g, e.members[i].spec, member_layers[i], x);
        NodeId term = e.mode == Averaging::Probability ? g.softmax(logits) : logits;
        acc = (i == 0) ? term : g.add(acc, term);
    }
    return g.mul_scalar(acc, 1.0 / static_cast<double>(e.members.size()));
}

NodeId ensemble_forward(Graph& g, const Ensemble& e, NodeId x) {
    std::vector<std::vector<NodeId>> layers;
    layers.reserve(e.members.size());
    for (const ModelParams& m : e.members) layers.push_back(insert_params(g, m));
    return ensemble_forward(g, e, layers, x);
}

Tensor ensemble_forward(const Ensemble& e, const Tensor& x) {
    Graph g;
    NodeId xin = g.input(x);
    return g.val(ensemble_forward(g, e, xin));
}

namespace {

std::vector<int*> scalable_dims(ModelSpec& s) {
    std::vector<int*> dims;
    if (s.kind == ArchKind::Mlp) {
        for (int& h : s.mlp.hidden) dims.push_back(&h);
    } else {
        for (int& c : s.cnn.channels) dims.push_back(&c);
        dims.push_back(&s.cnn.dense_hidden);
    }
    return dims;
}

ModelSpec scaled(const ModelSpec& base, double factor) {
    ModelSpec s = base;
    for (int* d : scalable_dims(s)) *d = std::max(1, static_cast<int>(std::llround(*d * factor)));
    return s;
}

}  // namespace

ModelSpec match_width(const ModelSpec& base, long target_params) {
    long base_count = param_count(base);
    if (target_params < base_count)
        throw std::invalid_argument("match_width: target " + std::to_string(target_params) +
                                    " below base parameter count " + std::to_string(base_count));
    ModelSpec probe = base;
    auto dims = scalable_dims(probe);
    if (dims.empty()) return base;
    int d0 = *dims.front();
    ModelSpec best = base;
    long best_diff = std::labs(base_count - target_params);
    // Walk the first scalable width upward; the common factor w/d0 rounds
    // every other width with it. Counts grow monotonically, so stop once past
    // the target.
    for (int w = d0 + 1;; ++w) {
        ModelSpec cand = scaled(base, static_cast<double>(w) / d0);
        long count = param_count(cand);
        long diff = std::labs(count - target_params);
        if (diff < best_diff) {  // ties keep the smaller width
            best_diff = diff;
            best = cand;
        }
        if (count >= target_params) break;
    }
    return best;
}

}  // namespace advens
