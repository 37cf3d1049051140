#include "advens/graph.hpp"

#include <algorithm>
#include <cmath>

namespace advens {

const char* op_name(Op op) {
    switch (op) {
        case Op::Input: return "input";
        case Op::MatMul: return "matmul";
        case Op::Add: return "add";
        case Op::MulScalar: return "mul-scalar";
        case Op::Relu: return "relu";
        case Op::Conv2d: return "conv2d";
        case Op::AvgPool2d: return "avg-pool2d";
        case Op::Softmax: return "softmax";
        case Op::LogSoftmax: return "log-softmax";
        case Op::Log: return "log";
        case Op::Mean: return "mean";
        case Op::Sum: return "sum";
        case Op::Pick: return "index-select";
        case Op::ClampMin: return "clamp-min";
        case Op::Margin: return "margin";
        case Op::Reshape: return "reshape";
    }
    return "?";
}

namespace {

[[noreturn]] void shape_fail(Op op, const std::vector<int>& a, const std::vector<int>& b) {
    throw ShapeError(std::string(op_name(op)) + ": incompatible shapes " + shape_str(a) + " vs " + shape_str(b));
}

// Rows x cols view of a tensor with softmax applied along the last axis.
void softmax_rows(const Tensor& a, Tensor& out) {
    int cols = a.shape.back();
    int rows = a.numel() / cols;
    for (int r = 0; r < rows; ++r) {
        const double* src = a.v.data() + static_cast<size_t>(r) * cols;
        double* dst = out.v.data() + static_cast<size_t>(r) * cols;
        double mx = src[0];
        for (int c = 1; c < cols; ++c) mx = std::max(mx, src[c]);
        double denom = 0.0;
        for (int c = 0; c < cols; ++c) {
            dst[c] = std::exp(src[c] - mx);
            denom += dst[c];
        }
        for (int c = 0; c < cols; ++c) dst[c] /= denom;
    }
}

void check_labels(Op op, const Tensor& a, const std::vector<int>& labels) {
    if (a.shape.size() != 2) throw ShapeError(std::string(op_name(op)) + ": expected 2-d input, got " + shape_str(a.shape));
    int rows = a.shape[0], cols = a.shape[1];
    if (static_cast<int>(labels.size()) != rows)
        throw ShapeError(std::string(op_name(op)) + ": " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(rows) + " rows");
    for (int y : labels)
        if (y < 0 || y >= cols)
            throw std::invalid_argument(std::string(op_name(op)) + ": label " + std::to_string(y) +
                                        " out of range for " + std::to_string(cols) + " classes");
}

}  // namespace

NodeId Graph::push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size()) - 1;
}

NodeId Graph::input(Tensor t) { return push({Op::Input, {}, std::move(t), {}, 0.0, {}}); }

NodeId Graph::matmul(NodeId a, NodeId b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    if (ta.shape.size() != 2 || tb.shape.size() != 2 || ta.shape[1] != tb.shape[0]) shape_fail(Op::MatMul, ta.shape, tb.shape);
    int m = ta.shape[0], k = ta.shape[1], n = tb.shape[1];
    Tensor out({m, n});
    for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p) {
            double aval = ta.v[static_cast<size_t>(i) * k + p];
            if (aval == 0.0) continue;
            const double* brow = tb.v.data() + static_cast<size_t>(p) * n;
            double* orow = out.v.data() + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) orow[j] += aval * brow[j];
        }
    return push({Op::MatMul, {a, b}, std::move(out), {}, 0.0, {}});
}

NodeId Graph::add(NodeId a, NodeId b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    Tensor out = ta;
    if (ta.shape == tb.shape) {
        for (size_t i = 0; i < out.v.size(); ++i) out.v[i] += tb.v[i];
    } else {
        // Suffix broadcast: b repeats across the leading dimensions of a.
        size_t bs = tb.shape.size(), as = ta.shape.size();
        bool ok = bs < as && std::equal(tb.shape.begin(), tb.shape.end(), ta.shape.end() - static_cast<long>(bs));
        if (!ok) shape_fail(Op::Add, ta.shape, tb.shape);
        int bn = tb.numel();
        for (int i = 0; i < out.numel(); ++i) out.v[static_cast<size_t>(i)] += tb.v[static_cast<size_t>(i % bn)];
    }
    return push({Op::Add, {a, b}, std::move(out), {}, 0.0, {}});
}

NodeId Graph::mul_scalar(NodeId a, double s) {
    Tensor out = val(a);
    for (double& x : out.v) x *= s;
    return push({Op::MulScalar, {a}, std::move(out), {}, s, {}});
}

NodeId Graph::relu(NodeId a) {
    Tensor out = val(a);
    for (double& x : out.v) x = std::max(x, 0.0);
    return push({Op::Relu, {a}, std::move(out), {}, 0.0, {}});
}

NodeId Graph::conv2d(NodeId x, NodeId w, NodeId bias, int stride, int pad) {
    const Tensor& tx = val(x);
    const Tensor& tw = val(w);
    const Tensor& tb = val(bias);
    if (tx.shape.size() != 4 || tw.shape.size() != 4 || tx.shape[1] != tw.shape[1]) shape_fail(Op::Conv2d, tx.shape, tw.shape);
    int B = tx.shape[0], C = tx.shape[1], H = tx.shape[2], W = tx.shape[3];
    int F = tw.shape[0], kh = tw.shape[2], kw = tw.shape[3];
    if (tb.shape != std::vector<int>{F}) shape_fail(Op::Conv2d, tw.shape, tb.shape);
    if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
    int Ho = (H + 2 * pad - kh) / stride + 1;
    int Wo = (W + 2 * pad - kw) / stride + 1;
    if (Ho < 1 || Wo < 1) shape_fail(Op::Conv2d, tx.shape, tw.shape);
    Tensor out({B, F, Ho, Wo});
    auto xat = [&](int b, int c, int i, int j) {
        return tx.v[((static_cast<size_t>(b) * C + c) * H + i) * W + j];
    };
    for (int b = 0; b < B; ++b)
        for (int f = 0; f < F; ++f)
            for (int oi = 0; oi < Ho; ++oi)
                for (int oj = 0; oj < Wo; ++oj) {
                    double acc = tb.v[static_cast<size_t>(f)];
                    for (int c = 0; c < C; ++c)
                        for (int ki = 0; ki < kh; ++ki) {
                            int ii = oi * stride - pad + ki;
                            if (ii < 0 || ii >= H) continue;
                            for (int kj = 0; kj < kw; ++kj) {
                                int jj = oj * stride - pad + kj;
                                if (jj < 0 || jj >= W) continue;
                                acc += xat(b, c, ii, jj) * tw.v[((static_cast<size_t>(f) * C + c) * kh + ki) * kw + kj];
                            }
                        }
                    out.v[((static_cast<size_t>(b) * F + f) * Ho + oi) * Wo + oj] = acc;
                }
    return push({Op::Conv2d, {x, w, bias}, std::move(out), {stride, pad}, 0.0, {}});
}

NodeId Graph::avg_pool2d(NodeId x, int window) {
    const Tensor& tx = val(x);
    if (tx.shape.size() != 4) throw ShapeError("avg-pool2d: expected 4-d input, got " + shape_str(tx.shape));
    int B = tx.shape[0], C = tx.shape[1], H = tx.shape[2], W = tx.shape[3];
    if (window < 1 || H % window != 0 || W % window != 0)
        throw ShapeError("avg-pool2d: window " + std::to_string(window) + " does not divide " + shape_str(tx.shape));
    int Ho = H / window, Wo = W / window;
    Tensor out({B, C, Ho, Wo});
    double inv = 1.0 / (window * window);
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
            for (int oi = 0; oi < Ho; ++oi)
                for (int oj = 0; oj < Wo; ++oj) {
                    double acc = 0.0;
                    for (int ki = 0; ki < window; ++ki)
                        for (int kj = 0; kj < window; ++kj)
                            acc += tx.v[((static_cast<size_t>(b) * C + c) * H + oi * window + ki) * W + oj * window + kj];
                    out.v[((static_cast<size_t>(b) * C + c) * Ho + oi) * Wo + oj] = acc * inv;
                }
    return push({Op::AvgPool2d, {x}, std::move(out), {window}, 0.0, {}});
}

NodeId Graph::softmax(NodeId a) {
    const Tensor& ta = val(a);
    if (ta.shape.empty()) throw ShapeError("softmax: scalar input");
    Tensor out(ta.shape);
    softmax_rows(ta, out);
    return push({Op::Softmax, {a}, std::move(out), {}, 0.0, {}});
}

NodeId Graph::log_softmax(NodeId a) {
    const Tensor& ta = val(a);
    if (ta.shape.empty()) throw ShapeError("log-softmax: scalar input");
    Tensor out(ta.shape);
    int cols = ta.shape.back();
    int rows = ta.numel() / cols;
    for (int r = 0; r < rows; ++r) {
        const double* src = ta.v.data() + static_cast<size_t>(r) * cols;
        double* dst = out.v.data() + static_cast<size_t>(r) * cols;
        double mx = src[0];
        for (int c = 1; c < cols; ++c) mx = std::max(mx, src[c]);
        double denom = 0.0;
        for (int c = 0; c < cols; ++c) denom += std::exp(src[c] - mx);
        double lse = mx + std::log(denom);
        for (int c = 0; c < cols; ++c) dst[c] = src[c] - lse;
    }
    return push({Op::LogSoftmax, {a}, std::move(out), {}, 0.0, {}});
}

NodeId Graph::log(NodeId a) {
    Tensor out = val(a);
    for (double& x : out.v) {
        if (x <= 0.0) throw DomainError("log: non-positive input " + std::to_string(x));
        x = std::log(x);
    }
    return push({Op::Log, {a}, std::move(out), {}, 0.0, {}});
}

NodeId Graph::mean(NodeId a) {
    const Tensor& ta = val(a);
    double acc = 0.0;
    for (double x : ta.v) acc += x;
    return push({Op::Mean, {a}, Tensor::scalar(acc / ta.numel()), {}, 0.0, {}});
}

NodeId Graph::sum(NodeId a) {
    const Tensor& ta = val(a);
    double acc = 0.0;
    for (double x : ta.v) acc += x;
    return push({Op::Sum, {a}, Tensor::scalar(acc), {}, 0.0, {}});
}

NodeId Graph::pick(NodeId a, std::vector<int> labels) {
    const Tensor& ta = val(a);
    check_labels(Op::Pick, ta, labels);
    int rows = ta.shape[0], cols = ta.shape[1];
    Tensor out({rows});
    for (int r = 0; r < rows; ++r) out.v[static_cast<size_t>(r)] = ta.v[static_cast<size_t>(r) * cols + labels[static_cast<size_t>(r)]];
    return push({Op::Pick, {a}, std::move(out), {}, 0.0, std::move(labels)});
}

NodeId Graph::clamp_min(NodeId a, double floor) {
    Tensor out = val(a);
    for (double& x : out.v)
        if (x < floor) {
            x = floor;
            ++clamp_warnings_;
        }
    return push({Op::ClampMin, {a}, std::move(out), {}, floor, {}});
}

NodeId Graph::margin(NodeId logits, std::vector<int> labels) {
    const Tensor& ta = val(logits);
    check_labels(Op::Margin, ta, labels);
    int rows = ta.shape[0], cols = ta.shape[1];
    if (cols < 2) throw std::invalid_argument("margin: needs at least 2 classes");
    Tensor out({rows});
    for (int r = 0; r < rows; ++r) {
        const double* row = ta.v.data() + static_cast<size_t>(r) * cols;
        int t = labels[static_cast<size_t>(r)];
        int rival = t == 0 ? 1 : 0;
        for (int c = 0; c < cols; ++c)
            if (c != t && row[c] > row[rival]) rival = c;
        out.v[static_cast<size_t>(r)] = row[t] - row[rival];
    }
    return push({Op::Margin, {logits}, std::move(out), {}, 0.0, std::move(labels)});
}

NodeId Graph::reshape(NodeId a, std::vector<int> new_shape) {
    const Tensor& ta = val(a);
    if (shape_numel(new_shape) != ta.numel()) shape_fail(Op::Reshape, ta.shape, new_shape);
    Tensor out(new_shape, ta.v);
    return push({Op::Reshape, {a}, std::move(out), {}, 0.0, {}});
}

void Graph::backward_one(const Node& n, const Tensor& up, std::vector<Tensor>& grads) const {
    auto acc = [&](NodeId pid, int offset, double g) { grads[static_cast<size_t>(pid)].v[static_cast<size_t>(offset)] += g; };
    switch (n.op) {
        case Op::Input:
            break;
        case Op::MatMul: {
            const Tensor& ta = val(n.parents[0]);
            const Tensor& tb = val(n.parents[1]);
            int m = ta.shape[0], k = ta.shape[1], c = tb.shape[1];
            Tensor& ga = grads[static_cast<size_t>(n.parents[0])];
            Tensor& gb = grads[static_cast<size_t>(n.parents[1])];
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < c; ++j) {
                    double g = up.v[static_cast<size_t>(i) * c + j];
                    if (g == 0.0) continue;
                    for (int p = 0; p < k; ++p) {
                        ga.v[static_cast<size_t>(i) * k + p] += g * tb.v[static_cast<size_t>(p) * c + j];
                        gb.v[static_cast<size_t>(p) * c + j] += g * ta.v[static_cast<size_t>(i) * k + p];
                    }
                }
            break;
        }
        case Op::Add: {
            const Tensor& tb = val(n.parents[1]);
            int bn = tb.numel();
            for (int i = 0; i < up.numel(); ++i) {
                acc(n.parents[0], i, up.v[static_cast<size_t>(i)]);
                acc(n.parents[1], i % bn, up.v[static_cast<size_t>(i)]);
            }
            break;
        }
        case Op::MulScalar:
            for (int i = 0; i < up.numel(); ++i) acc(n.parents[0], i, up.v[static_cast<size_t>(i)] * n.dattr);
            break;
        case Op::Relu: {
            const Tensor& ta = val(n.parents[0]);
            // relu'(0) = 0
            for (int i = 0; i < up.numel(); ++i)
                if (ta.v[static_cast<size_t>(i)] > 0.0) acc(n.parents[0], i, up.v[static_cast<size_t>(i)]);
            break;
        }
        case Op::Conv2d: {
            const Tensor& tx = val(n.parents[0]);
            const Tensor& tw = val(n.parents[1]);
            int stride = n.iattrs[0], pad = n.iattrs[1];
            int B = tx.shape[0], C = tx.shape[1], H = tx.shape[2], W = tx.shape[3];
            int F = tw.shape[0], kh = tw.shape[2], kw = tw.shape[3];
            int Ho = up.shape[2], Wo = up.shape[3];
            Tensor& gx = grads[static_cast<size_t>(n.parents[0])];
            Tensor& gw = grads[static_cast<size_t>(n.parents[1])];
            Tensor& gb = grads[static_cast<size_t>(n.parents[2])];
            for (int b = 0; b < B; ++b)
                for (int f = 0; f < F; ++f)
                    for (int oi = 0; oi < Ho; ++oi)
                        for (int oj = 0; oj < Wo; ++oj) {
                            double g = up.v[((static_cast<size_t>(b) * F + f) * Ho + oi) * Wo + oj];
                            if (g == 0.0) continue;
                            gb.v[static_cast<size_t>(f)] += g;
                            for (int c = 0; c < C; ++c)
                                for (int ki = 0; ki < kh; ++ki) {
                                    int ii = oi * stride - pad + ki;
                                    if (ii < 0 || ii >= H) continue;
                                    for (int kj = 0; kj < kw; ++kj) {
                                        int jj = oj * stride - pad + kj;
                                        if (jj < 0 || jj >= W) continue;
                                        size_t xi = ((static_cast<size_t>(b) * C + c) * H + ii) * W + jj;
                                        size_t wi = ((static_cast<size_t>(f) * C + c) * kh + ki) * kw + kj;
                                        gx.v[xi] += g * tw.v[wi];
                                        gw.v[wi] += g * tx.v[xi];
                                    }
                                }
                        }
            break;
        }
        case Op::AvgPool2d: {
            const Tensor& tx = val(n.parents[0]);
            int window = n.iattrs[0];
            int B = tx.shape[0], C = tx.shape[1], H = tx.shape[2], W = tx.shape[3];
            int Ho = H / window, Wo = W / window;
            double inv = 1.0 / (window * window);
            Tensor& gx = grads[static_cast<size_t>(n.parents[0])];
            for (int b = 0; b < B; ++b)
                for (int c = 0; c < C; ++c)
                    for (int oi = 0; oi < Ho; ++oi)
                        for (int oj = 0; oj < Wo; ++oj) {
                            double g = up.v[((static_cast<size_t>(b) * C + c) * Ho + oi) * Wo + oj] * inv;
                            for (int ki = 0; ki < window; ++ki)
                                for (int kj = 0; kj < window; ++kj)
                                    gx.v[((static_cast<size_t>(b) * C + c) * H + oi * window + ki) * W + oj * window + kj] += g;
                        }
            break;
        }
        case Op::Softmax: {
            const Tensor& y = n.out;
            int cols = y.shape.back();
            int rows = y.numel() / cols;
            for (int r = 0; r < rows; ++r) {
                const double* yr = y.v.data() + static_cast<size_t>(r) * cols;
                const double* gr = up.v.data() + static_cast<size_t>(r) * cols;
                double dot = 0.0;
                for (int c = 0; c < cols; ++c) dot += gr[c] * yr[c];
                for (int c = 0; c < cols; ++c) acc(n.parents[0], r * cols + c, yr[c] * (gr[c] - dot));
            }
            break;
        }
        case Op::LogSoftmax: {
            const Tensor& y = n.out;  // log p
            int cols = y.shape.back();
            int rows = y.numel() / cols;
            for (int r = 0; r < rows; ++r) {
                const double* yr = y.v.data() + static_cast<size_t>(r) * cols;
                const double* gr = up.v.data() + static_cast<size_t>(r) * cols;
                double gsum = 0.0;
                for (int c = 0; c < cols; ++c) gsum += gr[c];
                for (int c = 0; c < cols; ++c) acc(n.parents[0], r * cols + c, gr[c] - std::exp(yr[c]) * gsum);
            }
            break;
        }
        case Op::Log: {
            const Tensor& ta = val(n.parents[0]);
            for (int i = 0; i < up.numel(); ++i) acc(n.parents[0], i, up.v[static_cast<size_t>(i)] / ta.v[static_cast<size_t>(i)]);
            break;
        }
        case Op::Mean: {
            const Tensor& ta = val(n.parents[0]);
            double g = up.v[0] / ta.numel();
            for (int i = 0; i < ta.numel(); ++i) acc(n.parents[0], i, g);
            break;
        }
        case Op::Sum: {
            const Tensor& ta = val(n.parents[0]);
            for (int i = 0; i < ta.numel(); ++i) acc(n.parents[0], i, up.v[0]);
            break;
        }
        case Op::Pick: {
            const Tensor& ta = val(n.parents[0]);
            int cols = ta.shape[1];
            for (int r = 0; r < up.numel(); ++r) acc(n.parents[0], r * cols + n.labels[static_cast<size_t>(r)], up.v[static_cast<size_t>(r)]);
            break;
        }
        case Op::ClampMin: {
            const Tensor& ta = val(n.parents[0]);
            for (int i = 0; i < up.numel(); ++i)
                if (ta.v[static_cast<size_t>(i)] >= n.dattr) acc(n.parents[0], i, up.v[static_cast<size_t>(i)]);
            break;
        }
        case Op::Margin: {
            const Tensor& ta = val(n.parents[0]);
            int cols = ta.shape[1];
            for (int r = 0; r < up.numel(); ++r) {
                const double* row = ta.v.data() + static_cast<size_t>(r) * cols;
                int t = n.labels[static_cast<size_t>(r)];
                int rival = t == 0 ? 1 : 0;
                for (int c = 0; c < cols; ++c)
                    if (c != t && row[c] > row[rival]) rival = c;
                acc(n.parents[0], r * cols + t, up.v[static_cast<size_t>(r)]);
                acc(n.parents[0], r * cols + rival, -up.v[static_cast<size_t>(r)]);
            }
            break;
        }
        case Op::Reshape:
            for (int i = 0; i < up.numel(); ++i) acc(n.parents[0], i, up.v[static_cast<size_t>(i)]);
            break;
    }
}

std::vector<Tensor> Graph::backward(NodeId root) const {
    const Tensor& rt = val(root);
    if (rt.numel() != 1) throw std::invalid_argument("backward: root has shape " + shape_str(rt.shape) + ", expected scalar");
    std::vector<Tensor> grads;
    grads.reserve(nodes_.size());
    for (const Node& n : nodes_) grads.emplace_back(n.out.shape, 0.0);
    grads[static_cast<size_t>(root)].v[0] = 1.0;
    // Parents always precede children, so reverse id order is a reverse
    // topological order.
    for (NodeId id = root; id >= 0; --id) {
        const Node& n = node(id);
        const Tensor& up = grads[static_cast<size_t>(id)];
        bool any = false;
        for (double g : up.v)
            if (g != 0.0) {
                any = true;
                break;
            }
        if (any) backward_one(n, up, grads);
    }
    return grads;
}

}  // namespace advens
