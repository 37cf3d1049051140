#include "advens/tensor.hpp"

#include <cmath>
#include <cstdlib>

namespace advens {

int shape_numel(const std::vector<int>& shape) {
    int n = 1;
    for (int d : shape) {
        if (d <= 0) throw ShapeError("tensor: nonpositive dimension in " + shape_str(shape));
        n *= d;
    }
    return n;
}

std::string shape_str(const std::vector<int>& shape) {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

Tensor::Tensor(std::vector<int> s, double fill)
    : shape(std::move(s)), v(static_cast<size_t>(shape_numel(shape)), fill) {}

Tensor::Tensor(std::vector<int> s, std::vector<double> values) : shape(std::move(s)), v(std::move(values)) {
    if (shape_numel(shape) != static_cast<int>(v.size()))
        throw ShapeError("tensor: shape " + shape_str(shape) + " does not match " + std::to_string(v.size()) +
                         " values");
}

Tensor Tensor::vec(std::vector<double> xs) {
    int n = static_cast<int>(xs.size());
    return Tensor({n}, std::move(xs));
}

double Tensor::item() const {
    if (v.size() != 1) throw ShapeError("item: tensor of shape " + shape_str(shape) + " is not scalar");
    return v[0];
}

bool Tensor::all_finite() const {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

double linf_dist(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw ShapeError("linf_dist: " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    double m = 0.0;
    for (size_t i = 0; i < a.v.size(); ++i) m = std::max(m, std::fabs(a.v[i] - b.v[i]));
    return m;
}

double max_abs_diff(const Tensor& a, const Tensor& b) { return linf_dist(a, b); }

}  // namespace advens
