#include "advens/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "advens/rng.hpp"

namespace advens {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Fragile-coordinate geometry for gen_blobs: the class gap in the second half
// of the coordinates is kFragileGap/sqrt(dim) per coordinate (small enough for
// a modest L-infinity budget to cross), with kFragileNoise of the nominal
// spread, so those coordinates carry the best clean signal-to-noise.
constexpr double kFragileGap = 0.6;
constexpr double kFragileNoise = 0.15;

void shuffle_indices(std::vector<int>& idx, Rng& rng) {
    for (size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.next_below(i)]);
}

uint64_t fnv1a(const unsigned char* data, size_t n) {
    uint64_t h = 1469598103934665603ULL;
    for (size_t i = 0; i < n; ++i) {
        h ^= data[i];
        h *= 1099511628211ULL;
    }
    return h;
}

std::string hex64(uint64_t x) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<size_t>(i)] = digits[x & 0xF];
        x >>= 4;
    }
    return s;
}

}  // namespace

void Dataset::validate() const {
    if (inputs.size() != labels.size()) throw std::invalid_argument("dataset: inputs/labels length mismatch");
    for (int y : labels)
        if (y < 0 || y >= classes) throw std::invalid_argument("dataset: label out of range");
    for (const Tensor& t : inputs)
        if (!inputs.empty() && t.shape != inputs.front().shape)
            throw std::invalid_argument("dataset: non-uniform input shapes");
}

Dataset gen_two_moons(int n, double noise, uint64_t seed) {
    if (n < 2) throw std::invalid_argument("gen_two_moons: n must be >= 2");
    if (noise < 0) throw std::invalid_argument("gen_two_moons: noise must be >= 0");
    Dataset d;
    d.classes = 2;
    d.provenance = "two-moons(n=" + std::to_string(n) + ",noise=" + std::to_string(noise) +
                   ",seed=" + std::to_string(seed) + ")";
    Rng rng(mix_seed(seed, 0x6d6f6f6e73ULL));
    for (int i = 0; i < n; ++i) {
        int cls = i % 2;
        double t = rng.next_double() * kPi;
        double x, y;
        if (cls == 0) {
            x = std::cos(t);
            y = std::sin(t);
        } else {
            x = 1.0 - std::cos(t);
            y = 0.5 - std::sin(t);
        }
        x += noise * rng.next_gaussian();
        y += noise * rng.next_gaussian();
        d.inputs.push_back(Tensor::vec({x, y}));
        d.labels.push_back(cls);
    }
    return d;
}

Tensor blob_center(int cls, int dim) {
    // Hypercube-corner sign code per class. The first half of the coordinates
    // is "robust": gap 2/sqrt(dim) per coordinate, full noise. The second half
    // is "fragile": gap scaled by kFragileGap so a delta ~ 0.1 L-infinity
    // attack can flip its evidence, but with kFragileNoise times the noise it
    // is the cleanest signal available. Dense class-difference directions make
    // the ball meaningful (attack reach grows with sqrt(dim)), and the fragile
    // block gives standard training something to overfit that adversarial
    // training must discard.
    // A class whose first draw collides with a lower class's code (likely only
    // at very small dim) keeps drawing from its own stream until distinct.
    if (dim < 30 && cls >= (1 << dim))
        throw std::invalid_argument("blob_center: more classes than sign codes at this dim");
    std::vector<std::vector<bool>> taken;
    for (int prev = 0; prev <= cls; ++prev) {
        Rng bits(mix_seed(0x626c6f62ULL, static_cast<uint64_t>(prev)));
        std::vector<bool> code(static_cast<size_t>(dim));
        do {
            for (int j = 0; j < dim; ++j) code[static_cast<size_t>(j)] = bits.next_u64() & 1;
        } while (std::find(taken.begin(), taken.end(), code) != taken.end());
        taken.push_back(std::move(code));
    }
    Tensor c({dim});
    double s = 1.0 / std::sqrt(static_cast<double>(dim));
    for (int j = 0; j < dim; ++j) {
        double scale = j < dim / 2 ? s : kFragileGap * s;
        c.v[static_cast<size_t>(j)] = taken.back()[static_cast<size_t>(j)] ? scale : -scale;
    }
    return c;
}

Dataset gen_blobs(int n, int class_count, int dim, double spread, uint64_t seed) {
    if (class_count < 2) throw std::invalid_argument("gen_blobs: class count must be >= 2");
    if (dim < 2) throw std::invalid_argument("gen_blobs: dim must be >= 2");
    Dataset d;
    d.classes = class_count;
    d.provenance = "blobs(n=" + std::to_string(n) + ",classes=" + std::to_string(class_count) +
                   ",dim=" + std::to_string(dim) + ",spread=" + std::to_string(spread) +
                   ",seed=" + std::to_string(seed) + ")";
    Rng rng(mix_seed(seed, 0x626c6f6273ULL));
    for (int i = 0; i < n; ++i) {
        int cls = i % class_count;
        Tensor x = blob_center(cls, dim);
        for (int j = 0; j < dim; ++j) {
            double sd = j < dim / 2 ? spread : kFragileNoise * spread;
            x.v[static_cast<size_t>(j)] += sd * rng.next_gaussian();
        }
        d.inputs.push_back(std::move(x));
        d.labels.push_back(cls);
    }
    return d;
}

Dataset parse_cifar10_bytes(const std::vector<unsigned char>& bytes, const std::string& origin) {
    constexpr size_t kRecord = 3073;
    if (bytes.size() % kRecord != 0)
        throw FormatError("cifar10: file length " + std::to_string(bytes.size()) +
                          " is not a multiple of 3073 (stray bytes start at offset " +
                          std::to_string(bytes.size() - bytes.size() % kRecord) + ")");
    Dataset d;
    d.classes = 10;
    d.domain_clamp = {0.0, 1.0};
    d.provenance = origin + ":fnv1a=" + hex64(bytes.empty() ? 0 : fnv1a(bytes.data(), bytes.size()));
    size_t records = bytes.size() / kRecord;
    for (size_t r = 0; r < records; ++r) {
        const unsigned char* rec = bytes.data() + r * kRecord;
        if (rec[0] > 9)
            throw FormatError("cifar10: label byte " + std::to_string(rec[0]) + " > 9 in record " + std::to_string(r));
        Tensor img({3, 32, 32});
        for (int i = 0; i < 3072; ++i) img.v[static_cast<size_t>(i)] = rec[1 + i] / 255.0;
        d.inputs.push_back(std::move(img));
        d.labels.push_back(rec[0]);
    }
    return d;
}

Dataset load_cifar10_binary(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cifar10: cannot open " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return parse_cifar10_bytes(bytes, path);
}

std::pair<Dataset, Dataset> split(const Dataset& d, double test_fraction, uint64_t seed) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0))
        throw std::invalid_argument("split: test fraction must be in (0,1)");
    d.validate();
    std::vector<std::vector<int>> per_class(static_cast<size_t>(d.classes));
    for (size_t i = 0; i < d.size(); ++i) per_class[static_cast<size_t>(d.labels[i])].push_back(static_cast<int>(i));
    // Largest-remainder apportionment: per-class floors, then hand out the
    // remaining test slots by descending fractional part (ties to the lower
    // class) so the total is round(fraction * n) and classes stay within one.
    size_t total_test = static_cast<size_t>(std::llround(test_fraction * static_cast<double>(d.size())));
    std::vector<size_t> n_test(static_cast<size_t>(d.classes), 0);
    std::vector<std::pair<double, int>> rema;
    size_t assigned = 0;
    for (int c = 0; c < d.classes; ++c) {
        double want = test_fraction * static_cast<double>(per_class[static_cast<size_t>(c)].size());
        n_test[static_cast<size_t>(c)] = static_cast<size_t>(std::floor(want));
        assigned += n_test[static_cast<size_t>(c)];
        rema.emplace_back(-(want - std::floor(want)), c);
    }
    std::sort(rema.begin(), rema.end());
    for (size_t i = 0; i < rema.size() && assigned < total_test; ++i) {
        int c = rema[i].second;
        if (n_test[static_cast<size_t>(c)] < per_class[static_cast<size_t>(c)].size()) {
            ++n_test[static_cast<size_t>(c)];
            ++assigned;
        }
    }
    std::vector<char> is_test(d.size(), 0);
    for (int c = 0; c < d.classes; ++c) {
        auto& idx = per_class[static_cast<size_t>(c)];
        Rng rng(mix_seed(seed, 0x73706c6974ULL, static_cast<uint64_t>(c)));
        shuffle_indices(idx, rng);
        for (size_t i = 0; i < n_test[static_cast<size_t>(c)]; ++i) is_test[static_cast<size_t>(idx[i])] = 1;
    }
    Dataset train, test;
    train.classes = test.classes = d.classes;
    train.domain_clamp = test.domain_clamp = d.domain_clamp;
    train.provenance = d.provenance + "/train";
    test.provenance = d.provenance + "/test";
    for (size_t i = 0; i < d.size(); ++i) {
        Dataset& dst = is_test[i] ? test : train;
        dst.inputs.push_back(d.inputs[i]);
        dst.labels.push_back(d.labels[i]);
    }
    return {train, test};
}

std::vector<Batch> batches(const Dataset& d, int batch_size, uint64_t epoch_seed) {
    if (batch_size < 1) throw std::invalid_argument("batches: batch size must be >= 1");
    d.validate();
    std::vector<int> order(d.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(mix_seed(epoch_seed, 0x6261746368ULL));
    shuffle_indices(order, rng);
    std::vector<Batch> out;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(batch_size)) {
        size_t end = std::min(order.size(), start + static_cast<size_t>(batch_size));
        std::vector<int> idx(order.begin() + static_cast<long>(start), order.begin() + static_cast<long>(end));
        out.push_back({stack_inputs(d, idx), select_labels(d, idx), idx});
    }
    return out;
}

Tensor stack_inputs(const Dataset& d, const std::vector<int>& idx) {
    if (idx.empty()) throw std::invalid_argument("stack_inputs: empty index list");
    const Tensor& first = d.inputs[static_cast<size_t>(idx.front())];
    std::vector<int> shape = {static_cast<int>(idx.size())};
    shape.insert(shape.end(), first.shape.begin(), first.shape.end());
    Tensor out(shape);
    size_t stride = first.v.size();
    for (size_t r = 0; r < idx.size(); ++r) {
        const Tensor& src = d.inputs[static_cast<size_t>(idx[r])];
        std::copy(src.v.begin(), src.v.end(), out.v.begin() + static_cast<long>(r * stride));
    }
    return out;
}

std::vector<int> select_labels(const Dataset& d, const std::vector<int>& idx) {
    std::vector<int> y;
    y.reserve(idx.size());
    for (int i : idx) y.push_back(d.labels[static_cast<size_t>(i)]);
    return y;
}

Dataset subset(const Dataset& d, size_t max_n) {
    if (d.size() <= max_n) return d;
    Dataset out = d;
    out.inputs.resize(max_n);
    out.labels.resize(max_n);
    out.provenance = d.provenance + "/head" + std::to_string(max_n);
    return out;
}

}  // namespace advens
