#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "advens/data.hpp"
#include "advens/rng.hpp"

using namespace advens;

namespace {

std::vector<unsigned char> cifar_fixture(const std::vector<int>& labels, unsigned char pixel) {
    std::vector<unsigned char> bytes;
    for (int l : labels) {
        bytes.push_back(static_cast<unsigned char>(l));
        bytes.insert(bytes.end(), 3072, pixel);
    }
    return bytes;
}

}  // namespace

TEST_CASE("two moons with zero noise lies on the two half-circles") {
    Dataset d = gen_two_moons(40, 0.0, 3);
    REQUIRE(d.size() == 40);
    for (size_t i = 0; i < d.size(); ++i) {
        double x = d.inputs[i].v[0], y = d.inputs[i].v[1];
        double r = d.labels[i] == 0 ? std::hypot(x, y) : std::hypot(x - 1.0, y - 0.5);
        CHECK(r == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("generators are pure functions of their arguments") {
    Dataset a = gen_two_moons(100, 0.1, 7);
    Dataset b = gen_two_moons(100, 0.1, 7);
    for (size_t i = 0; i < a.size(); ++i) CHECK(a.inputs[i].v == b.inputs[i].v);
    CHECK(a.labels == b.labels);
    Dataset c = gen_blobs(100, 10, 8, 0.2, 5);
    Dataset e = gen_blobs(100, 10, 8, 0.2, 5);
    for (size_t i = 0; i < c.size(); ++i) CHECK(c.inputs[i].v == e.inputs[i].v);
}

TEST_CASE("blobs with zero spread sit exactly on their class centers") {
    Dataset d = gen_blobs(50, 10, 8, 0.0, 1);
    for (size_t i = 0; i < d.size(); ++i) CHECK(d.inputs[i].v == blob_center(d.labels[i], 8).v);
}

TEST_CASE("blob centers are distinct and far apart relative to small spread") {
    for (int dim : {8, 64}) {
        double spread = 0.05;
        for (int a = 0; a < 10; ++a)
            for (int b = a + 1; b < 10; ++b) {
                double d2 = 0.0;
                Tensor ca = blob_center(a, dim), cb = blob_center(b, dim);
                for (int j = 0; j < dim; ++j) d2 += (ca.v[static_cast<size_t>(j)] - cb.v[static_cast<size_t>(j)]) *
                                                    (ca.v[static_cast<size_t>(j)] - cb.v[static_cast<size_t>(j)]);
                CHECK(std::sqrt(d2) > 4.0 * spread);
            }
    }
}

TEST_CASE("blob labels are balanced within one") {
    Dataset d = gen_blobs(1003, 10, 8, 0.2, 2);
    std::map<int, int> counts;
    for (int l : d.labels) counts[l]++;
    int lo = 1 << 30, hi = 0;
    for (auto& [cls, n] : counts) {
        lo = std::min(lo, n);
        hi = std::max(hi, n);
    }
    CHECK(counts.size() == 10);
    CHECK(hi - lo <= 1);
}

TEST_CASE("cifar record arithmetic and fixture parsing") {
    CHECK(1 + 32 * 32 * 3 == 3073);
    auto bytes = cifar_fixture({3, 7}, 255);
    Dataset d = parse_cifar10_bytes(bytes, "fixture");
    REQUIRE(d.size() == 2);
    CHECK(d.labels == std::vector<int>{3, 7});
    CHECK(d.classes == 10);
    for (const Tensor& t : d.inputs) {
        CHECK(t.numel() == 3072);
        for (double p : t.v) CHECK(p == 1.0);
    }
    CHECK(d.domain_clamp.has_value());
    CHECK(d.domain_clamp->first == 0.0);
    CHECK(d.domain_clamp->second == 1.0);
}

TEST_CASE("truncated cifar file names the stray offset") {
    std::vector<unsigned char> bytes(3072, 0);
    CHECK_THROWS_WITH_AS(parse_cifar10_bytes(bytes, "fixture"), doctest::Contains("offset 0"), FormatError);
    auto two = cifar_fixture({1, 2}, 0);
    two.resize(3073 + 10);
    CHECK_THROWS_WITH_AS(parse_cifar10_bytes(two, "fixture"), doctest::Contains("offset 3073"), FormatError);
}

TEST_CASE("cifar label byte out of range names the record") {
    auto bytes = cifar_fixture({1}, 0);
    bytes[0] = 11;
    CHECK_THROWS_WITH_AS(parse_cifar10_bytes(bytes, "fixture"), doctest::Contains("record 0"), FormatError);
}

TEST_CASE("cifar fixture round-trips through parse and re-serialize") {
    auto bytes = cifar_fixture({0, 9, 4}, 128);
    Dataset d = parse_cifar10_bytes(bytes, "fixture");
    std::vector<unsigned char> out;
    for (size_t i = 0; i < d.size(); ++i) {
        out.push_back(static_cast<unsigned char>(d.labels[i]));
        for (double p : d.inputs[i].v) out.push_back(static_cast<unsigned char>(std::lround(p * 255.0)));
    }
    CHECK(out == bytes);
}

TEST_CASE("split is a disjoint stratified partition") {
    Dataset d = gen_blobs(1000, 10, 8, 0.2, 4);
    auto [train, test] = split(d, 0.25, 9);
    CHECK(train.size() + test.size() == d.size());
    std::multiset<std::vector<double>> all, parts;
    for (const Tensor& t : d.inputs) all.insert(t.v);
    for (const Tensor& t : train.inputs) parts.insert(t.v);
    for (const Tensor& t : test.inputs) parts.insert(t.v);
    CHECK(all == parts);
    std::map<int, int> dcount, tcount;
    for (int l : d.labels) dcount[l]++;
    for (int l : test.labels) tcount[l]++;
    for (auto& [cls, n] : dcount) {
        double expect = 0.25 * n;
        CHECK(std::fabs(tcount[cls] - expect) <= std::ceil(expect) - expect + 1.0);
    }
}

TEST_CASE("half split of 10 items gives 5 and 5") {
    Dataset d = gen_blobs(10, 2, 4, 0.1, 1);
    auto [train, test] = split(d, 0.5, 1);
    CHECK(train.size() == 5);
    CHECK(test.size() == 5);
}

TEST_CASE("batches cover the dataset exactly once per epoch") {
    Dataset d = gen_blobs(103, 10, 8, 0.2, 6);
    auto bs = batches(d, 32, 77);
    CHECK(bs.size() == 4);
    CHECK(bs.back().y.size() == 7);  // short final batch kept
    std::set<int> seen;
    size_t total = 0;
    for (const Batch& b : bs) {
        CHECK(b.indices.size() == b.y.size());
        for (int i : b.indices) seen.insert(i);
        total += b.indices.size();
    }
    CHECK(total == d.size());
    CHECK(seen.size() == d.size());
}

TEST_CASE("different epoch seeds reshuffle the same multiset") {
    Dataset d = gen_blobs(64, 4, 4, 0.2, 6);
    auto a = batches(d, 16, 1);
    auto b = batches(d, 16, 2);
    std::vector<int> ia, ib;
    for (const Batch& x : a)
        for (int i : x.indices) ia.push_back(i);
    for (const Batch& x : b)
        for (int i : x.indices) ib.push_back(i);
    CHECK(ia != ib);
    std::sort(ia.begin(), ia.end());
    std::sort(ib.begin(), ib.end());
    CHECK(ia == ib);
}

TEST_CASE("batches are deterministic per epoch seed") {
    Dataset d = gen_blobs(64, 4, 4, 0.2, 6);
    auto a = batches(d, 16, 42);
    auto b = batches(d, 16, 42);
    for (size_t i = 0; i < a.size(); ++i) CHECK(a[i].indices == b[i].indices);
}
