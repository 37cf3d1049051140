#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "advens/checkpoint.hpp"
#include "advens/config.hpp"
#include "advens/grid.hpp"
#include "advens/rng.hpp"

using namespace advens;
namespace fs = std::filesystem;

namespace {

Checkpoint sample_checkpoint() {
    ModelSpec spec = ModelSpec::make_mlp(2, {16, 16}, 2);
    Checkpoint c;
    c.step = 123;
    c.rng_digest = 0xdeadbeefULL;
    c.config_digest = 0x12345678ULL;
    c.model = Ensemble{{init_params(spec, 7), init_params(spec, 8)}, Averaging::Probability};
    return c;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct TempDir {
    fs::path path;
    TempDir(const char* tag) : path(fs::temp_directory_path() / (std::string("advens_test_") + tag)) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("checkpoint round trip is byte identical and preserves outputs") {
    Checkpoint c = sample_checkpoint();
    auto bytes = serialize_checkpoint(c);
    Checkpoint back = deserialize_checkpoint(bytes);
    CHECK(serialize_checkpoint(back) == bytes);
    CHECK(back.step == 123);
    CHECK(back.rng_digest == c.rng_digest);
    CHECK(back.config_digest == c.config_digest);
    Tensor x = Tensor::vec({0.4, -0.9});
    CHECK(ensemble_forward(back.model, x).v == ensemble_forward(c.model, x).v);
}

TEST_CASE("two 354-parameter members occupy exactly 5664 payload parameter bytes") {
    ModelSpec spec = ModelSpec::make_mlp(2, {16, 16}, 2);
    REQUIRE(param_count(spec) == 354);
    Checkpoint c = sample_checkpoint();
    auto bytes = serialize_checkpoint(c);
    // magic+version | step, rng digest, config digest, member count | per
    // member a length-prefixed descriptor then the parameter doubles | checksum
    size_t off = 8 + (8 + 8 + 8 + 4);
    size_t desc = 0;
    for (int m = 0; m < 2; ++m) {
        uint32_t len = 0;
        for (int i = 0; i < 4; ++i) len |= static_cast<uint32_t>(bytes[off + desc + static_cast<size_t>(i)]) << (8 * i);
        desc += 4 + len + 354 * 8;
    }
    // with the two descriptor lengths read back from the file, the remaining
    // payload is exactly the 2 * 354 * 8 = 5664 parameter bytes
    CHECK(bytes.size() == off + desc + 8);
}

TEST_CASE("checkpoint format errors name the failing field") {
    auto bytes = serialize_checkpoint(sample_checkpoint());

    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK_THROWS_WITH_AS(deserialize_checkpoint(bad_magic), doctest::Contains("magic"), FormatError);

    auto bad_version = bytes;
    bad_version[4] = 99;
    CHECK_THROWS_WITH_AS(deserialize_checkpoint(bad_version), doctest::Contains("version"), FormatError);

    auto truncated = bytes;
    truncated.resize(truncated.size() - 3);
    CHECK_THROWS_AS(deserialize_checkpoint(truncated), FormatError);

    auto flipped = bytes;
    flipped[bytes.size() - 20] ^= 0x01;
    CHECK_THROWS_WITH_AS(deserialize_checkpoint(flipped), doctest::Contains("checksum"), FormatError);
}

TEST_CASE("any single flipped payload byte is detected") {
    auto bytes = serialize_checkpoint(sample_checkpoint());
    Rng rng(9);
    for (int t = 0; t < 60; ++t) {
        auto mutant = bytes;
        size_t pos = 8 + rng.next_below(bytes.size() - 16);  // payload region only
        unsigned char bit = static_cast<unsigned char>(1u << rng.next_below(8));
        mutant[pos] ^= bit;
        CHECK_THROWS_AS(deserialize_checkpoint(mutant), FormatError);
    }
}

TEST_CASE("checkpoint file save and load") {
    TempDir dir("ckpt");
    Checkpoint c = sample_checkpoint();
    std::string path = (dir.path / "model.ckpt").string();
    save_checkpoint(c, path);
    Checkpoint back = load_checkpoint(path);
    CHECK(serialize_checkpoint(back) == serialize_checkpoint(c));
    CHECK_THROWS_AS(load_checkpoint((dir.path / "missing.ckpt").string()), std::runtime_error);
}

TEST_CASE("model spec json round trip") {
    ModelSpec mlp = ModelSpec::make_mlp(5, {7, 3}, 4);
    CHECK(spec_from_json(spec_to_json(mlp)) == mlp);
    CnnSpec cs;
    cs.in_channels = 1;
    cs.in_h = 2;
    cs.in_w = 4;
    cs.channels = {3};
    cs.kernel = 3;
    cs.pool = 2;
    cs.dense_hidden = 5;
    cs.classes = 3;
    ModelSpec cnn = ModelSpec::make_cnn(cs);
    CHECK(spec_from_json(spec_to_json(cnn)) == cnn);
}

TEST_CASE("config rejects unknown keys by name") {
    CHECK_THROWS_WITH_AS(parse_config_text("data.n = 10\nbogus.key = 3\n"), doctest::Contains("bogus.key"),
                         std::invalid_argument);
}

TEST_CASE("config text round trips") {
    HarnessConfig cfg;
    cfg.data_spread = 0.3;
    cfg.model_hidden = {5, 6};
    cfg.classes = {"baseline", "single-adv"};
    cfg.seeds = {4, 5};
    std::string text = config_to_text(cfg);
    HarnessConfig back = parse_config_text(text);
    CHECK(config_to_text(back) == text);
    CHECK(config_digest(back) == config_digest(cfg));
}

TEST_CASE("config overrides and comments") {
    HarnessConfig cfg = parse_config_text("# comment line\ndata.n = 120\ntrain.steps = 7\n");
    CHECK(cfg.data_n == 120);
    CHECK(cfg.train_steps == 7);
    apply_config_key(cfg, "attack.delta", "0.25");
    CHECK(cfg.delta == 0.25);
}

TEST_CASE("named evaluation attacks parse rule and steps") {
    AttackConfig a = eval_attack_from_name("ifgsm-5", 0.1);
    CHECK(a.steps == 5);
    CHECK(a.rule == UpdateRule::Sign);
    AttackConfig b = eval_attack_from_name("pgd-20", 0.1);
    CHECK(b.steps == 20);
    CHECK(b.rule == UpdateRule::Adam);
    CHECK_THROWS_AS(eval_attack_from_name("warp-3", 0.1), std::invalid_argument);
}

TEST_CASE("model class parsing covers the menu") {
    CHECK(parse_model_class("baseline").kind == ClassSpec::Kind::Baseline);
    CHECK(parse_model_class("ensemble4").k == 4);
    CHECK(parse_model_class("single-adv").kind == ClassSpec::Kind::SingleAdv);
    CHECK(parse_model_class("double-adv").kind == ClassSpec::Kind::DoubleAdv);
    CHECK(parse_model_class("ensemble2-adv").kind == ClassSpec::Kind::EnsembleKAdv);
    CHECK(parse_model_class("separate-ensemble2-adv").derived());
    CHECK_THROWS_AS(parse_model_class("triple-adv"), std::invalid_argument);
}

TEST_CASE("double-adv widens to twice the base parameter count") {
    HarnessConfig cfg;
    cfg.model_hidden = {8};
    Ensemble e = initial_ensemble_for(cfg, parse_model_class("double-adv"), 3);
    REQUIRE(e.members.size() == 1);
    long base = param_count(cfg.base_spec());
    long doubled = param_count(e.members[0].spec);
    CHECK(std::abs(doubled - 2 * base) < base / 4);
}

TEST_CASE("degenerate zero-step grid emits the initial snapshot everywhere") {
    TempDir dir("grid0");
    HarnessConfig cfg;
    cfg.data_n = 60;
    cfg.data_dim = 8;
    cfg.data_classes = 3;
    cfg.classes = {"baseline"};
    cfg.seeds = {1};
    cfg.train_steps = 0;
    cfg.eval_subset = 20;
    cfg.eval_500_subset = 5;
    cfg.metrics = {"clean", "ifgsm-5"};
    cfg.out_dir = (dir.path / "runs").string();
    std::ostringstream log;
    int rc = run_grid(cfg, log);
    CHECK(rc == 0);
    std::string series = slurp(fs::path(cfg.out_dir) / "baseline" / "1" / "series.csv");
    // header plus one row per metric for the lone snapshot at step 0
    CHECK(std::count(series.begin(), series.end(), '\n') == 3);
    CHECK(series.find("\n0,baseline,1,clean,") != std::string::npos);
    CHECK(fs::exists(fs::path(cfg.out_dir) / "report" / "table_last10.csv"));
    CHECK(fs::exists(fs::path(cfg.out_dir) / "manifest.json"));
}

TEST_CASE("grid artifacts are byte identical across reruns and tables match the series oracle") {
    TempDir dir("gridrep");
    HarnessConfig cfg;
    cfg.data_n = 120;
    cfg.data_dim = 8;
    cfg.data_classes = 3;
    cfg.classes = {"baseline", "single-adv"};
    cfg.seeds = {1, 2};
    cfg.train_steps = 100;
    cfg.eval_cadence = 20;
    cfg.eval_subset = 30;
    cfg.eval_500_subset = 5;
    cfg.metrics = {"clean", "ifgsm-5"};
    cfg.parallelism = 2;
    std::ostringstream log;

    cfg.out_dir = (dir.path / "a").string();
    REQUIRE(run_grid(cfg, log) == 0);
    cfg.out_dir = (dir.path / "b").string();
    REQUIRE(run_grid(cfg, log) == 0);

    for (const char* rel : {"baseline/1/series.csv", "single-adv/2/series.csv", "report/table_last10.csv",
                            "report/table_best.csv", "report/curves.csv"}) {
        CHECK(slurp(dir.path / "a" / rel) == slurp(dir.path / "b" / rel));
    }

    // last-10 table equals the documented pipeline rerun from the CSV text:
    // per-seed smoothed values -> common 1000-point grid -> seed mean ->
    // mean of the final 10 grid points
    std::map<std::string, std::map<std::string, std::vector<EvalSeries>>> per_class;  // class -> metric -> seeds
    for (const char* cls : {"baseline", "single-adv"})
        for (const char* seed : {"1", "2"}) {
            std::ifstream in(dir.path / "a" / cls / seed / "series.csv");
            std::string line;
            std::getline(in, line);  // header
            std::map<std::string, EvalSeries> per_metric;
            while (std::getline(in, line)) {
                std::stringstream row(line);
                std::string step, mclass, mseed, metric, value, smoothed_value;
                std::getline(row, step, ',');
                std::getline(row, mclass, ',');
                std::getline(row, mseed, ',');
                std::getline(row, metric, ',');
                std::getline(row, value, ',');
                std::getline(row, smoothed_value, ',');
                per_metric[metric].points.emplace_back(std::stod(step), std::stod(smoothed_value));
            }
            for (auto& [metric, s] : per_metric) per_class[cls][metric].push_back(s);
        }
    auto pipeline_last10 = [&](const std::string& cls, const std::string& metric) {
        EvalSeries agg = aggregate_seeds(interpolate_common(per_class[cls][metric], 1000));
        size_t take = std::min<size_t>(10, agg.points.size());
        double mean = 0.0;
        for (size_t i = agg.points.size() - take; i < agg.points.size(); ++i) mean += agg.points[i].second;
        return mean / static_cast<double>(take);
    };
    std::ifstream table(dir.path / "a" / "report" / "table_last10.csv");
    std::string line;
    std::getline(table, line);
    CHECK(line == "model_class,clean,ifgsm-5");
    while (std::getline(table, line)) {
        std::stringstream row(line);
        std::string cls, cleanv, ifgsmv;
        std::getline(row, cls, ',');
        std::getline(row, cleanv, ',');
        std::getline(row, ifgsmv, ',');
        CHECK(std::stod(cleanv) == doctest::Approx(pipeline_last10(cls, "clean")).epsilon(1e-9));
        CHECK(std::stod(ifgsmv) == doctest::Approx(pipeline_last10(cls, "ifgsm-5")).epsilon(1e-9));
    }
}

TEST_CASE("seventeen significant digit formatting round trips doubles") {
    Rng rng(77);
    for (int i = 0; i < 200; ++i) {
        double x = std::exp(10.0 * rng.next_gaussian());
        if (rng.next_double() < 0.5) x = -x;
        CHECK(std::stod(format_g17(x)) == x);
    }
}
