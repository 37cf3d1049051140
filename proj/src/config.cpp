#include "advens/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "advens/checkpoint.hpp"
#include "advens/data.hpp"

namespace advens {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

template <typename T>
std::vector<T> parse_num_list(const std::string& s) {
    std::vector<T> out;
    for (const std::string& item : split_list(s)) out.push_back(static_cast<T>(std::stoll(item)));
    return out;
}

template <typename T>
std::string join(const std::vector<T>& xs) {
    std::string s;
    for (size_t i = 0; i < xs.size(); ++i) {
        if (i) s += ",";
        if constexpr (std::is_same_v<T, std::string>)
            s += xs[i];
        else
            s += std::to_string(xs[i]);
    }
    return s;
}

using Setter = std::function<void(HarnessConfig&, const std::string&)>;

const std::map<std::string, Setter>& key_table() {
    static const std::map<std::string, Setter> table = {
        {"dataset", [](HarnessConfig& c, const std::string& v) { c.dataset = v; }},
        {"data.n", [](HarnessConfig& c, const std::string& v) { c.data_n = std::stoi(v); }},
        {"data.dim", [](HarnessConfig& c, const std::string& v) { c.data_dim = std::stoi(v); }},
        {"data.classes", [](HarnessConfig& c, const std::string& v) { c.data_classes = std::stoi(v); }},
        {"data.spread", [](HarnessConfig& c, const std::string& v) { c.data_spread = std::stod(v); }},
        {"data.noise", [](HarnessConfig& c, const std::string& v) { c.data_noise = std::stod(v); }},
        {"data.seed", [](HarnessConfig& c, const std::string& v) { c.data_seed = std::stoull(v); }},
        {"data.test_fraction", [](HarnessConfig& c, const std::string& v) { c.test_fraction = std::stod(v); }},
        {"eval.subset", [](HarnessConfig& c, const std::string& v) { c.eval_subset = std::stoi(v); }},
        {"eval.subset_500", [](HarnessConfig& c, const std::string& v) { c.eval_500_subset = std::stoi(v); }},
        {"model.arch", [](HarnessConfig& c, const std::string& v) { c.model_arch = v; }},
        {"model.hidden", [](HarnessConfig& c, const std::string& v) { c.model_hidden = parse_num_list<int>(v); }},
        {"cnn.channels", [](HarnessConfig& c, const std::string& v) { c.cnn_channels = std::stoi(v); }},
        {"cnn.kernel", [](HarnessConfig& c, const std::string& v) { c.cnn_kernel = std::stoi(v); }},
        {"cnn.dense", [](HarnessConfig& c, const std::string& v) { c.cnn_dense = std::stoi(v); }},
        {"grid.classes", [](HarnessConfig& c, const std::string& v) { c.classes = split_list(v); }},
        {"grid.seeds", [](HarnessConfig& c, const std::string& v) { c.seeds = parse_num_list<uint64_t>(v); }},
        {"grid.out", [](HarnessConfig& c, const std::string& v) { c.out_dir = v; }},
        {"grid.parallelism", [](HarnessConfig& c, const std::string& v) { c.parallelism = std::stoi(v); }},
        {"train.steps", [](HarnessConfig& c, const std::string& v) { c.train_steps = std::stoi(v); }},
        {"train.batch", [](HarnessConfig& c, const std::string& v) { c.batch_size = std::stoi(v); }},
        {"train.lr0", [](HarnessConfig& c, const std::string& v) { c.lr0 = std::stod(v); }},
        {"train.momentum", [](HarnessConfig& c, const std::string& v) { c.momentum = std::stod(v); }},
        {"train.boundaries", [](HarnessConfig& c, const std::string& v) { c.lr_boundaries = parse_num_list<int>(v); }},
        {"train.decay", [](HarnessConfig& c, const std::string& v) { c.lr_decay = std::stod(v); }},
        {"train.rho", [](HarnessConfig& c, const std::string& v) { c.rho = std::stod(v); }},
        {"train.cadence", [](HarnessConfig& c, const std::string& v) { c.eval_cadence = std::stoi(v); }},
        {"attack.delta", [](HarnessConfig& c, const std::string& v) { c.delta = std::stod(v); }},
        {"attack.train_steps", [](HarnessConfig& c, const std::string& v) { c.train_attack_steps = std::stoi(v); }},
        {"eval.metrics", [](HarnessConfig& c, const std::string& v) { c.metrics = split_list(v); }},
        {"eval.selection", [](HarnessConfig& c, const std::string& v) { c.selection_metric = v; }},
        {"blackbox.max_steps", [](HarnessConfig& c, const std::string& v) { c.blackbox_max_steps = std::stoi(v); }},
        {"strongest.start", [](HarnessConfig& c, const std::string& v) { c.strongest_start = std::stoi(v); }},
        {"strongest.max", [](HarnessConfig& c, const std::string& v) { c.strongest_max = std::stoi(v); }},
    };
    return table;
}

}  // namespace

void apply_config_key(HarnessConfig& cfg, const std::string& key, const std::string& value) {
    auto it = key_table().find(key);
    if (it == key_table().end()) throw std::invalid_argument("config: unknown key '" + key + "'");
    try {
        it->second(cfg, value);
    } catch (const std::invalid_argument&) {
        throw std::invalid_argument("config: bad value '" + value + "' for key '" + key + "'");
    }
}

HarnessConfig parse_config_text(const std::string& text, HarnessConfig base) {
    std::stringstream ss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config: line " + std::to_string(lineno) + " is not 'key = value'");
        apply_config_key(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return base;
}

HarnessConfig parse_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::invalid_argument("config: cannot open " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config_text(ss.str());
}

std::string config_to_text(const HarnessConfig& c) {
    std::ostringstream o;
    o << "dataset = " << c.dataset << "\n";
    o << "data.n = " << c.data_n << "\n";
    o << "data.dim = " << c.data_dim << "\n";
    o << "data.classes = " << c.data_classes << "\n";
    o << "data.spread = " << c.data_spread << "\n";
    o << "data.noise = " << c.data_noise << "\n";
    o << "data.seed = " << c.data_seed << "\n";
    o << "data.test_fraction = " << c.test_fraction << "\n";
    o << "eval.subset = " << c.eval_subset << "\n";
    o << "eval.subset_500 = " << c.eval_500_subset << "\n";
    o << "model.arch = " << c.model_arch << "\n";
    o << "model.hidden = " << join(c.model_hidden) << "\n";
    o << "cnn.channels = " << c.cnn_channels << "\n";
    o << "cnn.kernel = " << c.cnn_kernel << "\n";
    o << "cnn.dense = " << c.cnn_dense << "\n";
    o << "grid.classes = " << join(c.classes) << "\n";
    o << "grid.seeds = " << join(c.seeds) << "\n";
    o << "grid.out = " << c.out_dir << "\n";
    o << "grid.parallelism = " << c.parallelism << "\n";
    o << "train.steps = " << c.train_steps << "\n";
    o << "train.batch = " << c.batch_size << "\n";
    o << "train.lr0 = " << c.lr0 << "\n";
    o << "train.momentum = " << c.momentum << "\n";
    o << "train.boundaries = " << join(c.lr_boundaries) << "\n";
    o << "train.decay = " << c.lr_decay << "\n";
    o << "train.rho = " << c.rho << "\n";
    o << "train.cadence = " << c.eval_cadence << "\n";
    o << "attack.delta = " << c.delta << "\n";
    o << "attack.train_steps = " << c.train_attack_steps << "\n";
    o << "eval.metrics = " << join(c.metrics) << "\n";
    o << "eval.selection = " << c.selection_metric << "\n";
    o << "blackbox.max_steps = " << c.blackbox_max_steps << "\n";
    o << "strongest.start = " << c.strongest_start << "\n";
    o << "strongest.max = " << c.strongest_max << "\n";
    return o.str();
}

uint64_t config_digest(const HarnessConfig& cfg) {
    // Where the run is written and how many workers it uses do not change what
    // is computed, so they are excluded: the same run in two directories must
    // produce byte-identical checkpoints.
    HarnessConfig canon = cfg;
    canon.out_dir.clear();
    canon.parallelism = 1;
    std::string t = config_to_text(canon);
    return fnv1a64(reinterpret_cast<const unsigned char*>(t.data()), t.size());
}

namespace {

int dataset_dim(const HarnessConfig& c) {
    if (c.dataset == "two-moons") return 2;
    if (c.dataset.rfind("cifar10:", 0) == 0) return 3 * 32 * 32;
    return c.data_dim;
}

int dataset_classes(const HarnessConfig& c) {
    if (c.dataset == "two-moons") return 2;
    if (c.dataset.rfind("cifar10:", 0) == 0) return 10;
    return c.data_classes;
}

}  // namespace

ModelSpec HarnessConfig::base_spec() const {
    if (model_arch == "mlp") return ModelSpec::make_mlp(dataset_dim(*this), model_hidden, dataset_classes(*this));
    if (model_arch == "small-cnn") return cnn_spec();
    throw std::invalid_argument("config: unknown architecture '" + model_arch + "'");
}

ModelSpec HarnessConfig::cnn_spec() const {
    CnnSpec c;
    if (dataset.rfind("cifar10:", 0) == 0) {
        c.in_channels = 3;
        c.in_h = c.in_w = 32;
        c.pool = 4;
    } else {
        int dim = dataset_dim(*this);
        int h = static_cast<int>(std::sqrt(static_cast<double>(dim)));
        while (h > 1 && dim % h != 0) --h;
        c.in_channels = 1;
        c.in_h = h;
        c.in_w = dim / h;
        c.pool = 1;
    }
    c.channels = {cnn_channels};
    c.kernel = cnn_kernel;
    c.dense_hidden = cnn_dense;
    c.classes = dataset_classes(*this);
    return ModelSpec::make_cnn(c);
}

TrainConfig HarnessConfig::train_config(uint64_t seed, bool adversarial) const {
    TrainConfig t;
    t.total_steps = train_steps;
    t.batch_size = batch_size;
    t.lr0 = lr0;
    t.momentum = momentum;
    t.lr_decay = lr_decay;
    t.rho = rho;
    t.eval_cadence = eval_cadence;
    t.seed = seed;
    t.lr_boundaries.clear();
    for (int b : lr_boundaries)  // clip to the configured horizon
        if (b < train_steps) t.lr_boundaries.push_back(b);
    if (adversarial) t.train_attack = train_attack();
    return t;
}

AttackConfig HarnessConfig::train_attack() const { return AttackConfig::ifgsm(delta, train_attack_steps); }

AttackConfig eval_attack_from_name(const std::string& name, double delta) {
    auto dash = name.rfind('-');
    if (dash != std::string::npos) {
        std::string kind = name.substr(0, dash);
        std::string num = name.substr(dash + 1);
        bool numeric = !num.empty() && std::all_of(num.begin(), num.end(), [](char ch) { return std::isdigit(ch); });
        if (numeric) {
            int steps = std::stoi(num);
            if (kind == "ifgsm") return AttackConfig::ifgsm(delta, steps);
            if (kind == "pgd") return AttackConfig::pgd_adam(delta, steps);
        }
    }
    throw std::invalid_argument("unknown evaluation attack '" + name + "' (expected ifgsm-N or pgd-N)");
}

Dataset build_dataset(const HarnessConfig& cfg) {
    if (cfg.dataset == "blobs10" || cfg.dataset == "blobs")
        return gen_blobs(cfg.data_n, cfg.data_classes, cfg.data_dim, cfg.data_spread, cfg.data_seed);
    if (cfg.dataset == "two-moons") return gen_two_moons(cfg.data_n, cfg.data_noise, cfg.data_seed);
    if (cfg.dataset.rfind("cifar10:", 0) == 0) return load_cifar10_binary(cfg.dataset.substr(8));
    throw std::invalid_argument("config: unknown dataset '" + cfg.dataset + "'");
}

}  // namespace advens
