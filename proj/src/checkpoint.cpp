#include "advens/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace advens {

namespace {

using nlohmann::json;

void put_u32(std::vector<unsigned char>& out, uint32_t x) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(x >> (8 * i)));
}

void put_u64(std::vector<unsigned char>& out, uint64_t x) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>(x >> (8 * i)));
}

void put_f64(std::vector<unsigned char>& out, double x) { put_u64(out, std::bit_cast<uint64_t>(x)); }

class Reader {
public:
    Reader(const std::vector<unsigned char>& bytes, size_t off, size_t end) : b_(bytes), off_(off), end_(end) {}
    uint32_t u32() {
        need(4);
        uint32_t x = 0;
        for (int i = 0; i < 4; ++i) x |= static_cast<uint32_t>(b_[off_++]) << (8 * i);
        return x;
    }
    uint64_t u64() {
        need(8);
        uint64_t x = 0;
        for (int i = 0; i < 8; ++i) x |= static_cast<uint64_t>(b_[off_++]) << (8 * i);
        return x;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string str(size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(b_.data() + off_), n);
        off_ += n;
        return s;
    }
    size_t remaining() const { return end_ - off_; }

private:
    void need(size_t n) {
        if (off_ + n > end_) throw FormatError("checkpoint: truncated payload");
    }
    const std::vector<unsigned char>& b_;
    size_t off_;
    size_t end_;
};

json member_descriptor(const ModelParams& m, Averaging mode) {
    json d;
    d["seed"] = m.seed;
    d["averaging"] = mode == Averaging::Probability ? "probability" : "logit";
    d["spec"] = json::parse(spec_to_json(m.spec));
    return d;
}

}  // namespace

std::string spec_to_json(const ModelSpec& spec) {
    json j;
    if (spec.kind == ArchKind::Mlp) {
        j["arch"] = "mlp";
        j["input_dim"] = spec.mlp.input_dim;
        j["hidden"] = spec.mlp.hidden;
        j["classes"] = spec.mlp.classes;
    } else {
        j["arch"] = "small-cnn";
        j["in_channels"] = spec.cnn.in_channels;
        j["in_h"] = spec.cnn.in_h;
        j["in_w"] = spec.cnn.in_w;
        j["channels"] = spec.cnn.channels;
        j["kernel"] = spec.cnn.kernel;
        j["pool"] = spec.cnn.pool;
        j["dense_hidden"] = spec.cnn.dense_hidden;
        j["classes"] = spec.cnn.classes;
    }
    return j.dump();
}

ModelSpec spec_from_json(const std::string& json_text) {
    json j = json::parse(json_text);
    std::string arch = j.at("arch");
    if (arch == "mlp")
        return ModelSpec::make_mlp(j.at("input_dim"), j.at("hidden").get<std::vector<int>>(), j.at("classes"));
    if (arch == "small-cnn") {
        CnnSpec c;
        c.in_channels = j.at("in_channels");
        c.in_h = j.at("in_h");
        c.in_w = j.at("in_w");
        c.channels = j.at("channels").get<std::vector<int>>();
        c.kernel = j.at("kernel");
        c.pool = j.at("pool");
        c.dense_hidden = j.at("dense_hidden");
        c.classes = j.at("classes");
        return ModelSpec::make_cnn(c);
    }
    throw FormatError("checkpoint: unknown architecture '" + arch + "'");
}

uint64_t fnv1a64(const unsigned char* data, size_t n) {
    uint64_t h = 1469598103934665603ULL;
    for (size_t i = 0; i < n; ++i) {
        h ^= data[i];
        h *= 1099511628211ULL;
    }
    return h;
}

std::vector<unsigned char> serialize_checkpoint(const Checkpoint& c) {
    c.model.validate();
    std::vector<unsigned char> out = {'A', 'D', 'V', 'N'};
    put_u32(out, c.version);
    size_t payload_start = out.size();
    put_u64(out, static_cast<uint64_t>(c.step));
    put_u64(out, c.rng_digest);
    put_u64(out, c.config_digest);
    put_u32(out, static_cast<uint32_t>(c.model.members.size()));
    for (const ModelParams& m : c.model.members) {
        std::string desc = member_descriptor(m, c.model.mode).dump();
        put_u32(out, static_cast<uint32_t>(desc.size()));
        out.insert(out.end(), desc.begin(), desc.end());
        for (const Tensor& t : m.layers)
            for (double x : t.v) put_f64(out, x);
    }
    uint64_t checksum = fnv1a64(out.data() + payload_start, out.size() - payload_start);
    put_u64(out, checksum);
    return out;
}

Checkpoint deserialize_checkpoint(const std::vector<unsigned char>& bytes) {
    if (bytes.size() < 16) throw FormatError("checkpoint: file too short");
    if (std::memcmp(bytes.data(), "ADVN", 4) != 0) throw FormatError("checkpoint: bad magic");
    Reader header(bytes, 4, bytes.size());
    uint32_t version = header.u32();
    if (version != kCheckpointVersion)
        throw FormatError("checkpoint: unsupported version " + std::to_string(version));
    size_t payload_start = 8;
    size_t payload_end = bytes.size() - 8;
    Reader trailer(bytes, payload_end, bytes.size());
    uint64_t stored = trailer.u64();
    uint64_t actual = fnv1a64(bytes.data() + payload_start, payload_end - payload_start);
    if (stored != actual) throw FormatError("checkpoint: checksum mismatch");

    Reader r(bytes, payload_start, payload_end);
    Checkpoint c;
    c.version = version;
    c.step = static_cast<int>(r.u64());
    c.rng_digest = r.u64();
    c.config_digest = r.u64();
    uint32_t members = r.u32();
    for (uint32_t i = 0; i < members; ++i) {
        uint32_t len = r.u32();
        nlohmann::json d = nlohmann::json::parse(r.str(len));
        ModelSpec spec = spec_from_json(d.at("spec").dump());
        ModelParams m;
        m.spec = spec;
        m.seed = d.at("seed");
        c.model.mode = d.at("averaging") == "logit" ? Averaging::Logit : Averaging::Probability;
        for (const auto& shape : layer_shapes(spec)) {
            Tensor t(shape);
            for (double& x : t.v) x = r.f64();
            m.layers.push_back(std::move(t));
        }
        c.model.members.push_back(std::move(m));
    }
    if (r.remaining() != 0) throw FormatError("checkpoint: trailing bytes in payload");
    return c;
}

void save_checkpoint(const Checkpoint& c, const std::string& path) {
    auto bytes = serialize_checkpoint(c);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("checkpoint: cannot open " + path + " for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<long>(bytes.size()));
    if (!f) throw FormatError("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("checkpoint: cannot open " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return deserialize_checkpoint(bytes);
}

}  // namespace advens
