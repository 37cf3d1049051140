#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "advens/model.hpp"

namespace advens {

// Binary checkpoint:
//   4-byte magic "ADVN", 4-byte little-endian version, then the payload:
//     u64 training step, u64 rng digest, u64 config digest, u32 member count,
//     per member: u32 descriptor length + JSON spec descriptor bytes,
//     then the parameters as little-endian IEEE-754 doubles in layer order
//     (weights row-major, then bias),
//   and a trailing 8-byte FNV-1a checksum of the payload.
inline constexpr uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    uint32_t version = kCheckpointVersion;
    int step = 0;
    uint64_t rng_digest = 0;
    uint64_t config_digest = 0;
    Ensemble model;
};

std::vector<unsigned char> serialize_checkpoint(const Checkpoint& c);
Checkpoint deserialize_checkpoint(const std::vector<unsigned char>& bytes);

void save_checkpoint(const Checkpoint& c, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

std::string spec_to_json(const ModelSpec& spec);
ModelSpec spec_from_json(const std::string& json_text);

uint64_t fnv1a64(const unsigned char* data, size_t n);

}  // namespace advens
