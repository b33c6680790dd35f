#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mapn/adam.hpp"
#include "mapn/models.hpp"

namespace mapn {

struct TensorRecord {
    std::string key;
    std::string partition;  // "shared" or "specific:<label>"
    ParamRole role = ParamRole::conv3x3;
    Tensor value;

    friend bool operator==(const TensorRecord&, const TensorRecord&) = default;
};

/// Versioned binary container: magic "MAPNCKPT", format version, a UTF-8 config
/// snapshot, a UTF-8 metadata blob, tensor records (key, partition tag, role, shape,
/// little-endian IEEE-754 doubles), optional Adam slots, and a trailing FNV-1a checksum.
struct Checkpoint {
    static constexpr std::uint32_t kVersion = 1;

    std::string config;
    std::string metadata;
    std::vector<TensorRecord> tensors;
    std::map<std::string, AdamSlot> adam;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Every registry tensor, in registry iteration order.
std::vector<TensorRecord> snapshot_tensors(const Model& model);

/// Overwrites model tensors with the records. Every model tensor must be present with
/// a matching shape; throws ConfigError listing the differences otherwise.
void restore_tensors(Model& model, const std::vector<TensorRecord>& records);

}  // namespace mapn
