#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "driftlab/gradcore/params.hpp"

namespace dlab {

/// Binary container used for every persisted parameter set:
///
///   "DLAB" | u32 version | u64 header length | JSON header | f64 blocks
///
/// All integers and floats are little-endian. The header lists each block
/// as {name, group, shape} in file order; `meta` carries the caller's
/// fields (architecture, schedule, provenance).
struct Checkpoint {
    nlohmann::json meta = nlohmann::json::object();
    ParamStore params;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Whole-file helpers shared by the store and CLI.
std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace dlab
