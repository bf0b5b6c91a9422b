#pragma once

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace reason::nn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Parameter vector plus the metadata needed to rebuild the network.
struct Checkpoint {
  std::string kind; // "segnet" or "dbfc"
  nlohmann::json config;
  std::uint64_t seed = 0;
  std::uint64_t iteration = 0;
  std::vector<double> params;
};

// Layout (little-endian): "RSNCKPT\0", u32 version, u32 len + kind, u64 len +
// config JSON, u64 seed, u64 iteration, u64 count, count x f64.
std::vector<std::uint8_t> serialize(const Checkpoint &ck);
Checkpoint deserialize(const std::vector<std::uint8_t> &bytes);
void save_checkpoint(const Checkpoint &ck, const std::filesystem::path &path);
Checkpoint load_checkpoint(const std::filesystem::path &path);

} // namespace reason::nn
