#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>

#include "cdikt/cdis.hpp"

namespace cdikt {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Binary layout, little-endian:
//   "CDIKTCKP" | u32 version | u32 metadata bytes | metadata "key=value\n"...
//   | u64 tensor count | per tensor: u32 name length, name, u32 rank,
//   u64 extents[rank], f64 values[numel].
// Metadata records the network configuration and any caller entries.
void save_checkpoint(const std::filesystem::path& path, const CdisNet& net,
                     const std::map<std::string, std::string>& extra = {});

struct LoadedCheckpoint {
  std::unique_ptr<CdisNet> net;
  std::map<std::string, std::string> metadata;
};

// Rebuilds the network from the stored configuration. Throws
// std::runtime_error on I/O or format problems.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

// Loads into an existing network; every stored tensor must match a
// parameter of the same shape, otherwise ConfigError names the offender.
void load_checkpoint_into(const std::filesystem::path& path, CdisNet& net);

std::map<std::string, std::string> config_metadata(const CdisConfig& config);
CdisConfig config_from_metadata(const std::map<std::string, std::string>& metadata);

}  // namespace cdikt
