#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "behaveformer/features.hpp"
#include "behaveformer/model.hpp"

namespace bf {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Everything needed to resume or evaluate a model: hyperparameters, all
/// tensors (including batch-norm running statistics), the fitted normalizers
/// and the training provenance.
struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  BehaveFormerParams params;
  std::map<std::string, NormalizerState> normalizers;  // keyed by schema name
  std::uint64_t seed = 0;
  std::string config_digest;
};

/// Self-describing binary container: magic + version, a JSON header with the
/// hyperparameters and named shape table, a little-endian 64-bit float payload
/// in header order, and a trailing whole-file integrity digest.
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);

/// Validates magic, version, digest and the shape table before rebuilding the
/// parameters bit-exactly.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace bf
