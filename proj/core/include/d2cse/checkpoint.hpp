#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "d2cse/config.hpp"
#include "d2cse/model.hpp"

namespace d2cse {

inline constexpr char kCheckpointMagic[4] = {'D', '2', 'C', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Binary layout, all integers little-endian:
///   "D2CP" | u32 version | u64 step | u32 n + config JSON (n bytes)
///   | u32 tensor count | per tensor: u32 n + name, u32 rank, u32 dims[rank],
///     f32 values (row-major)
///   | u32 n + frozen-encoder checksum (hex)
/// Only trainable tensors and batch-norm running statistics are stored; the
/// frozen encoder is regenerated from the config's encoder seed and must
/// reproduce the stored checksum.
void save_checkpoint(const std::filesystem::path& path, const TrainConfig& config, const Model& model,
                     std::uint64_t step);

struct Checkpoint {
  TrainConfig config;
  std::uint64_t step = 0;
  Model model;
};

/// Throws CheckpointError on a bad header, a truncated file, unknown or
/// misshapen tensors, or a checksum that does not match the regenerated
/// encoder.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Model for a config with freshly initialized trainable weights.
Model build_model(const TrainConfig& config);

}  // namespace d2cse
