#pragma once

#include <filesystem>

#include "json.hpp"
#include "twins/model.hpp"
#include "twins/objective.hpp"
#include "twins/optimizer.hpp"

namespace twins {

// Serializable training snapshot. `config` carries the full run
// configuration (objective, policy, arch, optimizer options, seed, dataset
// id) as JSON; tensors carry the numeric state. Saving and loading is a
// bitwise round trip for every tensor value.
//
// On-disk layout (all integers little-endian):
//   8 bytes  magic "TWCKPT\0\0"
//   u32      format version
//   u64      config JSON length, then that many bytes of JSON
//   u32      tensor count, then per tensor:
//              u32 name length + name bytes
//              u8  dtype (1 = float32, 2 = float64)
//              u32 rank, then rank * i64 dims
//              payload, row-major
// Model and optimizer tensors are written as float64 so training can resume
// with bit-identical state. Tensor roles are encoded in name prefixes
// ("model.", "adam.m.", "adam.v.", "extra.").
struct Checkpoint {
  nlohmann::json config;
  ModelParams params;
  OptimizerState opt_state;
  int epochs_completed = 0;
  std::vector<LossBreakdown> loss_history;  // per-epoch mean breakdowns
  std::vector<Tensor> extra;                // e.g. classifier head after fine-tuning
};

inline constexpr char kCheckpointMagic[8] = {'T', 'W', 'C', 'K', 'P', 'T', '\0', '\0'};
inline constexpr uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);

// FormatError on malformed bytes, VersionError when the format version is
// not one this build reads (message names both versions).
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace twins
