#pragma once

#include <filesystem>

#include "flashflow/model.hpp"
#include "flashflow/train.hpp"

namespace flashflow {

// Checkpoint container: magic "FLCK", u32 version, u32 entry count, then
// named f32 tensors (u16 name length, name bytes, u32 rank, u32 dims, f32
// little-endian data).  Holds parameters, EMA shadows, optimizer moments, the
// step counter, and a config echo sufficient to resume or resample
// deterministically (the 64-bit seed is split into four 16-bit entries so it
// survives the f32 payload exactly).
void save_checkpoint(const std::filesystem::path& path, const Denoiser& model,
                     const TrainConfig& train_cfg, int step);

struct LoadedCheckpoint {
  Denoiser model;
  TrainConfig train_cfg;
  int step = 0;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace flashflow
