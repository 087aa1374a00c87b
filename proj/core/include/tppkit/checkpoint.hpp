#pragma once

// Checkpoint file layout:
//
//   bytes 0..7    "TPPKCKPT"
//   bytes 8..15   header length L, uint64 little-endian
//   next L bytes  UTF-8 JSON header:
//                   {"format": "tppkit-checkpoint", "version": 1,
//                    "config": {...}, "step": N,
//                    "tensors": [{"name": ..., "shape": [...]}, ...]}
//   remainder     parameters as IEEE-754 float64 little-endian, row-major,
//                 tensors in the order embedding, lstm_w, lstm_b, attn_w,
//                 f1_w, f1_b, f2_w, f2_b

#include <cstdint>
#include <filesystem>

#include "tppkit/model.hpp"

namespace tppkit {

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
  std::uint64_t step = 0;
};

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace tppkit
