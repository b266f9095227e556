#pragma once

#include <string>

#include "abd/diffusion.hpp"

namespace abd {

struct Checkpoint {
  DiffusionModel model;
  std::string model_hash;
  std::string rng_state;
};

/// Writes `dir/manifest.json` (names, shapes, hash, schedule, RNG state)
/// and `dir/params.bin` (little-endian float64 in manifest order).
void save_checkpoint(const std::string& dir, const Checkpoint& ckpt);

/// Throws DataError on missing files or a manifest/blob mismatch.
Checkpoint load_checkpoint(const std::string& dir);

}  // namespace abd
