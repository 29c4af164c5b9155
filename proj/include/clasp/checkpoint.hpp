#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "clasp/config.hpp"
#include "clasp/training.hpp"

namespace clasp {

inline constexpr char kCheckpointMagic[] = "CLSW";
inline constexpr std::uint16_t kCheckpointVersion = 1;
inline constexpr std::uint16_t kFlagHasOptimizer = 0x1;

// Parameters are stored as float32, so a reloaded model matches the saved
// one to float32 rounding.
struct Checkpoint {
  HyperParams hp;
  TrainState state;
  bool has_optimizer = true;
  // Free-form extra metadata (seed, init scheme, ...), stored alongside the
  // hyperparameters.
  KeyValues metadata;
};

std::vector<std::uint8_t> write_checkpoint(const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::span<const std::uint8_t> bytes, const std::string& source = "<memory>");

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

inline constexpr char kInitScheme[] = "uniform(-1/sqrt(fan_in),1/sqrt(fan_in))";

}  // namespace clasp
