#pragma once

// Step 2 checkpoints: both encoders, optimizer velocity, queue, prototypes,
// epoch counter and the config text of the run. Doubles are written in
// shortest round-trip form, so resuming continues bit for bit.

#include <filesystem>
#include <string>

#include "cecl/cecl_core.hpp"

namespace cecl {

inline constexpr int kCheckpointFormatVersion = 1;

struct Checkpoint {
  TrainState state;
  std::string config_text;
};

void save_checkpoint(const TrainState& state, const std::string& config_text, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace cecl
