#pragma once

// "AFCK" checkpoints. A text header
//   AFCK1
//   <key> = <value>        model configuration, actnorm flag, training state
//   tensors <count>
// is followed by <count> entries of "<name>\n" plus one AFT1 tensor each.
// Parameters are named as in the model; optimiser moments as adam/m/<name>
// and adam/v/<name>.

#include <filesystem>
#include <optional>

#include "afflow/model.hpp"
#include "afflow/train.hpp"

namespace afflow {

void save_checkpoint(const std::filesystem::path& path, const Model& model, const TrainState* state = nullptr);

struct LoadedCheckpoint {
  Model model;
  std::optional<TrainState> state;
};

// Rejects malformed files and any parameter whose name or shape disagrees
// with the stored configuration.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace afflow
