#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <torch/torch.h>

#include "cirrus/config.h"
#include "cirrus/model.h"
#include "cirrus/trainer.h"

namespace cirrus {

struct Checkpoint {
  SegmentationNet model{nullptr};
  TrainConfig config;
  int64_t epoch = 0;
  std::vector<EpochMetrics> history;
};

// Parameters and buffers (Gabor banks, residual scales, arcsinh a/b
// included), optimizer state, epoch, config snapshot and metric history.
void save_checkpoint(const std::filesystem::path& path, SegmentationNet& model, torch::optim::Optimizer* optimizer,
                     int64_t epoch, const TrainConfig& config, const std::vector<EpochMetrics>& history);

// Rebuilds the model from the stored config and loads its weights.
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Restores optimizer state saved alongside the model.
void load_optimizer_state(const std::filesystem::path& path, torch::optim::Optimizer& optimizer);

}  // namespace cirrus
