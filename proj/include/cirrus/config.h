#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "cirrus/losses.h"
#include "cirrus/model.h"

namespace cirrus {

// Training configuration; text form is one `key = value` per line, '#'
// comments allowed. Keys match the field names below.
struct TrainConfig {
  int64_t epochs = 200;
  double lr = 1e-3;
  double weight_decay = 1e-7;
  double lr_decay = 0.98;
  int64_t batch_size = 4;
  std::string scales = "1,1/2,1/4";
  int64_t tile_size = 16;  // 0 = no gridding
  int64_t tile_batch = 0;  // 0 = all tiles of a branch in one call
  int64_t width = 32;
  bool use_gabor = true;
  bool use_arcsinh = true;
  bool scale_affinity = false;
  int64_t orientations = 4;
  int64_t gabor_kernel = 5;
  int64_t orientation_channels = 2;
  bool learnable_bank = false;
  std::string loss = "sml";  // sml | focal
  double beta = 1.25;
  double focal_gamma = 2.0;
  double focal_alpha = 0.25;
  bool soft_targets = false;
  bool augment = true;
  double noise_variance = 0.1;
  int64_t max_translation = 8;
  uint64_t seed = 0;
  std::string dataset;
  int64_t input_size = 256;
  int64_t ensemble_size = 5;
  bool save_checkpoints = true;

  ModelOptions model_options() const;
  LossConfig loss_config() const;
  // Throws std::invalid_argument on non-positive or inconsistent values.
  void validate() const;
  std::string to_text() const;
};

TrainConfig parse_config(const std::string& text);
TrainConfig load_config(const std::filesystem::path& path);
// Applies a single `key=value` override.
void set_config_value(TrainConfig& config, const std::string& key, const std::string& value);

}  // namespace cirrus
