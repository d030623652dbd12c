#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <utility>
#include <vector>

#include <torch/torch.h>

namespace cirrus {

struct Annotator {
  double threshold = 0.5;  // detects intensity >= threshold, in (0, 1)
  double jitter = 2.0;     // pixel scale of the smooth displacement field
  double weight = 1.0;
};

// Two experts (weight 2) and two non-experts (weight 1).
std::vector<Annotator> default_annotators();

struct CirrusParams {
  int64_t size = 512;
  double prevalence = 0.25;
  // Overrides the prevalence draw when set.
  std::optional<bool> cirrus_present;
  // Target fraction of pixels with intensity above 0.5 in contaminated images.
  double coverage = 0.6;

  // Large-scale cloud envelope.
  int envelope_octaves = 3;
  double envelope_frequency = 2.5;  // cycles across the image
  double envelope_stretch = 2.0;    // elongation along the dominant orientation
  // Filamentary texture inside the cloud.
  int filament_octaves = 4;
  double filament_frequency = 12.0;
  double filament_anisotropy = 6.0;
  double shear = 0.3;
  double gamma = 1.5;
  double cirrus_amplitude = 0.35;

  // Imaging artefacts.
  double background = 0.1;
  double background_gradient = 0.05;
  double stars_per_4096px = 1.5;
  double star_sigma = 1.2;
  double read_noise = 0.02;
  double hot_pixel_rate = 1e-4;

  std::vector<Annotator> annotators = default_annotators();
};

struct CirrusSample {
  torch::Tensor image;      // [H, W] float32
  torch::Tensor intensity;  // [H, W] in [0, 1]
  torch::Tensor consensus;  // [H, W] in [0, 1]
  uint64_t seed = 0;
  bool has_cirrus = false;
  double orientation = 0.0;  // radians, dominant filament direction
};

// Pure function of (seed, params). Throws std::invalid_argument for size < 64.
CirrusSample generate_cirrus_sample(uint64_t seed, const CirrusParams& params = {});

// Each annotator thresholds the intensity resampled through its own smooth
// displacement field; the result is the weight-normalized vote.
torch::Tensor simulate_consensus(const torch::Tensor& intensity, const std::vector<Annotator>& annotators,
                                 uint64_t seed);

struct AugmentOptions {
  bool flips = true;
  bool rotations = true;
  int64_t max_translation = 8;
  double noise_variance = 0.1;
};

struct AugmentTransform {
  bool flip_horizontal = false;
  bool flip_vertical = false;
  int rotations = 0;  // quarter turns, counter-clockwise
  int64_t shift_y = 0;
  int64_t shift_x = 0;

  bool is_identity() const {
    return !flip_horizontal && !flip_vertical && rotations == 0 && shift_y == 0 && shift_x == 0;
  }
};

AugmentTransform sample_transform(std::mt19937_64& rng, const AugmentOptions& options);

// Geometric transform on the last two axes: flips, then rotation, then an
// integer shift with reflect padding.
torch::Tensor apply_transform(const torch::Tensor& t, const AugmentTransform& transform);
// Inverse of the flip/rotation part (shifts are not invertible at the border).
torch::Tensor invert_transform(const torch::Tensor& t, const AugmentTransform& transform);

// Zero-mean Gaussian noise of the given variance, drawn from rng.
torch::Tensor gaussian_noise(at::IntArrayRef sizes, double variance, std::mt19937_64& rng);

// Same geometric transform for image and mask; noise on the image only.
std::pair<torch::Tensor, torch::Tensor> augment(const torch::Tensor& image, const torch::Tensor& mask,
                                                std::mt19937_64& rng, const AugmentOptions& options = {});

// 64-bit mixer used to derive per-sample and per-annotator seeds.
uint64_t splitmix64(uint64_t x);

}  // namespace cirrus
