#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "cirrus/attention.h"

namespace cirrus {

// Spatial scales stored as integer downsampling factors {1, r, r^2, ...}.
class ScaleSet {
 public:
  ScaleSet() : factors_{1} {}
  // Factors must start at 1 and grow by a common integer ratio >= 2.
  explicit ScaleSet(std::vector<int64_t> factors);

  // Scale fractions such as {1, 0.5, 0.25}; each must be the reciprocal of an integer.
  static ScaleSet from_fractions(const std::vector<double>& fractions);
  // Comma-separated fractions, e.g. "1,0.5,0.25" or "1,1/2,1/4".
  static ScaleSet parse(const std::string& text);

  const std::vector<int64_t>& factors() const { return factors_; }
  size_t size() const { return factors_.size(); }
  int64_t factor(size_t i) const { return factors_.at(i); }
  int64_t coarsest() const { return factors_.back(); }
  // Common ratio between adjacent scales (1 for a single scale).
  int64_t ratio() const { return factors_.size() > 1 ? factors_[1] : 1; }
  std::string to_string() const;

 private:
  std::vector<int64_t> factors_;
};

struct MultiScaleFeatureSet {
  ScaleSet scales;
  std::vector<torch::Tensor> maps;     // backbone output per scale
  torch::Tensor fused;                 // at the largest map's size, set by fusion
  std::vector<torch::Tensor> working;  // concat(map_s, rescale(fused, s)), set by fusion
};

using BackboneFn = std::function<torch::Tensor(const torch::Tensor&)>;

// Runs the backbone once per scale on the area-downsampled image.
MultiScaleFeatureSet build_ms_features(const torch::Tensor& image, const BackboneFn& backbone, const ScaleSet& scales);

// Bilinear upsampling or area downsampling to the target spatial size.
torch::Tensor rescale(const torch::Tensor& map, int64_t height, int64_t width);

// Upsamples every map to the largest size, concatenates, and reduces with a
// 1x1 convolution to the per-scale channel width.
class FeatureFusionImpl : public torch::nn::Module {
 public:
  FeatureFusionImpl(int64_t channels, int64_t num_scales);

  torch::Tensor fuse(const std::vector<torch::Tensor>& maps);
  // Sets set.fused and set.working.
  void forward(MultiScaleFeatureSet& set);

  torch::nn::Conv2d reduce{nullptr};

 private:
  int64_t channels_;
  int64_t num_scales_;
};
TORCH_MODULE(FeatureFusion);

struct TileGrid {
  int64_t tile_size = 0;
  int64_t rows = 0;  // tiles per column
  int64_t cols = 0;  // tiles per row
  int64_t height = 0;
  int64_t width = 0;
  int64_t scale_factor = 1;
  // [rows * cols, B, C, T, T], row-major tile order.
  torch::Tensor tiles;

  int64_t count() const { return rows * cols; }
  // (y, x) of tile i in its source map.
  std::pair<int64_t, int64_t> origin(int64_t i) const { return {(i / cols) * tile_size, (i % cols) * tile_size}; }
  int64_t pad_bottom() const { return rows * tile_size - height; }
  int64_t pad_right() const { return cols * tile_size - width; }
};

// Zero-pads to multiples of tile_size and cuts row-major T x T tiles.
TileGrid tile(const torch::Tensor& map, int64_t tile_size, int64_t scale_factor = 1);
// Reassembles tiles and strips the padding.
torch::Tensor untile(const TileGrid& grid);
// Same as untile(grid) with grid.tiles replaced by `tiles`.
torch::Tensor untile(const TileGrid& grid, const torch::Tensor& tiles);

// Nearest-neighbour upsampling by the scale ratio followed by a 3x3 convolution.
class UpscaleBlockImpl : public torch::nn::Module {
 public:
  UpscaleBlockImpl(int64_t channels, int64_t factor);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Conv2d conv{nullptr};

 private:
  int64_t factor_;
};
TORCH_MODULE(UpscaleBlock);

struct GriddedAttentionOptions {
  // 0 disables gridding: each branch attends over its whole map.
  int64_t tile_size = 16;
  // Tiles pushed through a branch per call; 0 means all tiles at once.
  int64_t tile_batch = 1;
};

// One tri-attention branch per scale, applied tile by tile, followed by
// realignment through upscale blocks shared between branches: block j maps
// scale j+1 to scale j, so the coarsest branch composes every block.
class GriddedAttentionImpl : public torch::nn::Module {
 public:
  GriddedAttentionImpl(const ScaleSet& scales, const TriAttentionOptions& attention, GriddedAttentionOptions options);

  // Attention output of branch i at that branch's own resolution.
  torch::Tensor attend_branch(size_t i, const torch::Tensor& map);
  // Brings a map from scale i up to the full scale.
  torch::Tensor realign(size_t i, torch::Tensor map);
  // One realigned attention map per scale, all at the full-scale size.
  std::vector<torch::Tensor> forward(const std::vector<torch::Tensor>& working);

  const ScaleSet& scales() const { return scales_; }
  const GriddedAttentionOptions& options() const { return options_; }
  void set_tile_batch(int64_t n) { options_.tile_batch = n; }

  std::vector<TriAttention> branches;
  std::vector<UpscaleBlock> upscale;

 private:
  ScaleSet scales_;
  GriddedAttentionOptions options_;
};
TORCH_MODULE(GriddedAttention);

struct AttentionCost {
  int64_t tile_count = 0;
  int64_t gridded_entries = 0;
  int64_t full_entries = 0;
  double ratio = 0.0;
};

// Positional-affinity sizes: gridded tiles vs the untiled full-scale map.
AttentionCost attention_cost(int64_t side, const ScaleSet& scales, int64_t tile_size);

}  // namespace cirrus
