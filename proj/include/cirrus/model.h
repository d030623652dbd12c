#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include <torch/torch.h>

#include "cirrus/attention.h"
#include "cirrus/gridded.h"

namespace cirrus {

// Learnable input scaling arcsinh(a * x + b), initialized to a = 1, b = 0.
class ArcsinhLayerImpl : public torch::nn::Module {
 public:
  ArcsinhLayerImpl();
  torch::Tensor forward(const torch::Tensor& x);

  torch::Tensor a, b;
};
TORCH_MODULE(ArcsinhLayer);

// Feature extractor interface. Implementations keep spatial size unchanged.
class BackboneImpl : public torch::nn::Module {
 public:
  virtual torch::Tensor forward(const torch::Tensor& x) = 0;
  virtual int64_t out_channels() const = 0;
};

// Four 3x3 stride-1 convolutions, each followed by group norm and ReLU.
class ControlBackboneImpl : public BackboneImpl {
 public:
  ControlBackboneImpl(int64_t in_channels, int64_t width);
  torch::Tensor forward(const torch::Tensor& x) override;
  int64_t out_channels() const override { return width_; }

 private:
  int64_t width_;
  torch::nn::Sequential layers{nullptr};
};

struct ModelOptions {
  int64_t in_channels = 1;
  int64_t width = 32;
  ScaleSet scales = ScaleSet({1, 2, 4});
  GriddedAttentionOptions grid{};
  bool use_gabor = true;
  bool use_arcsinh = true;
  bool scale_affinity = false;
  GaborAttentionOptions gabor{};
};

// Per scale: one head on the realigned attention map and one on the
// working feature map, all at input resolution.
struct SegOutputs {
  std::vector<torch::Tensor> attention_logits;
  std::vector<torch::Tensor> feature_logits;

  // Attention heads first, then feature heads.
  std::vector<torch::Tensor> all() const;
  size_t size() const { return attention_logits.size() + feature_logits.size(); }
};

class SegmentationNetImpl : public torch::nn::Module {
 public:
  explicit SegmentationNetImpl(ModelOptions options);
  SegmentationNetImpl(ModelOptions options, std::shared_ptr<BackboneImpl> backbone);

  SegOutputs forward(const torch::Tensor& image);
  // Mean of the sigmoid of the attention heads, in [0, 1].
  torch::Tensor predict(const torch::Tensor& image);

  const ModelOptions& options() const { return options_; }

  ArcsinhLayer arcsinh{nullptr};
  std::shared_ptr<BackboneImpl> backbone;
  FeatureFusion fusion{nullptr};
  GriddedAttention attention{nullptr};
  std::vector<torch::nn::Conv2d> attention_heads;
  std::vector<torch::nn::Conv2d> feature_heads;

 private:
  void build();
  ModelOptions options_;
};
TORCH_MODULE(SegmentationNet);

// Pixel-wise mean of each member's predict().
torch::Tensor ensemble_predict(std::vector<SegmentationNet>& models, const torch::Tensor& image);

}  // namespace cirrus
