#pragma once

#include <cstdint>

#include <torch/torch.h>

#include "cirrus/gabor.h"

namespace cirrus {

// Throws c10::Error when x holds NaN or Inf.
void check_finite(const torch::Tensor& x, const char* op);

// Position attention: affinity over the H*W positions of a [B, C, H, W] map,
// with C/8-wide (min 1) query/key projections and a C-wide value projection.
// forward(x) = gamma * attend(x) + x, gamma initialized to 0.
class PositionalAttentionImpl : public torch::nn::Module {
 public:
  explicit PositionalAttentionImpl(int64_t channels, bool scale_affinity = false);

  // Row-stochastic [B, N, N] matrix, rows indexed by query position.
  torch::Tensor affinity(const torch::Tensor& x);
  // Attended values [B, C, H, W] before the residual scale.
  torch::Tensor attend(const torch::Tensor& x);
  torch::Tensor forward(const torch::Tensor& x);

  int64_t reduced_channels() const { return reduced_; }

  torch::nn::Conv2d query{nullptr}, key{nullptr}, value{nullptr};
  torch::Tensor gamma;

 private:
  torch::Tensor energy(const torch::Tensor& x);
  int64_t channels_;
  int64_t reduced_;
  bool scale_affinity_;
};
TORCH_MODULE(PositionalAttention);

// Channel attention: C x C affinity over flattened channel vectors, no projections.
class ChannelAttentionImpl : public torch::nn::Module {
 public:
  explicit ChannelAttentionImpl(bool scale_affinity = false);

  torch::Tensor affinity(const torch::Tensor& x);
  torch::Tensor attend(const torch::Tensor& x);
  torch::Tensor forward(const torch::Tensor& x);

  torch::Tensor gamma;

 private:
  bool scale_affinity_;
};
TORCH_MODULE(ChannelAttention);

struct GaborAttentionOptions {
  GaborBankOptions bank = GaborBankOptions::for_kernel(4, 5);
  // Channels produced per orientation by each of the query/key/value convolutions.
  int64_t orientation_channels = 2;
  bool scale_affinity = false;
  bool learnable_bank = false;
};

// Orientation attention: three Gabor-modulated convolutions give Q, K, V of
// shape [B, G, N]; a G x G affinity mixes the orientation groups; a 1x1
// convolution projects back to C channels.
class GaborAttentionImpl : public torch::nn::Module {
 public:
  GaborAttentionImpl(int64_t channels, GaborAttentionOptions options = {});

  torch::Tensor affinity(const torch::Tensor& x);
  torch::Tensor attend(const torch::Tensor& x);
  torch::Tensor forward(const torch::Tensor& x);

  int64_t orientations() const { return options_.bank.orientations; }

  GaborConv2d query{nullptr}, key{nullptr}, value{nullptr};
  torch::nn::Conv2d project{nullptr};
  torch::Tensor gamma;

 private:
  torch::Tensor flat(GaborConv2d& conv, const torch::Tensor& x);
  int64_t channels_;
  GaborAttentionOptions options_;
};
TORCH_MODULE(GaborAttention);

struct TriAttentionOptions {
  explicit TriAttentionOptions(int64_t channels) : channels(channels) {}
  int64_t channels;
  // Without the Gabor branch the module is plain position + channel attention.
  bool use_gabor = true;
  bool scale_affinity = false;
  GaborAttentionOptions gabor{};
};

// out = x + gamma_p * A_p(x) + gamma_c * A_c(x) + gamma_g * A_g(x)
class TriAttentionImpl : public torch::nn::Module {
 public:
  explicit TriAttentionImpl(TriAttentionOptions options);

  torch::Tensor forward(const torch::Tensor& x);

  const TriAttentionOptions& options() const { return options_; }

  PositionalAttention positional{nullptr};
  ChannelAttention channel{nullptr};
  GaborAttention gabor{nullptr};

 private:
  TriAttentionOptions options_;
};
TORCH_MODULE(TriAttention);

}  // namespace cirrus
