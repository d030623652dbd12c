#pragma once

#include <vector>

#include <torch/torch.h>

#include "cirrus/model.h"

namespace cirrus {

// Consensus bands over y in [0, 1]; boundaries fall into the higher band
// except 0.25, which is negative.
inline constexpr double kNegativeUpper = 0.25;
inline constexpr double kMajority = 0.5;
inline constexpr double kSuperMajority = 0.75;

enum class LossKind {
  SuperMajority,  // quartile-gated focal loss with an ignore band and a boost
  RoundedFocal,   // focal loss on y rounded at 0.5, every pixel counted
};

struct LossConfig {
  LossKind kind = LossKind::SuperMajority;
  double beta = 1.25;
  double focal_gamma = 2.0;
  double focal_alpha = 0.25;
  // Use y itself instead of the band's hard target inside the focal term.
  bool soft_targets = false;
};

// -alpha * [t (1-p)^gamma log p + (1-t) p^gamma log(1-p)], p = sigmoid(x).
// For t in {0, 1} this is alpha * (1 - p_t)^gamma * -log(p_t).
torch::Tensor focal_loss(const torch::Tensor& logits, const torch::Tensor& target, double gamma, double alpha);

// Per-pixel super-majority loss. Throws std::invalid_argument when y leaves [0, 1].
torch::Tensor sml(const torch::Tensor& logits, const torch::Tensor& consensus, const LossConfig& config = {});

// True where the consensus lies strictly inside (0.25, 0.5).
torch::Tensor ignore_band(const torch::Tensor& consensus);

struct TotalLoss {
  torch::Tensor value;
  bool all_ignored = false;
};

// Sum over heads of the per-head mean loss over valid pixels.
TotalLoss total_loss(const std::vector<torch::Tensor>& heads, const torch::Tensor& consensus,
                     const LossConfig& config = {});
TotalLoss total_loss(const SegOutputs& outputs, const torch::Tensor& consensus, const LossConfig& config = {});

// Weighted average of binary annotator masks. Throws on empty input or
// non-positive weights.
torch::Tensor weighted_consensus(const std::vector<torch::Tensor>& masks, const std::vector<double>& weights);

}  // namespace cirrus
