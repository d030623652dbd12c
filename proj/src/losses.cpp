#include "cirrus/losses.h"

#include <stdexcept>

namespace cirrus {

torch::Tensor focal_loss(const torch::Tensor& logits, const torch::Tensor& target, double gamma, double alpha) {
  auto log_p = torch::log_sigmoid(logits);
  auto log_q = torch::log_sigmoid(-logits);
  auto t = target.to(logits.scalar_type());
  auto pos = t * torch::exp(gamma * log_q) * log_p;
  auto neg = (1.0 - t) * torch::exp(gamma * log_p) * log_q;
  return -alpha * (pos + neg);
}

torch::Tensor ignore_band(const torch::Tensor& consensus) {
  return (consensus > kNegativeUpper).logical_and(consensus < kMajority);
}

torch::Tensor sml(const torch::Tensor& logits, const torch::Tensor& consensus, const LossConfig& config) {
  TORCH_CHECK(logits.sizes() == consensus.sizes(), "sml: logits ", logits.sizes(), " vs consensus ",
              consensus.sizes());
  if (consensus.numel() > 0 && (consensus.min().item<double>() < 0.0 || consensus.max().item<double>() > 1.0))
    throw std::invalid_argument("sml: consensus values must lie in [0, 1]");
  auto y = consensus.to(logits.scalar_type());
  auto target = config.soft_targets ? y : (y >= kMajority).to(logits.scalar_type());
  auto lf = focal_loss(logits, target, config.focal_gamma, config.focal_alpha);
  if (config.kind == LossKind::RoundedFocal) return lf;
  auto weight = torch::where(y >= kSuperMajority, torch::full_like(y, config.beta), torch::ones_like(y));
  weight = weight.masked_fill(ignore_band(y), 0.0);
  return lf * weight;
}

TotalLoss total_loss(const std::vector<torch::Tensor>& heads, const torch::Tensor& consensus,
                     const LossConfig& config) {
  TORCH_CHECK(!heads.empty(), "total_loss needs at least one head");
  TotalLoss out;
  const auto valid = config.kind == LossKind::RoundedFocal ? consensus.numel()
                                                           : consensus.numel() - ignore_band(consensus).sum().item<int64_t>();
  if (valid == 0) {
    out.all_ignored = true;
    auto zero = heads.front().sum() * 0.0;
    for (size_t i = 1; i < heads.size(); ++i) zero = zero + heads[i].sum() * 0.0;
    out.value = zero;
    return out;
  }
  torch::Tensor sum;
  for (const auto& h : heads) {
    auto term = sml(h, consensus, config).sum() / static_cast<double>(valid);
    sum = sum.defined() ? sum + term : term;
  }
  out.value = sum;
  return out;
}

TotalLoss total_loss(const SegOutputs& outputs, const torch::Tensor& consensus, const LossConfig& config) {
  return total_loss(outputs.all(), consensus, config);
}

torch::Tensor weighted_consensus(const std::vector<torch::Tensor>& masks, const std::vector<double>& weights) {
  if (masks.empty()) throw std::invalid_argument("consensus needs at least one annotator");
  if (masks.size() != weights.size()) throw std::invalid_argument("one weight per annotator mask is required");
  double total = 0.0;
  auto acc = torch::zeros_like(masks.front(), torch::kFloat32);
  for (size_t i = 0; i < masks.size(); ++i) {
    if (!(weights[i] > 0.0)) throw std::invalid_argument("annotator weights must be positive");
    acc += weights[i] * masks[i].to(torch::kFloat32);
    total += weights[i];
  }
  return (acc / total).clamp(0.0, 1.0);
}

}  // namespace cirrus
