#include "cirrus/attention.h"

#include <algorithm>
#include <cmath>

#include "cirrus/affinity_tracker.h"

namespace cirrus {

void check_finite(const torch::Tensor& x, const char* op) {
  TORCH_CHECK(torch::isfinite(x).all().item<bool>(), op, ": non-finite input");
}

PositionalAttentionImpl::PositionalAttentionImpl(int64_t channels, bool scale_affinity)
    : channels_(channels), reduced_(std::max<int64_t>(1, channels / 8)), scale_affinity_(scale_affinity) {
  TORCH_CHECK(channels >= 1, "positional attention needs at least one channel");
  query = register_module("query", torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, reduced_, 1)));
  key = register_module("key", torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, reduced_, 1)));
  value = register_module("value", torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, channels, 1)));
  gamma = register_parameter("gamma", torch::zeros({1}));
}

torch::Tensor PositionalAttentionImpl::energy(const torch::Tensor& x) {
  const auto b = x.size(0);
  const auto n = x.size(2) * x.size(3);
  auto q = query(x).view({b, reduced_, n}).permute({0, 2, 1});
  auto k = key(x).view({b, reduced_, n});
  if (torch::GradMode::is_enabled()) {
    auto e = torch::bmm(q, k);
    return scale_affinity_ ? e / std::sqrt(static_cast<double>(reduced_)) : e;
  }
  // Inference: the N x N buffer comes from the tracker and the softmax runs in place.
  auto e = AffinityTracker::instance().allocate({b, n, n}, x.scalar_type());
  torch::bmm_out(e, q, k);
  if (scale_affinity_) e.div_(std::sqrt(static_cast<double>(reduced_)));
  return e;
}

torch::Tensor PositionalAttentionImpl::affinity(const torch::Tensor& x) {
  TORCH_CHECK(x.dim() == 4 && x.size(1) == channels_, "positional attention expects [B, ", channels_, ", H, W], got ",
              x.sizes());
  auto e = energy(x);
  if (torch::GradMode::is_enabled()) return torch::softmax(e, -1);
  e.sub_(std::get<0>(e.max(-1, true))).exp_();
  e.div_(e.sum(-1, true));
  return e;
}

torch::Tensor PositionalAttentionImpl::attend(const torch::Tensor& x) {
  const auto b = x.size(0);
  if (torch::GradMode::is_enabled()) {
    // Fused kernel; query and key are zero-padded to the value width.
    TORCH_CHECK(x.dim() == 4 && x.size(1) == channels_, "positional attention expects [B, ", channels_,
                ", H, W], got ", x.sizes());
    const auto n = x.size(2) * x.size(3);
    const std::vector<int64_t> pad{0, channels_ - reduced_};
    auto q = torch::constant_pad_nd(query(x).view({b, reduced_, n}).transpose(1, 2), pad).unsqueeze(1);
    auto k = torch::constant_pad_nd(key(x).view({b, reduced_, n}).transpose(1, 2), pad).unsqueeze(1);
    auto v = value(x).view({b, channels_, n}).transpose(1, 2).contiguous().unsqueeze(1);
    const double scale = scale_affinity_ ? 1.0 / std::sqrt(static_cast<double>(reduced_)) : 1.0;
    auto out = at::scaled_dot_product_attention(q, k, v, {}, 0.0, false, scale);
    return out.squeeze(1).transpose(1, 2).reshape(x.sizes());
  }
  auto a = affinity(x);
  auto v = value(x).view({b, channels_, -1});
  return torch::bmm(v, a.transpose(1, 2)).view(x.sizes());
}

torch::Tensor PositionalAttentionImpl::forward(const torch::Tensor& x) {
  check_finite(x, "positional_attention");
  return gamma * attend(x) + x;
}

ChannelAttentionImpl::ChannelAttentionImpl(bool scale_affinity) : scale_affinity_(scale_affinity) {
  gamma = register_parameter("gamma", torch::zeros({1}));
}

torch::Tensor ChannelAttentionImpl::affinity(const torch::Tensor& x) {
  TORCH_CHECK(x.dim() == 4, "channel attention expects [B, C, H, W], got ", x.sizes());
  auto flat = x.flatten(2);
  auto e = torch::bmm(flat, flat.transpose(1, 2));
  if (scale_affinity_) e = e / std::sqrt(static_cast<double>(flat.size(2)));
  return torch::softmax(e, -1);
}

torch::Tensor ChannelAttentionImpl::attend(const torch::Tensor& x) {
  return torch::bmm(affinity(x), x.flatten(2)).view(x.sizes());
}

torch::Tensor ChannelAttentionImpl::forward(const torch::Tensor& x) {
  check_finite(x, "channel_attention");
  return gamma * attend(x) + x;
}

GaborAttentionImpl::GaborAttentionImpl(int64_t channels, GaborAttentionOptions options)
    : channels_(channels), options_(options) {
  TORCH_CHECK(channels >= 1, "gabor attention needs at least one channel");
  TORCH_CHECK(options_.bank.orientations >= 1, "gabor attention needs G >= 1");
  const auto pad = options_.bank.kernel_size / 2;
  auto conv = [&](const char* name) {
    return register_module(name, GaborConv2d(GaborConv2dOptions(channels, options_.orientation_channels, options_.bank)
                                                 .padding(pad)
                                                 .learnable_bank(options_.learnable_bank)));
  };
  query = conv("query");
  key = conv("key");
  value = conv("value");
  project = register_module(
      "project",
      torch::nn::Conv2d(torch::nn::Conv2dOptions(options_.bank.orientations * options_.orientation_channels, channels, 1)));
  gamma = register_parameter("gamma", torch::zeros({1}));
}

torch::Tensor GaborAttentionImpl::flat(GaborConv2d& conv, const torch::Tensor& x) {
  return conv(x).flatten(2);  // [B, G, C_g * H * W]
}

torch::Tensor GaborAttentionImpl::affinity(const torch::Tensor& x) {
  TORCH_CHECK(x.dim() == 4 && x.size(1) == channels_, "gabor attention expects [B, ", channels_, ", H, W], got ",
              x.sizes());
  auto q = flat(query, x);
  auto k = flat(key, x);
  auto e = torch::bmm(q, k.transpose(1, 2));
  if (options_.scale_affinity) e = e / std::sqrt(static_cast<double>(q.size(2)));
  return torch::softmax(e, -1);
}

torch::Tensor GaborAttentionImpl::attend(const torch::Tensor& x) {
  auto a = affinity(x);
  auto v = flat(value, x);
  auto mixed = torch::bmm(a, v).view({x.size(0), orientations() * options_.orientation_channels, x.size(2), x.size(3)});
  return project(mixed);
}

torch::Tensor GaborAttentionImpl::forward(const torch::Tensor& x) {
  check_finite(x, "gabor_attention");
  return gamma * attend(x) + x;
}

TriAttentionImpl::TriAttentionImpl(TriAttentionOptions options) : options_(std::move(options)) {
  positional = register_module("positional", PositionalAttention(options_.channels, options_.scale_affinity));
  channel = register_module("channel", ChannelAttention(options_.scale_affinity));
  if (options_.use_gabor) {
    auto g = options_.gabor;
    g.scale_affinity = g.scale_affinity || options_.scale_affinity;
    gabor = register_module("gabor", GaborAttention(options_.channels, g));
  }
}

torch::Tensor TriAttentionImpl::forward(const torch::Tensor& x) {
  check_finite(x, "tri_attention");
  auto out = x + positional->gamma * positional->attend(x) + channel->gamma * channel->attend(x);
  if (gabor) out = out + gabor->gamma * gabor->attend(x);
  return out;
}

}  // namespace cirrus
