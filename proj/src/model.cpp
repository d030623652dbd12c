#include "cirrus/model.h"

#include <algorithm>
#include <stdexcept>

namespace cirrus {

ArcsinhLayerImpl::ArcsinhLayerImpl() {
  a = register_parameter("a", torch::ones({1}));
  b = register_parameter("b", torch::zeros({1}));
}

torch::Tensor ArcsinhLayerImpl::forward(const torch::Tensor& x) { return torch::asinh(a * x + b); }

ControlBackboneImpl::ControlBackboneImpl(int64_t in_channels, int64_t width) : width_(width) {
  layers = torch::nn::Sequential();
  const auto groups = std::min<int64_t>(8, width);
  TORCH_CHECK(width % groups == 0, "backbone width must be divisible by ", groups);
  for (int i = 0; i < 4; ++i) {
    layers->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(i == 0 ? in_channels : width, width, 3).padding(1)));
    layers->push_back(torch::nn::GroupNorm(torch::nn::GroupNormOptions(groups, width)));
    layers->push_back(torch::nn::ReLU());
  }
  register_module("layers", layers);
}

torch::Tensor ControlBackboneImpl::forward(const torch::Tensor& x) { return layers->forward(x); }

std::vector<torch::Tensor> SegOutputs::all() const {
  std::vector<torch::Tensor> out(attention_logits);
  out.insert(out.end(), feature_logits.begin(), feature_logits.end());
  return out;
}

SegmentationNetImpl::SegmentationNetImpl(ModelOptions options)
    : SegmentationNetImpl(options, std::make_shared<ControlBackboneImpl>(options.in_channels, options.width)) {}

SegmentationNetImpl::SegmentationNetImpl(ModelOptions options, std::shared_ptr<BackboneImpl> backbone_module)
    : backbone(std::move(backbone_module)), options_(std::move(options)) {
  build();
}

void SegmentationNetImpl::build() {
  if (options_.use_arcsinh) arcsinh = register_module("arcsinh", ArcsinhLayer());
  register_module("backbone", backbone);
  const auto c = backbone->out_channels();
  const auto n = static_cast<int64_t>(options_.scales.size());
  fusion = register_module("fusion", FeatureFusion(c, n));

  TriAttentionOptions tri(2 * c);
  tri.use_gabor = options_.use_gabor;
  tri.scale_affinity = options_.scale_affinity;
  tri.gabor = options_.gabor;
  attention = register_module("attention", GriddedAttention(options_.scales, tri, options_.grid));
  for (int64_t i = 0; i < n; ++i) {
    attention_heads.push_back(register_module("attention_head" + std::to_string(i),
                                              torch::nn::Conv2d(torch::nn::Conv2dOptions(2 * c, 1, 1))));
    feature_heads.push_back(register_module("feature_head" + std::to_string(i),
                                            torch::nn::Conv2d(torch::nn::Conv2dOptions(2 * c, 1, 1))));
  }
}

SegOutputs SegmentationNetImpl::forward(const torch::Tensor& image) {
  TORCH_CHECK(image.dim() == 4, "forward expects [B, C, H, W], got ", image.sizes());
  check_finite(image, "forward");
  const auto h = image.size(2);
  const auto w = image.size(3);
  const auto m = options_.scales.coarsest();
  if (h < m || w < m)
    throw std::invalid_argument("image side " + std::to_string(std::min(h, w)) + " is smaller than scale factor " +
                                std::to_string(m));
  // Pad to a multiple of the coarsest factor, crop the heads afterwards.
  const auto ph = (m - h % m) % m;
  const auto pw = (m - w % m) % m;
  auto x = (ph || pw) ? torch::replication_pad2d(image, {0, pw, 0, ph}) : image;
  if (arcsinh) x = arcsinh(x);

  auto set = build_ms_features(x, [this](const torch::Tensor& t) { return backbone->forward(t); }, options_.scales);
  fusion->forward(set);
  auto attended = attention->forward(set.working);

  const auto full_h = x.size(2);
  const auto full_w = x.size(3);
  auto crop = [&](const torch::Tensor& t) { return (ph || pw) ? t.slice(2, 0, h).slice(3, 0, w) : t; };
  SegOutputs out;
  for (size_t i = 0; i < attended.size(); ++i) {
    out.attention_logits.push_back(crop(attention_heads[i](attended[i])));
    out.feature_logits.push_back(crop(feature_heads[i](rescale(set.working[i], full_h, full_w))));
  }
  return out;
}

torch::Tensor SegmentationNetImpl::predict(const torch::Tensor& image) {
  auto out = forward(image);
  auto sum = torch::sigmoid(out.attention_logits.front());
  for (size_t i = 1; i < out.attention_logits.size(); ++i) sum = sum + torch::sigmoid(out.attention_logits[i]);
  return sum / static_cast<double>(out.attention_logits.size());
}

torch::Tensor ensemble_predict(std::vector<SegmentationNet>& models, const torch::Tensor& image) {
  if (models.empty()) throw std::invalid_argument("ensemble needs at least one model");
  auto sum = models.front()->predict(image);
  for (size_t i = 1; i < models.size(); ++i) sum = sum + models[i]->predict(image);
  return sum / static_cast<double>(models.size());
}

}  // namespace cirrus
