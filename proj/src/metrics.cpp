#include "cirrus/metrics.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "cirrus/losses.h"

namespace cirrus {

OverlapCounts& OverlapCounts::operator+=(const OverlapCounts& o) {
  intersection += o.intersection;
  predicted += o.predicted;
  target += o.target;
  return *this;
}

double OverlapCounts::iou() const {
  const auto u = union_size();
  return u == 0 ? 1.0 : static_cast<double>(intersection) / static_cast<double>(u);
}

double OverlapCounts::dice() const {
  const auto denom = predicted + target;
  return denom == 0 ? 1.0 : 2.0 * static_cast<double>(intersection) / static_cast<double>(denom);
}

OverlapCounts overlap(const torch::Tensor& pred, const torch::Tensor& target, double threshold) {
  TORCH_CHECK(pred.sizes() == target.sizes(), "metric shape mismatch: ", pred.sizes(), " vs ", target.sizes());
  auto valid = ignore_band(target).logical_not();
  auto p = (pred >= threshold).logical_and(valid);
  auto t = (target >= kMajority).logical_and(valid);
  OverlapCounts c;
  c.intersection = p.logical_and(t).sum().item<int64_t>();
  c.predicted = p.sum().item<int64_t>();
  c.target = t.sum().item<int64_t>();
  return c;
}

double iou(const torch::Tensor& pred, const torch::Tensor& target, double threshold) {
  return overlap(pred, target, threshold).iou();
}

double dice(const torch::Tensor& pred, const torch::Tensor& target, double threshold) {
  return overlap(pred, target, threshold).dice();
}

double coverage(const torch::Tensor& mask, double threshold) {
  if (mask.numel() == 0) return 0.0;
  return (mask >= threshold).sum().item<double>() / static_cast<double>(mask.numel());
}

std::vector<double> coverage_histogram(std::span<const double> coverages, int bins) {
  if (bins < 1) throw std::invalid_argument("histogram needs at least one bin");
  std::vector<double> h(static_cast<size_t>(bins), 0.0);
  if (coverages.empty()) return h;
  for (double c : coverages) {
    auto i = static_cast<int>(std::floor(std::clamp(c, 0.0, 1.0) * bins));
    h[static_cast<size_t>(std::min(i, bins - 1))] += 1.0;
  }
  for (auto& v : h) v /= static_cast<double>(coverages.size());
  return h;
}

double coverage_kl(std::span<const double> predicted, std::span<const double> target, int bins, double epsilon) {
  const auto p = coverage_histogram(target, bins);
  const auto q = coverage_histogram(predicted, bins);
  double kl = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    kl += p[i] * std::log(p[i] / std::max(q[i], epsilon));
  }
  return kl;
}

double coverage_kl(const std::vector<torch::Tensor>& predicted, const std::vector<torch::Tensor>& target, int bins,
                   double threshold) {
  std::vector<double> pc, tc;
  for (const auto& m : predicted) pc.push_back(coverage(m, threshold));
  for (const auto& m : target) tc.push_back(coverage(m, kMajority));
  return coverage_kl(pc, tc, bins);
}

SplitSummary aggregate_splits(std::span<const double> scores) {
  if (scores.empty()) throw std::invalid_argument("no split scores to aggregate");
  SplitSummary s;
  const auto k = static_cast<double>(scores.size());
  // First score plus mean offset.
  double offset = 0.0;
  for (double v : scores) offset += v - scores[0];
  s.mean = scores[0] + offset / k;
  if (scores.size() > 1) {
    double ss = 0.0;
    for (double v : scores) ss += (v - s.mean) * (v - s.mean);
    s.standard_error = std::sqrt(ss / (k - 1.0)) / std::sqrt(k);
  }
  return s;
}

}  // namespace cirrus
