#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <torch/torch.h>

namespace cirrus {

// Pixel counts for one prediction/target pair. Targets are binarized at
// 0.5 and pixels in the (0.25, 0.5) ignore band are dropped.
struct OverlapCounts {
  int64_t intersection = 0;
  int64_t predicted = 0;
  int64_t target = 0;

  int64_t union_size() const { return predicted + target - intersection; }
  OverlapCounts& operator+=(const OverlapCounts& o);
  // 1 when both masks are empty.
  double iou() const;
  double dice() const;
};

OverlapCounts overlap(const torch::Tensor& pred, const torch::Tensor& target, double threshold = 0.5);

double iou(const torch::Tensor& pred, const torch::Tensor& target, double threshold = 0.5);
double dice(const torch::Tensor& pred, const torch::Tensor& target, double threshold = 0.5);

// Fraction of pixels at or above the threshold.
double coverage(const torch::Tensor& mask, double threshold = 0.5);

// Equal-width histogram on [0, 1] normalized to sum 1; value 1 falls in the last bin.
std::vector<double> coverage_histogram(std::span<const double> coverages, int bins);

// KL(target || predicted) between coverage histograms. Empty predicted bins
// are floored at epsilon so the value stays finite.
double coverage_kl(std::span<const double> predicted, std::span<const double> target, int bins = 10,
                   double epsilon = 1e-6);
double coverage_kl(const std::vector<torch::Tensor>& predicted, const std::vector<torch::Tensor>& target,
                   int bins = 10, double threshold = 0.5);

struct SplitSummary {
  double mean = 0.0;
  double standard_error = 0.0;
};

// Mean and standard error (sample sd / sqrt(k)) of per-split scores.
SplitSummary aggregate_splits(std::span<const double> scores);

}  // namespace cirrus
