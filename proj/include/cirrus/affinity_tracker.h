#pragma once

#include <atomic>
#include <cstdint>

#include <torch/torch.h>

namespace cirrus {

// Counts live positional-affinity elements. Buffers handed out by
// allocate() decrement the counter from their storage deleter, so the
// peak reflects real tensor lifetimes rather than call scopes.
class AffinityTracker {
 public:
  static AffinityTracker& instance();

  // Float buffer of the requested shape, counted until its storage is freed.
  torch::Tensor allocate(at::IntArrayRef sizes, torch::ScalarType dtype);

  int64_t live() const { return live_.load(); }
  int64_t peak() const { return peak_.load(); }
  void reset_peak() { peak_.store(live_.load()); }

 private:
  void add(int64_t n);
  void release(int64_t n) { live_.fetch_sub(n); }

  std::atomic<int64_t> live_{0};
  std::atomic<int64_t> peak_{0};
};

// Resets the peak on entry; peak() reads the high-water mark since then.
class AffinityPeakScope {
 public:
  AffinityPeakScope() { AffinityTracker::instance().reset_peak(); }
  int64_t peak() const { return AffinityTracker::instance().peak(); }
};

}  // namespace cirrus
