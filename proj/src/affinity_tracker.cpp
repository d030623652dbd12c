#include "cirrus/affinity_tracker.h"

#include <cstdlib>
#include <new>

namespace cirrus {

AffinityTracker& AffinityTracker::instance() {
  static AffinityTracker tracker;
  return tracker;
}

void AffinityTracker::add(int64_t n) {
  const auto now = live_.fetch_add(n) + n;
  auto prev = peak_.load();
  while (now > prev && !peak_.compare_exchange_weak(prev, now)) {
  }
}

torch::Tensor AffinityTracker::allocate(at::IntArrayRef sizes, torch::ScalarType dtype) {
  int64_t numel = 1;
  for (auto s : sizes) numel *= s;
  const auto bytes = static_cast<size_t>(numel) * c10::elementSize(dtype);
  void* data = std::malloc(bytes == 0 ? 1 : bytes);
  if (data == nullptr) throw std::bad_alloc();
  add(numel);
  return torch::from_blob(
      data, sizes,
      [numel](void* p) {
        std::free(p);
        AffinityTracker::instance().release(numel);
      },
      torch::TensorOptions().dtype(dtype));
}

}  // namespace cirrus
