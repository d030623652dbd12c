#include "cirrus/benchmark.h"

#include <iomanip>
#include <sstream>

#include "cirrus/affinity_tracker.h"

namespace cirrus {

BenchmarkRow run_benchmark(int64_t side, const ScaleSet& scales, int64_t tile_size, int64_t channels,
                           int64_t tile_batch, uint64_t seed) {
  BenchmarkRow row;
  row.side = side;
  row.scales = scales;
  row.tile_size = tile_size;
  row.cost = attention_cost(side, scales, tile_size);

  torch::manual_seed(seed);
  TriAttentionOptions tri(channels);
  tri.gabor.bank = GaborBankOptions::for_kernel(4, 3);
  tri.gabor.orientation_channels = 1;
  GriddedAttention attention(scales, tri, GriddedAttentionOptions{tile_size, tile_batch});
  attention->eval();
  std::vector<torch::Tensor> maps;
  for (auto f : scales.factors()) {
    const auto s = (side + f - 1) / f;
    maps.push_back(torch::randn({1, channels, s, s}));
  }
  torch::NoGradGuard no_grad;
  AffinityPeakScope scope;
  // Branches run one after another, so each branch's tiles bound the peak.
  for (size_t i = 0; i < maps.size(); ++i) (void)attention->attend_branch(i, maps[i]);
  row.measured_peak = scope.peak();
  return row;
}

std::string benchmark_csv_header() { return "side,scales,T,tiles,gridded_entries,full_entries,ratio,measured_peak"; }

std::string benchmark_csv_row(const BenchmarkRow& row) {
  std::ostringstream os;
  os << row.side << ",\"" << row.scales.to_string() << "\"," << row.tile_size << ',' << row.cost.tile_count << ','
     << row.cost.gridded_entries << ',' << row.cost.full_entries << ',' << std::setprecision(17) << row.cost.ratio
     << ',' << row.measured_peak;
  return os.str();
}

}  // namespace cirrus
