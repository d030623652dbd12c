#pragma once

#include <cstdint>
#include <string>

#include "cirrus/gridded.h"

namespace cirrus {

struct BenchmarkRow {
  int64_t side = 0;
  ScaleSet scales;
  int64_t tile_size = 0;
  AttentionCost cost;
  // Peak live positional-affinity elements over one inference pass.
  int64_t measured_peak = 0;
};

// Runs a no-grad gridded attention pass over random features of the given
// side per scale and reports analytic cost plus the measured peak.
BenchmarkRow run_benchmark(int64_t side, const ScaleSet& scales, int64_t tile_size, int64_t channels = 8,
                           int64_t tile_batch = 1, uint64_t seed = 0);

std::string benchmark_csv_header();
std::string benchmark_csv_row(const BenchmarkRow& row);

}  // namespace cirrus
