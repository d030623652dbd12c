#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "cirrus/synth.h"

namespace cirrus {

// Named float32 arrays in one binary file (layout in docs/FORMATS.md).
using ArrayMap = std::map<std::string, torch::Tensor>;
void write_arrays(const std::filesystem::path& path, const ArrayMap& arrays);
ArrayMap read_arrays(const std::filesystem::path& path);

enum class Split { Train, Val, Test };
std::string to_string(Split s);
Split parse_split(const std::string& s);

struct SampleRecord {
  int64_t id = 0;
  uint64_t seed = 0;
  Split split = Split::Train;
  double coverage = 0.0;  // fraction of consensus pixels >= 0.5
  bool has_cirrus = false;
  std::string file;
};

struct SplitFractions {
  double train = 0.7;
  double val = 0.15;
  double test = 0.15;
};

struct DatasetOptions {
  uint64_t base_seed = 1;
  SplitFractions split{};
  CirrusParams params{};
};

struct Manifest {
  DatasetOptions options;
  std::vector<SampleRecord> records;

  std::vector<SampleRecord> in_split(Split s) const;
};

// Sizes per split: train = round(f_train n), val = round(f_val n), test = rest.
std::array<int64_t, 3> split_sizes(int64_t n, const SplitFractions& f);

// Generates n samples into dir (sample_XXXXX.cma + manifest.tsv).
Manifest make_dataset(int64_t n, const std::filesystem::path& dir, const DatasetOptions& options = {});

void write_manifest(const std::filesystem::path& path, const Manifest& manifest);
Manifest read_manifest(const std::filesystem::path& path);

CirrusSample load_sample(const std::filesystem::path& dir, const SampleRecord& record);
std::vector<CirrusSample> load_split(const std::filesystem::path& dir, Split split);

}  // namespace cirrus
