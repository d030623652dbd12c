#include "cirrus/gridded.h"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace cirrus {
namespace {

int64_t ceil_div(int64_t a, int64_t b) { return (a + b - 1) / b; }

double parse_fraction(const std::string& token) {
  const auto slash = token.find('/');
  size_t used = 0;
  if (slash == std::string::npos) {
    const double v = std::stod(token, &used);
    if (used != token.size()) throw std::invalid_argument("bad scale '" + token + "'");
    return v;
  }
  const double num = std::stod(token.substr(0, slash));
  const double den = std::stod(token.substr(slash + 1));
  return num / den;
}

}  // namespace

ScaleSet::ScaleSet(std::vector<int64_t> factors) : factors_(std::move(factors)) {
  if (factors_.empty()) throw std::invalid_argument("scale set is empty");
  if (factors_[0] != 1) throw std::invalid_argument("scale set must start at full scale (factor 1)");
  if (factors_.size() > 1) {
    const auto r = factors_[1];
    if (r < 2) throw std::invalid_argument("adjacent scales must differ by an integer factor >= 2");
    for (size_t i = 1; i < factors_.size(); ++i)
      if (factors_[i] != factors_[i - 1] * r)
        throw std::invalid_argument("scales must share a common factor between neighbours");
  }
}

ScaleSet ScaleSet::from_fractions(const std::vector<double>& fractions) {
  if (fractions.empty()) throw std::invalid_argument("scale set is empty");
  std::vector<int64_t> factors;
  for (double f : fractions) {
    if (!(f > 0.0) || f > 1.0) throw std::invalid_argument("scale fractions must lie in (0, 1]");
    const double inv = 1.0 / f;
    const auto rounded = static_cast<int64_t>(std::llround(inv));
    if (std::abs(inv - static_cast<double>(rounded)) > 1e-9 * inv)
      throw std::invalid_argument("non-integer rescale factor 1/" + std::to_string(f));
    factors.push_back(rounded);
  }
  return ScaleSet(std::move(factors));
}

ScaleSet ScaleSet::parse(const std::string& text) {
  std::vector<double> fractions;
  std::stringstream ss(text);
  std::string token;
  while (std::getline(ss, token, ',')) {
    token.erase(0, token.find_first_not_of(" \t"));
    token.erase(token.find_last_not_of(" \t") + 1);
    if (!token.empty()) fractions.push_back(parse_fraction(token));
  }
  return from_fractions(fractions);
}

std::string ScaleSet::to_string() const {
  std::string out;
  for (size_t i = 0; i < factors_.size(); ++i) {
    if (i) out += ',';
    out += factors_[i] == 1 ? "1" : "1/" + std::to_string(factors_[i]);
  }
  return out;
}

MultiScaleFeatureSet build_ms_features(const torch::Tensor& image, const BackboneFn& backbone, const ScaleSet& scales) {
  TORCH_CHECK(image.dim() == 4, "image must be [B, C, H, W], got ", image.sizes());
  MultiScaleFeatureSet set;
  set.scales = scales;
  for (auto f : scales.factors()) {
    if (image.size(2) % f != 0 || image.size(3) % f != 0)
      throw std::invalid_argument("image side " + std::to_string(image.size(2)) + "x" + std::to_string(image.size(3)) +
                                  " is not divisible by scale factor " + std::to_string(f));
    auto scaled = f == 1 ? image : torch::avg_pool2d(image, f);
    set.maps.push_back(backbone(scaled));
  }
  return set;
}

torch::Tensor rescale(const torch::Tensor& map, int64_t height, int64_t width) {
  const auto h = map.size(2);
  const auto w = map.size(3);
  if (h == height && w == width) return map;
  if (height >= h && width >= w) {
    return torch::upsample_bilinear2d(map, {height, width}, /*align_corners=*/false);
  }
  if (h % height == 0 && w % width == 0 && h / height == w / width) return torch::avg_pool2d(map, h / height);
  return torch::adaptive_avg_pool2d(map, {height, width});
}

FeatureFusionImpl::FeatureFusionImpl(int64_t channels, int64_t num_scales) : channels_(channels), num_scales_(num_scales) {
  reduce = register_module("reduce",
                           torch::nn::Conv2d(torch::nn::Conv2dOptions(channels * num_scales, channels, 1)));
}

torch::Tensor FeatureFusionImpl::fuse(const std::vector<torch::Tensor>& maps) {
  TORCH_CHECK(static_cast<int64_t>(maps.size()) == num_scales_, "fusion expects ", num_scales_, " maps, got ",
              maps.size());
  const auto h = maps.front().size(2);
  const auto w = maps.front().size(3);
  std::vector<torch::Tensor> aligned;
  for (const auto& m : maps) {
    TORCH_CHECK(m.size(1) == channels_, "fusion channel mismatch: expected ", channels_, ", got ", m.size(1));
    aligned.push_back(rescale(m, h, w));
  }
  return reduce(torch::cat(aligned, 1));
}

void FeatureFusionImpl::forward(MultiScaleFeatureSet& set) {
  set.fused = fuse(set.maps);
  set.working.clear();
  for (const auto& m : set.maps) set.working.push_back(torch::cat({m, rescale(set.fused, m.size(2), m.size(3))}, 1));
}

TileGrid tile(const torch::Tensor& map, int64_t tile_size, int64_t scale_factor) {
  if (tile_size <= 0) throw std::invalid_argument("tile size must be positive");
  TORCH_CHECK(map.dim() == 4, "tile expects [B, C, H, W], got ", map.sizes());
  TileGrid grid;
  grid.tile_size = tile_size;
  grid.height = map.size(2);
  grid.width = map.size(3);
  grid.rows = ceil_div(grid.height, tile_size);
  grid.cols = ceil_div(grid.width, tile_size);
  grid.scale_factor = scale_factor;
  auto padded = torch::constant_pad_nd(map, {0, grid.pad_right(), 0, grid.pad_bottom()}, 0.0);
  const auto b = map.size(0);
  const auto c = map.size(1);
  grid.tiles = padded.view({b, c, grid.rows, tile_size, grid.cols, tile_size})
                   .permute({2, 4, 0, 1, 3, 5})
                   .reshape({grid.count(), b, c, tile_size, tile_size});
  return grid;
}

torch::Tensor untile(const TileGrid& grid, const torch::Tensor& tiles) {
  TORCH_CHECK(tiles.dim() == 5 && tiles.size(0) == grid.count(), "untile expects [", grid.count(),
              ", B, C, T, T] tiles, got ", tiles.sizes());
  const auto t = grid.tile_size;
  const auto b = tiles.size(1);
  const auto c = tiles.size(2);
  auto full = tiles.view({grid.rows, grid.cols, b, c, t, t})
                  .permute({2, 3, 0, 4, 1, 5})
                  .reshape({b, c, grid.rows * t, grid.cols * t});
  return full.slice(2, 0, grid.height).slice(3, 0, grid.width).contiguous();
}

torch::Tensor untile(const TileGrid& grid) { return untile(grid, grid.tiles); }

UpscaleBlockImpl::UpscaleBlockImpl(int64_t channels, int64_t factor) : factor_(factor) {
  conv = register_module("conv", torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, channels, 3).padding(1)));
}

torch::Tensor UpscaleBlockImpl::forward(const torch::Tensor& x) {
  auto up = torch::upsample_nearest2d(x, {x.size(2) * factor_, x.size(3) * factor_});
  return conv(up);
}

GriddedAttentionImpl::GriddedAttentionImpl(const ScaleSet& scales, const TriAttentionOptions& attention,
                                           GriddedAttentionOptions options)
    : scales_(scales), options_(options) {
  if (options_.tile_size < 0) throw std::invalid_argument("tile size must be non-negative");
  for (size_t i = 0; i < scales_.size(); ++i)
    branches.push_back(register_module("branch" + std::to_string(i), TriAttention(attention)));
  for (size_t i = 0; i + 1 < scales_.size(); ++i)
    upscale.push_back(register_module("upscale" + std::to_string(i), UpscaleBlock(attention.channels, scales_.ratio())));
}

torch::Tensor GriddedAttentionImpl::attend_branch(size_t i, const torch::Tensor& map) {
  TORCH_CHECK(i < branches.size(), "no attention branch for scale index ", i);
  auto& branch = branches[i];
  if (options_.tile_size == 0) return branch(map);
  auto grid = tile(map, options_.tile_size, scales_.factor(i));
  const auto n = grid.count();
  const auto step = options_.tile_batch <= 0 ? n : std::min(options_.tile_batch, n);
  const auto b = map.size(0);
  const auto c = map.size(1);
  const auto t = grid.tile_size;
  std::vector<torch::Tensor> outs;
  outs.reserve(static_cast<size_t>(ceil_div(n, step)));
  for (int64_t start = 0; start < n; start += step) {
    const auto k = std::min(step, n - start);
    auto chunk = grid.tiles.slice(0, start, start + k).reshape({k * b, c, t, t});
    outs.push_back(branch(chunk).view({k, b, c, t, t}));
  }
  return untile(grid, torch::cat(outs, 0));
}

torch::Tensor GriddedAttentionImpl::realign(size_t i, torch::Tensor map) {
  for (size_t j = i; j > 0; --j) map = upscale[j - 1](map);
  return map;
}

std::vector<torch::Tensor> GriddedAttentionImpl::forward(const std::vector<torch::Tensor>& working) {
  TORCH_CHECK(working.size() == branches.size(), "gridded attention has ", branches.size(), " branches but got ",
              working.size(), " maps");
  std::vector<torch::Tensor> out;
  out.reserve(working.size());
  for (size_t i = 0; i < working.size(); ++i) out.push_back(realign(i, attend_branch(i, working[i])));
  return out;
}

AttentionCost attention_cost(int64_t side, const ScaleSet& scales, int64_t tile_size) {
  if (tile_size <= 0) throw std::invalid_argument("tile size must be positive");
  if (side <= 0) throw std::invalid_argument("side must be positive");
  AttentionCost cost;
  for (auto f : scales.factors()) {
    const auto per_side = ceil_div(ceil_div(side, f), tile_size);
    cost.tile_count += per_side * per_side;
  }
  const auto t2 = tile_size * tile_size;
  cost.gridded_entries = cost.tile_count * t2 * t2;
  cost.full_entries = side * side * side * side;
  cost.ratio = static_cast<double>(cost.gridded_entries) / static_cast<double>(cost.full_entries);
  return cost;
}

}  // namespace cirrus
