#include "cirrus/synth.h"

#include <ATen/CPUGeneratorImpl.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace cirrus {
namespace {

// Improved gradient noise on a seeded permutation table.
class GradientNoise {
 public:
  explicit GradientNoise(std::mt19937_64& rng) {
    std::array<uint8_t, 256> p{};
    std::iota(p.begin(), p.end(), 0);
    for (size_t i = p.size() - 1; i > 0; --i) {
      const auto j = static_cast<size_t>(rng() % (i + 1));
      std::swap(p[i], p[j]);
    }
    for (size_t i = 0; i < 512; ++i) perm_[i] = p[i & 255];
  }

  double operator()(double x, double y) const {
    const double fx = std::floor(x);
    const double fy = std::floor(y);
    const int xi = static_cast<int>(static_cast<int64_t>(fx) & 255);
    const int yi = static_cast<int>(static_cast<int64_t>(fy) & 255);
    x -= fx;
    y -= fy;
    const double u = fade(x);
    const double v = fade(y);
    const int aa = perm_[perm_[xi] + yi];
    const int ab = perm_[perm_[xi] + yi + 1];
    const int ba = perm_[perm_[xi + 1] + yi];
    const int bb = perm_[perm_[xi + 1] + yi + 1];
    const double x1 = lerp(grad(aa, x, y), grad(ba, x - 1, y), u);
    const double x2 = lerp(grad(ab, x, y - 1), grad(bb, x - 1, y - 1), u);
    return lerp(x1, x2, v);
  }

  double fbm(double x, double y, int octaves) const {
    double sum = 0.0, amp = 1.0, norm = 0.0, freq = 1.0;
    for (int o = 0; o < octaves; ++o) {
      sum += amp * (*this)(x * freq, y * freq);
      norm += amp;
      amp *= 0.5;
      freq *= 2.0;
    }
    return sum / norm;
  }

 private:
  static double fade(double t) { return t * t * t * (t * (t * 6 - 15) + 10); }
  static double lerp(double a, double b, double t) { return a + t * (b - a); }
  static double grad(int hash, double x, double y) {
    switch (hash & 7) {
      case 0: return x + y;
      case 1: return -x + y;
      case 2: return x - y;
      case 3: return -x - y;
      case 4: return x;
      case 5: return -x;
      case 6: return y;
      default: return -y;
    }
  }

  std::array<int, 512> perm_{};
};

torch::Tensor to_tensor(std::vector<float>& data, int64_t h, int64_t w) {
  return torch::from_blob(data.data(), {h, w}, torch::kFloat32).clone();
}

void validate_annotators(const std::vector<Annotator>& annotators) {
  if (annotators.empty()) throw std::invalid_argument("consensus needs at least one annotator");
  for (const auto& a : annotators) {
    if (!(a.threshold > 0.0 && a.threshold < 1.0)) throw std::invalid_argument("annotator threshold must lie in (0, 1)");
    if (!(a.weight > 0.0)) throw std::invalid_argument("annotator weight must be positive");
    if (a.jitter < 0.0) throw std::invalid_argument("annotator jitter must be non-negative");
  }
}

}  // namespace

uint64_t splitmix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::vector<Annotator> default_annotators() {
  return {{0.50, 1.5, 2.0}, {0.55, 1.5, 2.0}, {0.40, 3.0, 1.0}, {0.60, 3.0, 1.0}};
}

CirrusSample generate_cirrus_sample(uint64_t seed, const CirrusParams& params) {
  if (params.size < 64) throw std::invalid_argument("synthetic samples need size >= 64");
  const auto n = params.size;
  std::mt19937_64 rng(splitmix64(seed));
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  CirrusSample sample;
  sample.seed = seed;
  const bool drawn = unit(rng) < params.prevalence;
  sample.has_cirrus = params.cirrus_present.value_or(drawn);
  sample.orientation = unit(rng) * std::numbers::pi;

  GradientNoise envelope_noise(rng);
  GradientNoise filament_noise(rng);
  const double ox = unit(rng) * 64.0, oy = unit(rng) * 64.0;
  const double fx = unit(rng) * 64.0, fy = unit(rng) * 64.0;
  const double gx = (2.0 * unit(rng) - 1.0) * params.background_gradient;
  const double gy = (2.0 * unit(rng) - 1.0) * params.background_gradient;

  const auto pixels = static_cast<size_t>(n * n);
  std::vector<float> image(pixels, 0.0f), intensity(pixels, 0.0f);

  if (sample.has_cirrus) {
    const double c = std::cos(sample.orientation), s = std::sin(sample.orientation);
    std::vector<double> envelope(pixels), texture(pixels);
    for (int64_t r = 0; r < n; ++r) {
      for (int64_t q = 0; q < n; ++q) {
        const double px = (static_cast<double>(q) + 0.5) / static_cast<double>(n) - 0.5;
        const double py = (static_cast<double>(r) + 0.5) / static_cast<double>(n) - 0.5;
        const double along = px * c + py * s;
        const double across = -px * s + py * c + params.shear * along * along;
        const auto i = static_cast<size_t>(r * n + q);
        envelope[i] = envelope_noise.fbm(along * params.envelope_frequency / params.envelope_stretch + ox,
                                         across * params.envelope_frequency + oy, params.envelope_octaves);
        const double t = filament_noise.fbm(along * params.filament_frequency / params.filament_anisotropy + fx,
                                            across * params.filament_frequency + fy, params.filament_octaves);
        texture[i] = std::pow(std::clamp(0.5 + t, 0.0, 1.0), params.gamma);
      }
    }
    // Place the 0.5 intensity level at the requested coverage quantile.
    std::vector<double> sorted(envelope);
    const auto k = static_cast<size_t>(std::clamp((1.0 - params.coverage) * static_cast<double>(pixels), 0.0,
                                                  static_cast<double>(pixels - 1)));
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k), sorted.end());
    const double level = sorted[k];
    const double mean = std::accumulate(envelope.begin(), envelope.end(), 0.0) / static_cast<double>(pixels);
    double var = 0.0;
    for (double e : envelope) var += (e - mean) * (e - mean);
    const double spread = std::max(std::sqrt(var / static_cast<double>(pixels)), 1e-6);
    for (size_t i = 0; i < pixels; ++i) {
      const double level_i = std::clamp(0.5 + 0.5 * (envelope[i] - level) / spread, 0.0, 1.0);
      intensity[i] = static_cast<float>(level_i);
      image[i] = static_cast<float>(params.cirrus_amplitude * level_i * (0.5 + 0.5 * texture[i]));
    }
  }

  std::normal_distribution<double> read(0.0, params.read_noise);
  for (int64_t r = 0; r < n; ++r) {
    for (int64_t q = 0; q < n; ++q) {
      const auto i = static_cast<size_t>(r * n + q);
      const double bx = static_cast<double>(q) / static_cast<double>(n - 1) - 0.5;
      const double by = static_cast<double>(r) / static_cast<double>(n - 1) - 0.5;
      image[i] += static_cast<float>(params.background + gx * bx + gy * by + read(rng));
    }
  }

  // Point sources with a Gaussian PSF.
  const auto mean_stars = params.stars_per_4096px * static_cast<double>(pixels) / 4096.0;
  const auto stars = static_cast<int64_t>(std::llround(mean_stars * (0.5 + unit(rng))));
  const double sigma = params.star_sigma;
  const auto radius = static_cast<int64_t>(std::ceil(4.0 * sigma));
  for (int64_t k = 0; k < stars; ++k) {
    const double cx = unit(rng) * static_cast<double>(n);
    const double cy = unit(rng) * static_cast<double>(n);
    const double flux = 0.2 * std::pow(std::max(unit(rng), 0.02), -0.7);
    const auto x0 = static_cast<int64_t>(cx), y0 = static_cast<int64_t>(cy);
    for (int64_t r = std::max<int64_t>(0, y0 - radius); r <= std::min(n - 1, y0 + radius); ++r) {
      for (int64_t q = std::max<int64_t>(0, x0 - radius); q <= std::min(n - 1, x0 + radius); ++q) {
        const double dx = static_cast<double>(q) + 0.5 - cx, dy = static_cast<double>(r) + 0.5 - cy;
        image[static_cast<size_t>(r * n + q)] += static_cast<float>(flux * std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma)));
      }
    }
  }

  // Hot pixels.
  std::poisson_distribution<int64_t> hot(params.hot_pixel_rate * static_cast<double>(pixels));
  const auto hot_count = hot(rng);
  for (int64_t k = 0; k < hot_count; ++k) {
    const auto i = static_cast<size_t>(rng() % pixels);
    image[i] += static_cast<float>(0.5 + 0.5 * unit(rng));
  }

  sample.image = to_tensor(image, n, n);
  sample.intensity = to_tensor(intensity, n, n);
  if (sample.has_cirrus) {
    sample.consensus = simulate_consensus(sample.intensity, params.annotators, splitmix64(seed ^ 0xA5A5A5A5A5A5A5A5ULL));
  } else {
    validate_annotators(params.annotators);
    sample.consensus = torch::zeros({n, n}, torch::kFloat32);
  }
  return sample;
}

torch::Tensor simulate_consensus(const torch::Tensor& intensity, const std::vector<Annotator>& annotators,
                                 uint64_t seed) {
  validate_annotators(annotators);
  TORCH_CHECK(intensity.dim() == 2, "intensity must be [H, W]");
  const auto h = intensity.size(0), w = intensity.size(1);
  auto src = intensity.to(torch::kFloat32).view({1, 1, h, w});
  auto ys = torch::linspace(-1.0, 1.0, h, torch::kFloat32).view({h, 1}).expand({h, w});
  auto xs = torch::linspace(-1.0, 1.0, w, torch::kFloat32).view({1, w}).expand({h, w});

  constexpr int64_t kCoarse = 6;
  double total = 0.0;
  auto votes = torch::zeros({h, w}, torch::kFloat32);
  for (size_t i = 0; i < annotators.size(); ++i) {
    const auto& a = annotators[i];
    std::mt19937_64 rng(splitmix64(seed + i));
    std::normal_distribution<float> jitter(0.0f, static_cast<float>(a.jitter));
    std::vector<float> coarse(2 * kCoarse * kCoarse);
    for (auto& v : coarse) v = jitter(rng);
    auto field = torch::from_blob(coarse.data(), {1, 2, kCoarse, kCoarse}, torch::kFloat32);
    field = torch::upsample_bilinear2d(field, {h, w}, /*align_corners=*/true)[0];
    auto gx = xs + field[0] * (2.0f / static_cast<float>(std::max<int64_t>(w - 1, 1)));
    auto gy = ys + field[1] * (2.0f / static_cast<float>(std::max<int64_t>(h - 1, 1)));
    auto grid = torch::stack({gx, gy}, -1).unsqueeze(0);
    auto sampled = torch::grid_sampler(src, grid, /*bilinear*/ 0, /*border*/ 1, /*align_corners=*/true)[0][0];
    votes += a.weight * (sampled >= a.threshold).to(torch::kFloat32);
    total += a.weight;
  }
  return (votes / total).clamp(0.0, 1.0);
}

AugmentTransform sample_transform(std::mt19937_64& rng, const AugmentOptions& options) {
  AugmentTransform t;
  std::bernoulli_distribution coin(0.5);
  if (options.flips) {
    t.flip_horizontal = coin(rng);
    t.flip_vertical = coin(rng);
  }
  if (options.rotations) t.rotations = std::uniform_int_distribution<int>(0, 3)(rng);
  if (options.max_translation > 0) {
    std::uniform_int_distribution<int64_t> shift(-options.max_translation, options.max_translation);
    t.shift_y = shift(rng);
    t.shift_x = shift(rng);
  }
  return t;
}

torch::Tensor apply_transform(const torch::Tensor& t, const AugmentTransform& tr) {
  TORCH_CHECK(t.dim() >= 2, "transform needs at least two axes");
  auto x = t;
  if (tr.flip_horizontal) x = torch::flip(x, {-1});
  if (tr.flip_vertical) x = torch::flip(x, {-2});
  if (tr.rotations % 4 != 0) x = torch::rot90(x, tr.rotations, {-2, -1});
  if (tr.shift_y == 0 && tr.shift_x == 0) return x.contiguous();
  const auto h = x.size(-2), w = x.size(-1);
  TORCH_CHECK(std::abs(tr.shift_y) < h && std::abs(tr.shift_x) < w, "shift exceeds the image");
  const auto sizes = x.sizes().vec();
  auto flat = x.reshape({1, -1, h, w});
  const auto top = std::max<int64_t>(tr.shift_y, 0), bottom = std::max<int64_t>(-tr.shift_y, 0);
  const auto left = std::max<int64_t>(tr.shift_x, 0), right = std::max<int64_t>(-tr.shift_x, 0);
  auto padded = torch::reflection_pad2d(flat, {left, right, top, bottom});
  auto out = padded.slice(2, top - tr.shift_y, top - tr.shift_y + h).slice(3, left - tr.shift_x, left - tr.shift_x + w);
  return out.reshape(sizes).contiguous();
}

torch::Tensor invert_transform(const torch::Tensor& t, const AugmentTransform& tr) {
  auto x = t;
  if (tr.rotations % 4 != 0) x = torch::rot90(x, -tr.rotations, {-2, -1});
  if (tr.flip_vertical) x = torch::flip(x, {-2});
  if (tr.flip_horizontal) x = torch::flip(x, {-1});
  return x.contiguous();
}

torch::Tensor gaussian_noise(at::IntArrayRef sizes, double variance, std::mt19937_64& rng) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(rng());
  return torch::randn(sizes, gen, torch::kFloat32) * std::sqrt(variance);
}

std::pair<torch::Tensor, torch::Tensor> augment(const torch::Tensor& image, const torch::Tensor& mask,
                                                std::mt19937_64& rng, const AugmentOptions& options) {
  TORCH_CHECK(image.sizes().slice(image.dim() - 2) == mask.sizes().slice(mask.dim() - 2),
              "augment: image and mask sizes differ");
  const auto transform = sample_transform(rng, options);
  auto img = apply_transform(image, transform);
  auto msk = apply_transform(mask, transform);
  if (options.noise_variance > 0.0) img = img + gaussian_noise(img.sizes(), options.noise_variance, rng);
  return {img, msk};
}

}  // namespace cirrus
