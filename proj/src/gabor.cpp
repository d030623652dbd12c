#include "cirrus/gabor.h"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace cirrus {
namespace {

void validate(const GaborBankOptions& o) {
  if (o.orientations < 1) throw std::invalid_argument("gabor bank needs at least one orientation");
  if (o.kernel_size < 1 || o.kernel_size % 2 == 0)
    throw std::invalid_argument("gabor kernel size must be odd, got " + std::to_string(o.kernel_size));
  if (!(o.wavelength > 0.0)) throw std::invalid_argument("gabor wavelength must be positive");
  if (!(o.envelope_sigma > 0.0)) throw std::invalid_argument("gabor sigma must be positive");
  if (!(o.aspect > 0.0)) throw std::invalid_argument("gabor aspect ratio must be positive");
}

}  // namespace

GaborBankOptions GaborBankOptions::for_kernel(int64_t orientations, int64_t kernel_size) {
  GaborBankOptions o;
  o.orientations = orientations;
  o.kernel_size = kernel_size;
  o.wavelength = static_cast<double>(kernel_size - 1);
  o.envelope_sigma = 0.5 * o.wavelength;
  return o;
}

torch::Tensor gabor_filters(const GaborBankOptions& o, const torch::Tensor& wavelength,
                            const torch::Tensor& envelope_sigma) {
  validate(o);
  const auto k = o.kernel_size;
  const auto opts = torch::TensorOptions().dtype(wavelength.scalar_type());
  const double half = static_cast<double>(k / 2);
  // rows index y, cols index x, both centred on the kernel.
  auto coords = torch::arange(k, opts) - half;
  auto y = coords.view({k, 1}).expand({k, k});
  auto x = coords.view({1, k}).expand({k, k});

  std::vector<torch::Tensor> planes;
  planes.reserve(static_cast<size_t>(o.orientations));
  for (int64_t u = 0; u < o.orientations; ++u) {
    const double theta = static_cast<double>(u) * std::numbers::pi / static_cast<double>(o.orientations);
    auto xr = x * std::cos(theta) + y * std::sin(theta);
    auto yr = -x * std::sin(theta) + y * std::cos(theta);
    auto envelope = torch::exp(-(xr * xr + o.aspect * o.aspect * yr * yr) /
                               (2.0 * envelope_sigma * envelope_sigma));
    auto carrier = torch::cos(2.0 * std::numbers::pi * xr / wavelength + o.phase);
    auto g = envelope * carrier;
    planes.push_back(g / g.abs().max());
  }
  return torch::stack(planes);
}

GaborBank make_gabor_bank(const GaborBankOptions& options) {
  validate(options);
  GaborBank bank;
  bank.options = options;
  bank.angles.reserve(static_cast<size_t>(options.orientations));
  for (int64_t u = 0; u < options.orientations; ++u)
    bank.angles.push_back(static_cast<double>(u) * std::numbers::pi / static_cast<double>(options.orientations));
  torch::NoGradGuard no_grad;
  const auto f64 = torch::TensorOptions().dtype(torch::kFloat64);
  bank.filters = gabor_filters(options, torch::tensor(options.wavelength, f64),
                               torch::tensor(options.envelope_sigma, f64));
  return bank;
}

torch::Tensor modulate_kernels(const torch::Tensor& base, const torch::Tensor& filters) {
  TORCH_CHECK(base.dim() == 4, "base kernel stack must be [C_out, C_in, k, k]");
  TORCH_CHECK(filters.dim() == 3, "filter stack must be [G, k, k]");
  TORCH_CHECK(base.size(2) == filters.size(1) && base.size(3) == filters.size(2),
              "kernel size mismatch: base ", base.size(2), "x", base.size(3), " vs bank ", filters.size(1), "x",
              filters.size(2));
  const auto g = filters.size(0);
  auto planes = base.unsqueeze(0) * filters.to(base.scalar_type()).view({g, 1, 1, filters.size(1), filters.size(2)});
  return planes.reshape({g * base.size(0), base.size(1), base.size(2), base.size(3)});
}

GaborConv2dImpl::GaborConv2dImpl(GaborConv2dOptions options) : options_(std::move(options)) { reset(); }

void GaborConv2dImpl::reset() {
  const auto& b = options_.bank();
  validate(b);
  const auto k = b.kernel_size;
  base_weight = register_parameter("base_weight", torch::empty({options_.out_channels(), options_.in_channels(), k, k}));
  torch::nn::init::kaiming_uniform_(base_weight, std::sqrt(5.0));
  auto bank = make_gabor_bank(b);
  if (options_.learnable_bank()) {
    wavelength = register_parameter("wavelength", torch::tensor(b.wavelength, torch::kFloat32));
    envelope_sigma = register_parameter("envelope_sigma", torch::tensor(b.envelope_sigma, torch::kFloat32));
  } else {
    bank_filters = register_buffer("bank_filters", bank.filters.to(torch::kFloat32));
  }
}

torch::Tensor GaborConv2dImpl::filters() const {
  if (options_.learnable_bank()) return gabor_filters(options_.bank(), wavelength, envelope_sigma);
  return bank_filters;
}

torch::Tensor GaborConv2dImpl::modulate() const { return modulate_kernels(base_weight, filters()); }

torch::Tensor GaborConv2dImpl::forward(const torch::Tensor& x) {
  TORCH_CHECK(x.dim() == 4, "gabor_conv expects [B, C, H, W], got ", x.sizes());
  TORCH_CHECK(x.size(1) == options_.in_channels(), "gabor_conv channel mismatch: layer takes ",
              options_.in_channels(), ", input has ", x.size(1));
  const auto k = options_.bank().kernel_size;
  TORCH_CHECK(x.size(2) + 2 * options_.padding() >= k && x.size(3) + 2 * options_.padding() >= k,
              "gabor_conv input smaller than kernel");
  auto y = torch::conv2d(x, modulate(), {}, options_.stride(), options_.padding());
  return y.view({y.size(0), options_.bank().orientations, options_.out_channels(), y.size(2), y.size(3)});
}

}  // namespace cirrus
