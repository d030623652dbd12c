#pragma once

#include <cstdint>
#include <vector>

#include <torch/torch.h>

namespace cirrus {

// Parameters of a real-valued Gabor filter bank. Defaults follow the
// Gabor-CNN convention: lambda = k - 1, sigma = lambda / 2, psi = 0.
struct GaborBankOptions {
  int64_t orientations = 4;
  int64_t kernel_size = 5;
  double wavelength = 4.0;
  double envelope_sigma = 2.0;
  double phase = 0.0;
  double aspect = 1.0;

  // Fills wavelength/sigma from the kernel size (lambda = k - 1, sigma = lambda / 2).
  static GaborBankOptions for_kernel(int64_t orientations, int64_t kernel_size);
};

// G oriented filters, each k x k, normalized so max |g| = 1.
struct GaborBank {
  GaborBankOptions options;
  std::vector<double> angles;  // angles[u] = u * pi / G
  torch::Tensor filters;       // [G, k, k], float64

  int64_t orientations() const { return options.orientations; }
  int64_t kernel_size() const { return options.kernel_size; }
};

// Throws std::invalid_argument for G == 0, even k, or non-positive lambda/sigma.
GaborBank make_gabor_bank(const GaborBankOptions& options);

// Differentiable construction of the filter stack [G, k, k] from tensor-valued
// wavelength and sigma (used by the learnable-bank option).
torch::Tensor gabor_filters(const GaborBankOptions& options, const torch::Tensor& wavelength,
                            const torch::Tensor& envelope_sigma);

struct GaborConv2dOptions {
  GaborConv2dOptions(int64_t in_channels, int64_t out_channels, GaborBankOptions bank)
      : in_channels_(in_channels), out_channels_(out_channels), bank_(bank) {}

  TORCH_ARG(int64_t, in_channels);
  // Output channels per orientation.
  TORCH_ARG(int64_t, out_channels);
  TORCH_ARG(GaborBankOptions, bank);
  TORCH_ARG(int64_t, stride) = 1;
  TORCH_ARG(int64_t, padding) = 0;
  // Registers wavelength and sigma as parameters and rebuilds the bank per forward.
  TORCH_ARG(bool, learnable_bank) = false;
};

// Convolution whose base kernel stack is multiplied element-wise by each
// filter of a Gabor bank. Output is orientation-major: [B, G, C_out, H', W'].
class GaborConv2dImpl : public torch::nn::Cloneable<GaborConv2dImpl> {
 public:
  explicit GaborConv2dImpl(GaborConv2dOptions options);

  void reset() override;

  // Effective kernel stack [G * C_out, C_in, k, k]; plane (u, c) = base[c] * filter[u].
  torch::Tensor modulate() const;

  torch::Tensor forward(const torch::Tensor& x);

  // Current filter stack [G, k, k] in the dtype of the base weights.
  torch::Tensor filters() const;

  const GaborConv2dOptions& options() const { return options_; }

  torch::Tensor base_weight;
  torch::Tensor bank_filters;  // buffer, fixed bank
  torch::Tensor wavelength;    // parameter when learnable_bank
  torch::Tensor envelope_sigma;

 private:
  GaborConv2dOptions options_;
};
TORCH_MODULE(GaborConv2d);

// Stand-alone modulation: base [C_out, C_in, k, k] times filters [G, k, k].
torch::Tensor modulate_kernels(const torch::Tensor& base, const torch::Tensor& filters);

}  // namespace cirrus
