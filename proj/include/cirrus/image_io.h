#pragma once

#include <filesystem>

#include <torch/torch.h>

namespace cirrus {

// Single-channel float image [H, W] from PNG/TIFF/PGM (scaled to [0, 1] for
// integer formats, colour averaged) or from an array container's "image".
torch::Tensor read_image(const std::filesystem::path& path);

// 16-bit PNG of a [0, 1] map.
void write_probability_png(const std::filesystem::path& path, const torch::Tensor& prob);
// 8-bit {0, 255} PNG of prob >= threshold.
void write_mask_png(const std::filesystem::path& path, const torch::Tensor& prob, double threshold = 0.5);
// Grayscale image (percentile-stretched) with the mask tinted red.
void write_overlay_png(const std::filesystem::path& path, const torch::Tensor& image, const torch::Tensor& prob,
                       double threshold = 0.5);

}  // namespace cirrus
