#include "cirrus/image_io.h"

#include <stdexcept>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "cirrus/dataset.h"

namespace cirrus {
namespace {

cv::Mat to_mat(const torch::Tensor& t) {
  TORCH_CHECK(t.dim() == 2, "expected a [H, W] map, got ", t.sizes());
  auto c = t.detach().to(torch::kCPU, torch::kFloat32).contiguous();
  return cv::Mat(static_cast<int>(c.size(0)), static_cast<int>(c.size(1)), CV_32F, c.data_ptr<float>()).clone();
}

void write(const std::filesystem::path& path, const cv::Mat& m) {
  if (!cv::imwrite(path.string(), m)) throw std::runtime_error("cannot write " + path.string());
}

}  // namespace

torch::Tensor read_image(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) throw std::invalid_argument("image not found: " + path.string());
  if (path.extension() == ".cma") {
    auto arrays = read_arrays(path);
    auto it = arrays.find("image");
    if (it == arrays.end() && arrays.size() == 1) it = arrays.begin();
    if (it == arrays.end()) throw std::runtime_error(path.string() + " has no 'image' array");
    return it->second;
  }
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED | cv::IMREAD_ANYDEPTH);
  if (m.empty()) throw std::runtime_error("cannot read image " + path.string());
  if (m.channels() > 1) {
    std::vector<cv::Mat> planes;
    cv::split(m, planes);
    cv::Mat acc = cv::Mat::zeros(m.size(), CV_64F);
    for (size_t i = 0; i < std::min<size_t>(planes.size(), 3); ++i) {
      cv::Mat p;
      planes[i].convertTo(p, CV_64F);
      acc += p;
    }
    acc /= static_cast<double>(std::min<size_t>(planes.size(), 3));
    acc.convertTo(m, planes[0].depth());
  }
  double scale = 1.0;
  if (m.depth() == CV_8U) scale = 1.0 / 255.0;
  else if (m.depth() == CV_16U) scale = 1.0 / 65535.0;
  cv::Mat f;
  m.convertTo(f, CV_32F, scale);
  return torch::from_blob(f.data, {f.rows, f.cols}, torch::kFloat32).clone();
}

void write_probability_png(const std::filesystem::path& path, const torch::Tensor& prob) {
  cv::Mat m = to_mat(prob.clamp(0.0, 1.0)), out;
  m.convertTo(out, CV_16U, 65535.0);
  write(path, out);
}

void write_mask_png(const std::filesystem::path& path, const torch::Tensor& prob, double threshold) {
  auto mask = (prob >= threshold).to(torch::kFloat32) * 255.0;
  cv::Mat m = to_mat(mask), out;
  m.convertTo(out, CV_8U);
  write(path, out);
}

void write_overlay_png(const std::filesystem::path& path, const torch::Tensor& image, const torch::Tensor& prob,
                       double threshold) {
  auto flat = image.detach().flatten().to(torch::kFloat32);
  const auto lo = torch::quantile(flat, 0.01).item<double>();
  const auto hi = torch::quantile(flat, 0.99).item<double>();
  auto stretched = ((image - lo) / std::max(hi - lo, 1e-6)).clamp(0.0, 1.0);
  cv::Mat gray = to_mat(stretched), gray8, rgb;
  gray.convertTo(gray8, CV_8U, 255.0);
  cv::cvtColor(gray8, rgb, cv::COLOR_GRAY2BGR);
  cv::Mat mask;
  to_mat((prob >= threshold).to(torch::kFloat32)).convertTo(mask, CV_8U);
  cv::Mat tint(rgb.size(), rgb.type(), cv::Scalar(0, 0, 255));
  cv::Mat blended;
  cv::addWeighted(rgb, 0.6, tint, 0.4, 0.0, blended);
  blended.copyTo(rgb, mask);
  write(path, rgb);
}

}  // namespace cirrus
