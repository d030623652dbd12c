#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "cirrus/config.h"
#include "cirrus/metrics.h"
#include "cirrus/model.h"
#include "cirrus/synth.h"

namespace cirrus {

// Images and consensus targets stacked as [N, 1, S, S].
struct TrainData {
  torch::Tensor images;
  torch::Tensor targets;

  int64_t size() const { return images.defined() ? images.size(0) : 0; }
};

// Stacks samples, area-downsampling to input_size when they are larger.
TrainData prepare_data(const std::vector<CirrusSample>& samples, int64_t input_size);

struct EpochMetrics {
  int64_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_iou = 0.0;
  double val_iou = 0.0;
  double val_dice = 0.0;

  bool operator==(const EpochMetrics&) const = default;
};

std::string history_to_csv(const std::vector<EpochMetrics>& history);
std::vector<EpochMetrics> history_from_csv(const std::string& csv);

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Learning rate used during epoch e (0-based): lr0 * decay^e.
double lr_at_epoch(double lr0, double decay, int64_t epoch);

// Adam with the configured learning rate and L2 coefficient.
std::unique_ptr<torch::optim::Adam> make_optimizer(SegmentationNet& model, const TrainConfig& config);

struct TrainOptions {
  std::optional<std::filesystem::path> run_dir;
  std::function<void(const EpochMetrics&)> on_epoch;
};

struct TrainResult {
  SegmentationNet model{nullptr};       // weights after the last epoch
  SegmentationNet best_model{nullptr};  // weights at the best validation IoU
  std::vector<EpochMetrics> history;
  double best_val_iou = -1.0;
  int64_t best_epoch = -1;
  double final_lr = 0.0;
};

TrainResult train(const TrainConfig& config, const TrainData& train_set, const TrainData& val_set,
                  const TrainOptions& options = {});
// Loads the train/val splits from config.dataset.
TrainResult train(const TrainConfig& config, const TrainOptions& options = {});

struct ImageScore {
  int64_t image_id = 0;
  double iou = 0.0;
  double dice = 0.0;
  double coverage_pred = 0.0;
  double coverage_target = 0.0;
};

struct EvalReport {
  OverlapCounts pooled;
  double iou = 0.0;   // pooled over every pixel of the split
  double dice = 0.0;
  double coverage_kl = 0.0;
  double mean_image_iou = 0.0;
  std::vector<ImageScore> images;
};

using PredictFn = std::function<torch::Tensor(const torch::Tensor&)>;

EvalReport evaluate(const PredictFn& predict, const TrainData& data, int64_t batch_size = 4, double threshold = 0.5);
EvalReport evaluate(SegmentationNet& model, const TrainData& data, int64_t batch_size = 4);
EvalReport evaluate_ensemble(std::vector<SegmentationNet>& models, const TrainData& data, int64_t batch_size = 4);

// CSV with columns image_id,iou,dice,coverage_pred,coverage_target.
std::string report_to_csv(const EvalReport& report);

// Whole-image probability map for a [H, W] image. With window > 0 the
// image is cut into window-sized tiles that are predicted separately.
torch::Tensor infer_image(const PredictFn& predict, const torch::Tensor& image, int64_t window = 0);

// Sets single-threaded deterministic execution when CIRRUS_DETERMINISTIC is
// unset or non-zero; returns whether it was enabled.
bool configure_determinism();

}  // namespace cirrus
