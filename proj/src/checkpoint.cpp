#include "cirrus/checkpoint.h"

#include <stdexcept>

namespace cirrus {

void save_checkpoint(const std::filesystem::path& path, SegmentationNet& model, torch::optim::Optimizer* optimizer,
                     int64_t epoch, const TrainConfig& config, const std::vector<EpochMetrics>& history) {
  torch::serialize::OutputArchive archive;
  torch::serialize::OutputArchive model_archive;
  model->save(model_archive);
  archive.write("model", model_archive);
  if (optimizer != nullptr) {
    torch::serialize::OutputArchive optimizer_archive;
    optimizer->save(optimizer_archive);
    archive.write("optimizer", optimizer_archive);
  }
  archive.write("epoch", torch::tensor(epoch, torch::kInt64));
  archive.write("config", c10::IValue(config.to_text()));
  archive.write("history", c10::IValue(history_to_csv(history)));
  archive.save_to(path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw std::invalid_argument("checkpoint not found: " + path.string());
  torch::serialize::InputArchive archive;
  archive.load_from(path.string());
  Checkpoint ckpt;
  c10::IValue text;
  archive.read("config", text);
  ckpt.config = parse_config(text.toStringRef());
  c10::IValue history;
  archive.read("history", history);
  ckpt.history = history_from_csv(history.toStringRef());
  torch::Tensor epoch;
  archive.read("epoch", epoch);
  ckpt.epoch = epoch.item<int64_t>();
  ckpt.model = SegmentationNet(ckpt.config.model_options());
  torch::serialize::InputArchive model_archive;
  archive.read("model", model_archive);
  ckpt.model->load(model_archive);
  return ckpt;
}

void load_optimizer_state(const std::filesystem::path& path, torch::optim::Optimizer& optimizer) {
  torch::serialize::InputArchive archive;
  archive.load_from(path.string());
  torch::serialize::InputArchive optimizer_archive;
  if (!archive.try_read("optimizer", optimizer_archive))
    throw std::runtime_error("checkpoint " + path.string() + " holds no optimizer state");
  optimizer.load(optimizer_archive);
}

}  // namespace cirrus
