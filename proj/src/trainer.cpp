#include "cirrus/trainer.h"

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include "cirrus/checkpoint.h"
#include "cirrus/dataset.h"
#include "cirrus/gridded.h"
#include "cirrus/losses.h"

namespace cirrus {
namespace {

std::string g17(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

SegmentationNet clone_model(SegmentationNet& model, const TrainConfig& config) {
  SegmentationNet copy(config.model_options());
  torch::NoGradGuard no_grad;
  auto src = model->named_parameters();
  for (auto& p : copy->named_parameters()) p.value().copy_(src[p.key()]);
  auto src_buffers = model->named_buffers();
  for (auto& b : copy->named_buffers()) b.value().copy_(src_buffers[b.key()]);
  return copy;
}

}  // namespace

TrainData prepare_data(const std::vector<CirrusSample>& samples, int64_t input_size) {
  TrainData data;
  if (samples.empty()) return data;
  std::vector<torch::Tensor> images, targets;
  for (const auto& s : samples) {
    auto img = s.image.view({1, 1, s.image.size(0), s.image.size(1)});
    auto tgt = s.consensus.view({1, 1, s.consensus.size(0), s.consensus.size(1)});
    const auto side = img.size(2);
    if (side != input_size) {
      if (side < input_size || side % input_size != 0)
        throw std::invalid_argument("sample side " + std::to_string(side) + " cannot be reduced to input_size " +
                                    std::to_string(input_size));
      img = torch::avg_pool2d(img, side / input_size);
      tgt = torch::avg_pool2d(tgt, side / input_size);
    }
    images.push_back(img);
    targets.push_back(tgt);
  }
  data.images = torch::cat(images, 0).contiguous();
  data.targets = torch::cat(targets, 0).contiguous();
  return data;
}

std::string history_to_csv(const std::vector<EpochMetrics>& history) {
  std::ostringstream os;
  os << "epoch,lr,train_loss,train_iou,val_iou,val_dice\n";
  for (const auto& m : history)
    os << m.epoch << ',' << g17(m.lr) << ',' << g17(m.train_loss) << ',' << g17(m.train_iou) << ',' << g17(m.val_iou)
       << ',' << g17(m.val_dice) << '\n';
  return os.str();
}

std::vector<EpochMetrics> history_from_csv(const std::string& csv) {
  std::vector<EpochMetrics> out;
  std::istringstream is(csv);
  std::string line;
  std::getline(is, line);  // header
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() != 6) throw std::runtime_error("malformed metric history line: " + line);
    EpochMetrics m;
    m.epoch = std::stoll(cells[0]);
    m.lr = std::stod(cells[1]);
    m.train_loss = std::stod(cells[2]);
    m.train_iou = std::stod(cells[3]);
    m.val_iou = std::stod(cells[4]);
    m.val_dice = std::stod(cells[5]);
    out.push_back(m);
  }
  return out;
}

double lr_at_epoch(double lr0, double decay, int64_t epoch) {
  return lr0 * std::pow(decay, static_cast<double>(epoch));
}

std::unique_ptr<torch::optim::Adam> make_optimizer(SegmentationNet& model, const TrainConfig& config) {
  return std::make_unique<torch::optim::Adam>(model->parameters(),
                                              torch::optim::AdamOptions(config.lr).weight_decay(config.weight_decay));
}

TrainResult train(const TrainConfig& config, const TrainData& train_set, const TrainData& val_set,
                  const TrainOptions& options) {
  config.validate();
  if (train_set.size() == 0) throw std::invalid_argument("training set is empty");
  if (!torch::isfinite(train_set.images).all().item<bool>()) throw std::invalid_argument("training images are not finite");
  torch::manual_seed(config.seed);
  TrainResult result;
  result.model = SegmentationNet(config.model_options());
  auto& model = result.model;
  auto optimizer_ptr = make_optimizer(model, config);
  auto& optimizer = *optimizer_ptr;
  const auto loss_config = config.loss_config();
  AugmentOptions aug;
  aug.noise_variance = config.noise_variance;
  aug.max_translation = std::min<int64_t>(config.max_translation, train_set.images.size(2) - 1);
  std::mt19937_64 rng(splitmix64(config.seed));

  std::ofstream metrics_csv;
  if (options.run_dir) {
    std::filesystem::create_directories(*options.run_dir);
    std::ofstream(*options.run_dir / "config.txt") << config.to_text();
    metrics_csv.open(*options.run_dir / "metrics.csv");
    metrics_csv << "epoch,lr,train_loss,train_iou,val_iou,val_dice\n";
  }

  const auto n = train_set.size();
  std::vector<int64_t> order(static_cast<size_t>(n));
  for (int64_t e = 0; e < config.epochs; ++e) {
    const double lr = lr_at_epoch(config.lr, config.lr_decay, e);
    for (auto& group : optimizer.param_groups()) static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);

    std::iota(order.begin(), order.end(), 0);
    for (size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[static_cast<size_t>(rng() % (i + 1))]);

    model->train();
    double loss_sum = 0.0;
    int64_t batches = 0;
    OverlapCounts train_counts;
    for (int64_t start = 0; start < n; start += config.batch_size) {
      const auto end = std::min(n, start + config.batch_size);
      std::vector<torch::Tensor> imgs, tgts;
      for (auto k = start; k < end; ++k) {
        auto img = train_set.images[order[static_cast<size_t>(k)]];
        auto tgt = train_set.targets[order[static_cast<size_t>(k)]];
        if (config.augment) std::tie(img, tgt) = augment(img, tgt, rng, aug);
        imgs.push_back(img);
        tgts.push_back(tgt);
      }
      auto x = torch::stack(imgs);
      auto y = torch::stack(tgts);
      SegOutputs out;
      try {
        out = model->forward(x);
      } catch (const c10::Error& err) {
        // Non-finite activations from a finite batch.
        throw TrainingDiverged("forward failed at epoch " + std::to_string(e) + ": " + err.what_without_backtrace());
      }
      auto loss = total_loss(out, y, loss_config);
      const double value = loss.value.item<double>();
      if (!std::isfinite(value)) {
        std::ostringstream msg;
        msg << "non-finite loss at epoch " << e << ", batch starting at " << start << " (lr " << lr << ")";
        throw TrainingDiverged(msg.str());
      }
      optimizer.zero_grad();
      loss.value.backward();
      optimizer.step();
      loss_sum += value;
      ++batches;
      torch::NoGradGuard no_grad;
      auto prob = torch::zeros_like(y);
      for (const auto& l : out.attention_logits) prob += torch::sigmoid(l.detach());
      prob /= static_cast<double>(out.attention_logits.size());
      train_counts += overlap(prob, y);
    }

    EpochMetrics m;
    m.epoch = e + 1;
    m.lr = lr;
    m.train_loss = loss_sum / static_cast<double>(batches);
    m.train_iou = train_counts.iou();
    if (val_set.size() > 0) {
      EvalReport report;
      try {
        report = evaluate(model, val_set, config.batch_size);
      } catch (const c10::Error& err) {
        throw TrainingDiverged("validation failed at epoch " + std::to_string(e) + ": " + err.what_without_backtrace());
      }
      m.val_iou = report.iou;
      m.val_dice = report.dice;
    }
    result.history.push_back(m);
    if (metrics_csv.is_open()) {
      metrics_csv << history_to_csv({m}).substr(history_to_csv({}).size());
      metrics_csv.flush();
    }
    if (options.on_epoch) options.on_epoch(m);

    if (m.val_iou > result.best_val_iou || !result.best_model) {
      result.best_val_iou = m.val_iou;
      result.best_epoch = m.epoch;
      result.best_model = clone_model(model, config);
      if (options.run_dir && config.save_checkpoints)
        save_checkpoint(*options.run_dir / "best.pt", model, &optimizer, m.epoch, config, result.history);
    }
  }
  result.final_lr = lr_at_epoch(config.lr, config.lr_decay, config.epochs);
  if (options.run_dir && config.save_checkpoints)
    save_checkpoint(*options.run_dir / "last.pt", model, &optimizer, config.epochs, config, result.history);
  return result;
}

TrainResult train(const TrainConfig& config, const TrainOptions& options) {
  if (config.dataset.empty()) throw std::invalid_argument("config has no dataset path");
  const std::filesystem::path dir(config.dataset);
  if (!std::filesystem::exists(dir / "manifest.tsv"))
    throw std::invalid_argument("dataset not found: " + (dir / "manifest.tsv").string());
  auto train_set = prepare_data(load_split(dir, Split::Train), config.input_size);
  auto val_set = prepare_data(load_split(dir, Split::Val), config.input_size);
  return train(config, train_set, val_set, options);
}

EvalReport evaluate(const PredictFn& predict, const TrainData& data, int64_t batch_size, double threshold) {
  if (data.size() == 0) throw std::invalid_argument("evaluation split is empty");
  torch::NoGradGuard no_grad;
  EvalReport report;
  std::vector<double> pred_cov, target_cov;
  for (int64_t start = 0; start < data.size(); start += batch_size) {
    const auto end = std::min(data.size(), start + batch_size);
    auto prob = predict(data.images.slice(0, start, end));
    for (auto k = start; k < end; ++k) {
      auto p = prob[k - start];
      auto t = data.targets[k];
      const auto c = overlap(p, t, threshold);
      report.pooled += c;
      ImageScore s;
      s.image_id = k;
      s.iou = c.iou();
      s.dice = c.dice();
      s.coverage_pred = coverage(p, threshold);
      s.coverage_target = coverage(t, kMajority);
      pred_cov.push_back(s.coverage_pred);
      target_cov.push_back(s.coverage_target);
      report.mean_image_iou += s.iou;
      report.images.push_back(s);
    }
  }
  report.iou = report.pooled.iou();
  report.dice = report.pooled.dice();
  report.coverage_kl = coverage_kl(pred_cov, target_cov);
  report.mean_image_iou /= static_cast<double>(report.images.size());
  return report;
}

EvalReport evaluate(SegmentationNet& model, const TrainData& data, int64_t batch_size) {
  model->eval();
  return evaluate([&](const torch::Tensor& x) { return model->predict(x); }, data, batch_size);
}

EvalReport evaluate_ensemble(std::vector<SegmentationNet>& models, const TrainData& data, int64_t batch_size) {
  for (auto& m : models) m->eval();
  return evaluate([&](const torch::Tensor& x) { return ensemble_predict(models, x); }, data, batch_size);
}

std::string report_to_csv(const EvalReport& report) {
  std::ostringstream os;
  os << "image_id,iou,dice,coverage_pred,coverage_target\n";
  for (const auto& s : report.images)
    os << s.image_id << ',' << g17(s.iou) << ',' << g17(s.dice) << ',' << g17(s.coverage_pred) << ','
       << g17(s.coverage_target) << '\n';
  return os.str();
}

torch::Tensor infer_image(const PredictFn& predict, const torch::Tensor& image, int64_t window) {
  TORCH_CHECK(image.dim() == 2, "infer_image expects [H, W], got ", image.sizes());
  torch::NoGradGuard no_grad;
  auto x = image.view({1, 1, image.size(0), image.size(1)});
  if (window <= 0 || (window >= image.size(0) && window >= image.size(1))) return predict(x)[0][0];
  auto grid = tile(x, window);
  std::vector<torch::Tensor> outs;
  for (int64_t i = 0; i < grid.count(); ++i) outs.push_back(predict(grid.tiles[i]).unsqueeze(0));
  return untile(grid, torch::cat(outs, 0))[0][0];
}

bool configure_determinism() {
  const char* env = std::getenv("CIRRUS_DETERMINISTIC");
  const bool on = env == nullptr || std::string(env) != "0";
  if (on) {
    torch::set_num_threads(1);
    at::globalContext().setDeterministicAlgorithms(true, /*warn_only=*/true);
  }
  return on;
}

}  // namespace cirrus
