// Command-line front end: generate-data, train, eval, infer, benchmark.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cirrus/benchmark.h"
#include "cirrus/checkpoint.h"
#include "cirrus/dataset.h"
#include "cirrus/image_io.h"
#include "cirrus/trainer.h"

namespace fs = std::filesystem;
using namespace cirrus;

namespace {

constexpr int kUserError = 1;
constexpr int kRuntimeFailure = 2;

int generate_data(const fs::path& out, int64_t n, int64_t size, uint64_t seed, double prevalence, double coverage) {
  DatasetOptions o;
  o.base_seed = seed;
  o.params.size = size;
  o.params.prevalence = prevalence;
  o.params.coverage = coverage;
  const auto m = make_dataset(n, out, o);
  int64_t contaminated = 0;
  for (const auto& r : m.records) contaminated += r.has_cirrus ? 1 : 0;
  std::cout << "wrote " << m.records.size() << " samples (" << contaminated << " contaminated) to " << out << '\n';
  return 0;
}

int train_cmd(const fs::path& config_path, const std::vector<std::string>& overrides, const fs::path& run_dir) {
  auto config = config_path.empty() ? TrainConfig{} : load_config(config_path);
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("override '" + kv + "' is not key=value");
    set_config_value(config, kv.substr(0, eq), kv.substr(eq + 1));
  }
  config.validate();
  TrainOptions options;
  options.run_dir = run_dir;
  options.on_epoch = [](const EpochMetrics& m) {
    std::cout << "epoch " << m.epoch << " lr " << m.lr << " loss " << m.train_loss << " train_iou " << m.train_iou
              << " val_iou " << m.val_iou << " val_dice " << m.val_dice << std::endl;
  };
  const auto result = train(config, options);
  std::cout << "best val_iou " << result.best_val_iou << " at epoch " << result.best_epoch << '\n';
  return 0;
}

std::vector<Checkpoint> load_all(const std::vector<std::string>& paths) {
  if (paths.empty()) throw std::invalid_argument("at least one --checkpoint is required");
  std::vector<Checkpoint> out;
  for (const auto& p : paths) out.push_back(load_checkpoint(p));
  return out;
}

int eval_cmd(const std::vector<std::string>& checkpoints, const fs::path& dataset, const std::string& split,
             bool ensemble, const fs::path& out_dir) {
  auto ckpts = load_all(checkpoints);
  const auto data = prepare_data(load_split(dataset, parse_split(split)), ckpts.front().config.input_size);
  if (data.size() == 0) throw std::invalid_argument("split '" + split + "' is empty");
  fs::create_directories(out_dir);
  std::ofstream report(out_dir / "report.txt");
  auto emit = [&](const std::string& line) {
    std::cout << line << '\n';
    report << line << '\n';
  };
  if (ensemble) {
    std::vector<SegmentationNet> models;
    for (auto& c : ckpts) models.push_back(c.model);
    const auto r = evaluate_ensemble(models, data);
    emit("ensemble members " + std::to_string(models.size()));
    emit("iou " + std::to_string(r.iou));
    emit("dice " + std::to_string(r.dice));
    emit("coverage_kl " + std::to_string(r.coverage_kl));
    std::ofstream(out_dir / "images.csv") << report_to_csv(r);
    return 0;
  }
  std::vector<double> ious, dices, kls;
  for (size_t i = 0; i < ckpts.size(); ++i) {
    const auto r = evaluate(ckpts[i].model, data);
    ious.push_back(r.iou);
    dices.push_back(r.dice);
    kls.push_back(r.coverage_kl);
    emit("run " + std::to_string(i) + " iou " + std::to_string(r.iou) + " dice " + std::to_string(r.dice) +
         " coverage_kl " + std::to_string(r.coverage_kl));
    std::ofstream(out_dir / ("images_" + std::to_string(i) + ".csv")) << report_to_csv(r);
  }
  const auto iou = aggregate_splits(ious);
  const auto dc = aggregate_splits(dices);
  const auto kl = aggregate_splits(kls);
  emit("iou " + std::to_string(iou.mean) + " stderr " + std::to_string(iou.standard_error));
  emit("dice " + std::to_string(dc.mean) + " stderr " + std::to_string(dc.standard_error));
  emit("coverage_kl " + std::to_string(kl.mean) + " stderr " + std::to_string(kl.standard_error));
  return 0;
}

int infer_cmd(const std::vector<std::string>& checkpoints, const std::vector<std::string>& images,
              const fs::path& out_dir, int64_t window, bool overlay, double threshold) {
  auto ckpts = load_all(checkpoints);
  std::vector<SegmentationNet> models;
  for (auto& c : ckpts) {
    c.model->eval();
    models.push_back(c.model);
  }
  fs::create_directories(out_dir);
  for (const auto& path : images) {
    const auto image = read_image(path);
    auto prob = infer_image([&](const torch::Tensor& x) { return ensemble_predict(models, x); }, image, window);
    const auto stem = fs::path(path).stem().string();
    write_arrays(out_dir / (stem + "_prob.cma"), {{"probability", prob}});
    write_probability_png(out_dir / (stem + "_prob.png"), prob);
    write_mask_png(out_dir / (stem + "_mask.png"), prob, threshold);
    if (overlay) write_overlay_png(out_dir / (stem + "_overlay.png"), image, prob, threshold);
    std::cout << path << " -> " << (out_dir / (stem + "_mask.png")).string() << '\n';
  }
  return 0;
}

int benchmark_cmd(const std::vector<int64_t>& sides, const std::string& scales, int64_t tile_size,
                  const fs::path& out) {
  const auto set = ScaleSet::parse(scales);
  std::ostringstream csv;
  csv << benchmark_csv_header() << '\n';
  for (auto side : sides) csv << benchmark_csv_row(run_benchmark(side, set, tile_size)) << '\n';
  std::cout << csv.str();
  if (!out.empty()) {
    std::ofstream os(out);
    if (!os) throw std::runtime_error("cannot write " + out.string());
    os << csv.str();
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  configure_determinism();
  CLI::App app{"Gridded multi-scale tri-attention segmentation of diffuse contaminants"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("generate-data", "Write a synthetic cirrus dataset");
  fs::path gen_out;
  int64_t gen_n = 300, gen_size = 512;
  uint64_t gen_seed = 1;
  double gen_prevalence = 0.25, gen_coverage = 0.6;
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("-n,--count", gen_n, "Number of samples");
  gen->add_option("--size", gen_size, "Image side in pixels");
  gen->add_option("--seed", gen_seed, "Base seed");
  gen->add_option("--prevalence", gen_prevalence, "Fraction of images with cirrus");
  gen->add_option("--coverage", gen_coverage, "Target cirrus pixel fraction in contaminated images");

  auto* tr = app.add_subcommand("train", "Train a model");
  fs::path tr_config, tr_run = "runs/latest";
  std::vector<std::string> tr_set;
  tr->add_option("--config", tr_config, "Config file (key = value lines)");
  tr->add_option("--set", tr_set, "Override a config key, key=value");
  tr->add_option("--run-dir", tr_run, "Directory for checkpoints, metrics.csv and config snapshot");

  auto* ev = app.add_subcommand("eval", "Evaluate checkpoints on a dataset split");
  std::vector<std::string> ev_ckpt;
  fs::path ev_data, ev_out = "eval";
  std::string ev_split = "test";
  bool ev_ensemble = false;
  ev->add_option("--checkpoint", ev_ckpt, "Checkpoint(s); several are aggregated as splits")->required();
  ev->add_option("--dataset", ev_data, "Dataset directory")->required();
  ev->add_option("--split", ev_split, "train | val | test");
  ev->add_flag("--ensemble", ev_ensemble, "Average predictions of all checkpoints");
  ev->add_option("--out-dir", ev_out, "Report directory");

  auto* inf = app.add_subcommand("infer", "Predict cirrus masks for images");
  std::vector<std::string> inf_ckpt, inf_images;
  fs::path inf_out = "masks";
  int64_t inf_window = 0;
  bool inf_overlay = false;
  double inf_threshold = 0.5;
  inf->add_option("--checkpoint", inf_ckpt, "Checkpoint(s); several form an ensemble")->required();
  inf->add_option("--image", inf_images, "Input image(s): png, tif, pgm or .cma")->required();
  inf->add_option("--out-dir", inf_out, "Output directory");
  inf->add_option("--window", inf_window, "Predict in windows of this side (0 = whole image)");
  inf->add_flag("--overlay", inf_overlay, "Also write overlay figures");
  inf->add_option("--threshold", inf_threshold, "Mask threshold");

  auto* bench = app.add_subcommand("benchmark", "Positional-attention cost of gridding");
  std::vector<int64_t> b_sides{64};
  std::string b_scales = "1,1/2,1/4";
  int64_t b_tile = 16;
  fs::path b_out;
  bench->add_option("--side", b_sides, "Full-scale feature side(s)");
  bench->add_option("--scales", b_scales, "Scale fractions");
  bench->add_option("--tile", b_tile, "Tile side T");
  bench->add_option("--out", b_out, "CSV output file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kUserError;
  }

  try {
    if (*gen) return generate_data(gen_out, gen_n, gen_size, gen_seed, gen_prevalence, gen_coverage);
    if (*tr) return train_cmd(tr_config, tr_set, tr_run);
    if (*ev) return eval_cmd(ev_ckpt, ev_data, ev_split, ev_ensemble, ev_out);
    if (*inf) return infer_cmd(inf_ckpt, inf_images, inf_out, inf_window, inf_overlay, inf_threshold);
    if (*bench) return benchmark_cmd(b_sides, b_scales, b_tile, b_out);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUserError;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << '\n';
    return kRuntimeFailure;
  }
  return kUserError;
}
