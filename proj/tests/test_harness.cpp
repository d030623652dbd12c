#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <sys/wait.h>

#include "cirrus/benchmark.h"
#include "cirrus/checkpoint.h"
#include "cirrus/dataset.h"
#include "cirrus/image_io.h"
#include "cirrus/trainer.h"

using namespace cirrus;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("cirrus_harness_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

TrainConfig toy_config() {
  TrainConfig c;
  c.epochs = 2;
  c.width = 8;
  c.tile_size = 8;
  c.gabor_kernel = 3;
  c.batch_size = 4;
  c.input_size = 32;
  c.augment = false;
  c.seed = 3;
  return c;
}

TrainData toy_data(int n, uint64_t seed0 = 40) {
  CirrusParams p;
  p.size = 64;
  p.cirrus_present = true;
  std::vector<CirrusSample> samples;
  for (int i = 0; i < n; ++i) samples.push_back(generate_cirrus_sample(seed0 + i, p));
  return prepare_data(samples, 32);
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(CIRRUSSEG_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Config, DefaultsMatchSchedule) {
  TrainConfig c;
  EXPECT_EQ(c.epochs, 200);
  EXPECT_DOUBLE_EQ(c.lr, 1e-3);
  EXPECT_DOUBLE_EQ(c.weight_decay, 1e-7);
  EXPECT_DOUBLE_EQ(c.lr_decay, 0.98);
  EXPECT_EQ(c.ensemble_size, 5);
  EXPECT_EQ(c.model_options().scales.factors(), (std::vector<int64_t>{1, 2, 4}));
  EXPECT_DOUBLE_EQ(c.loss_config().beta, 1.25);
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, TextRoundTrip) {
  auto c = toy_config();
  c.loss = "focal";
  c.dataset = "/data/set";
  c.lr = 3.5e-4;
  const auto back = parse_config(c.to_text());
  EXPECT_EQ(back.to_text(), c.to_text());
  EXPECT_EQ(back.loss_config().kind, LossKind::RoundedFocal);
}

TEST(Config, ParsesCommentsAndRejectsErrors) {
  auto c = parse_config("# comment\nepochs = 7  # inline\n\nuse_gabor = false\nscales = 1, 1/2\n");
  EXPECT_EQ(c.epochs, 7);
  EXPECT_FALSE(c.use_gabor);
  EXPECT_EQ(c.model_options().scales.size(), 2u);
  EXPECT_THROW(parse_config("nonsense = 1"), std::invalid_argument);
  EXPECT_THROW(parse_config("epochs = many"), std::invalid_argument);
  EXPECT_THROW(parse_config("epochs 3"), std::invalid_argument);
  EXPECT_THROW(parse_config("use_gabor = maybe"), std::invalid_argument);
  auto bad = toy_config();
  bad.epochs = 0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = toy_config();
  bad.loss = "dice";
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(Schedule, ExactDecay) {
  for (int64_t e = 0; e < 200; ++e) {
    const double expected = 1e-3 * std::pow(0.98, static_cast<double>(e));
    EXPECT_LE(std::abs(lr_at_epoch(1e-3, 0.98, e) - expected) / expected, 1e-12);
  }
  EXPECT_EQ(lr_at_epoch(1e-3, 0.98, 2), 1e-3 * 0.98 * 0.98);
}

TEST(Optimizer, WeightDecayEntersTheUpdate) {
  torch::manual_seed(1);
  auto c = toy_config();
  for (double wd : {0.0, 1e-7}) {
    c.weight_decay = wd;
    SegmentationNet net(c.model_options());
    auto opt = make_optimizer(net, c);
    auto& o = static_cast<torch::optim::AdamOptions&>(opt->param_groups()[0].options());
    EXPECT_EQ(o.weight_decay(), wd);
    std::vector<torch::Tensor> before;
    for (auto& p : net->parameters()) before.push_back(p.detach().clone());
    // Zero data gradient: only the L2 term can move the weights.
    opt->zero_grad();
    for (auto& p : net->parameters()) p.mutable_grad() = torch::zeros_like(p);
    opt->step();
    size_t i = 0;
    for (auto& p : net->parameters()) {
      auto g = wd * before[i];
      auto expected = before[i] - c.lr * g / (g.abs() + o.eps());
      EXPECT_TRUE(torch::allclose(p.detach(), expected, 1e-6, 1e-9));
      if (wd == 0.0) {
        EXPECT_TRUE(torch::equal(p.detach(), before[i]));
      }
      ++i;
    }
  }
}

TEST(Training, ToyRunLossDecreasesAndLrFollowsSchedule) {
  auto data = toy_data(4);
  auto c = toy_config();
  auto r = train(c, data, data);
  ASSERT_EQ(r.history.size(), 2u);
  EXPECT_LE(r.history[1].train_loss, r.history[0].train_loss);
  EXPECT_EQ(r.history[0].lr, 1e-3);
  EXPECT_EQ(r.history[1].lr, 1e-3 * 0.98);
  EXPECT_EQ(r.final_lr, 1e-3 * 0.98 * 0.98);
  EXPECT_GE(r.best_epoch, 1);
}

TEST(Training, SameSeedSameHistory) {
  auto data = toy_data(4);
  auto c = toy_config();
  c.epochs = 1;
  c.augment = true;
  auto a = train(c, data, data);
  auto b = train(c, data, data);
  ASSERT_EQ(a.history.size(), 1u);
  EXPECT_EQ(a.history, b.history);
  c.seed = 4;
  EXPECT_NE(train(c, data, data).history, a.history);
}

TEST(Training, RunDirectoryArtifacts) {
  auto dir = scratch("run");
  auto data = toy_data(4);
  auto c = toy_config();
  TrainOptions o;
  o.run_dir = dir;
  auto r = train(c, data, data, o);
  EXPECT_TRUE(fs::exists(dir / "best.pt"));
  EXPECT_TRUE(fs::exists(dir / "last.pt"));
  EXPECT_EQ(parse_config(slurp(dir / "config.txt")).to_text(), c.to_text());
  EXPECT_EQ(history_from_csv(slurp(dir / "metrics.csv")), r.history);
  auto last = load_checkpoint(dir / "last.pt");
  EXPECT_EQ(last.epoch, 2);
  EXPECT_EQ(last.history, r.history);
  auto x = data.images.slice(0, 0, 2);
  torch::NoGradGuard g;
  r.model->eval();
  last.model->eval();
  EXPECT_TRUE(torch::equal(r.model->predict(x), last.model->predict(x)));
  fs::remove_all(dir);
}

TEST(Training, MissingDatasetIsUserError) {
  auto c = toy_config();
  c.dataset = "/nonexistent/dataset";
  EXPECT_THROW(train(c), std::invalid_argument);
  c.dataset = "";
  EXPECT_THROW(train(c), std::invalid_argument);
}

TEST(Training, DivergenceAborts) {
  auto data = toy_data(4);
  auto c = toy_config();
  c.lr = 1e30;
  c.epochs = 4;
  EXPECT_THROW(train(c, data, data), TrainingDiverged);
}

TEST(Training, OverfitsToySet) {
  auto data = toy_data(4);
  auto c = toy_config();
  c.epochs = 80;
  c.lr = 1e-2;
  auto r = train(c, data, data);
  auto report = evaluate(r.best_model, data);
  EXPECT_GE(report.iou, 0.9);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  auto dir = scratch("ckpt");
  torch::manual_seed(5);
  auto c = toy_config();
  c.learnable_bank = true;
  SegmentationNet net(c.model_options());
  {
    torch::NoGradGuard g;
    for (auto& p : net->parameters()) p.add_(torch::randn_like(p) * 0.1);
  }
  auto opt = make_optimizer(net, c);
  std::vector<EpochMetrics> hist{{1, 1e-3, 0.5, 0.2, 0.3, 0.4}};
  save_checkpoint(dir / "m.pt", net, opt.get(), 1, c, hist);
  auto back = load_checkpoint(dir / "m.pt");
  EXPECT_EQ(back.config.to_text(), c.to_text());
  EXPECT_EQ(back.history, hist);
  EXPECT_EQ(back.epoch, 1);
  auto src = net->named_parameters();
  for (auto& p : back.model->named_parameters()) EXPECT_TRUE(torch::equal(p.value(), src[p.key()])) << p.key();
  auto src_buf = net->named_buffers();
  for (auto& b : back.model->named_buffers()) EXPECT_TRUE(torch::equal(b.value(), src_buf[b.key()])) << b.key();
  auto x = torch::randn({2, 1, 32, 32});
  auto a = net(x).all(), b = back.model(x).all();
  for (size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(torch::equal(a[i], b[i]));
  auto opt2 = make_optimizer(back.model, c);
  EXPECT_NO_THROW(load_optimizer_state(dir / "m.pt", *opt2));
  EXPECT_THROW(load_checkpoint(dir / "absent.pt"), std::invalid_argument);
  fs::remove_all(dir);
}

TEST(Evaluate, AllNegativeOnCleanSplitScoresOne) {
  TrainData clean{torch::zeros({3, 1, 16, 16}), torch::zeros({3, 1, 16, 16})};
  auto r = evaluate([](const torch::Tensor& x) { return torch::zeros_like(x); }, clean);
  EXPECT_DOUBLE_EQ(r.iou, 1.0);
  EXPECT_DOUBLE_EQ(r.dice, 1.0);
  EXPECT_DOUBLE_EQ(r.coverage_kl, 0.0);
  ASSERT_EQ(r.images.size(), 3u);
}

TEST(Evaluate, PerfectPredictorAndCsv) {
  auto data = toy_data(3);
  size_t call = 0;
  auto r = evaluate(
      [&](const torch::Tensor& x) {
        auto out = data.targets.slice(0, static_cast<int64_t>(call), static_cast<int64_t>(call) + x.size(0));
        call += static_cast<size_t>(x.size(0));
        return out;
      },
      data, 2);
  EXPECT_DOUBLE_EQ(r.iou, 1.0);
  EXPECT_NEAR(r.coverage_kl, 0.0, 1e-12);
  const auto csv = report_to_csv(r);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "image_id,iou,dice,coverage_pred,coverage_target");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
  TrainData empty;
  EXPECT_THROW(evaluate([](const torch::Tensor& x) { return x; }, empty), std::invalid_argument);
}

TEST(Evaluate, SplitAggregation) {
  std::vector<double> same(5, 0.42);
  const auto s = aggregate_splits(same);
  EXPECT_DOUBLE_EQ(s.mean, 0.42);
  EXPECT_DOUBLE_EQ(s.standard_error, 0.0);
}

TEST(Ensemble, IdenticalCheckpointsMatchSingle) {
  auto c = toy_config();
  torch::manual_seed(6);
  SegmentationNet net(c.model_options());
  std::vector<SegmentationNet> five(5, net);
  auto data = toy_data(2);
  net->eval();
  torch::NoGradGuard g;
  auto single = net->predict(data.images);
  auto ens = ensemble_predict(five, data.images);
  EXPECT_LE((single - ens).abs().max().item<double>(), 1e-6);
}

TEST(Infer, ReassemblyIsExact) {
  auto image = torch::rand({1024, 1024});
  auto pointwise = [](const torch::Tensor& x) { return torch::sigmoid(x * 3 - 1); };
  auto whole = infer_image(pointwise, image, 0);
  auto windowed = infer_image(pointwise, image, 256);
  EXPECT_TRUE(torch::equal(whole, windowed));
  EXPECT_TRUE(torch::equal(infer_image(pointwise, image.slice(0, 0, 1000).slice(1, 0, 900), 256),
                           whole.slice(0, 0, 1000).slice(1, 0, 900)));
}

TEST(Infer, FullImageWithModelTrainedAtSmallerSide) {
  auto c = toy_config();
  torch::manual_seed(7);
  SegmentationNet net(c.model_options());
  net->eval();
  auto image = torch::rand({1024, 1024}) * 0.3;
  auto predict = [&](const torch::Tensor& x) { return net->predict(x); };
  auto windowed = infer_image(predict, image, 256);
  EXPECT_EQ(windowed.sizes(), (std::vector<int64_t>{1024, 1024}));
  EXPECT_GE(windowed.min().item<float>(), 0.0f);
  EXPECT_LE(windowed.max().item<float>(), 1.0f);
  auto whole = infer_image(predict, image, 0);
  const double mean_diff = (whole - windowed).abs().mean().item<double>();
  std::cout << "[ info ] windowed vs whole mean |diff| " << mean_diff << "\n";
}

TEST(ImageIo, PngAndContainerRoundTrip) {
  auto dir = scratch("io");
  auto prob = torch::rand({40, 30});
  write_probability_png(dir / "p.png", prob);
  auto back = read_image(dir / "p.png");
  EXPECT_EQ(back.sizes(), prob.sizes());
  EXPECT_LE((back - prob).abs().max().item<double>(), 1.0 / 65535.0);
  write_mask_png(dir / "m.png", prob, 0.5);
  auto mask = read_image(dir / "m.png");
  EXPECT_TRUE(torch::equal(mask, (prob >= 0.5).to(torch::kFloat32)));
  write_overlay_png(dir / "o.png", prob, prob);
  EXPECT_TRUE(fs::exists(dir / "o.png"));
  write_arrays(dir / "x.cma", {{"image", prob}});
  EXPECT_TRUE(torch::equal(read_image(dir / "x.cma"), prob));
  write_arrays(dir / "y.cma", {{"probability", prob}});
  EXPECT_TRUE(torch::equal(read_image(dir / "y.cma"), prob));
  write_arrays(dir / "z.cma", {{"a", prob}, {"b", prob}});
  EXPECT_THROW(read_image(dir / "z.cma"), std::runtime_error);
  EXPECT_THROW(read_image(dir / "missing.png"), std::invalid_argument);
  fs::remove_all(dir);
}

TEST(Benchmark, ThreeScaleRatioAndMeasuredPeak) {
  const auto row = run_benchmark(64, ScaleSet::parse("1,1/2,1/4"), 16);
  EXPECT_EQ(row.cost.tile_count, 21);
  EXPECT_DOUBLE_EQ(row.cost.ratio, 21.0 / 256.0);
  EXPECT_LE(row.measured_peak, 16LL * 16 * 16 * 16);
  EXPECT_GT(row.measured_peak, 0);
  const auto none = run_benchmark(16, ScaleSet{}, 16);
  EXPECT_DOUBLE_EQ(none.cost.ratio, 1.0);
  EXPECT_EQ(benchmark_csv_header(), "side,scales,T,tiles,gridded_entries,full_entries,ratio,measured_peak");
}

TEST(Benchmark, PeakWithinBoundForTenConfigurations) {
  struct Case {
    int64_t side;
    const char* scales;
    int64_t tile;
    int64_t batch;
  };
  const Case cases[] = {{32, "1", 8, 1},      {32, "1,1/2", 8, 1},   {64, "1,1/2,1/4", 16, 1}, {48, "1,1/2", 16, 2},
                        {40, "1,1/2", 8, 3},  {64, "1,1/4", 16, 1},  {32, "1,1/2,1/4", 4, 4},  {24, "1", 24, 1},
                        {36, "1,1/3", 12, 1}, {64, "1,1/2", 32, 0}};
  for (const auto& k : cases) {
    const auto scales = ScaleSet::parse(k.scales);
    const auto row = run_benchmark(k.side, scales, k.tile, 4, k.batch);
    int64_t max_concurrent = 0;
    for (auto f : scales.factors()) {
      const auto per = (k.side / f + k.tile - 1) / k.tile;
      const auto tiles = per * per;
      max_concurrent = std::max(max_concurrent, k.batch <= 0 ? tiles : std::min(k.batch, tiles));
    }
    EXPECT_LE(row.measured_peak, max_concurrent * k.tile * k.tile * k.tile * k.tile) << k.side << " " << k.scales;
    EXPECT_GT(row.measured_peak, 0);
  }
}

TEST(Determinism, EnvironmentToggle) {
  ::setenv("CIRRUS_DETERMINISTIC", "0", 1);
  EXPECT_FALSE(configure_determinism());
  ::unsetenv("CIRRUS_DETERMINISTIC");
  EXPECT_TRUE(configure_determinism());
  EXPECT_EQ(torch::get_num_threads(), 1);
}

TEST(Cli, ExitCodesAndArtifacts) {
  auto dir = scratch("cli");
  const auto d = dir.string();
  EXPECT_EQ(run_cli("generate-data --out " + d + "/ds -n 8 --size 64 --seed 2 --prevalence 1"), 0);
  EXPECT_TRUE(fs::exists(dir / "ds" / "manifest.tsv"));
  EXPECT_EQ(run_cli("benchmark --side 64 --out " + d + "/bench.csv"), 0);
  const auto csv = slurp(dir / "bench.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "side,scales,T,tiles,gridded_entries,full_entries,ratio,measured_peak");

  std::ofstream(dir / "cfg.txt") << "epochs = 1\nwidth = 8\ntile_size = 8\ngabor_kernel = 3\ninput_size = 32\n"
                                 << "dataset = " << d << "/ds\n";
  EXPECT_EQ(run_cli("train --config " + d + "/cfg.txt --run-dir " + d + "/run"), 0);
  EXPECT_TRUE(fs::exists(dir / "run" / "metrics.csv"));
  EXPECT_TRUE(fs::exists(dir / "run" / "config.txt"));
  EXPECT_EQ(run_cli("eval --checkpoint " + d + "/run/best.pt --dataset " + d + "/ds --split test --out-dir " + d +
                    "/eval"),
            0);
  const auto images = slurp(dir / "eval" / "images_0.csv");
  EXPECT_EQ(images.substr(0, images.find('\n')), "image_id,iou,dice,coverage_pred,coverage_target");
  EXPECT_EQ(run_cli("infer --checkpoint " + d + "/run/best.pt --checkpoint " + d + "/run/last.pt --image " + d +
                    "/ds/sample_00000.cma --out-dir " + d + "/masks --overlay"),
            0);
  EXPECT_TRUE(fs::exists(dir / "masks" / "sample_00000_mask.png"));
  EXPECT_TRUE(fs::exists(dir / "masks" / "sample_00000_overlay.png"));

  // User errors.
  EXPECT_EQ(run_cli(""), 1);
  EXPECT_EQ(run_cli("train --set epochs=zero --set dataset=" + d + "/ds"), 1);
  EXPECT_EQ(run_cli("train --set bogus=1"), 1);
  EXPECT_EQ(run_cli("train --set dataset=" + d + "/nowhere"), 1);
  EXPECT_EQ(run_cli("eval --checkpoint " + d + "/none.pt --dataset " + d + "/ds"), 1);
  EXPECT_EQ(run_cli("benchmark --scales 1,0.3"), 1);
  // Runtime failure: the checkpoint exists but is not an archive.
  std::ofstream(dir / "broken.pt") << "not a checkpoint";
  EXPECT_EQ(run_cli("infer --checkpoint " + d + "/broken.pt --image " + d + "/ds/sample_00000.cma --out-dir " + d),
            2);
  fs::remove_all(dir);
}
