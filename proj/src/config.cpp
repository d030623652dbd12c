#include "cirrus/config.h"

#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace cirrus {
namespace {

std::string trim(std::string s) {
  s.erase(0, s.find_first_not_of(" \t\r"));
  s.erase(s.find_last_not_of(" \t\r") + 1);
  return s;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw std::invalid_argument("config key '" + key + "' expects a boolean, got '" + v + "'");
}

std::string num(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

}  // namespace

ModelOptions TrainConfig::model_options() const {
  ModelOptions o;
  o.width = width;
  o.scales = ScaleSet::parse(scales);
  o.grid.tile_size = tile_size;
  o.grid.tile_batch = tile_batch;
  o.use_gabor = use_gabor;
  o.use_arcsinh = use_arcsinh;
  o.scale_affinity = scale_affinity;
  o.gabor.bank = GaborBankOptions::for_kernel(orientations, gabor_kernel);
  o.gabor.orientation_channels = orientation_channels;
  o.gabor.learnable_bank = learnable_bank;
  return o;
}

LossConfig TrainConfig::loss_config() const {
  LossConfig c;
  c.kind = loss == "focal" ? LossKind::RoundedFocal : LossKind::SuperMajority;
  c.beta = beta;
  c.focal_gamma = focal_gamma;
  c.focal_alpha = focal_alpha;
  c.soft_targets = soft_targets;
  return c;
}

void TrainConfig::validate() const {
  auto positive = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("config: ") + what);
  };
  positive(epochs >= 1, "epochs must be >= 1");
  positive(lr >= 0.0, "lr must be non-negative");
  positive(weight_decay >= 0.0, "weight_decay must be non-negative");
  positive(lr_decay > 0.0, "lr_decay must be positive");
  positive(batch_size >= 1, "batch_size must be >= 1");
  positive(tile_size >= 0, "tile_size must be >= 0");
  positive(width >= 1, "width must be >= 1");
  positive(orientations >= 1, "orientations must be >= 1");
  positive(gabor_kernel >= 1 && gabor_kernel % 2 == 1, "gabor_kernel must be odd");
  positive(orientation_channels >= 1, "orientation_channels must be >= 1");
  positive(loss == "sml" || loss == "focal", "loss must be 'sml' or 'focal'");
  positive(beta >= 1.0, "beta must be >= 1");
  positive(noise_variance >= 0.0, "noise_variance must be non-negative");
  positive(input_size >= 1, "input_size must be >= 1");
  positive(ensemble_size >= 1, "ensemble_size must be >= 1");
  (void)ScaleSet::parse(scales);
}

std::string TrainConfig::to_text() const {
  std::ostringstream os;
  os << "epochs = " << epochs << '\n'
     << "lr = " << num(lr) << '\n'
     << "weight_decay = " << num(weight_decay) << '\n'
     << "lr_decay = " << num(lr_decay) << '\n'
     << "batch_size = " << batch_size << '\n'
     << "scales = " << scales << '\n'
     << "tile_size = " << tile_size << '\n'
     << "tile_batch = " << tile_batch << '\n'
     << "width = " << width << '\n'
     << "use_gabor = " << use_gabor << '\n'
     << "use_arcsinh = " << use_arcsinh << '\n'
     << "scale_affinity = " << scale_affinity << '\n'
     << "orientations = " << orientations << '\n'
     << "gabor_kernel = " << gabor_kernel << '\n'
     << "orientation_channels = " << orientation_channels << '\n'
     << "learnable_bank = " << learnable_bank << '\n'
     << "loss = " << loss << '\n'
     << "beta = " << num(beta) << '\n'
     << "focal_gamma = " << num(focal_gamma) << '\n'
     << "focal_alpha = " << num(focal_alpha) << '\n'
     << "soft_targets = " << soft_targets << '\n'
     << "augment = " << augment << '\n'
     << "noise_variance = " << num(noise_variance) << '\n'
     << "max_translation = " << max_translation << '\n'
     << "seed = " << seed << '\n'
     << "dataset = " << dataset << '\n'
     << "input_size = " << input_size << '\n'
     << "ensemble_size = " << ensemble_size << '\n'
     << "save_checkpoints = " << save_checkpoints << '\n';
  return os.str();
}

void set_config_value(TrainConfig& c, const std::string& key, const std::string& value) {
  const auto bad = [&] { return std::invalid_argument("config key '" + key + "' has invalid value '" + value + "'"); };
  const auto i = [&]() -> int64_t {
    size_t used = 0;
    try {
      const auto v = std::stoll(value, &used);
      if (used == value.size()) return v;
    } catch (const std::logic_error&) {
    }
    throw bad();
  };
  const auto d = [&]() -> double {
    size_t used = 0;
    try {
      const auto v = std::stod(value, &used);
      if (used == value.size()) return v;
    } catch (const std::logic_error&) {
    }
    throw bad();
  };
  const auto b = [&] { return parse_bool(key, value); };
  if (key == "epochs") c.epochs = i();
  else if (key == "lr") c.lr = d();
  else if (key == "weight_decay") c.weight_decay = d();
  else if (key == "lr_decay") c.lr_decay = d();
  else if (key == "batch_size") c.batch_size = i();
  else if (key == "scales") c.scales = value;
  else if (key == "tile_size") c.tile_size = i();
  else if (key == "tile_batch") c.tile_batch = i();
  else if (key == "width") c.width = i();
  else if (key == "use_gabor") c.use_gabor = b();
  else if (key == "use_arcsinh") c.use_arcsinh = b();
  else if (key == "scale_affinity") c.scale_affinity = b();
  else if (key == "orientations") c.orientations = i();
  else if (key == "gabor_kernel") c.gabor_kernel = i();
  else if (key == "orientation_channels") c.orientation_channels = i();
  else if (key == "learnable_bank") c.learnable_bank = b();
  else if (key == "loss") c.loss = value;
  else if (key == "beta") c.beta = d();
  else if (key == "focal_gamma") c.focal_gamma = d();
  else if (key == "focal_alpha") c.focal_alpha = d();
  else if (key == "soft_targets") c.soft_targets = b();
  else if (key == "augment") c.augment = b();
  else if (key == "noise_variance") c.noise_variance = d();
  else if (key == "max_translation") c.max_translation = i();
  else if (key == "seed") c.seed = static_cast<uint64_t>(i());
  else if (key == "dataset") c.dataset = value;
  else if (key == "input_size") c.input_size = i();
  else if (key == "ensemble_size") c.ensemble_size = i();
  else if (key == "save_checkpoints") c.save_checkpoints = b();
  else throw std::invalid_argument("unknown config key '" + key + "'");
}

TrainConfig parse_config(const std::string& text) {
  TrainConfig c;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    set_config_value(c, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return c;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::invalid_argument("cannot read config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str());
}

}  // namespace cirrus
