#include "cirrus/dataset.h"

#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "cirrus/metrics.h"

namespace cirrus {
namespace {

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

constexpr char kMagic[8] = {'C', 'I', 'R', 'R', 'U', 'S', 'M', 'A'};
constexpr uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("truncated array container");
  return v;
}

std::string format_double(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::vector<std::pair<std::string, std::string>> params_to_kv(const DatasetOptions& o) {
  const auto& p = o.params;
  return {
      {"base_seed", std::to_string(o.base_seed)},
      {"split_train", format_double(o.split.train)},
      {"split_val", format_double(o.split.val)},
      {"split_test", format_double(o.split.test)},
      {"size", std::to_string(p.size)},
      {"prevalence", format_double(p.prevalence)},
      {"cirrus_present", p.cirrus_present ? (*p.cirrus_present ? "1" : "0") : "draw"},
      {"coverage", format_double(p.coverage)},
      {"envelope_octaves", std::to_string(p.envelope_octaves)},
      {"envelope_frequency", format_double(p.envelope_frequency)},
      {"envelope_stretch", format_double(p.envelope_stretch)},
      {"filament_octaves", std::to_string(p.filament_octaves)},
      {"filament_frequency", format_double(p.filament_frequency)},
      {"filament_anisotropy", format_double(p.filament_anisotropy)},
      {"shear", format_double(p.shear)},
      {"gamma", format_double(p.gamma)},
      {"cirrus_amplitude", format_double(p.cirrus_amplitude)},
      {"background", format_double(p.background)},
      {"background_gradient", format_double(p.background_gradient)},
      {"stars_per_4096px", format_double(p.stars_per_4096px)},
      {"star_sigma", format_double(p.star_sigma)},
      {"read_noise", format_double(p.read_noise)},
      {"hot_pixel_rate", format_double(p.hot_pixel_rate)},
  };
}

void apply_kv(DatasetOptions& o, const std::string& key, const std::string& value) {
  auto& p = o.params;
  const auto d = [&] { return std::stod(value); };
  const auto i = [&] { return std::stoll(value); };
  if (key == "base_seed") o.base_seed = std::stoull(value);
  else if (key == "split_train") o.split.train = d();
  else if (key == "split_val") o.split.val = d();
  else if (key == "split_test") o.split.test = d();
  else if (key == "size") p.size = i();
  else if (key == "prevalence") p.prevalence = d();
  else if (key == "cirrus_present") p.cirrus_present = value == "draw" ? std::nullopt : std::optional<bool>(value == "1");
  else if (key == "coverage") p.coverage = d();
  else if (key == "envelope_octaves") p.envelope_octaves = static_cast<int>(i());
  else if (key == "envelope_frequency") p.envelope_frequency = d();
  else if (key == "envelope_stretch") p.envelope_stretch = d();
  else if (key == "filament_octaves") p.filament_octaves = static_cast<int>(i());
  else if (key == "filament_frequency") p.filament_frequency = d();
  else if (key == "filament_anisotropy") p.filament_anisotropy = d();
  else if (key == "shear") p.shear = d();
  else if (key == "gamma") p.gamma = d();
  else if (key == "cirrus_amplitude") p.cirrus_amplitude = d();
  else if (key == "background") p.background = d();
  else if (key == "background_gradient") p.background_gradient = d();
  else if (key == "stars_per_4096px") p.stars_per_4096px = d();
  else if (key == "star_sigma") p.star_sigma = d();
  else if (key == "read_noise") p.read_noise = d();
  else if (key == "hot_pixel_rate") p.hot_pixel_rate = d();
  else throw std::runtime_error("unknown manifest parameter '" + key + "'");
}

}  // namespace

void write_arrays(const std::filesystem::path& path, const ArrayMap& arrays) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os.write(kMagic, sizeof(kMagic));
  put<uint32_t>(os, kVersion);
  put<uint32_t>(os, static_cast<uint32_t>(arrays.size()));
  for (const auto& [name, tensor] : arrays) {
    auto t = tensor.detach().to(torch::kCPU, torch::kFloat32).contiguous();
    put<uint32_t>(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<uint32_t>(os, static_cast<uint32_t>(t.dim()));
    for (auto s : t.sizes()) put<int64_t>(os, s);
    os.write(reinterpret_cast<const char*>(t.data_ptr<float>()), static_cast<std::streamsize>(t.numel() * sizeof(float)));
  }
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

ArrayMap read_arrays(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error(path.string() + " is not an array container");
  if (get<uint32_t>(is) != kVersion) throw std::runtime_error("unsupported container version in " + path.string());
  const auto count = get<uint32_t>(is);
  ArrayMap out;
  for (uint32_t a = 0; a < count; ++a) {
    std::string name(get<uint32_t>(is), '\0');
    is.read(name.data(), static_cast<std::streamsize>(name.size()));
    const auto ndim = get<uint32_t>(is);
    std::vector<int64_t> sizes(ndim);
    for (auto& s : sizes) s = get<int64_t>(is);
    auto t = torch::empty(sizes, torch::kFloat32);
    is.read(reinterpret_cast<char*>(t.data_ptr<float>()), static_cast<std::streamsize>(t.numel() * sizeof(float)));
    if (!is) throw std::runtime_error("truncated array '" + name + "' in " + path.string());
    out.emplace(std::move(name), std::move(t));
  }
  return out;
}

std::string to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw std::invalid_argument("unknown split '" + s + "'");
}

std::vector<SampleRecord> Manifest::in_split(Split s) const {
  std::vector<SampleRecord> out;
  for (const auto& r : records)
    if (r.split == s) out.push_back(r);
  return out;
}

std::array<int64_t, 3> split_sizes(int64_t n, const SplitFractions& f) {
  const auto train = std::min<int64_t>(n, std::llround(f.train * static_cast<double>(n)));
  const auto val = std::min<int64_t>(n - train, std::llround(f.val * static_cast<double>(n)));
  return {train, val, n - train - val};
}

Manifest make_dataset(int64_t n, const std::filesystem::path& dir, const DatasetOptions& options) {
  if (n < 1) throw std::invalid_argument("dataset needs at least one sample");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());

  // Seeded Fisher-Yates over ids decides split membership.
  std::vector<int64_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(splitmix64(options.base_seed));
  for (size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[static_cast<size_t>(rng() % (i + 1))]);
  const auto sizes = split_sizes(n, options.split);
  std::vector<Split> split_of(static_cast<size_t>(n));
  for (size_t k = 0; k < order.size(); ++k) {
    const auto pos = static_cast<int64_t>(k);
    split_of[static_cast<size_t>(order[k])] = pos < sizes[0] ? Split::Train
                                              : pos < sizes[0] + sizes[1] ? Split::Val
                                                                          : Split::Test;
  }

  Manifest manifest;
  manifest.options = options;
  const auto seed_root = splitmix64(options.base_seed ^ 0x5EEDULL);
  for (int64_t i = 0; i < n; ++i) {
    SampleRecord rec;
    rec.id = i;
    rec.seed = splitmix64(seed_root + static_cast<uint64_t>(i));
    rec.split = split_of[static_cast<size_t>(i)];
    auto sample = generate_cirrus_sample(rec.seed, options.params);
    rec.has_cirrus = sample.has_cirrus;
    rec.coverage = coverage(sample.consensus, 0.5);
    std::ostringstream name;
    name << "sample_" << std::setw(5) << std::setfill('0') << i << ".cma";
    rec.file = name.str();
    write_arrays(dir / rec.file,
                 {{"image", sample.image}, {"intensity", sample.intensity}, {"consensus", sample.consensus}});
    manifest.records.push_back(rec);
  }
  write_manifest(dir / "manifest.tsv", manifest);
  return manifest;
}

void write_manifest(const std::filesystem::path& path, const Manifest& m) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "# cirrus-dataset v1\n";
  os << "# split rounding: train=round(f_train*n) val=round(f_val*n) test=n-train-val\n";
  for (const auto& [k, v] : params_to_kv(m.options)) os << "# param " << k << '=' << v << '\n';
  for (const auto& a : m.options.params.annotators)
    os << "# annotator " << format_double(a.threshold) << ' ' << format_double(a.jitter) << ' '
       << format_double(a.weight) << '\n';
  os << "id\tseed\tsplit\tcoverage\tcirrus\tfile\n";
  int64_t contaminated = 0;
  double cov = 0.0;
  for (const auto& r : m.records) {
    os << r.id << '\t' << r.seed << '\t' << to_string(r.split) << '\t' << format_double(r.coverage) << '\t'
       << (r.has_cirrus ? 1 : 0) << '\t' << r.file << '\n';
    if (r.has_cirrus) {
      ++contaminated;
      cov += r.coverage;
    }
  }
  const auto n = static_cast<double>(std::max<size_t>(m.records.size(), 1));
  os << "# stats samples=" << m.records.size() << " contaminated=" << contaminated
     << " prevalence=" << format_double(static_cast<double>(contaminated) / n) << " mean_coverage_contaminated="
     << format_double(contaminated ? cov / static_cast<double>(contaminated) : 0.0) << '\n';
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read manifest " + path.string());
  Manifest m;
  m.options.params.annotators.clear();
  std::string line;
  bool header_seen = false;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line.rfind("# param ", 0) == 0) {
      const auto kv = line.substr(8);
      const auto eq = kv.find('=');
      apply_kv(m.options, kv.substr(0, eq), kv.substr(eq + 1));
      continue;
    }
    if (line.rfind("# annotator ", 0) == 0) {
      std::istringstream ss(line.substr(12));
      Annotator a;
      ss >> a.threshold >> a.jitter >> a.weight;
      m.options.params.annotators.push_back(a);
      continue;
    }
    if (line[0] == '#') continue;
    if (!header_seen) {
      header_seen = true;
      continue;
    }
    std::istringstream ss(line);
    SampleRecord r;
    std::string split;
    int cirrus = 0;
    ss >> r.id >> r.seed >> split >> r.coverage >> cirrus >> r.file;
    if (!ss) throw std::runtime_error("malformed manifest line: " + line);
    r.split = parse_split(split);
    r.has_cirrus = cirrus != 0;
    m.records.push_back(r);
  }
  return m;
}

CirrusSample load_sample(const std::filesystem::path& dir, const SampleRecord& record) {
  auto arrays = read_arrays(dir / record.file);
  CirrusSample s;
  s.image = arrays.at("image");
  s.intensity = arrays.at("intensity");
  s.consensus = arrays.at("consensus");
  s.seed = record.seed;
  s.has_cirrus = record.has_cirrus;
  return s;
}

std::vector<CirrusSample> load_split(const std::filesystem::path& dir, Split split) {
  const auto manifest = read_manifest(dir / "manifest.tsv");
  std::vector<CirrusSample> out;
  for (const auto& r : manifest.in_split(split)) out.push_back(load_sample(dir, r));
  return out;
}

}  // namespace cirrus
