#include "mmfuse/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

namespace mmfuse {

namespace fs = std::filesystem;

namespace {

constexpr double kSarUrban = 0.8;
constexpr double kSarBackground = 0.2;
constexpr double kOptJitter = 0.05;

double optical_background(Index c) { return 0.3 + 0.1 * static_cast<double>(c % 3); }
double optical_urban_offset(Index c) { return c % 2 == 0 ? 0.3 : -0.2; }

// Upper-tail threshold t with P(Z > t) = fraction for standard normal Z.
double normal_upper_quantile(double fraction) {
  double lo = -40.0, hi = 40.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    const double upper = 0.5 * std::erfc(mid / std::sqrt(2.0));
    (upper > fraction ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
  }
}

std::vector<char> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string tile_file(const std::string& id, const char* suffix) { return id + suffix; }

}  // namespace

void Tile::validate() const {
  if (y.channels() != 1) throw ShapeError("tile " + id + ": label must have one channel");
  if (x_sar.height != y.height || x_sar.width != y.width || x_opt.height != y.height || x_opt.width != y.width) {
    throw ShapeError("tile " + id + ": rasters differ in spatial size");
  }
  if (!((y.data.array() == 0.0f) || (y.data.array() == 1.0f)).all()) {
    throw ValidationError("tile " + id + ": label is not binary");
  }
  if (!x_sar.data.allFinite() || !x_opt.data.allFinite()) {
    throw ValidationError("tile " + id + ": non-finite raster values");
  }
}

void SyntheticConfig::validate() const {
  auto positive = [](std::int64_t v, const char* name) {
    if (v <= 0) throw ValidationError(std::string(name) + " must be positive (got " + std::to_string(v) + ")");
  };
  positive(n_train, "n_train");
  positive(n_val, "n_val");
  positive(n_test, "n_test");
  positive(height, "height");
  positive(width, "width");
  positive(sar_channels, "sar_channels");
  positive(opt_channels, "opt_channels");
  if (!(target_urban_fraction > 0.0 && target_urban_fraction < 1.0)) {
    throw ValidationError("target_urban_fraction must lie in (0, 1)");
  }
  if (!(informativeness_sar >= 0.0 && informativeness_sar <= 1.0)) {
    throw ValidationError("informativeness_sar must lie in [0, 1]");
  }
  if (!(informativeness_opt >= 0.0 && informativeness_opt <= 1.0)) {
    throw ValidationError("informativeness_opt must lie in [0, 1]");
  }
  if (!(speckle_strength >= 0.0)) throw ValidationError("speckle_strength must be nonnegative");
  if (!(additive_noise_std >= 0.0)) throw ValidationError("additive_noise_std must be nonnegative");
  if (!(blob_sigma >= 0.0)) throw ValidationError("blob_sigma must be nonnegative");
}

double SyntheticConfig::effective_blob_sigma() const {
  return blob_sigma > 0.0 ? blob_sigma : static_cast<double>(std::min(height, width)) / 10.0;
}

void to_json(nlohmann::json& j, const SyntheticConfig& c) {
  j = {{"n_train", c.n_train},
       {"n_val", c.n_val},
       {"n_test", c.n_test},
       {"height", c.height},
       {"width", c.width},
       {"sar_channels", c.sar_channels},
       {"opt_channels", c.opt_channels},
       {"target_urban_fraction", c.target_urban_fraction},
       {"informativeness_sar", c.informativeness_sar},
       {"informativeness_opt", c.informativeness_opt},
       {"speckle_strength", c.speckle_strength},
       {"additive_noise_std", c.additive_noise_std},
       {"blob_sigma", c.blob_sigma},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, SyntheticConfig& c) {
  SyntheticConfig d;
  c.n_train = j.value("n_train", d.n_train);
  c.n_val = j.value("n_val", d.n_val);
  c.n_test = j.value("n_test", d.n_test);
  c.height = j.value("height", d.height);
  c.width = j.value("width", d.width);
  c.sar_channels = j.value("sar_channels", d.sar_channels);
  c.opt_channels = j.value("opt_channels", d.opt_channels);
  c.target_urban_fraction = j.value("target_urban_fraction", d.target_urban_fraction);
  c.informativeness_sar = j.value("informativeness_sar", d.informativeness_sar);
  c.informativeness_opt = j.value("informativeness_opt", d.informativeness_opt);
  c.speckle_strength = j.value("speckle_strength", d.speckle_strength);
  c.additive_noise_std = j.value("additive_noise_std", d.additive_noise_std);
  c.blob_sigma = j.value("blob_sigma", d.blob_sigma);
  c.seed = j.value("seed", d.seed);
}

const std::vector<std::string>& DatasetManifest::split(const std::string& name) const {
  static const std::vector<std::string> empty;
  const auto& known = split_names();
  if (std::find(known.begin(), known.end(), name) == known.end()) {
    throw ValidationError("unknown split '" + name + "' (expected train, val or test)");
  }
  auto it = splits.find(name);
  return it == splits.end() ? empty : it->second;
}

bool DatasetManifest::contains(const std::string& id) const {
  for (const auto& [name, ids] : splits) {
    if (std::find(ids.begin(), ids.end(), id) != ids.end()) return true;
  }
  return false;
}

void DatasetManifest::validate() const {
  if (sar_channels < 1 || opt_channels < 1) throw ValidationError("manifest: channel counts must be positive");
  if (height < 1 || width < 1) throw ValidationError("manifest: tile size must be positive");
  std::set<std::string> seen;
  for (const auto& [name, ids] : splits) {
    if (std::find(split_names().begin(), split_names().end(), name) == split_names().end()) {
      throw ValidationError("manifest: unknown split '" + name + "'");
    }
    for (const auto& id : ids) {
      if (id.empty() || id.find('/') != std::string::npos) throw ValidationError("manifest: invalid tile id '" + id + "'");
      if (!seen.insert(id).second) throw ValidationError("manifest: tile id '" + id + "' listed more than once");
    }
  }
}

void to_json(nlohmann::json& j, const DatasetManifest& m) {
  j = {{"format_version", 1},
       {"splits", m.splits},
       {"channels", {{"sar", m.sar_channels}, {"opt", m.opt_channels}}},
       {"height", m.height},
       {"width", m.width},
       {"provenance", m.provenance}};
}

void from_json(const nlohmann::json& j, DatasetManifest& m) {
  j.at("splits").get_to(m.splits);
  m.sar_channels = j.at("channels").at("sar").get<Index>();
  m.opt_channels = j.at("channels").at("opt").get<Index>();
  m.height = j.at("height").get<Index>();
  m.width = j.at("width").get<Index>();
  m.provenance = j.value("provenance", nlohmann::json::object());
}

void write_f32(const fs::path& path, const RowMatrix<float>& values) {
  std::vector<std::uint32_t> buf(static_cast<size_t>(values.size()));
  for (Index i = 0; i < values.size(); ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, values.data() + i, 4);
    buf[static_cast<size_t>(i)] = to_le(bits);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
  if (!out) throw IoError("write failed: " + path.string());
}

RowMatrix<float> read_f32(const fs::path& path, Index rows, Index cols) {
  const std::vector<char> bytes = read_file(path);
  if (static_cast<Index>(bytes.size()) != rows * cols * 4) {
    throw ShapeError(path.filename().string() + ": expected " + std::to_string(rows * cols * 4) + " bytes (" +
                     std::to_string(rows) + " channels), found " + std::to_string(bytes.size()));
  }
  RowMatrix<float> m(rows, cols);
  for (Index i = 0; i < rows * cols; ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, bytes.data() + 4 * i, 4);
    bits = to_le(bits);
    std::memcpy(m.data() + i, &bits, 4);
  }
  return m;
}

void write_u8(const fs::path& path, const RowMatrix<float>& binary_values) {
  std::vector<char> buf(static_cast<size_t>(binary_values.size()));
  for (Index i = 0; i < binary_values.size(); ++i) buf[static_cast<size_t>(i)] = binary_values.data()[i] > 0.5f ? 1 : 0;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

RowMatrix<float> read_u8(const fs::path& path, Index rows, Index cols) {
  const std::vector<char> bytes = read_file(path);
  if (static_cast<Index>(bytes.size()) != rows * cols) {
    throw ShapeError(path.filename().string() + ": expected " + std::to_string(rows * cols) + " bytes, found " +
                     std::to_string(bytes.size()));
  }
  RowMatrix<float> m(rows, cols);
  for (Index i = 0; i < rows * cols; ++i) {
    const auto v = static_cast<unsigned char>(bytes[static_cast<size_t>(i)]);
    if (v > 1) throw ValidationError(path.filename().string() + ": corrupt label value " + std::to_string(v));
    m.data()[i] = static_cast<float>(v);
  }
  return m;
}

Dataset Dataset::open(const fs::path& root) {
  const fs::path mpath = root / "manifest.json";
  if (!fs::exists(mpath)) throw IoError("dataset manifest not found: " + mpath.string());
  std::ifstream in(mpath);
  Dataset ds;
  ds.root_ = root;
  try {
    ds.manifest_ = nlohmann::json::parse(in).get<DatasetManifest>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corrupt manifest " + mpath.string() + ": " + e.what());
  }
  ds.manifest_.validate();
  return ds;
}

Dataset Dataset::create(const fs::path& root, DatasetManifest manifest) {
  manifest.validate();
  std::error_code ec;
  fs::create_directories(root / "tiles", ec);
  if (ec) throw IoError("cannot create dataset directory " + root.string() + ": " + ec.message());
  std::ofstream out(root / "manifest.json", std::ios::trunc);
  if (!out) throw IoError("cannot write manifest in " + root.string());
  out << nlohmann::json(manifest).dump(2) << "\n";
  Dataset ds;
  ds.root_ = root;
  ds.manifest_ = std::move(manifest);
  return ds;
}

Tile Dataset::load_tile(const std::string& id) const {
  if (!manifest_.contains(id)) throw ValidationError("unknown id '" + id + "'");
  const fs::path dir = root_ / "tiles";
  const Index h = manifest_.height, w = manifest_.width;
  Tile t;
  t.id = id;
  t.x_sar = FeatureMap<float>(read_f32(dir / tile_file(id, ".sar.bin"), manifest_.sar_channels, h * w), h, w);
  t.x_opt = FeatureMap<float>(read_f32(dir / tile_file(id, ".opt.bin"), manifest_.opt_channels, h * w), h, w);
  t.y = FeatureMap<float>(read_u8(dir / tile_file(id, ".y.bin"), 1, h * w), h, w);
  t.validate();
  return t;
}

std::vector<Tile> Dataset::load_split(const std::string& split) const {
  std::vector<Tile> tiles;
  for (const auto& id : manifest_.split(split)) tiles.push_back(load_tile(id));
  return tiles;
}

void Dataset::store_tile(const Tile& tile) const {
  tile.validate();
  if (tile.x_sar.channels() != manifest_.sar_channels || tile.x_opt.channels() != manifest_.opt_channels ||
      tile.height() != manifest_.height || tile.width() != manifest_.width) {
    throw ShapeError("tile " + tile.id + " does not match the manifest shapes");
  }
  const fs::path dir = root_ / "tiles";
  write_f32(dir / tile_file(tile.id, ".sar.bin"), tile.x_sar.data);
  write_f32(dir / tile_file(tile.id, ".opt.bin"), tile.x_opt.data);
  write_u8(dir / tile_file(tile.id, ".y.bin"), tile.y.data);
}

std::string Dataset::content_hash() const {
  std::uint64_t h = 1469598103934665603ull;
  auto feed = [&h](const std::vector<char>& bytes) {
    for (char c : bytes) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ull;
    }
  };
  feed(read_file(root_ / "manifest.json"));
  for (const auto& name : split_names()) {
    for (const auto& id : manifest_.split(name)) {
      for (const char* suffix : {".sar.bin", ".opt.bin", ".y.bin"}) feed(read_file(root_ / "tiles" / tile_file(id, suffix)));
    }
  }
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

FeatureMap<float> generate_blob_mask(const SyntheticConfig& config, std::mt19937_64& rng) {
  const double sigma = config.effective_blob_sigma();
  const auto radius = static_cast<Index>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(static_cast<size_t>(2 * radius + 1));
  double ksum = 0.0;
  for (Index i = -radius; i <= radius; ++i) {
    kernel[static_cast<size_t>(i + radius)] = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
    ksum += kernel[static_cast<size_t>(i + radius)];
  }
  double ksq = 0.0;
  for (double& k : kernel) {
    k /= ksum;
    ksq += k * k;
  }
  const Index h = config.height, w = config.width;
  const Index ph = h + 2 * radius, pw = w + 2 * radius;
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix<double> noise(ph, pw);
  for (Index r = 0; r < ph; ++r)
    for (Index c = 0; c < pw; ++c) noise(r, c) = normal(rng);
  Matrix<double> rows_blurred = Matrix<double>::Zero(ph, w);
  for (Index r = 0; r < ph; ++r)
    for (Index c = 0; c < w; ++c)
      for (Index k = 0; k <= 2 * radius; ++k) rows_blurred(r, c) += kernel[static_cast<size_t>(k)] * noise(r, c + k);
  // Unit white noise blurred by the separable kernel g has standard
  // deviation sum_i g_i^2.
  const double field_std = ksq;
  const double threshold = normal_upper_quantile(config.target_urban_fraction) * field_std;
  FeatureMap<float> mask(1, h, w);
  for (Index r = 0; r < h; ++r) {
    for (Index c = 0; c < w; ++c) {
      double v = 0.0;
      for (Index k = 0; k <= 2 * radius; ++k) v += kernel[static_cast<size_t>(k)] * rows_blurred(r + k, c);
      mask(0, r, c) = v > threshold ? 1.0f : 0.0f;
    }
  }
  return mask;
}

Tile generate_synthetic_tile(const SyntheticConfig& config, std::int64_t index, const std::string& id) {
  std::seed_seq seq{static_cast<std::uint32_t>(config.seed), static_cast<std::uint32_t>(config.seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(static_cast<std::uint64_t>(index) >> 32)};
  std::mt19937_64 rng(seq);
  std::bernoulli_distribution sar_draw(config.informativeness_sar);
  std::bernoulli_distribution opt_draw(config.informativeness_opt);
  const bool sar_informative = sar_draw(rng);
  const bool opt_informative = opt_draw(rng);

  Tile t;
  t.id = id;
  t.y = generate_blob_mask(config, rng);
  const Index h = config.height, w = config.width;
  const double f = config.target_urban_fraction;

  t.x_sar = FeatureMap<float>(config.sar_channels, h, w);
  const double s2 = config.speckle_strength * config.speckle_strength;
  std::gamma_distribution<double> speckle(s2 > 0 ? 1.0 / s2 : 1.0, s2 > 0 ? s2 : 1.0);
  const double sar_flat = kSarBackground + (kSarUrban - kSarBackground) * f;
  for (Index c = 0; c < config.sar_channels; ++c) {
    for (Index p = 0; p < h * w; ++p) {
      const double base = sar_informative ? (t.y.data(0, p) > 0.5f ? kSarUrban : kSarBackground) : sar_flat;
      const double mult = s2 > 0 ? speckle(rng) : 1.0;
      t.x_sar.data(c, p) = static_cast<float>(base * mult);
    }
  }

  t.x_opt = FeatureMap<float>(config.opt_channels, h, w);
  std::normal_distribution<double> jitter(0.0, kOptJitter);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (Index c = 0; c < config.opt_channels; ++c) {
    const double background = optical_background(c) + jitter(rng);
    const double urban = optical_background(c) + optical_urban_offset(c) + jitter(rng);
    const double flat = optical_background(c) + f * optical_urban_offset(c) + jitter(rng);
    for (Index p = 0; p < h * w; ++p) {
      const double base = opt_informative ? (t.y.data(0, p) > 0.5f ? urban : background) : flat;
      t.x_opt.data(c, p) = static_cast<float>(base + config.additive_noise_std * noise(rng));
    }
  }
  return t;
}

Dataset generate_synthetic_dataset(const SyntheticConfig& config, const fs::path& root) {
  config.validate();
  DatasetManifest manifest;
  manifest.sar_channels = config.sar_channels;
  manifest.opt_channels = config.opt_channels;
  manifest.height = config.height;
  manifest.width = config.width;
  const std::vector<std::pair<std::string, std::int64_t>> counts{
      {"train", config.n_train}, {"val", config.n_val}, {"test", config.n_test}};
  for (const auto& [name, n] : counts) {
    auto& ids = manifest.splits[name];
    for (std::int64_t i = 0; i < n; ++i) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%s_%05lld", name.c_str(), static_cast<long long>(i));
      ids.emplace_back(buf);
    }
  }
  manifest.provenance = {{"generator", "synthetic"}, {"seed", config.seed}, {"config", config}};
  Dataset ds = Dataset::create(root, manifest);
  std::int64_t index = 0;
  for (const auto& name : split_names()) {
    for (const auto& id : manifest.split(name)) ds.store_tile(generate_synthetic_tile(config, index++, id));
  }
  return ds;
}

AugmentDraw draw_augmentation(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> coin(0, 1);
  std::uniform_int_distribution<int> quarter(0, 3);
  AugmentDraw d;
  d.flip_horizontal = coin(rng) == 1;
  d.flip_vertical = coin(rng) == 1;
  d.rotations = quarter(rng);
  return d;
}

namespace {

template <typename Scalar>
FeatureMap<Scalar> transform(const FeatureMap<Scalar>& in, const AugmentDraw& d) {
  FeatureMap<Scalar> out = in;
  if (d.flip_horizontal) out = flip_horizontal(out);
  if (d.flip_vertical) out = flip_vertical(out);
  for (int k = 0; k < ((d.rotations % 4) + 4) % 4; ++k) out = rotate90(out);
  return out;
}

}  // namespace

Tile augment(const Tile& tile, const AugmentDraw& draw) {
  Tile out;
  out.id = tile.id;
  out.x_sar = transform(tile.x_sar, draw);
  out.x_opt = transform(tile.x_opt, draw);
  out.y = transform(tile.y, draw);
  return out;
}

}  // namespace mmfuse
