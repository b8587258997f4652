#pragma once

// Paired-modality tiles, the on-disk dataset layout, the synthetic scene
// generator and geometric augmentation.
//
// Layout:
//   <root>/manifest.json
//   <root>/tiles/<id>.sar.bin   float32 LE, C_s x H x W
//   <root>/tiles/<id>.opt.bin   float32 LE, C_o x H x W
//   <root>/tiles/<id>.y.bin     uint8, H x W, values {0, 1}

#include "mmfuse/tensor.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace mmfuse {

struct Tile {
  std::string id;
  FeatureMap<float> x_sar;
  FeatureMap<float> x_opt;
  FeatureMap<float> y;  // one channel, values exactly 0 or 1

  Index height() const { return y.height; }
  Index width() const { return y.width; }

  // Throws ValidationError / ShapeError when an invariant does not hold.
  void validate() const;

  friend bool operator==(const Tile&, const Tile&) = default;
};

struct SyntheticConfig {
  std::int64_t n_train = 64;
  std::int64_t n_val = 8;
  std::int64_t n_test = 32;
  std::int64_t height = 64;
  std::int64_t width = 64;
  std::int64_t sar_channels = 2;
  std::int64_t opt_channels = 4;
  double target_urban_fraction = 0.3;
  double informativeness_sar = 1.0;
  double informativeness_opt = 1.0;
  double speckle_strength = 0.3;
  double additive_noise_std = 0.1;
  double blob_sigma = 0.0;  // pixels; 0 selects min(height, width) / 10
  std::uint64_t seed = 0;

  void validate() const;
  double effective_blob_sigma() const;
};

void to_json(nlohmann::json& j, const SyntheticConfig& c);
void from_json(const nlohmann::json& j, SyntheticConfig& c);

inline const std::vector<std::string>& split_names() {
  static const std::vector<std::string> names{"train", "val", "test"};
  return names;
}

struct DatasetManifest {
  std::map<std::string, std::vector<std::string>> splits;  // train / val / test
  Index sar_channels = 0;
  Index opt_channels = 0;
  Index height = 0;
  Index width = 0;
  nlohmann::json provenance = nlohmann::json::object();

  const std::vector<std::string>& split(const std::string& name) const;
  bool contains(const std::string& id) const;
  void validate() const;
};

void to_json(nlohmann::json& j, const DatasetManifest& m);
void from_json(const nlohmann::json& j, DatasetManifest& m);

class Dataset {
 public:
  // Reads and validates <root>/manifest.json.
  static Dataset open(const std::filesystem::path& root);
  // Creates the directory layout and writes the manifest.
  static Dataset create(const std::filesystem::path& root, DatasetManifest manifest);

  const DatasetManifest& manifest() const { return manifest_; }
  const std::filesystem::path& root() const { return root_; }

  Tile load_tile(const std::string& id) const;
  std::vector<Tile> load_split(const std::string& split) const;
  void store_tile(const Tile& tile) const;

  // FNV-1a over the manifest and every tile file, hex encoded.
  std::string content_hash() const;

 private:
  std::filesystem::path root_;
  DatasetManifest manifest_;
};

// Deterministic in config.seed; writes the dataset to `root`.
Dataset generate_synthetic_dataset(const SyntheticConfig& config, const std::filesystem::path& root);

// One generated tile (exposed for tests). `index` is the position over the
// concatenation train + val + test; the tile's random stream depends only on
// (seed, index).
Tile generate_synthetic_tile(const SyntheticConfig& config, std::int64_t index, const std::string& id);

// Label blob mask: Gaussian-smoothed white noise thresholded at the normal
// quantile matching the target fraction.
FeatureMap<float> generate_blob_mask(const SyntheticConfig& config, std::mt19937_64& rng);

struct AugmentDraw {
  bool flip_horizontal = false;
  bool flip_vertical = false;
  int rotations = 0;  // counter-clockwise quarter turns, 0..3
};

AugmentDraw draw_augmentation(std::mt19937_64& rng);

// Flips first (horizontal, then vertical), then k quarter turns; the same
// transform is applied to all three rasters.
Tile augment(const Tile& tile, const AugmentDraw& draw);

template <typename Scalar>
FeatureMap<Scalar> flip_horizontal(const FeatureMap<Scalar>& in) {
  FeatureMap<Scalar> out(in.channels(), in.height, in.width);
  for (Index c = 0; c < in.channels(); ++c)
    for (Index y = 0; y < in.height; ++y)
      for (Index x = 0; x < in.width; ++x) out(c, y, x) = in(c, y, in.width - 1 - x);
  return out;
}

template <typename Scalar>
FeatureMap<Scalar> flip_vertical(const FeatureMap<Scalar>& in) {
  FeatureMap<Scalar> out(in.channels(), in.height, in.width);
  for (Index c = 0; c < in.channels(); ++c)
    for (Index y = 0; y < in.height; ++y)
      for (Index x = 0; x < in.width; ++x) out(c, y, x) = in(c, in.height - 1 - y, x);
  return out;
}

// One counter-clockwise quarter turn; output is W x H.
template <typename Scalar>
FeatureMap<Scalar> rotate90(const FeatureMap<Scalar>& in) {
  FeatureMap<Scalar> out(in.channels(), in.width, in.height);
  for (Index c = 0; c < in.channels(); ++c)
    for (Index y = 0; y < out.height; ++y)
      for (Index x = 0; x < out.width; ++x) out(c, y, x) = in(c, x, in.width - 1 - y);
  return out;
}

// Raw raster files.
void write_f32(const std::filesystem::path& path, const RowMatrix<float>& values);
RowMatrix<float> read_f32(const std::filesystem::path& path, Index rows, Index cols);
void write_u8(const std::filesystem::path& path, const RowMatrix<float>& binary_values);
RowMatrix<float> read_u8(const std::filesystem::path& path, Index rows, Index cols);

}  // namespace mmfuse
