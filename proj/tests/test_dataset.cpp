#include "mmfuse/dataset.hpp"
#include "support.hpp"

#include <doctest.h>

using namespace mmfuse;
using mmfuse::testing::scratch_dir;

namespace {

SyntheticConfig small_config() {
  SyntheticConfig c;
  c.n_train = 4;
  c.n_val = 2;
  c.n_test = 3;
  c.height = 16;
  c.width = 16;
  c.seed = 42;
  return c;
}

double correlation(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

TEST_CASE("generation is deterministic in the seed") {
  const auto cfg = small_config();
  const auto a = generate_synthetic_dataset(cfg, scratch_dir("gen_a"));
  const auto b = generate_synthetic_dataset(cfg, scratch_dir("gen_b"));
  CHECK(a.content_hash() == b.content_hash());
  CHECK(a.load_tile("test_00002") == b.load_tile("test_00002"));

  auto other = cfg;
  other.seed = 43;
  const auto c = generate_synthetic_dataset(other, scratch_dir("gen_c"));
  CHECK(a.content_hash() != c.content_hash());
}

TEST_CASE("each tile depends only on the seed and its position") {
  const auto cfg = small_config();
  const auto ds = generate_synthetic_dataset(cfg, scratch_dir("gen_pos"));
  // Position over train + val + test: test_00001 is 4 + 2 + 1.
  const Tile direct = generate_synthetic_tile(cfg, 7, "test_00001");
  CHECK(ds.load_tile("test_00001") == direct);

  auto more = cfg;
  more.n_test = 10;
  CHECK(generate_synthetic_tile(more, 7, "test_00001") == direct);
}

TEST_CASE("manifest lists disjoint splits of the configured sizes") {
  const auto ds = generate_synthetic_dataset(small_config(), scratch_dir("gen_manifest"));
  const auto& m = ds.manifest();
  CHECK(m.split("train").size() == 4);
  CHECK(m.split("val").size() == 2);
  CHECK(m.split("test").size() == 3);
  CHECK(m.split("train").front() == "train_00000");
  CHECK(m.sar_channels == 2);
  CHECK(m.opt_channels == 4);
  CHECK(m.provenance.at("seed") == 42);

  const auto reopened = Dataset::open(ds.root());
  CHECK(reopened.manifest().split("test") == m.split("test"));

  auto bad = m;
  bad.splits["val"].push_back("train_00000");
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  auto unknown = m;
  unknown.splits["holdout"] = {"x"};
  CHECK_THROWS_AS(unknown.validate(), ValidationError);
}

TEST_CASE("tiles have the configured shapes and binary labels") {
  const auto cfg = small_config();
  const Tile t = generate_synthetic_tile(cfg, 0, "t");
  CHECK_NOTHROW(t.validate());
  CHECK(t.x_sar.channels() == 2);
  CHECK(t.x_opt.channels() == 4);
  CHECK(t.y.channels() == 1);
  CHECK(t.height() == 16);
  CHECK(((t.y.data.array() == 0.0f) || (t.y.data.array() == 1.0f)).all());
  CHECK((t.x_sar.data.array() >= 0.0f).all());
}

TEST_CASE("label fraction matches the target on average") {
  SyntheticConfig cfg;
  double sum = 0;
  const int n = 200;
  for (int i = 0; i < n; ++i) sum += generate_synthetic_tile(cfg, i, "t").y.data.mean();
  CHECK(std::abs(sum / n - 0.3) <= 0.05);

  cfg.target_urban_fraction = 0.1;
  sum = 0;
  for (int i = 0; i < n; ++i) sum += generate_synthetic_tile(cfg, i, "t").y.data.mean();
  CHECK(std::abs(sum / n - 0.1) <= 0.05);
}

TEST_CASE("informativeness controls how much a modality says about the label") {
  auto pooled_correlation = [](const SyntheticConfig& cfg, bool sar) {
    std::vector<double> v, y;
    for (int i = 0; i < 40; ++i) {
      const Tile t = generate_synthetic_tile(cfg, i, "t");
      const auto& x = sar ? t.x_sar : t.x_opt;
      for (Index p = 0; p < t.y.pixels(); ++p) {
        v.push_back(x.data(0, p));
        y.push_back(t.y.data(0, p));
      }
    }
    return correlation(v, y);
  };
  SyntheticConfig cfg;
  cfg.height = cfg.width = 32;
  cfg.informativeness_sar = 0.0;
  CHECK(std::abs(pooled_correlation(cfg, true)) < 0.1);
  CHECK(pooled_correlation(cfg, false) > 0.5);
  cfg.informativeness_sar = 1.0;
  cfg.informativeness_opt = 0.0;
  CHECK(pooled_correlation(cfg, true) > 0.5);
  CHECK(std::abs(pooled_correlation(cfg, false)) < 0.1);
}

TEST_CASE("store and load round-trip a tile") {
  const auto ds = generate_synthetic_dataset(small_config(), scratch_dir("gen_rt"));
  Tile t = ds.load_tile("train_00001");
  t.x_sar.data(0, 0) = 123.5f;
  ds.store_tile(t);
  CHECK(ds.load_tile("train_00001") == t);
  CHECK_THROWS_AS(ds.load_tile("nope"), ValidationError);
  CHECK(ds.load_split("val").size() == 2);
  CHECK_THROWS_AS(ds.load_split("holdout"), ValidationError);
}

TEST_CASE("content hash changes with any tile byte") {
  const auto ds = generate_synthetic_dataset(small_config(), scratch_dir("gen_hash"));
  const auto before = ds.content_hash();
  Tile t = ds.load_tile("val_00000");
  t.x_opt.data(1, 3) += 0.25f;
  ds.store_tile(t);
  CHECK(ds.content_hash() != before);
}

TEST_CASE("opening a missing dataset fails") {
  CHECK_THROWS(Dataset::open(scratch_dir("empty_ds") / "nothing"));
}

TEST_CASE("configuration validation names the offending field") {
  auto cfg = small_config();
  cfg.n_train = -5;
  try {
    cfg.validate();
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("n_train") != std::string::npos);
    CHECK(msg.find("-5") != std::string::npos);
  }
  cfg = small_config();
  cfg.target_urban_fraction = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = small_config();
  cfg.informativeness_opt = 1.5;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = small_config();
  cfg.speckle_strength = -0.1;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
}

TEST_CASE("config JSON round-trips") {
  auto cfg = small_config();
  cfg.blob_sigma = 2.5;
  const nlohmann::json j = cfg;
  const auto back = j.get<SyntheticConfig>();
  CHECK(back.blob_sigma == 2.5);
  CHECK(back.seed == 42);
  CHECK(back.n_test == 3);
  CHECK(cfg.effective_blob_sigma() == 2.5);
  CHECK(SyntheticConfig{}.effective_blob_sigma() == doctest::Approx(6.4));
}

TEST_CASE("geometric transforms compose to the identity") {
  std::mt19937_64 rng(1);
  const auto f = testing::random_map<float>(2, 3, 5, rng);
  CHECK(flip_horizontal(flip_horizontal(f)) == f);
  CHECK(flip_vertical(flip_vertical(f)) == f);
  const auto r = rotate90(f);
  CHECK(r.height == 5);
  CHECK(r.width == 3);
  CHECK(rotate90(rotate90(rotate90(r))) == f);
  // Two quarter turns are both flips.
  CHECK(rotate90(rotate90(f)) == flip_vertical(flip_horizontal(f)));
  // Counter-clockwise: the top-right corner moves to the top-left.
  CHECK(r(0, 0, 0) == f(0, 0, 4));
  CHECK(r(1, 4, 2) == f(1, 2, 0));
}

TEST_CASE("augmentation moves all rasters together") {
  auto cfg = small_config();
  Tile t = generate_synthetic_tile(cfg, 0, "t");
  t.y.data.setZero();
  t.x_sar.data.setZero();
  t.x_opt.data.setZero();
  t.y(0, 1, 3) = 1;
  t.x_sar(1, 1, 3) = 5;
  t.x_opt(2, 1, 3) = 7;
  for (bool fh : {false, true})
    for (bool fv : {false, true})
      for (int k = 0; k < 4; ++k) {
        const Tile a = augment(t, {fh, fv, k});
        CHECK_NOTHROW(a.validate());
        Index py = -1, px = -1;
        for (Index y = 0; y < a.height(); ++y)
          for (Index x = 0; x < a.width(); ++x)
            if (a.y(0, y, x) == 1) {
              py = y;
              px = x;
            }
        REQUIRE(py >= 0);
        CHECK(a.x_sar(1, py, px) == 5);
        CHECK(a.x_opt(2, py, px) == 7);
        CHECK(a.y.data.sum() == 1);
      }
  CHECK(augment(t, {}) == t);
}

TEST_CASE("augmentation draws are reproducible") {
  std::mt19937_64 a(9), b(9);
  for (int i = 0; i < 10; ++i) {
    const auto x = draw_augmentation(a), y = draw_augmentation(b);
    CHECK(x.flip_horizontal == y.flip_horizontal);
    CHECK(x.flip_vertical == y.flip_vertical);
    CHECK(x.rotations == y.rotations);
    CHECK(x.rotations >= 0);
    CHECK(x.rotations <= 3);
  }
}

TEST_CASE("a SAR raster equal to the label stays equal under every augmentation") {
  auto cfg = small_config();
  Tile t = generate_synthetic_tile(cfg, 1, "t");
  for (Index c = 0; c < t.x_sar.channels(); ++c) t.x_sar.data.row(c) = t.y.data.row(0);
  std::mt19937_64 rng(3);
  for (int i = 0; i < 16; ++i) {
    const Tile a = augment(t, draw_augmentation(rng));
    for (Index c = 0; c < a.x_sar.channels(); ++c) CHECK(a.x_sar.data.row(c) == a.y.data.row(0));
  }
}
