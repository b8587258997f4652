#pragma once

#include "mmfuse/dual_model.hpp"
#include "mmfuse/tensor.hpp"

#include <filesystem>
#include <random>
#include <string>

namespace mmfuse::testing {

template <typename Scalar = double>
FeatureMap<Scalar> random_map(Index c, Index h, Index w, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  FeatureMap<Scalar> f(c, h, w);
  for (Index i = 0; i < f.data.size(); ++i) f.data.data()[i] = static_cast<Scalar>(u(rng));
  return f;
}

inline FeatureMap<double> random_mask(Index h, Index w, std::mt19937_64& rng) {
  std::bernoulli_distribution b(0.4);
  FeatureMap<double> f(1, h, w);
  for (Index i = 0; i < f.data.size(); ++i) f.data.data()[i] = b(rng) ? 1.0 : 0.0;
  return f;
}

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

// Fresh, empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("mmfuse_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline DualModelConfig small_dual_config(Index base = 2, Index depth = 2, std::uint64_t seed = 7) {
  DualModelConfig cfg;
  cfg.sar = {.in_channels = 2, .base_channels = base, .depth = depth, .tap_points = {}};
  cfg.opt = {.in_channels = 3, .base_channels = base, .depth = depth, .tap_points = {}};
  for (int s = 1; s <= depth; ++s) {
    cfg.sar.tap_points.push_back(s);
    cfg.opt.tap_points.push_back(s);
  }
  cfg.seed = seed;
  return cfg;
}

}  // namespace mmfuse::testing
