#pragma once

#include "mmfuse/cur.hpp"
#include "mmfuse/dataset.hpp"
#include "mmfuse/dual_model.hpp"
#include "mmfuse/evaluation.hpp"
#include "mmfuse/losses.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace mmfuse {

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Architecture knobs; channel counts come from the dataset manifest.
struct ModelSpec {
  Index base_channels = 8;
  Index depth = 4;
  std::vector<int> tap_points = {1, 2, 3, 4};
  bool zero_excitation_init = false;

  DualModelConfig resolve(Index sar_channels, Index opt_channels, std::uint64_t seed) const;
};

struct AdamWConfig {
  double learning_rate = 1e-4;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adam with decoupled weight decay: the decay shrinks parameters directly
// instead of entering the moment estimates.
class AdamW {
 public:
  AdamW(const AdamWConfig& cfg, const DualModel<double>& model);
  void step(DualModel<double>& model, const DualModel<double>& grad);
  std::int64_t steps() const { return t_; }

 private:
  AdamWConfig cfg_;
  std::vector<Matrix<double>> m_;
  std::vector<Matrix<double>> v_;
  std::int64_t t_ = 0;
};

struct TrainConfig {
  std::int64_t epochs = 15;
  std::int64_t batch_size = 8;
  AdamWConfig optimizer;
  std::uint64_t seed = 0;
  LossConfig loss;
  ModelSpec model;
  std::filesystem::path dataset;
  std::filesystem::path output_dir;
  std::int64_t eval_every = 0;  // epochs between validation passes; 0 disables
  bool augment = true;
  bool select_best = false;  // also keep the best-validation-F1 checkpoint
  double threshold = 0.5;

  void validate() const;
};

struct StepRecord {
  std::int64_t step = 0;
  std::int64_t epoch = 0;
  double loss = 0;
  double loss_sar = 0;
  double loss_opt = 0;
};

struct EvalRecord {
  std::string kind;  // "eval" during training, "final" after the last epoch
  std::int64_t epoch = 0;
  std::string split;
  double f1_sar = 0;
  double f1_opt = 0;
  double f1_fusion = 0;
};

struct TrainHistory {
  std::vector<StepRecord> steps;
  std::vector<EvalRecord> evals;

  // One JSON object per line: steps first, evaluations interleaved by epoch.
  std::string to_jsonl() const;
  const EvalRecord* final_record(const std::string& split) const;
};

struct TrainResult {
  DualModel<double> model;
  TrainHistory history;
  std::filesystem::path checkpoint;
  std::optional<std::filesystem::path> best_checkpoint;
};

// Writes <output_dir>/checkpoint.bin, <output_dir>/history.jsonl and, with
// select_best, <output_dir>/best_checkpoint.bin.
TrainResult train(const TrainConfig& config);

struct AnalysisOptions {
  AccuracyMetric metric = AccuracyMetric::f1;
  double threshold = 0.5;
  std::string split = "test";
};

struct Aggregate {
  double mean = 0;
  double std = 0;  // sample standard deviation; 0 for a single value
};

// Order-independent: values are summed in sorted order.
Aggregate aggregate(std::vector<double> values);

struct MultiSeedResult {
  std::vector<nlohmann::json> runs;  // per-seed summaries
  nlohmann::json aggregate;          // metric -> {mean, std}
};

// Trains one model per seed under <output_dir>/seed_<k>, estimates squeeze
// statistics on the train split and runs the CUR analysis on
// options.split. Failures are rethrown naming the seed.
MultiSeedResult run_multi_seed(const TrainConfig& config, const std::vector<std::uint64_t>& seeds,
                               const AnalysisOptions& options);

// Per-seed summary fields aggregated by run_multi_seed.
const std::vector<std::string>& summary_metric_names();

}  // namespace mmfuse
