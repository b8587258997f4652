#pragma once

// Single-file JSON run configuration shared by all CLI subcommands.
//
//   { "output_dir": ...,
//     "data":       { "path": ..., <synthetic generator fields> },
//     "model":      { "base_channels", "depth", "tap_points", "zero_excitation_init" },
//     "train":      { "epochs", "batch_size", "learning_rate", "weight_decay", "beta1", "beta2",
//                     "adam_epsilon", "seed", "eval_every", "augment", "select_best" },
//     "loss":       { "power", "epsilon" },
//     "analysis":   { "metric", "threshold", "split" },
//     "multi_seed": { "seeds" } }
//
// Every key is optional; unknown keys are rejected.

#include "mmfuse/dataset.hpp"
#include "mmfuse/training.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace mmfuse {

struct RunConfig {
  std::filesystem::path output_dir = "run";
  std::filesystem::path data_path = "data";
  SyntheticConfig data;
  TrainConfig train;  // dataset / output_dir mirror data_path / output_dir
  AnalysisOptions analysis;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};

  void validate() const;
};

// Applies "dotted.key=value" overrides. The value is parsed as JSON when
// possible and taken as a string otherwise.
nlohmann::json apply_overrides(nlohmann::json config, const std::vector<std::string>& overrides);

RunConfig parse_run_config(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& c);

RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

}  // namespace mmfuse
