#pragma once

// Tile-level evaluation of a trained model in every forward mode.

#include "mmfuse/dataset.hpp"
#include "mmfuse/dual_model.hpp"
#include "mmfuse/losses.hpp"

#include <nlohmann/json.hpp>

#include <string>
#include <vector>

namespace mmfuse {

// Model inputs for one tile.
struct TileInputs {
  FeatureMap<double> x_sar;
  FeatureMap<double> x_opt;
  FeatureMap<double> y;
};

TileInputs to_inputs(const Tile& tile);

// Which probability map is scored.
enum class OutputKind { sar, opt, fusion, cutoff_to_sar, cutoff_to_opt };

OutputKind parse_output_kind(const std::string& name);
std::string to_string(OutputKind kind);
bool needs_statistics(OutputKind kind);

struct FullModeCounts {
  ConfusionCounts sar;
  ConfusionCounts opt;
  ConfusionCounts fusion;
};

// Counts pooled over all tiles (micro average) for p_sar, p_opt and p.
FullModeCounts evaluate_full(const DualModel<double>& model, const std::vector<TileInputs>& tiles,
                             double threshold = 0.5);

// Counts for p'_sar (cutoff_to_sar) or p'_opt (cutoff_to_opt).
ConfusionCounts evaluate_cutoff(const DualModel<double>& model, const std::vector<TileInputs>& tiles,
                                ForwardMode mode, const HStatistics<double>& stats, double threshold = 0.5);

ConfusionCounts evaluate_output(const DualModel<double>& model, const std::vector<TileInputs>& tiles, OutputKind kind,
                                const HStatistics<double>* stats, double threshold = 0.5);

// Mean squeeze vectors over unaugmented full-mode passes of `train`.
HStatistics<double> estimate_h_statistics(const DualModel<double>& model, const std::vector<TileInputs>& train);

// {split, mode, precision, recall, f1, counts:{tp,fp,fn,tn}}
nlohmann::json metrics_json(const std::string& split, const std::string& mode, const ConfusionCounts& counts);

std::vector<TileInputs> load_inputs(const Dataset& dataset, const std::string& split);

}  // namespace mmfuse
