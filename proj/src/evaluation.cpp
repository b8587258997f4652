#include "mmfuse/evaluation.hpp"

namespace mmfuse {

TileInputs to_inputs(const Tile& tile) {
  return {tile.x_sar.cast<double>(), tile.x_opt.cast<double>(), tile.y.cast<double>()};
}

OutputKind parse_output_kind(const std::string& name) {
  if (name == "sar") return OutputKind::sar;
  if (name == "opt") return OutputKind::opt;
  if (name == "fusion") return OutputKind::fusion;
  if (name == "cutoff_to_sar") return OutputKind::cutoff_to_sar;
  if (name == "cutoff_to_opt") return OutputKind::cutoff_to_opt;
  throw ValidationError("unknown mode '" + name + "' (expected sar, opt, fusion, cutoff_to_sar or cutoff_to_opt)");
}

std::string to_string(OutputKind kind) {
  switch (kind) {
    case OutputKind::sar: return "sar";
    case OutputKind::opt: return "opt";
    case OutputKind::fusion: return "fusion";
    case OutputKind::cutoff_to_sar: return "cutoff_to_sar";
    case OutputKind::cutoff_to_opt: return "cutoff_to_opt";
  }
  return "?";
}

bool needs_statistics(OutputKind kind) { return kind == OutputKind::cutoff_to_sar || kind == OutputKind::cutoff_to_opt; }

FullModeCounts evaluate_full(const DualModel<double>& model, const std::vector<TileInputs>& tiles, double threshold) {
  FullModeCounts counts;
  for (const auto& t : tiles) {
    const auto out = forward_full(model, t.x_sar, t.x_opt);
    counts.sar = accumulate_confusion(threshold_mask(*out.p_sar, threshold), t.y, counts.sar);
    counts.opt = accumulate_confusion(threshold_mask(*out.p_opt, threshold), t.y, counts.opt);
    counts.fusion = accumulate_confusion(threshold_mask(*out.p, threshold), t.y, counts.fusion);
  }
  return counts;
}

ConfusionCounts evaluate_cutoff(const DualModel<double>& model, const std::vector<TileInputs>& tiles, ForwardMode mode,
                                const HStatistics<double>& stats, double threshold) {
  if (mode == ForwardMode::full) throw ValidationError("evaluate_cutoff: mode must be a cut-off mode");
  const bool sar = mode == ForwardMode::cutoff_to_sar;
  ConfusionCounts counts;
  for (const auto& t : tiles) {
    const auto p = forward_single_branch(model, sar, sar ? t.x_sar : t.x_opt, stats);
    counts = accumulate_confusion(threshold_mask(p, threshold), t.y, counts);
  }
  return counts;
}

ConfusionCounts evaluate_output(const DualModel<double>& model, const std::vector<TileInputs>& tiles, OutputKind kind,
                                const HStatistics<double>* stats, double threshold) {
  if (needs_statistics(kind)) {
    if (!stats) throw ValidationError(to_string(kind) + " requires squeeze statistics");
    return evaluate_cutoff(model, tiles,
                           kind == OutputKind::cutoff_to_sar ? ForwardMode::cutoff_to_sar : ForwardMode::cutoff_to_opt,
                           *stats, threshold);
  }
  const auto full = evaluate_full(model, tiles, threshold);
  if (kind == OutputKind::sar) return full.sar;
  if (kind == OutputKind::opt) return full.opt;
  return full.fusion;
}

HStatistics<double> estimate_h_statistics(const DualModel<double>& model, const std::vector<TileInputs>& train) {
  HStatisticsAccumulator<double> acc(model);
  for (const auto& t : train) {
    DualTrace<double> tr;
    forward_full(model, t.x_sar, t.x_opt, &tr);
    acc.add(tr.mmtm);
  }
  return acc.finish();
}

nlohmann::json metrics_json(const std::string& split, const std::string& mode, const ConfusionCounts& counts) {
  const auto prf = compute_prf1(counts);
  return {{"split", split},
          {"mode", mode},
          {"precision", prf.precision},
          {"recall", prf.recall},
          {"f1", prf.f1},
          {"counts", {{"tp", counts.tp}, {"fp", counts.fp}, {"fn", counts.fn}, {"tn", counts.tn}}}};
}

std::vector<TileInputs> load_inputs(const Dataset& dataset, const std::string& split) {
  std::vector<TileInputs> out;
  for (const auto& id : dataset.manifest().split(split)) out.push_back(to_inputs(dataset.load_tile(id)));
  return out;
}

}  // namespace mmfuse
