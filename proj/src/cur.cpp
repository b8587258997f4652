#include "mmfuse/cur.hpp"

#include <cmath>

namespace mmfuse {

AccuracyMetric parse_metric(const std::string& name) {
  if (name == "f1") return AccuracyMetric::f1;
  if (name == "precision") return AccuracyMetric::precision;
  if (name == "recall") return AccuracyMetric::recall;
  throw ValidationError("unknown accuracy metric '" + name + "' (expected f1, precision or recall)");
}

std::string to_string(AccuracyMetric metric) {
  switch (metric) {
    case AccuracyMetric::f1: return "f1";
    case AccuracyMetric::precision: return "precision";
    case AccuracyMetric::recall: return "recall";
  }
  return "?";
}

double accuracy(const ConfusionCounts& counts, AccuracyMetric metric) {
  const auto prf = compute_prf1(counts);
  switch (metric) {
    case AccuracyMetric::f1: return prf.f1;
    case AccuracyMetric::precision: return prf.precision;
    case AccuracyMetric::recall: return prf.recall;
  }
  return prf.f1;
}

double compute_cur(double a_full, double a_cut) {
  if (!(a_full > 0.0)) {
    throw UndefinedCurError("conditional utilization rate undefined: full-model accuracy is " + std::to_string(a_full));
  }
  return (a_full - a_cut) / a_full;
}

CurReport make_cur_report(double a_sar_full, double a_opt_full, double a_fusion, double a_sar_cut, double a_opt_cut,
                          AccuracyMetric metric) {
  CurReport r;
  r.a_sar_full = a_sar_full;
  r.a_opt_full = a_opt_full;
  r.a_fusion = a_fusion;
  r.a_sar_cut = a_sar_cut;
  r.a_opt_cut = a_opt_cut;
  r.accuracy_metric_name = to_string(metric);
  r.u_sar_given_opt = compute_cur(a_opt_full, a_opt_cut);
  r.u_opt_given_sar = compute_cur(a_sar_full, a_sar_cut);
  r.d_util = compute_d_util(r.u_sar_given_opt, r.u_opt_given_sar);
  if (r.u_sar_given_opt < 0) r.warnings.push_back("u(sar|opt) is negative: cutting off SAR improved the optical branch");
  if (r.u_opt_given_sar < 0) r.warnings.push_back("u(opt|sar) is negative: cutting off optical improved the SAR branch");
  return r;
}

bool is_consistent(const CurReport& r, double tol) {
  if (!(r.a_opt_full > 0.0) || !(r.a_sar_full > 0.0)) return false;
  const double u1 = (r.a_opt_full - r.a_opt_cut) / r.a_opt_full;
  const double u2 = (r.a_sar_full - r.a_sar_cut) / r.a_sar_full;
  return std::abs(u1 - r.u_sar_given_opt) <= tol && std::abs(u2 - r.u_opt_given_sar) <= tol &&
         std::abs((r.u_sar_given_opt - r.u_opt_given_sar) - r.d_util) <= tol;
}

CurReport run_cur_analysis(const DualModel<double>& model, const HStatistics<double>& stats,
                           const std::vector<TileInputs>& tiles, AccuracyMetric metric, double threshold) {
  if (tiles.empty()) throw ValidationError("CUR analysis needs a nonempty evaluation split");
  check_statistics(model, stats);
  const FullModeCounts full = evaluate_full(model, tiles, threshold);
  const ConfusionCounts sar_cut = evaluate_cutoff(model, tiles, ForwardMode::cutoff_to_sar, stats, threshold);
  const ConfusionCounts opt_cut = evaluate_cutoff(model, tiles, ForwardMode::cutoff_to_opt, stats, threshold);
  CurReport r = make_cur_report(accuracy(full.sar, metric), accuracy(full.opt, metric), accuracy(full.fusion, metric),
                                accuracy(sar_cut, metric), accuracy(opt_cut, metric), metric);
  r.threshold = threshold;
  return r;
}

nlohmann::json to_json(const CurReport& r) {
  return {{"a_sar_full", r.a_sar_full},
          {"a_opt_full", r.a_opt_full},
          {"a_fusion", r.a_fusion},
          {"a_sar_cut", r.a_sar_cut},
          {"a_opt_cut", r.a_opt_cut},
          {"u_sar_given_opt", r.u_sar_given_opt},
          {"u_opt_given_sar", r.u_opt_given_sar},
          {"d_util", r.d_util},
          {"accuracy_metric_name", r.accuracy_metric_name},
          {"threshold", r.threshold},
          {"warnings", r.warnings},
          {"provenance", r.provenance}};
}

CurReport cur_report_from_json(const nlohmann::json& j) {
  CurReport r;
  j.at("a_sar_full").get_to(r.a_sar_full);
  j.at("a_opt_full").get_to(r.a_opt_full);
  j.at("a_fusion").get_to(r.a_fusion);
  j.at("a_sar_cut").get_to(r.a_sar_cut);
  j.at("a_opt_cut").get_to(r.a_opt_cut);
  j.at("u_sar_given_opt").get_to(r.u_sar_given_opt);
  j.at("u_opt_given_sar").get_to(r.u_opt_given_sar);
  j.at("d_util").get_to(r.d_util);
  j.at("accuracy_metric_name").get_to(r.accuracy_metric_name);
  r.threshold = j.value("threshold", 0.5);
  r.warnings = j.value("warnings", std::vector<std::string>{});
  r.provenance = j.value("provenance", nlohmann::json::object());
  return r;
}

}  // namespace mmfuse
