#pragma once

// Conditional utilization rates and the utilization-imbalance statistic.

#include "mmfuse/evaluation.hpp"

#include <nlohmann/json.hpp>

#include <string>
#include <vector>

namespace mmfuse {

class UndefinedCurError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

enum class AccuracyMetric { f1, precision, recall };

AccuracyMetric parse_metric(const std::string& name);
std::string to_string(AccuracyMetric metric);
double accuracy(const ConfusionCounts& counts, AccuracyMetric metric);

// (a_full - a_cut) / a_full. Not clamped; negative when cutting off helps.
double compute_cur(double a_full, double a_cut);

inline double compute_d_util(double u_sar_given_opt, double u_opt_given_sar) {
  return u_sar_given_opt - u_opt_given_sar;
}

struct CurReport {
  double a_sar_full = 0;
  double a_opt_full = 0;
  double a_fusion = 0;
  double a_sar_cut = 0;
  double a_opt_cut = 0;
  double u_sar_given_opt = 0;  // from the optical branch: full vs cut off
  double u_opt_given_sar = 0;  // from the SAR branch: full vs cut off
  double d_util = 0;
  std::string accuracy_metric_name = "f1";
  double threshold = 0.5;
  std::vector<std::string> warnings;
  nlohmann::json provenance = nlohmann::json::object();
};

// Fills the CUR and d_util fields from the five accuracies.
CurReport make_cur_report(double a_sar_full, double a_opt_full, double a_fusion, double a_sar_cut, double a_opt_cut,
                          AccuracyMetric metric);

// True when the stored CURs and d_util satisfy their defining equations
// w.r.t. the stored accuracies within `tol`.
bool is_consistent(const CurReport& report, double tol = 1e-12);

// Full-mode pass plus both cut-off passes over `tiles`, then the CURs.
CurReport run_cur_analysis(const DualModel<double>& model, const HStatistics<double>& stats,
                           const std::vector<TileInputs>& tiles, AccuracyMetric metric, double threshold = 0.5);

nlohmann::json to_json(const CurReport& report);
CurReport cur_report_from_json(const nlohmann::json& j);

}  // namespace mmfuse
