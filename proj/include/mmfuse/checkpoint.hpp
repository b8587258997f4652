#pragma once

// Model checkpoints and squeeze-statistics files.
//
// Checkpoint archive layout:
//   8 bytes   magic "MMFCKPT1"
//   8 bytes   header length L, unsigned little-endian
//   L bytes   JSON header: {format, version, dtype, config, parameters:[{name, rows, cols}], metadata}
//   rest      float64 little-endian values, parameters in header order,
//             each matrix in column-major order

#include "mmfuse/dual_model.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>

namespace mmfuse {

void to_json(nlohmann::json& j, const UnetConfig& c);
void from_json(const nlohmann::json& j, UnetConfig& c);
void to_json(nlohmann::json& j, const DualModelConfig& c);
void from_json(const nlohmann::json& j, DualModelConfig& c);

void save_checkpoint(const std::filesystem::path& path, const DualModel<double>& model,
                     const nlohmann::json& metadata = nlohmann::json::object());

struct LoadedCheckpoint {
  DualModel<double> model;
  nlohmann::json metadata;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

nlohmann::json h_statistics_to_json(const HStatistics<double>& stats);
HStatistics<double> h_statistics_from_json(const nlohmann::json& j);
void save_h_statistics(const std::filesystem::path& path, const HStatistics<double>& stats);
HStatistics<double> load_h_statistics(const std::filesystem::path& path);

// Writes `j` pretty-printed with a trailing newline.
void write_json(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& path);

}  // namespace mmfuse
