#include "mmfuse/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace mmfuse {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[8] = {'M', 'M', 'F', 'C', 'K', 'P', 'T', '1'};

std::uint64_t to_le64(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    std::uint64_t r = 0;
    for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xffu) << (8 * (7 - i));
    return r;
  }
}

}  // namespace

void to_json(nlohmann::json& j, const UnetConfig& c) {
  j = {{"in_channels", c.in_channels},
       {"base_channels", c.base_channels},
       {"depth", c.depth},
       {"tap_points", c.tap_points}};
}

void from_json(const nlohmann::json& j, UnetConfig& c) {
  j.at("in_channels").get_to(c.in_channels);
  j.at("base_channels").get_to(c.base_channels);
  j.at("depth").get_to(c.depth);
  j.at("tap_points").get_to(c.tap_points);
}

void to_json(nlohmann::json& j, const DualModelConfig& c) {
  j = {{"sar", c.sar}, {"opt", c.opt}, {"seed", c.seed}, {"zero_excitation_init", c.zero_excitation_init}};
}

void from_json(const nlohmann::json& j, DualModelConfig& c) {
  j.at("sar").get_to(c.sar);
  j.at("opt").get_to(c.opt);
  j.at("seed").get_to(c.seed);
  c.zero_excitation_init = j.value("zero_excitation_init", false);
}

void save_checkpoint(const fs::path& path, const DualModel<double>& model, const nlohmann::json& metadata) {
  nlohmann::json header = {{"format", "mmfuse-checkpoint"},
                           {"version", 1},
                           {"dtype", "float64"},
                           {"config", model.config()},
                           {"metadata", metadata}};
  auto& list = header["parameters"] = nlohmann::json::array();
  std::vector<std::uint64_t> payload;
  for (const auto& [name, m] : model.parameters()) {
    list.push_back({{"name", name}, {"rows", m->rows()}, {"cols", m->cols()}});
    for (Index i = 0; i < m->size(); ++i) {
      std::uint64_t bits;
      std::memcpy(&bits, m->data() + i, 8);
      payload.push_back(to_le64(bits));
    }
  }
  const std::string text = header.dump();
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  const std::uint64_t len = to_le64(text.size());
  out.write(kMagic, 8);
  out.write(reinterpret_cast<const char*>(&len), 8);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size() * 8));
  if (!out) throw IoError("write failed: " + path.string());
}

LoadedCheckpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[8];
  std::uint64_t len = 0;
  in.read(magic, 8);
  in.read(reinterpret_cast<char*>(&len), 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) throw IoError("not a checkpoint: " + path.string());
  len = to_le64(len);
  if (len > (1u << 30)) throw IoError("corrupt checkpoint header: " + path.string());
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw IoError("truncated checkpoint header: " + path.string());

  nlohmann::json header;
  DualModelConfig cfg;
  try {
    header = nlohmann::json::parse(text);
    cfg = header.at("config").get<DualModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corrupt checkpoint header in " + path.string() + ": " + e.what());
  }
  LoadedCheckpoint result{DualModel<double>(cfg), header.value("metadata", nlohmann::json::object())};
  auto params = result.model.parameters();
  const auto& list = header.at("parameters");
  if (list.size() != params.size()) throw ShapeError("checkpoint parameter list does not match its config");
  for (size_t i = 0; i < params.size(); ++i) {
    auto& [name, m] = params[i];
    if (list[i].at("name") != name || list[i].at("rows") != m->rows() || list[i].at("cols") != m->cols()) {
      throw ShapeError("checkpoint parameter " + list[i].at("name").get<std::string>() + " does not match " + name);
    }
    std::vector<std::uint64_t> buf(static_cast<size_t>(m->size()));
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 8));
    if (!in) throw IoError("truncated checkpoint data: " + path.string());
    for (Index k = 0; k < m->size(); ++k) {
      const std::uint64_t bits = to_le64(buf[static_cast<size_t>(k)]);
      std::memcpy(m->data() + k, &bits, 8);
    }
  }
  return result;
}

nlohmann::json h_statistics_to_json(const HStatistics<double>& stats) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& e : stats.entries) {
    j.push_back({{"index", e.index},
                 {"n", e.n},
                 {"h_bar_sar", std::vector<double>(e.h_bar_sar.begin(), e.h_bar_sar.end())},
                 {"h_bar_opt", std::vector<double>(e.h_bar_opt.begin(), e.h_bar_opt.end())}});
  }
  return j;
}

HStatistics<double> h_statistics_from_json(const nlohmann::json& j) {
  HStatistics<double> stats;
  for (const auto& rec : j) {
    HStatistics<double>::Entry e;
    e.index = rec.at("index").get<Index>();
    e.n = rec.at("n").get<Index>();
    if (e.n < 1) throw ValidationError("statistics record " + std::to_string(e.index) + " has n < 1");
    const auto sar = rec.at("h_bar_sar").get<std::vector<double>>();
    const auto opt = rec.at("h_bar_opt").get<std::vector<double>>();
    e.h_bar_sar = Eigen::Map<const Vector<double>>(sar.data(), static_cast<Index>(sar.size()));
    e.h_bar_opt = Eigen::Map<const Vector<double>>(opt.data(), static_cast<Index>(opt.size()));
    stats.entries.push_back(std::move(e));
  }
  return stats;
}

void save_h_statistics(const fs::path& path, const HStatistics<double>& stats) {
  write_json(path, h_statistics_to_json(stats));
}

HStatistics<double> load_h_statistics(const fs::path& path) { return h_statistics_from_json(read_json(path)); }

void write_json(const fs::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  // Round-trippable doubles.
  out << j.dump(2) << "\n";
  if (!out) throw IoError("write failed: " + path.string());
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("invalid JSON in " + path.string() + ": " + e.what());
  }
}

}  // namespace mmfuse
