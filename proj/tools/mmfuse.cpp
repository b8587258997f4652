// Command-line entry point: dataset generation, training, evaluation, CUR
// analysis, prediction and multi-seed runs.

#include "mmfuse/checkpoint.hpp"
#include "mmfuse/config.hpp"
#include "mmfuse/cur.hpp"
#include "mmfuse/dataset.hpp"
#include "mmfuse/evaluation.hpp"
#include "mmfuse/training.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace mmfuse;

namespace {

struct ModelOnDataset {
  LoadedCheckpoint checkpoint;
  Dataset dataset;
};

ModelOnDataset open_pair(const std::string& checkpoint_path, const std::string& dataset_path) {
  ModelOnDataset m{load_checkpoint(checkpoint_path), Dataset::open(dataset_path)};
  const auto& cfg = m.checkpoint.model.config();
  const auto& man = m.dataset.manifest();
  if (cfg.sar.in_channels != man.sar_channels || cfg.opt.in_channels != man.opt_channels) {
    throw ShapeError("checkpoint expects " + std::to_string(cfg.sar.in_channels) + "/" +
                     std::to_string(cfg.opt.in_channels) + " SAR/optical channels, dataset has " +
                     std::to_string(man.sar_channels) + "/" + std::to_string(man.opt_channels));
  }
  const Index mult = cfg.sar.size_multiple();
  if (man.height % mult != 0 || man.width % mult != 0) {
    throw ShapeError("dataset tile size " + std::to_string(man.height) + "x" + std::to_string(man.width) +
                     " is incompatible with model depth " + std::to_string(cfg.sar.depth));
  }
  return m;
}

// Loaded from --stats, or estimated on the fly from the train split.
HStatistics<double> obtain_statistics(const ModelOnDataset& m, const std::string& stats_path, const std::string& why) {
  if (!stats_path.empty()) return load_h_statistics(stats_path);
  if (m.dataset.manifest().split("train").empty()) {
    throw ValidationError(why + " requires squeeze statistics: pass --stats or use a dataset with a train split");
  }
  return estimate_h_statistics(m.checkpoint.model, load_inputs(m.dataset, "train"));
}

void emit(const nlohmann::json& j, const std::string& out_path) {
  if (!out_path.empty()) write_json(out_path, j);
  std::cout << j.dump(2) << "\n";
}

RunConfig resolve(const std::string& path, const std::vector<std::string>& overrides) {
  return load_run_config(path, overrides);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual-branch SAR/optical segmentation with cross-modal fusion and utilization analysis"};
  app.require_subcommand(1);

  std::string config_path, checkpoint_path, dataset_path, split = "test", mode = "fusion", stats_path, out_path,
                                                              metric = "f1", tile_id;
  std::vector<std::string> overrides;
  double threshold = 0.5;

  auto add_config = [&](CLI::App* cmd) {
    cmd->add_option("-c,--config", config_path, "JSON run configuration")->required()->check(CLI::ExistingFile);
    cmd->add_option("--set", overrides, "override a dotted config key, e.g. --set train.epochs=3");
  };
  auto add_model_data = [&](CLI::App* cmd) {
    cmd->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();
    cmd->add_option("--dataset", dataset_path, "dataset directory")->required();
    cmd->add_option("--threshold", threshold, "probability threshold for hard masks")->check(CLI::Range(0.0, 1.0));
  };

  auto* gen = app.add_subcommand("generate-data", "generate a synthetic paired-modality dataset");
  add_config(gen);
  auto* tr = app.add_subcommand("train", "train a dual-branch model");
  add_config(tr);
  auto* ms = app.add_subcommand("multi-seed", "train and analyse one model per seed, then aggregate");
  add_config(ms);

  auto* ev = app.add_subcommand("evaluate", "precision / recall / F1 of one model output on one split");
  add_model_data(ev);
  ev->add_option("--split", split, "train, val or test");
  ev->add_option("--mode", mode, "sar, opt, fusion, cutoff_to_sar or cutoff_to_opt");
  ev->add_option("--stats", stats_path, "squeeze statistics JSON (cut-off modes)");
  ev->add_option("--out", out_path, "write metrics JSON here");

  auto* cur = app.add_subcommand("analyze-cur", "conditional utilization rates and their imbalance");
  add_model_data(cur);
  cur->add_option("--metric", metric, "f1, precision or recall");
  cur->add_option("--split", split, "train, val or test");
  cur->add_option("--stats", stats_path, "squeeze statistics JSON; estimated from the train split if absent");
  cur->add_option("--out", out_path, "write the report JSON here");

  auto* est = app.add_subcommand("estimate-stats", "training-set mean squeeze vectors for the cut-off passes");
  add_model_data(est);
  est->add_option("--out", out_path, "statistics JSON")->required();

  auto* pred = app.add_subcommand("predict", "probability maps, masks and agreement rasters for one tile");
  add_model_data(pred);
  pred->add_option("--tile", tile_id, "tile id")->required();
  pred->add_option("--mode", mode, "full, cutoff_to_sar or cutoff_to_opt");
  pred->add_option("--stats", stats_path, "squeeze statistics JSON (cut-off modes)");
  pred->add_option("--out", out_path, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (gen->parsed()) {
      const RunConfig rc = resolve(config_path, overrides);
      generate_synthetic_dataset(rc.data, rc.data_path);
      write_json(rc.data_path / "resolved_config.json", to_json(rc));
      std::cout << "wrote dataset to " << rc.data_path.string() << "\n";
    } else if (tr->parsed()) {
      const RunConfig rc = resolve(config_path, overrides);
      fs::create_directories(rc.output_dir);
      write_json(rc.output_dir / "resolved_config.json", to_json(rc));
      const TrainResult result = train(rc.train);
      for (const auto& r : result.history.evals) {
        if (r.kind == "final") {
          std::cout << r.split << " f1 sar=" << r.f1_sar << " opt=" << r.f1_opt << " fusion=" << r.f1_fusion << "\n";
        }
      }
      std::cout << "wrote " << result.checkpoint.string() << "\n";
    } else if (ms->parsed()) {
      const RunConfig rc = resolve(config_path, overrides);
      fs::create_directories(rc.output_dir);
      write_json(rc.output_dir / "resolved_config.json", to_json(rc));
      const auto result = run_multi_seed(rc.train, rc.seeds, rc.analysis);
      const nlohmann::json j = {{"runs", result.runs}, {"aggregate", result.aggregate}};
      emit(j, (rc.output_dir / "multi_seed.json").string());
    } else if (ev->parsed()) {
      const auto m = open_pair(checkpoint_path, dataset_path);
      const OutputKind kind = parse_output_kind(mode);
      std::optional<HStatistics<double>> stats;
      if (needs_statistics(kind)) stats = obtain_statistics(m, stats_path, mode);
      const auto tiles = load_inputs(m.dataset, split);
      if (tiles.empty()) throw ValidationError("split '" + split + "' is empty");
      const auto counts = evaluate_output(m.checkpoint.model, tiles, kind, stats ? &*stats : nullptr, threshold);
      auto j = metrics_json(split, mode, counts);
      j["threshold"] = threshold;
      emit(j, out_path);
    } else if (cur->parsed()) {
      const auto m = open_pair(checkpoint_path, dataset_path);
      const auto stats = obtain_statistics(m, stats_path, "analyze-cur");
      const auto tiles = load_inputs(m.dataset, split);
      CurReport report = run_cur_analysis(m.checkpoint.model, stats, tiles, parse_metric(metric), threshold);
      report.provenance = {{"checkpoint", checkpoint_path},
                           {"dataset", dataset_path},
                           {"dataset_hash", m.dataset.content_hash()},
                           {"metric", metric},
                           {"threshold", threshold},
                           {"split", split},
                           {"statistics", stats_path.empty() ? "estimated from train split" : stats_path}};
      for (const auto& w : report.warnings) std::cerr << "warning: " << w << "\n";
      emit(to_json(report), out_path);
    } else if (est->parsed()) {
      const auto m = open_pair(checkpoint_path, dataset_path);
      const auto train_tiles = load_inputs(m.dataset, "train");
      save_h_statistics(out_path, estimate_h_statistics(m.checkpoint.model, train_tiles));
      std::cout << "wrote " << out_path << "\n";
    } else if (pred->parsed()) {
      const auto m = open_pair(checkpoint_path, dataset_path);
      const Tile tile = m.dataset.load_tile(tile_id);
      const TileInputs in = to_inputs(tile);
      ForwardMode fm;
      if (mode == "full" || mode == "fusion") {
        fm = ForwardMode::full;
      } else if (mode == "cutoff_to_sar") {
        fm = ForwardMode::cutoff_to_sar;
      } else if (mode == "cutoff_to_opt") {
        fm = ForwardMode::cutoff_to_opt;
      } else {
        throw ValidationError("unknown predict mode '" + mode + "' (expected full, cutoff_to_sar or cutoff_to_opt)");
      }
      std::optional<HStatistics<double>> stats;
      if (fm != ForwardMode::full) stats = obtain_statistics(m, stats_path, mode);
      const auto out = forward(m.checkpoint.model, &in.x_sar, &in.x_opt, fm, stats ? &*stats : nullptr);
      const fs::path dir = out_path;
      fs::create_directories(dir);
      nlohmann::json index = {{"tile", tile_id}, {"mode", to_string(fm)}, {"threshold", threshold},
                              {"height", tile.height()}, {"width", tile.width()},
                              {"agreement_codes", {{"tp", 3}, {"fp", 2}, {"fn", 1}, {"tn", 0}}},
                              {"outputs", nlohmann::json::object()}};
      auto write_output = [&](const std::string& name, const FeatureMap<double>& p) {
        const std::string stem = tile_id + "." + name;
        const FeatureMap<double> mask = threshold_mask(p, threshold);
        std::vector<char> agreement(static_cast<size_t>(p.pixels()));
        for (Index i = 0; i < p.pixels(); ++i) {
          const bool pr = mask.data(0, i) > 0.5, tr = in.y.data(0, i) > 0.5;
          agreement[static_cast<size_t>(i)] = static_cast<char>(pr && tr ? 3 : pr ? 2 : tr ? 1 : 0);
        }
        write_f32(dir / (stem + ".prob.bin"), p.data.cast<float>());
        write_u8(dir / (stem + ".mask.bin"), mask.data.cast<float>());
        std::ofstream raster(dir / (stem + ".agreement.bin"), std::ios::binary | std::ios::trunc);
        raster.write(agreement.data(), static_cast<std::streamsize>(agreement.size()));
        if (!raster) throw IoError("cannot write agreement raster for " + tile_id);
        index["outputs"][name] = {{"probability", stem + ".prob.bin"},
                                  {"mask", stem + ".mask.bin"},
                                  {"agreement", stem + ".agreement.bin"}};
      };
      if (out.p_sar) write_output(fm == ForwardMode::full ? "p_sar" : "p_sar_cut", *out.p_sar);
      if (out.p_opt) write_output(fm == ForwardMode::full ? "p_opt" : "p_opt_cut", *out.p_opt);
      if (out.p) write_output("p", *out.p);
      write_json(dir / (tile_id + ".predict.json"), index);
      std::cout << "wrote predictions for " << tile_id << " to " << dir.string() << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
