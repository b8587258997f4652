#include "mmfuse/training.hpp"

#include "mmfuse/checkpoint.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

namespace mmfuse {

namespace fs = std::filesystem;

DualModelConfig ModelSpec::resolve(Index sar_channels, Index opt_channels, std::uint64_t seed) const {
  DualModelConfig cfg;
  cfg.sar = {sar_channels, base_channels, depth, tap_points};
  cfg.opt = {opt_channels, base_channels, depth, tap_points};
  cfg.seed = seed;
  cfg.zero_excitation_init = zero_excitation_init;
  cfg.validate();
  return cfg;
}

AdamW::AdamW(const AdamWConfig& cfg, const DualModel<double>& model) : cfg_(cfg) {
  for (const auto& [name, p] : model.parameters()) {
    m_.push_back(Matrix<double>::Zero(p->rows(), p->cols()));
    v_.push_back(Matrix<double>::Zero(p->rows(), p->cols()));
  }
}

void AdamW::step(DualModel<double>& model, const DualModel<double>& grad) {
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  auto params = model.parameters();
  const auto grads = grad.parameters();
  for (size_t i = 0; i < params.size(); ++i) {
    Matrix<double>& p = *params[i].second;
    const Matrix<double>& g = *grads[i].second;
    p *= 1.0 - cfg_.learning_rate * cfg_.weight_decay;
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    p.array() -= cfg_.learning_rate * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + cfg_.epsilon);
  }
}

void TrainConfig::validate() const {
  if (epochs < 0) throw ValidationError("train.epochs must be >= 0");
  if (batch_size < 1) throw ValidationError("train.batch_size must be positive");
  if (!(optimizer.learning_rate > 0.0)) throw ValidationError("train.learning_rate must be positive");
  if (!(optimizer.weight_decay >= 0.0)) throw ValidationError("train.weight_decay must be nonnegative");
  if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0) || !(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0)) {
    throw ValidationError("train.beta1 and train.beta2 must lie in [0, 1)");
  }
  if (!(optimizer.epsilon > 0.0)) throw ValidationError("train.adam_epsilon must be positive");
  if (eval_every < 0) throw ValidationError("train.eval_every must be >= 0");
  if (!(threshold > 0.0 && threshold < 1.0)) throw ValidationError("threshold must lie in (0, 1)");
  loss.validate();
}

std::string TrainHistory::to_jsonl() const {
  std::string out;
  size_t e = 0;
  auto emit_evals_up_to = [&](std::int64_t epoch) {
    while (e < evals.size() && evals[e].epoch <= epoch) {
      const auto& r = evals[e++];
      out += nlohmann::json{{"type", r.kind},
                            {"epoch", r.epoch},
                            {"split", r.split},
                            {"f1_sar", r.f1_sar},
                            {"f1_opt", r.f1_opt},
                            {"f1_fusion", r.f1_fusion}}
                 .dump();
      out += "\n";
    }
  };
  for (const auto& s : steps) {
    emit_evals_up_to(s.epoch - 1);
    out += nlohmann::json{{"type", "step"},
                          {"step", s.step},
                          {"epoch", s.epoch},
                          {"loss", s.loss},
                          {"loss_sar", s.loss_sar},
                          {"loss_opt", s.loss_opt}}
               .dump();
    out += "\n";
  }
  emit_evals_up_to(std::numeric_limits<std::int64_t>::max());
  return out;
}

const EvalRecord* TrainHistory::final_record(const std::string& split) const {
  for (const auto& r : evals) {
    if (r.kind == "final" && r.split == split) return &r;
  }
  return nullptr;
}

namespace {

EvalRecord evaluate_record(const DualModel<double>& model, const std::vector<TileInputs>& tiles, const std::string& kind,
                           std::int64_t epoch, const std::string& split, double threshold) {
  const auto counts = evaluate_full(model, tiles, threshold);
  return {kind, epoch, split, compute_prf1(counts.sar).f1, compute_prf1(counts.opt).f1, compute_prf1(counts.fusion).f1};
}

std::mt19937_64 stream(std::uint64_t seed, std::uint32_t purpose) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), purpose};
  return std::mt19937_64(seq);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

}  // namespace

TrainResult train(const TrainConfig& config) {
  config.validate();
  const Dataset dataset = Dataset::open(config.dataset);
  const auto& manifest = dataset.manifest();
  const std::vector<Tile> train_tiles = dataset.load_split("train");
  std::vector<TileInputs> train_inputs;
  for (const auto& t : train_tiles) train_inputs.push_back(to_inputs(t));
  const std::vector<TileInputs> val_inputs = load_inputs(dataset, "val");

  const DualModelConfig model_cfg = config.model.resolve(manifest.sar_channels, manifest.opt_channels, config.seed);
  TrainResult result{DualModel<double>::initialize(model_cfg), {}, config.output_dir / "checkpoint.bin", std::nullopt};
  DualModel<double>& model = result.model;
  AdamW optimizer(config.optimizer, model);
  const nlohmann::json meta = {{"seed", config.seed}, {"dataset", manifest.provenance}};
  fs::create_directories(config.output_dir);

  auto shuffle_rng = stream(config.seed, 1);
  auto augment_rng = stream(config.seed, 2);
  std::vector<size_t> order(train_tiles.size());
  double best_f1 = -1.0;
  std::int64_t step = 0;

  for (std::int64_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), size_t{0});
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(config.batch_size)) {
      const size_t end = std::min(order.size(), start + static_cast<size_t>(config.batch_size));
      const size_t n = end - start;
      std::vector<TileInputs> batch;
      for (size_t i = start; i < end; ++i) {
        const Tile& t = train_tiles[order[i]];
        batch.push_back(config.augment ? to_inputs(augment(t, draw_augmentation(augment_rng))) : train_inputs[order[i]]);
      }
      std::vector<DualTrace<double>> traces(n);
      std::vector<FeatureMap<double>> p_sar, p_opt, targets;
      for (size_t i = 0; i < n; ++i) {
        auto out = forward_full(model, batch[i].x_sar, batch[i].x_opt, &traces[i]);
        p_sar.push_back(std::move(*out.p_sar));
        p_opt.push_back(std::move(*out.p_opt));
        targets.push_back(batch[i].y);
      }
      const auto loss = composite_loss<double>(targets, p_sar, p_opt, config.loss);
      ++step;
      if (!std::isfinite(loss.total)) {
        throw TrainingDiverged("non-finite loss at step " + std::to_string(step) + " (epoch " + std::to_string(epoch) +
                               ", seed " + std::to_string(config.seed) + ")");
      }
      DualModel<double> grad = model.zeros_like();
      for (size_t i = 0; i < n; ++i) {
        // Through the logistic: dp/dlogit = p (1 - p).
        FeatureMap<double> gs = loss.grad_sar[i], go = loss.grad_opt[i];
        gs.data.array() *= p_sar[i].data.array() * (1.0 - p_sar[i].data.array());
        go.data.array() *= p_opt[i].data.array() * (1.0 - p_opt[i].data.array());
        backward_full(model, traces[i], gs, go, grad);
      }
      optimizer.step(model, grad);
      result.history.steps.push_back({step, epoch, loss.total, loss.sar, loss.opt});
    }
    if (config.eval_every > 0 && epoch % config.eval_every == 0 && !val_inputs.empty()) {
      auto rec = evaluate_record(model, val_inputs, "eval", epoch, "val", config.threshold);
      result.history.evals.push_back(rec);
      if (config.select_best && rec.f1_fusion > best_f1) {
        best_f1 = rec.f1_fusion;
        result.best_checkpoint = config.output_dir / "best_checkpoint.bin";
        save_checkpoint(*result.best_checkpoint, model, {{"seed", config.seed}, {"epoch", epoch}, {"val_f1", best_f1}});
      }
    }
  }

  if (config.epochs > 0) {
    result.history.evals.push_back(
        evaluate_record(model, train_inputs, "final", config.epochs, "train", config.threshold));
  }
  if (config.epochs > 0 && !val_inputs.empty()) {
    result.history.evals.push_back(evaluate_record(model, val_inputs, "final", config.epochs, "val", config.threshold));
  }
  save_checkpoint(result.checkpoint, model, meta);
  write_text(config.output_dir / "history.jsonl", result.history.to_jsonl());
  return result;
}

Aggregate aggregate(std::vector<double> values) {
  if (values.empty()) throw ValidationError("aggregate of an empty list");
  std::sort(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  double sum = 0.0;
  for (double v : values) sum += v;
  Aggregate a;
  a.mean = sum / n;
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - a.mean) * (v - a.mean);
    a.std = std::sqrt(ss / (n - 1.0));
  }
  return a;
}

const std::vector<std::string>& summary_metric_names() {
  static const std::vector<std::string> names{
      "f1_sar",          "f1_opt",          "f1_fusion", "precision_sar", "precision_opt", "precision_fusion",
      "recall_sar",      "recall_opt",      "recall_fusion", "u_sar_given_opt", "u_opt_given_sar", "d_util"};
  return names;
}

MultiSeedResult run_multi_seed(const TrainConfig& config, const std::vector<std::uint64_t>& seeds,
                               const AnalysisOptions& options) {
  if (seeds.empty()) throw ValidationError("multi-seed run needs at least one seed");
  MultiSeedResult result;
  for (std::uint64_t seed : seeds) {
    try {
      TrainConfig cfg = config;
      cfg.seed = seed;
      cfg.output_dir = config.output_dir / ("seed_" + std::to_string(seed));
      const TrainResult run = train(cfg);
      const Dataset dataset = Dataset::open(cfg.dataset);
      const auto stats = estimate_h_statistics(run.model, load_inputs(dataset, "train"));
      save_h_statistics(cfg.output_dir / "h_statistics.json", stats);
      const auto eval_tiles = load_inputs(dataset, options.split);
      CurReport report = run_cur_analysis(run.model, stats, eval_tiles, options.metric, options.threshold);
      report.provenance = {{"checkpoint", run.checkpoint.string()},
                           {"dataset_hash", dataset.content_hash()},
                           {"metric", to_string(options.metric)},
                           {"threshold", options.threshold},
                           {"split", options.split},
                           {"seed", seed}};
      write_json(cfg.output_dir / "cur_report.json", to_json(report));
      const auto counts = evaluate_full(run.model, eval_tiles, options.threshold);
      const auto s = compute_prf1(counts.sar), o = compute_prf1(counts.opt), f = compute_prf1(counts.fusion);
      result.runs.push_back({{"seed", seed},
                             {"split", options.split},
                             {"f1_sar", s.f1},
                             {"f1_opt", o.f1},
                             {"f1_fusion", f.f1},
                             {"precision_sar", s.precision},
                             {"precision_opt", o.precision},
                             {"precision_fusion", f.precision},
                             {"recall_sar", s.recall},
                             {"recall_opt", o.recall},
                             {"recall_fusion", f.recall},
                             {"u_sar_given_opt", report.u_sar_given_opt},
                             {"u_opt_given_sar", report.u_opt_given_sar},
                             {"d_util", report.d_util}});
    } catch (const std::exception& e) {
      throw std::runtime_error("seed " + std::to_string(seed) + ": " + e.what());
    }
  }
  result.aggregate = nlohmann::json::object();
  for (const auto& name : summary_metric_names()) {
    std::vector<double> values;
    for (const auto& r : result.runs) values.push_back(r.at(name).get<double>());
    const auto a = aggregate(values);
    result.aggregate[name] = {{"mean", a.mean}, {"std", a.std}};
  }
  return result;
}

}  // namespace mmfuse
