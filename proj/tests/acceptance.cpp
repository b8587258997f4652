// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit status if
// any criterion fails.

#include "mmfuse/checkpoint.hpp"
#include "mmfuse/cur.hpp"
#include "mmfuse/training.hpp"
#include "jaccard_reference.hpp"
#include "mmtm_reference.hpp"
#include "support.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

using namespace mmfuse;
using mmfuse::testing::random_map;
using mmfuse::testing::scratch_dir;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

SyntheticConfig tiles_config(std::int64_t n_train, std::int64_t n_val, std::int64_t n_test, std::int64_t side,
                             std::uint64_t seed) {
  SyntheticConfig c;
  c.n_train = n_train;
  c.n_val = n_val;
  c.n_test = n_test;
  c.height = c.width = side;
  c.seed = seed;
  return c;
}

Outcome mmtm_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<Index> ch(1, 4), side(1, 4);
  double worst = 0;
  const int n = 200;
  for (int i = 0; i < n; ++i) {
    const Index c1 = ch(rng), c2 = ch(rng), h = side(rng), w = side(rng);
    Mmtm<double> m(c1, c2);
    m.initialize(rng, false);
    fill_uniform(m.joint_bias, 0.5, rng);
    fill_uniform(m.sar_bias, 0.5, rng);
    fill_uniform(m.opt_bias, 0.5, rng);
    const auto fs = random_map(c1, h, w, rng, -1, 2), fo = random_map(c2, h, w, rng, -1, 2);
    worst = std::max(worst, testing::mmtm_max_relative_error(mmtm_forward(m, fs, fo), testing::mmtm_reference(m, fs, fo)));
  }
  const double t = seconds_since(t0);
  return {worst < 1e-6 && t < 10.0, fmt("%d instances, max rel err %.2e, %.2f s", n, worst, t)};
}

Outcome gating_identity() {
  DualModelConfig cfg;
  cfg.sar.base_channels = cfg.opt.base_channels = 8;
  cfg.seed = 5;
  cfg.zero_excitation_init = true;
  const auto model = DualModel<double>::initialize(cfg);
  std::vector<TileInputs> train, test;
  const auto data = tiles_config(4, 1, 4, 32, 77);
  for (int i = 0; i < 4; ++i) train.push_back(to_inputs(generate_synthetic_tile(data, i, "a")));
  for (int i = 0; i < 4; ++i) test.push_back(to_inputs(generate_synthetic_tile(data, 4 + i, "b")));
  bool identical = true;
  for (const auto& t : test) {
    const auto full = forward_full(model, t.x_sar, t.x_opt);
    identical &= full.p_sar->data == sigmoid_probability(unet_forward(model.sar, t.x_sar).logits).data;
    identical &= full.p_opt->data == sigmoid_probability(unet_forward(model.opt, t.x_opt).logits).data;
  }
  const auto report = run_cur_analysis(model, estimate_h_statistics(model, train), test, AccuracyMetric::f1);
  return {identical && report.d_util == 0.0,
          fmt("branch outputs bit-identical: %s, d_util = %g", identical ? "yes" : "no", report.d_util)};
}

Outcome cutoff_independence() {
  DualModelConfig cfg;
  cfg.seed = 6;
  const auto model = DualModel<double>::initialize(cfg);
  std::mt19937_64 rng(7);
  const auto x_sar = random_map(2, 32, 32, rng, 0, 1);
  std::vector<std::pair<FeatureMap<double>, FeatureMap<double>>> train;
  for (int i = 0; i < 3; ++i) train.emplace_back(random_map(2, 32, 32, rng, 0, 1), random_map(4, 32, 32, rng, 0, 1));
  const auto stats = estimate_h_statistics(model, train);
  std::optional<FeatureMap<double>> first;
  int identical = 0;
  for (int i = 0; i < 20; ++i) {
    const auto x_opt = random_map(4, 32, 32, rng, 0, 1);
    const auto out = forward(model, &x_sar, &x_opt, ForwardMode::cutoff_to_sar, &stats);
    if (!first) first = *out.p_sar;
    identical += out.p_sar->data == first->data;
  }
  return {identical == 20, fmt("%d of 20 optical inputs gave bit-identical outputs", identical)};
}

Outcome loss_gradient() {
  std::mt19937_64 rng(8);
  double worst = 0, worst_direct = 0, value_gap = 0, perfect = 0;
  int instances = 0;
  for (double k : {1.0, 2.0, 3.0}) {
    for (Index h = 1; h <= 8; h += 3) {
      for (Index w : {Index{1}, Index{5}, Index{8}}) {
        auto p = random_map(1, h, w, rng, 0.01, 0.99);
        const auto t = testing::random_mask(h, w, rng);
        const LossConfig cfg{k, 1e-6};
        const auto g = power_jaccard<double>(std::span(&p, 1), std::span(&t, 1), cfg);
        value_gap = std::max(value_gap, std::abs(g.loss - (1.0 - testing::jaccard_index_reference(p, t, k, 1e-6))));
        for (Index i = 0; i < p.data.size(); ++i) {
          const double keep = p.data.data()[i];
          p.data.data()[i] = keep + 1e-6;
          const double ja = testing::jaccard_index_reference(p, t, k, 1e-6);
          const double la = power_jaccard_loss(p, t, cfg);
          p.data.data()[i] = keep - 1e-6;
          const double jb = testing::jaccard_index_reference(p, t, k, 1e-6);
          const double lb = power_jaccard_loss(p, t, cfg);
          p.data.data()[i] = keep;
          const double analytic = g.grad[0].data.data()[i];
          worst = std::max(worst, testing::relative_error(analytic, -(ja - jb) / 2e-6));
          worst_direct = std::max(worst_direct, testing::relative_error(analytic, (la - lb) / 2e-6));
        }
        perfect = std::max(perfect, std::abs(power_jaccard_loss(t, t, cfg)));
        ++instances;
      }
    }
  }
  return {worst < 1e-4 && value_gap <= 1e-12 && perfect <= 1e-9,
          fmt("%d instances, max rel err %.2e (differencing the loss itself: %.2e), loss vs reference %.1e, "
              "perfect-prediction loss %.1e",
              instances, worst, worst_direct, value_gap, perfect)};
}

Outcome metric_oracle() {
  // Hand-enumerated: pred 1 1 0 0 1 0 1 0, truth 1 0 1 0 1 1 1 0
  // -> TP 3 (pos 0, 4, 6), FP 1 (pos 1), FN 2 (pos 2, 5), TN 2 (pos 3, 7)
  FeatureMap<double> pred(1, 2, 4), truth(1, 2, 4);
  pred.data << 1, 1, 0, 0, 1, 0, 1, 0;
  truth.data << 1, 0, 1, 0, 1, 1, 1, 0;
  const auto c = accumulate_confusion(pred, truth);
  const auto r = compute_prf1(c);
  const bool counts = c == ConfusionCounts{3, 1, 2, 2};
  const bool exact = r.precision == 3.0 / 4.0 && r.recall == 3.0 / 5.0 && r.f1 == 2.0 * 0.75 * 0.6 / (0.75 + 0.6);
  const double f1 = f1_from(0.746, 0.630);
  return {counts && exact && std::abs(f1 - 0.682) <= 0.002,
          fmt("counts %s, ratios exact %s, F1(0.746, 0.630) = %.4f", counts ? "match" : "differ", exact ? "yes" : "no",
              f1)};
}

struct OverfitRun {
  DualModel<double> model;
  std::vector<TileInputs> tiles;
  Outcome outcome;
};

OverfitRun overfit() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto root = scratch_dir("accept_overfit");
  generate_synthetic_dataset(tiles_config(4, 1, 1, 64, 21), root / "data");
  TrainConfig cfg;
  cfg.dataset = root / "data";
  cfg.output_dir = root / "run";
  cfg.epochs = 300;
  cfg.batch_size = 4;
  cfg.augment = false;
  cfg.optimizer.learning_rate = 1e-3;
  cfg.model.base_channels = 8;
  cfg.seed = 0;
  auto result = train(cfg);
  const auto* rec = result.history.final_record("train");
  const double f1 = rec ? rec->f1_fusion : 0.0;
  const double t = seconds_since(t0);
  const auto steps = static_cast<std::int64_t>(result.history.steps.size());
  OverfitRun run{std::move(result.model), load_inputs(Dataset::open(cfg.dataset), "train"), {}};
  run.outcome = {f1 >= 0.95 && steps <= 300 && t < 300.0,
                 fmt("train fusion F1 %.4f after %lld steps, %.1f s", f1, static_cast<long long>(steps), t)};
  return run;
}

Outcome fusion_identity(const DualModel<double>& model, const std::vector<TileInputs>& tiles) {
  double worst = 0;
  for (const auto& t : tiles) {
    const auto out = forward_full(model, t.x_sar, t.x_opt);
    worst = std::max(worst, (out.p->data - (out.p_sar->data + out.p_opt->data) / 2.0).cwiseAbs().maxCoeff());
  }
  return {!tiles.empty() && worst <= 1e-12, fmt("%zu tiles, max deviation %.1e", tiles.size(), worst)};
}

struct ImbalanceStats {
  double u_sar_given_opt = 0;
  double u_opt_given_sar = 0;
  double d_util = 0;
};

ImbalanceStats imbalance_run(const fs::path& root, double inf_sar, double inf_opt) {
  auto data = tiles_config(64, 8, 32, 64, 11);
  data.informativeness_sar = inf_sar;
  data.informativeness_opt = inf_opt;
  generate_synthetic_dataset(data, root / "data");
  TrainConfig cfg;
  cfg.dataset = root / "data";
  cfg.output_dir = root / "runs";
  cfg.optimizer.learning_rate = 3e-4;
  const auto r = run_multi_seed(cfg, {0, 1, 2}, {.metric = AccuracyMetric::f1, .threshold = 0.5, .split = "test"});
  return {r.aggregate["u_sar_given_opt"]["mean"], r.aggregate["u_opt_given_sar"]["mean"], r.aggregate["d_util"]["mean"]};
}

Outcome imbalance_sign() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto sar_strong = imbalance_run(scratch_dir("accept_imbalance_a"), 1.0, 0.2);
  const auto opt_strong = imbalance_run(scratch_dir("accept_imbalance_b"), 0.2, 1.0);
  const double t = seconds_since(t0);
  const bool ok = sar_strong.u_sar_given_opt > sar_strong.u_opt_given_sar && sar_strong.d_util > 0.05 &&
                  opt_strong.u_opt_given_sar > opt_strong.u_sar_given_opt && opt_strong.d_util < 0.0 && t < 1800.0;
  return {ok, fmt("SAR-informative: u(sar|opt) %.4f, u(opt|sar) %.4f, d_util %.4f; mirrored: u(sar|opt) %.4f, "
                  "u(opt|sar) %.4f, d_util %.4f; %.0f s",
                  sar_strong.u_sar_given_opt, sar_strong.u_opt_given_sar, sar_strong.d_util, opt_strong.u_sar_given_opt,
                  opt_strong.u_opt_given_sar, opt_strong.d_util, t)};
}

Outcome determinism() {
  const auto root = scratch_dir("accept_determinism");
  generate_synthetic_dataset(tiles_config(8, 2, 1, 32, 31), root / "data");
  auto run = [&](const std::string& name) {
    TrainConfig cfg;
    cfg.dataset = root / "data";
    cfg.output_dir = root / name;
    cfg.epochs = 3;
    cfg.batch_size = 4;
    cfg.eval_every = 1;
    cfg.seed = 12;
    train(cfg);
    return std::make_pair(slurp(cfg.output_dir / "checkpoint.bin"), slurp(cfg.output_dir / "history.jsonl"));
  };
  const auto a = run("a"), b = run("b");
  const bool same_ckpt = !a.first.empty() && a.first == b.first;
  const bool same_hist = !a.second.empty() && a.second == b.second;
  return {same_ckpt && same_hist, fmt("checkpoints identical: %s (%zu bytes), histories identical: %s",
                                      same_ckpt ? "yes" : "no", a.first.size(), same_hist ? "yes" : "no")};
}

Outcome h_bar_estimation() {
  const auto root = scratch_dir("accept_hbar");
  const auto ds = generate_synthetic_dataset(tiles_config(2, 1, 1, 32, 41), root / "data");
  DualModelConfig cfg;
  cfg.seed = 9;
  const auto model = DualModel<double>::initialize(cfg);
  const auto tiles = load_inputs(ds, "train");
  const auto stats = estimate_h_statistics(model, tiles);

  // Hand computation: per-channel loop mean of the raw features at each tap.
  std::vector<std::vector<double>> hand_sar(model.mmtms.size()), hand_opt(model.mmtms.size());
  for (const auto& t : tiles) {
    DualTrace<double> tr;
    forward_full(model, t.x_sar, t.x_opt, &tr);
    size_t k = 0;
    for (int s : cfg.tap_stages()) {
      for (const auto* side : {&tr.sar, &tr.opt}) {
        const auto& f = side->encoders[static_cast<size_t>(s - 1)].features;
        auto& acc = side == &tr.sar ? hand_sar[k] : hand_opt[k];
        acc.resize(static_cast<size_t>(f.channels()), 0.0);
        for (Index c = 0; c < f.channels(); ++c) {
          double sum = 0;
          for (Index y = 0; y < f.height; ++y)
            for (Index x = 0; x < f.width; ++x) sum += f(c, y, x);
          acc[static_cast<size_t>(c)] += sum / static_cast<double>(f.pixels()) / 2.0;
        }
      }
      ++k;
    }
  }
  double worst = 0;
  for (size_t k = 0; k < stats.entries.size(); ++k) {
    for (Index c = 0; c < stats.entries[k].h_bar_sar.size(); ++c)
      worst = std::max(worst, std::abs(stats.entries[k].h_bar_sar(c) - hand_sar[k][static_cast<size_t>(c)]));
    for (Index c = 0; c < stats.entries[k].h_bar_opt.size(); ++c)
      worst = std::max(worst, std::abs(stats.entries[k].h_bar_opt(c) - hand_opt[k][static_cast<size_t>(c)]));
  }
  const bool counts = std::all_of(stats.entries.begin(), stats.entries.end(), [](const auto& e) { return e.n == 2; });
  return {counts && worst <= 1e-9, fmt("%zu modules, max abs deviation %.1e", stats.entries.size(), worst)};
}

}  // namespace

// Optional arguments select criteria by number; all run by default.
int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  auto selected = [&](int n) { return only.empty() || only.count(n) > 0; };
  int failures = 0;
  auto report = [&](int n, const char* name, const std::function<Outcome()>& fn) {
    if (!selected(n)) return;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << "criterion " << n << " [" << (o.pass ? "PASS" : "FAIL") << "] " << name << ": " << o.detail
              << std::endl;
  };

  report(1, "fusion module matches scalar reference", mmtm_oracle);
  report(2, "identity gates reduce to uni-modal branches", gating_identity);
  report(3, "cut-off output independent of removed modality", cutoff_independence);
  report(4, "loss gradient matches finite differences", loss_gradient);
  report(5, "precision / recall / F1 oracle", metric_oracle);

  std::optional<OverfitRun> fit;
  Outcome fit_outcome;
  try {
    if (selected(6) || selected(7)) fit = overfit();
    fit_outcome = fit->outcome;
  } catch (const std::exception& e) {
    fit_outcome = {false, std::string("exception: ") + e.what()};
  }
  report(6, "fusion output is the branch mean", [&] {
    if (!fit) return Outcome{false, "no trained model available"};
    return fusion_identity(fit->model, fit->tiles);
  });
  report(7, "desk-scale overfit", [&] { return fit_outcome; });
  report(8, "utilization imbalance sign follows informativeness", imbalance_sign);
  report(9, "training is deterministic", determinism);
  report(10, "mean squeeze vectors over two tiles", h_bar_estimation);

  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
