#pragma once

// Two U-Net branches joined by one fusion module per tap stage, with the
// full-fusion forward pass, the two cut-off passes and the joint backward.

#include "mmfuse/mmtm.hpp"
#include "mmfuse/unet.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace mmfuse {

struct DualModelConfig {
  UnetConfig sar{.in_channels = 2};
  UnetConfig opt{.in_channels = 4};
  std::uint64_t seed = 0;
  bool zero_excitation_init = false;

  void validate() const {
    sar.validate();
    opt.validate();
    if (sar.depth != opt.depth) throw ValidationError("model: branches must share depth");
    std::vector<int> a = sar.tap_points, b = opt.tap_points;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    if (a != b) throw ValidationError("model: branches must share tap stages");
  }

  // Ascending tap stages; fusion module k sits at tap_stages()[k].
  std::vector<int> tap_stages() const {
    std::vector<int> t = sar.tap_points;
    std::sort(t.begin(), t.end());
    return t;
  }

  friend bool operator==(const DualModelConfig&, const DualModelConfig&) = default;
};

enum class ForwardMode { full, cutoff_to_sar, cutoff_to_opt };

inline std::string to_string(ForwardMode m) {
  switch (m) {
    case ForwardMode::full: return "full";
    case ForwardMode::cutoff_to_sar: return "cutoff_to_sar";
    case ForwardMode::cutoff_to_opt: return "cutoff_to_opt";
  }
  return "?";
}

template <typename Scalar>
class DualModel {
 public:
  DualModel() = default;

  // Zero parameters with the shapes implied by `cfg`.
  explicit DualModel(const DualModelConfig& cfg) : config_(cfg) {
    cfg.validate();
    sar = Unet<Scalar>(cfg.sar);
    opt = Unet<Scalar>(cfg.opt);
    for (int stage : cfg.tap_stages()) mmtms.emplace_back(cfg.sar.stage_width(stage), cfg.opt.stage_width(stage));
  }

  // Deterministic in cfg.seed. Draw order: SAR branch, optical branch, then
  // the fusion modules in stage order.
  static DualModel initialize(const DualModelConfig& cfg) {
    DualModel model(cfg);
    std::mt19937_64 rng(cfg.seed);
    model.sar.initialize(rng);
    model.opt.initialize(rng);
    for (auto& m : model.mmtms) m.initialize(rng, cfg.zero_excitation_init);
    return model;
  }

  DualModel zeros_like() const { return DualModel(config_); }

  const DualModelConfig& config() const { return config_; }

  NamedParameters<Scalar> parameters() {
    NamedParameters<Scalar> out;
    sar.collect_parameters("sar.", out);
    opt.collect_parameters("opt.", out);
    for (size_t k = 0; k < mmtms.size(); ++k) mmtms[k].collect_parameters("mmtm" + std::to_string(k + 1) + ".", out);
    return out;
  }

  std::vector<std::pair<std::string, const Matrix<Scalar>*>> parameters() const {
    auto mutable_params = const_cast<DualModel*>(this)->parameters();
    return {mutable_params.begin(), mutable_params.end()};
  }

  Index parameter_count() const {
    Index n = 0;
    for (const auto& [name, m] : parameters()) n += m->size();
    return n;
  }

  void zero_excitation_heads() {
    for (auto& m : mmtms) m.zero_excitation_heads();
  }

  Unet<Scalar> sar;
  Unet<Scalar> opt;
  std::vector<Mmtm<Scalar>> mmtms;

 private:
  DualModelConfig config_;
};

template <typename Scalar>
struct BranchOutput {
  ForwardMode mode = ForwardMode::full;
  // Full mode: all three. cutoff_to_sar: p_sar holds p'_sar. cutoff_to_opt:
  // p_opt holds p'_opt.
  std::optional<FeatureMap<Scalar>> p_sar;
  std::optional<FeatureMap<Scalar>> p_opt;
  std::optional<FeatureMap<Scalar>> p;
};

template <typename Scalar>
struct DualTrace {
  UnetTrace<Scalar> sar;
  UnetTrace<Scalar> opt;
  std::vector<MmtmActivations<Scalar>> mmtm;
};

template <typename Scalar>
void check_statistics(const DualModel<Scalar>& model, const HStatistics<Scalar>& stats) {
  if (stats.entries.size() != model.mmtms.size()) {
    throw ShapeError("statistics hold " + std::to_string(stats.entries.size()) + " modules, model has " +
                     std::to_string(model.mmtms.size()));
  }
  for (size_t k = 0; k < stats.entries.size(); ++k) {
    const auto& e = stats.entries[k];
    if (e.h_bar_sar.size() != model.mmtms[k].sar_channels() || e.h_bar_opt.size() != model.mmtms[k].opt_channels()) {
      throw ShapeError("statistics for module " + std::to_string(k + 1) + " do not match the model widths");
    }
  }
}

template <typename Scalar>
FeatureMap<Scalar> fuse(const FeatureMap<Scalar>& p_sar, const FeatureMap<Scalar>& p_opt) {
  return FeatureMap<Scalar>((p_sar.data + p_opt.data) * Scalar(0.5), p_sar.height, p_sar.width);
}

// Both branches run stage by stage; each tap's fusion module rewrites both
// feature maps before they continue into pooling and skips.
template <typename Scalar>
BranchOutput<Scalar> forward_full(const DualModel<Scalar>& model, const FeatureMap<Scalar>& x_sar,
                                  const FeatureMap<Scalar>& x_opt, DualTrace<Scalar>* trace_out = nullptr) {
  const auto& cfg = model.config();
  check_branch_input(cfg.sar, x_sar);
  check_branch_input(cfg.opt, x_opt);
  if (x_sar.height != x_opt.height || x_sar.width != x_opt.width) throw ShapeError("modalities differ in size");
  DualTrace<Scalar> local;
  DualTrace<Scalar>& tr = trace_out ? *trace_out : local;
  const auto depth = static_cast<size_t>(cfg.sar.depth);
  tr.sar.encoders.assign(depth, {});
  tr.opt.encoders.assign(depth, {});
  tr.sar.recalibrated.assign(depth, {});
  tr.opt.recalibrated.assign(depth, {});
  tr.mmtm.assign(model.mmtms.size(), {});
  size_t k = 0;
  for (int s = 1; s <= cfg.sar.depth; ++s) {
    const auto i = static_cast<size_t>(s - 1);
    const FeatureMap<Scalar>& prev_sar = s == 1 ? x_sar : tr.sar.recalibrated[i - 1];
    const FeatureMap<Scalar>& prev_opt = s == 1 ? x_opt : tr.opt.recalibrated[i - 1];
    FeatureMap<Scalar> f_sar = encode_stage(model.sar, s, prev_sar, tr.sar.encoders[i]);
    FeatureMap<Scalar> f_opt = encode_stage(model.opt, s, prev_opt, tr.opt.encoders[i]);
    if (cfg.sar.is_tap(s)) {
      auto fused = mmtm_forward(model.mmtms[k], f_sar, f_opt);
      tr.mmtm[k++] = std::move(fused.activations);
      f_sar = std::move(fused.sar);
      f_opt = std::move(fused.opt);
    }
    tr.sar.recalibrated[i] = std::move(f_sar);
    tr.opt.recalibrated[i] = std::move(f_opt);
  }
  BranchOutput<Scalar> out;
  out.mode = ForwardMode::full;
  out.p_sar = sigmoid_probability(decode(model.sar, tr.sar));
  out.p_opt = sigmoid_probability(decode(model.opt, tr.opt));
  out.p = fuse(*out.p_sar, *out.p_opt);
  return out;
}

// One branch only. At every fusion module the other modality's squeeze
// vector is the stored training-set mean, and only this branch's gated
// features are consumed. The other branch is never evaluated.
template <typename Scalar>
FeatureMap<Scalar> forward_single_branch(const DualModel<Scalar>& model, bool sar_branch, const FeatureMap<Scalar>& x,
                                         const HStatistics<Scalar>& stats) {
  check_statistics(model, stats);
  const Unet<Scalar>& net = sar_branch ? model.sar : model.opt;
  const UnetConfig& ucfg = net.config();
  check_branch_input(ucfg, x);
  UnetTrace<Scalar> tr;
  const auto depth = static_cast<size_t>(ucfg.depth);
  tr.encoders.assign(depth, {});
  tr.recalibrated.assign(depth, {});
  size_t k = 0;
  for (int s = 1; s <= ucfg.depth; ++s) {
    const auto i = static_cast<size_t>(s - 1);
    const FeatureMap<Scalar>& prev = s == 1 ? x : tr.recalibrated[i - 1];
    FeatureMap<Scalar> f = encode_stage(net, s, prev, tr.encoders[i]);
    if (ucfg.is_tap(s)) {
      const auto& entry = stats.entries[k];
      const Vector<Scalar> h = squeeze(f);
      if (sar_branch) {
        f = gate(f, excite(model.mmtms[k], h, entry.h_bar_opt).e_sar);
      } else {
        f = gate(f, excite(model.mmtms[k], entry.h_bar_sar, h).e_opt);
      }
      ++k;
    }
    tr.recalibrated[i] = std::move(f);
  }
  return sigmoid_probability(decode(net, tr));
}

template <typename Scalar>
BranchOutput<Scalar> forward_cutoff_to_sar(const DualModel<Scalar>& model, const FeatureMap<Scalar>& x_sar,
                                           const HStatistics<Scalar>& stats) {
  BranchOutput<Scalar> out;
  out.mode = ForwardMode::cutoff_to_sar;
  out.p_sar = forward_single_branch(model, true, x_sar, stats);
  return out;
}

template <typename Scalar>
BranchOutput<Scalar> forward_cutoff_to_opt(const DualModel<Scalar>& model, const FeatureMap<Scalar>& x_opt,
                                           const HStatistics<Scalar>& stats) {
  BranchOutput<Scalar> out;
  out.mode = ForwardMode::cutoff_to_opt;
  out.p_opt = forward_single_branch(model, false, x_opt, stats);
  return out;
}

// Mode dispatch. Absent inputs are null; a cut-off mode only requires its
// own modality and the statistics.
template <typename Scalar>
BranchOutput<Scalar> forward(const DualModel<Scalar>& model, const FeatureMap<Scalar>* x_sar,
                             const FeatureMap<Scalar>* x_opt, ForwardMode mode,
                             const HStatistics<Scalar>* stats = nullptr) {
  switch (mode) {
    case ForwardMode::full:
      if (!x_sar || !x_opt) throw ValidationError("full mode requires both modalities");
      return forward_full(model, *x_sar, *x_opt);
    case ForwardMode::cutoff_to_sar:
      if (!x_sar) throw ValidationError("cutoff_to_sar requires the SAR input");
      if (!stats) throw ValidationError("cutoff_to_sar requires squeeze statistics");
      return forward_cutoff_to_sar(model, *x_sar, *stats);
    case ForwardMode::cutoff_to_opt:
      if (!x_opt) throw ValidationError("cutoff_to_opt requires the optical input");
      if (!stats) throw ValidationError("cutoff_to_opt requires squeeze statistics");
      return forward_cutoff_to_opt(model, *x_opt, *stats);
  }
  throw ValidationError("unknown forward mode");
}

// Backward of forward_full given dL/dlogits of each branch. Accumulates
// parameter gradients into `grad` (same shapes as `model`).
template <typename Scalar>
void backward_full(const DualModel<Scalar>& model, const DualTrace<Scalar>& tr, const FeatureMap<Scalar>& grad_logits_sar,
                   const FeatureMap<Scalar>& grad_logits_opt, DualModel<Scalar>& grad) {
  const auto& cfg = model.config();
  std::vector<FeatureMap<Scalar>> d_sar = decode_backward(model.sar, tr.sar, grad_logits_sar, grad.sar);
  std::vector<FeatureMap<Scalar>> d_opt = decode_backward(model.opt, tr.opt, grad_logits_opt, grad.opt);
  size_t k = model.mmtms.size();
  for (int s = cfg.sar.depth; s >= 1; --s) {
    const auto i = static_cast<size_t>(s - 1);
    FeatureMap<Scalar> g_sar = std::move(d_sar[i]);
    FeatureMap<Scalar> g_opt = std::move(d_opt[i]);
    if (cfg.sar.is_tap(s)) {
      --k;
      auto g = mmtm_backward(model.mmtms[k], tr.sar.encoders[i].features, tr.opt.encoders[i].features, tr.mmtm[k],
                             g_sar, g_opt, false, false, grad.mmtms[k]);
      g_sar = std::move(g.sar);
      g_opt = std::move(g.opt);
    }
    FeatureMap<Scalar> prev_sar = encode_stage_backward(model.sar, s, tr.sar.encoders[i], g_sar, grad.sar);
    FeatureMap<Scalar> prev_opt = encode_stage_backward(model.opt, s, tr.opt.encoders[i], g_opt, grad.opt);
    if (s > 1) {
      d_sar[i - 1].data += prev_sar.data;
      d_opt[i - 1].data += prev_opt.data;
    }
  }
}

// Running sums of the raw squeeze vectors of full-mode passes.
template <typename Scalar>
class HStatisticsAccumulator {
 public:
  explicit HStatisticsAccumulator(const DualModel<Scalar>& model) {
    for (const auto& m : model.mmtms) {
      sum_sar_.push_back(Vector<Scalar>::Zero(m.sar_channels()));
      sum_opt_.push_back(Vector<Scalar>::Zero(m.opt_channels()));
    }
  }

  void add(const std::vector<MmtmActivations<Scalar>>& acts) {
    if (acts.size() != sum_sar_.size()) throw ShapeError("accumulator: module count mismatch");
    for (size_t k = 0; k < acts.size(); ++k) {
      sum_sar_[k] += acts[k].h_sar;
      sum_opt_[k] += acts[k].h_opt;
    }
    ++n_;
  }

  void merge(const HStatisticsAccumulator& other) {
    for (size_t k = 0; k < sum_sar_.size(); ++k) {
      sum_sar_[k] += other.sum_sar_[k];
      sum_opt_[k] += other.sum_opt_[k];
    }
    n_ += other.n_;
  }

  Index count() const { return n_; }

  HStatistics<Scalar> finish() const {
    if (n_ < 1) throw ValidationError("cannot estimate squeeze statistics from an empty training split");
    HStatistics<Scalar> stats;
    for (size_t k = 0; k < sum_sar_.size(); ++k) {
      stats.entries.push_back({static_cast<Index>(k + 1), n_, sum_sar_[k] / static_cast<Scalar>(n_),
                               sum_opt_[k] / static_cast<Scalar>(n_)});
    }
    return stats;
  }

 private:
  std::vector<Vector<Scalar>> sum_sar_;
  std::vector<Vector<Scalar>> sum_opt_;
  Index n_ = 0;
};

// Mean squeeze vectors at every module over full-mode passes of `inputs`
// (pairs of SAR / optical rasters, unaugmented).
template <typename Scalar, typename Range>
HStatistics<Scalar> estimate_h_statistics(const DualModel<Scalar>& model, const Range& inputs) {
  HStatisticsAccumulator<Scalar> acc(model);
  for (const auto& [x_sar, x_opt] : inputs) {
    DualTrace<Scalar> tr;
    forward_full(model, x_sar, x_opt, &tr);
    acc.add(tr.mmtm);
  }
  return acc.finish();
}

}  // namespace mmfuse
