#pragma once

#include "mmfuse/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace mmfuse {

struct LossConfig {
  double power = 2.0;
  double epsilon = 1e-6;

  void validate() const {
    if (!(power >= 1.0)) throw ValidationError("loss.power must be >= 1");
    if (!(epsilon > 0.0)) throw ValidationError("loss.epsilon must be > 0");
  }
};

template <typename Scalar>
void check_binary(const FeatureMap<Scalar>& target, const char* what) {
  if (!((target.data.array() == Scalar(0)) || (target.data.array() == Scalar(1))).all()) {
    throw ValidationError(std::string(what) + ": target must be binary");
  }
}

template <typename Scalar>
struct LossWithGradient {
  Scalar loss = 0;
  std::vector<FeatureMap<Scalar>> grad;  // dL/dpred, one map per input tile
};

// Power Jaccard over all pixels of all tiles:
//   L = 1 - (sum p t + eps) / (sum p^k + sum t^k - sum p t + eps).
// Sums run over the whole batch, so tiles without urban pixels do not
// contribute a degenerate per-tile term.
template <typename Scalar>
LossWithGradient<Scalar> power_jaccard(std::span<const FeatureMap<Scalar>> preds,
                                       std::span<const FeatureMap<Scalar>> targets, const LossConfig& cfg,
                                       bool want_grad = true) {
  cfg.validate();
  if (preds.size() != targets.size()) throw ShapeError("power_jaccard: prediction/target count mismatch");
  const auto k = static_cast<Scalar>(cfg.power);
  const auto eps = static_cast<Scalar>(cfg.epsilon);
  Scalar inter = 0, pred_pow = 0, target_pow = 0;
  for (size_t i = 0; i < preds.size(); ++i) {
    if (!preds[i].same_shape(targets[i])) {
      throw ShapeError("power_jaccard: shape mismatch " + shape_string(preds[i]) + " vs " + shape_string(targets[i]));
    }
    check_binary(targets[i], "power_jaccard");
    const auto p = preds[i].data.array();
    const auto t = targets[i].data.array();
    inter += (p * t).sum();
    pred_pow += p.pow(k).sum();
    target_pow += t.pow(k).sum();
  }
  const Scalar num = inter + eps;
  const Scalar den = pred_pow + target_pow - inter + eps;
  LossWithGradient<Scalar> out;
  out.loss = Scalar(1) - num / den;
  if (!want_grad) return out;
  for (size_t i = 0; i < preds.size(); ++i) {
    const auto p = preds[i].data.array();
    const auto t = targets[i].data.array();
    FeatureMap<Scalar> g;
    g.height = preds[i].height;
    g.width = preds[i].width;
    g.data = -(t * den - num * (k * p.pow(k - Scalar(1)) - t)) / (den * den);
    out.grad.push_back(std::move(g));
  }
  return out;
}

template <typename Scalar>
Scalar power_jaccard_loss(const FeatureMap<Scalar>& pred, const FeatureMap<Scalar>& target, const LossConfig& cfg) {
  return power_jaccard<Scalar>(std::span(&pred, 1), std::span(&target, 1), cfg, false).loss;
}

template <typename Scalar>
struct CompositeLoss {
  Scalar total = 0;
  Scalar sar = 0;
  Scalar opt = 0;
  std::vector<FeatureMap<Scalar>> grad_sar;
  std::vector<FeatureMap<Scalar>> grad_opt;
};

// L(y, p_sar) + L(y, p_opt); each gradient only carries its own term.
template <typename Scalar>
CompositeLoss<Scalar> composite_loss(std::span<const FeatureMap<Scalar>> targets,
                                     std::span<const FeatureMap<Scalar>> p_sar,
                                     std::span<const FeatureMap<Scalar>> p_opt, const LossConfig& cfg) {
  auto s = power_jaccard<Scalar>(p_sar, targets, cfg);
  auto o = power_jaccard<Scalar>(p_opt, targets, cfg);
  return {s.loss + o.loss, s.loss, o.loss, std::move(s.grad), std::move(o.grad)};
}

struct ConfusionCounts {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
  std::int64_t tn = 0;

  std::int64_t total() const { return tp + fp + fn + tn; }

  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
  friend ConfusionCounts operator+(ConfusionCounts a, const ConfusionCounts& b) { return a += b; }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

// Hard mask: 1 where probability > threshold.
template <typename Scalar>
FeatureMap<Scalar> threshold_mask(const FeatureMap<Scalar>& prob, double threshold) {
  return FeatureMap<Scalar>((prob.data.array() > static_cast<Scalar>(threshold)).template cast<Scalar>().matrix(),
                            prob.height, prob.width);
}

template <typename Scalar>
ConfusionCounts accumulate_confusion(const FeatureMap<Scalar>& pred_mask, const FeatureMap<Scalar>& target,
                                     ConfusionCounts counts = {}) {
  if (!pred_mask.same_shape(target)) throw ShapeError("confusion: shape mismatch");
  check_binary(pred_mask, "confusion (prediction)");
  check_binary(target, "confusion");
  const auto p = pred_mask.data.array();
  const auto t = target.data.array();
  const auto tp = static_cast<std::int64_t>((p * t).sum());
  const auto pos_pred = static_cast<std::int64_t>(p.sum());
  const auto pos_true = static_cast<std::int64_t>(t.sum());
  counts.tp += tp;
  counts.fp += pos_pred - tp;
  counts.fn += pos_true - tp;
  counts.tn += static_cast<std::int64_t>(p.size()) - pos_pred - pos_true + tp;
  return counts;
}

struct PrecisionRecallF1 {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
};

// 0/0 evaluates to 0 for each of the three ratios.
inline PrecisionRecallF1 compute_prf1(const ConfusionCounts& c) {
  auto ratio = [](double num, double den) { return den == 0.0 ? 0.0 : num / den; };
  PrecisionRecallF1 r;
  r.precision = ratio(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fp));
  r.recall = ratio(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fn));
  r.f1 = ratio(2.0 * r.precision * r.recall, r.precision + r.recall);
  return r;
}

inline double f1_from(double precision, double recall) {
  return precision + recall == 0.0 ? 0.0 : 2.0 * precision * recall / (precision + recall);
}

}  // namespace mmfuse
