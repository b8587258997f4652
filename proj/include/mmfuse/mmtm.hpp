#pragma once

// Multi-modal transfer module: squeeze both feature maps to channel vectors,
// project the concatenation to a joint representation, map it back to one
// excitation vector per modality and gate each feature map channel-wise.

#include "mmfuse/layers.hpp"

#include <optional>
#include <string>
#include <vector>

namespace mmfuse {

template <typename Scalar>
struct Mmtm {
  Matrix<Scalar> joint_weight;  // (Cz, C1 + C2)
  Matrix<Scalar> joint_bias;    // (Cz, 1)
  Matrix<Scalar> sar_weight;    // (C1, Cz)
  Matrix<Scalar> sar_bias;      // (C1, 1)
  Matrix<Scalar> opt_weight;    // (C2, Cz)
  Matrix<Scalar> opt_bias;      // (C2, 1)

  static Index joint_width(Index sar_channels, Index opt_channels) {
    return std::max<Index>(1, (sar_channels + opt_channels) / 4);
  }

  Mmtm() = default;
  Mmtm(Index sar_channels, Index opt_channels) {
    const Index cz = joint_width(sar_channels, opt_channels);
    joint_weight = Matrix<Scalar>::Zero(cz, sar_channels + opt_channels);
    joint_bias = Matrix<Scalar>::Zero(cz, 1);
    sar_weight = Matrix<Scalar>::Zero(sar_channels, cz);
    sar_bias = Matrix<Scalar>::Zero(sar_channels, 1);
    opt_weight = Matrix<Scalar>::Zero(opt_channels, cz);
    opt_bias = Matrix<Scalar>::Zero(opt_channels, 1);
  }

  Index sar_channels() const { return sar_weight.rows(); }
  Index opt_channels() const { return opt_weight.rows(); }
  Index joint_channels() const { return joint_weight.rows(); }

  void collect_parameters(const std::string& prefix, std::vector<std::pair<std::string, Matrix<Scalar>*>>& out) {
    out.emplace_back(prefix + "joint.weight", &joint_weight);
    out.emplace_back(prefix + "joint.bias", &joint_bias);
    out.emplace_back(prefix + "excite_sar.weight", &sar_weight);
    out.emplace_back(prefix + "excite_sar.bias", &sar_bias);
    out.emplace_back(prefix + "excite_opt.weight", &opt_weight);
    out.emplace_back(prefix + "excite_opt.bias", &opt_bias);
  }

  void initialize(std::mt19937_64& rng, bool zero_excitation) {
    fill_uniform(joint_weight, static_cast<Scalar>(std::sqrt(6.0 / static_cast<double>(joint_weight.cols()))), rng);
    const auto head_bound = static_cast<Scalar>(std::sqrt(1.0 / static_cast<double>(joint_channels())));
    fill_uniform(sar_weight, head_bound, rng);
    fill_uniform(opt_weight, head_bound, rng);
    if (zero_excitation) zero_excitation_heads();
  }

  void zero_excitation_heads() {
    sar_weight.setZero();
    sar_bias.setZero();
    opt_weight.setZero();
    opt_bias.setZero();
  }
};

// Per-channel spatial mean.
template <typename Scalar>
Vector<Scalar> squeeze(const FeatureMap<Scalar>& f) {
  if (f.pixels() < 1) throw ShapeError("squeeze: empty feature map");
  return f.data.rowwise().mean();
}

// Cut-off substitution: at most one of the two squeeze vectors is replaced.
template <typename Scalar>
struct SqueezeOverride {
  std::optional<Vector<Scalar>> replace_h_sar;
  std::optional<Vector<Scalar>> replace_h_opt;
};

template <typename Scalar>
struct Excitation {
  Vector<Scalar> joint_pre;  // before the rectifier
  Vector<Scalar> joint;
  Vector<Scalar> e_sar;
  Vector<Scalar> e_opt;
};

template <typename Scalar>
struct MmtmActivations {
  Vector<Scalar> h_sar;  // raw squeeze, always reported
  Vector<Scalar> h_opt;
  Vector<Scalar> h_sar_used;  // what entered the joint projection
  Vector<Scalar> h_opt_used;
  Excitation<Scalar> excitation;

  const Vector<Scalar>& e_sar() const { return excitation.e_sar; }
  const Vector<Scalar>& e_opt() const { return excitation.e_opt; }
};

template <typename Scalar>
Excitation<Scalar> excite(const Mmtm<Scalar>& m, const Vector<Scalar>& h_sar, const Vector<Scalar>& h_opt) {
  if (h_sar.size() != m.sar_channels() || h_opt.size() != m.opt_channels()) {
    throw ShapeError("mmtm: squeeze vector length mismatch (got " + std::to_string(h_sar.size()) + "/" +
                     std::to_string(h_opt.size()) + ", expected " + std::to_string(m.sar_channels()) + "/" +
                     std::to_string(m.opt_channels()) + ")");
  }
  Vector<Scalar> h(h_sar.size() + h_opt.size());
  h << h_sar, h_opt;
  Excitation<Scalar> ex;
  ex.joint_pre = m.joint_weight * h + m.joint_bias.col(0);
  ex.joint = ex.joint_pre.cwiseMax(Scalar(0));
  const Vector<Scalar> a_sar = m.sar_weight * ex.joint + m.sar_bias.col(0);
  const Vector<Scalar> a_opt = m.opt_weight * ex.joint + m.opt_bias.col(0);
  ex.e_sar = Scalar(2) * logistic<Scalar>(a_sar);
  ex.e_opt = Scalar(2) * logistic<Scalar>(a_opt);
  return ex;
}

// F * e, with e broadcast over all pixels of its channel.
template <typename Scalar>
FeatureMap<Scalar> gate(const FeatureMap<Scalar>& f, const Vector<Scalar>& e) {
  FeatureMap<Scalar> out;
  out.height = f.height;
  out.width = f.width;
  out.data = f.data.array().colwise() * e.array();
  return out;
}

template <typename Scalar>
struct MmtmOutput {
  FeatureMap<Scalar> sar;
  FeatureMap<Scalar> opt;
  MmtmActivations<Scalar> activations;
};

template <typename Scalar>
MmtmOutput<Scalar> mmtm_forward(const Mmtm<Scalar>& m, const FeatureMap<Scalar>& f_sar,
                                const FeatureMap<Scalar>& f_opt, const SqueezeOverride<Scalar>& override = {}) {
  if (override.replace_h_sar && override.replace_h_opt) {
    throw ValidationError("mmtm: at most one squeeze vector may be replaced");
  }
  if (f_sar.channels() != m.sar_channels() || f_opt.channels() != m.opt_channels()) {
    throw ShapeError("mmtm: feature widths " + std::to_string(f_sar.channels()) + "/" +
                     std::to_string(f_opt.channels()) + " do not match module widths " +
                     std::to_string(m.sar_channels()) + "/" + std::to_string(m.opt_channels()));
  }
  MmtmOutput<Scalar> out;
  auto& act = out.activations;
  act.h_sar = squeeze(f_sar);
  act.h_opt = squeeze(f_opt);
  act.h_sar_used = override.replace_h_sar ? *override.replace_h_sar : act.h_sar;
  act.h_opt_used = override.replace_h_opt ? *override.replace_h_opt : act.h_opt;
  act.excitation = excite(m, act.h_sar_used, act.h_opt_used);
  out.sar = gate(f_sar, act.excitation.e_sar);
  out.opt = gate(f_opt, act.excitation.e_opt);
  return out;
}

template <typename Scalar>
struct MmtmInputGrads {
  FeatureMap<Scalar> sar;
  FeatureMap<Scalar> opt;
};

// Backward through gating, excitation and squeeze. Accumulates into `grad`.
// Replaced squeeze vectors are constants: no gradient flows into the raw
// features through them.
template <typename Scalar>
MmtmInputGrads<Scalar> mmtm_backward(const Mmtm<Scalar>& m, const FeatureMap<Scalar>& f_sar,
                                     const FeatureMap<Scalar>& f_opt, const MmtmActivations<Scalar>& act,
                                     const FeatureMap<Scalar>& grad_sar_out, const FeatureMap<Scalar>& grad_opt_out,
                                     bool sar_replaced, bool opt_replaced, Mmtm<Scalar>& grad) {
  const auto& ex = act.excitation;
  const Vector<Scalar> de_sar = (grad_sar_out.data.array() * f_sar.data.array()).rowwise().sum();
  const Vector<Scalar> de_opt = (grad_opt_out.data.array() * f_opt.data.array()).rowwise().sum();
  // d(2 sigma(a))/da = e (1 - e / 2)
  const Vector<Scalar> da_sar = de_sar.array() * ex.e_sar.array() * (Scalar(1) - ex.e_sar.array() / Scalar(2));
  const Vector<Scalar> da_opt = de_opt.array() * ex.e_opt.array() * (Scalar(1) - ex.e_opt.array() / Scalar(2));
  grad.sar_weight.noalias() += da_sar * ex.joint.transpose();
  grad.sar_bias.col(0) += da_sar;
  grad.opt_weight.noalias() += da_opt * ex.joint.transpose();
  grad.opt_bias.col(0) += da_opt;
  const Vector<Scalar> dz = m.sar_weight.transpose() * da_sar + m.opt_weight.transpose() * da_opt;
  const Vector<Scalar> du = (ex.joint_pre.array() > Scalar(0)).select(dz, Scalar(0));
  Vector<Scalar> h(act.h_sar_used.size() + act.h_opt_used.size());
  h << act.h_sar_used, act.h_opt_used;
  grad.joint_weight.noalias() += du * h.transpose();
  grad.joint_bias.col(0) += du;
  const Vector<Scalar> dh = m.joint_weight.transpose() * du;

  MmtmInputGrads<Scalar> in;
  in.sar = gate(grad_sar_out, ex.e_sar);
  in.opt = gate(grad_opt_out, ex.e_opt);
  if (!sar_replaced) {
    in.sar.data.colwise() += dh.head(m.sar_channels()) / static_cast<Scalar>(f_sar.pixels());
  }
  if (!opt_replaced) {
    in.opt.data.colwise() += dh.tail(m.opt_channels()) / static_cast<Scalar>(f_opt.pixels());
  }
  return in;
}

// Training-set mean squeeze vectors, one record per module.
template <typename Scalar>
struct HStatistics {
  struct Entry {
    Index index = 0;
    Index n = 0;
    Vector<Scalar> h_bar_sar;
    Vector<Scalar> h_bar_opt;
  };
  std::vector<Entry> entries;
};

}  // namespace mmfuse
