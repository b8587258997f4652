#pragma once

// One uni-modal U-Net branch. The forward pass is exposed stage by stage so
// that a fusion module can rewrite the encoder features ("taps") before they
// are pooled into the next stage and copied into the skip connections.

#include "mmfuse/layers.hpp"

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace mmfuse {

struct UnetConfig {
  Index in_channels = 2;
  Index base_channels = 8;
  Index depth = 4;
  // 1-based encoder stage ids; stage `depth` is the bottleneck.
  std::vector<int> tap_points = {1, 2, 3, 4};

  Index stage_width(int stage) const { return base_channels << (stage - 1); }
  Index size_multiple() const { return Index{1} << (depth - 1); }

  void validate() const {
    if (in_channels < 1) throw ValidationError("unet.in_channels must be >= 1");
    if (base_channels < 1) throw ValidationError("unet.base_channels must be >= 1");
    if (depth < 2 || depth > 12) throw ValidationError("unet.depth must be in [2, 12]");
    std::vector<int> sorted = tap_points;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
      throw ValidationError("unet.tap_points must be distinct");
    }
    for (int t : tap_points) {
      if (t < 1 || t > depth) throw ValidationError("unet.tap_points entry out of range: " + std::to_string(t));
    }
  }

  bool is_tap(int stage) const {
    return std::find(tap_points.begin(), tap_points.end(), stage) != tap_points.end();
  }

  friend bool operator==(const UnetConfig&, const UnetConfig&) = default;
};

template <typename Scalar>
using NamedParameters = std::vector<std::pair<std::string, Matrix<Scalar>*>>;

template <typename Scalar>
struct EncoderStage {
  Conv2d<Scalar> conv1;
  Conv2d<Scalar> conv2;
};

template <typename Scalar>
struct DecoderStage {
  UpConv2x2<Scalar> up;
  Conv2d<Scalar> conv1;
  Conv2d<Scalar> conv2;
};

template <typename Scalar>
class Unet {
 public:
  Unet() = default;

  // All parameters zero.
  explicit Unet(const UnetConfig& cfg) : config_(cfg) {
    cfg.validate();
    for (int s = 1; s <= cfg.depth; ++s) {
      const Index in = s == 1 ? cfg.in_channels : cfg.stage_width(s - 1);
      const Index out = cfg.stage_width(s);
      encoders.push_back({Conv2d<Scalar>(in, out, 3), Conv2d<Scalar>(out, out, 3)});
    }
    for (int s = 1; s < cfg.depth; ++s) {
      const Index width = cfg.stage_width(s);
      decoders.push_back(
          {UpConv2x2<Scalar>(cfg.stage_width(s + 1), width), Conv2d<Scalar>(2 * width, width, 3),
           Conv2d<Scalar>(width, width, 3)});
    }
    head = Conv2d<Scalar>(cfg.base_channels, 1, 1);
  }

  const UnetConfig& config() const { return config_; }

  // Stable, fully qualified names in a fixed order.
  void collect_parameters(const std::string& prefix, NamedParameters<Scalar>& out) {
    for (size_t i = 0; i < encoders.size(); ++i) {
      const std::string p = prefix + "enc" + std::to_string(i + 1) + ".";
      out.emplace_back(p + "conv1.weight", &encoders[i].conv1.weight);
      out.emplace_back(p + "conv1.bias", &encoders[i].conv1.bias);
      out.emplace_back(p + "conv2.weight", &encoders[i].conv2.weight);
      out.emplace_back(p + "conv2.bias", &encoders[i].conv2.bias);
    }
    for (size_t i = 0; i < decoders.size(); ++i) {
      const std::string p = prefix + "dec" + std::to_string(i + 1) + ".";
      out.emplace_back(p + "up.weight", &decoders[i].up.weight);
      out.emplace_back(p + "up.bias", &decoders[i].up.bias);
      out.emplace_back(p + "conv1.weight", &decoders[i].conv1.weight);
      out.emplace_back(p + "conv1.bias", &decoders[i].conv1.bias);
      out.emplace_back(p + "conv2.weight", &decoders[i].conv2.weight);
      out.emplace_back(p + "conv2.bias", &decoders[i].conv2.bias);
    }
    out.emplace_back(prefix + "head.weight", &head.weight);
    out.emplace_back(prefix + "head.bias", &head.bias);
  }

  // He-uniform weights for rectified layers, variance-preserving for the
  // linear up-convolutions and the head; zero biases.
  void initialize(std::mt19937_64& rng) {
    for (auto& e : encoders) {
      fill_uniform(e.conv1.weight, he_bound(e.conv1.weight.cols()), rng);
      fill_uniform(e.conv2.weight, he_bound(e.conv2.weight.cols()), rng);
    }
    for (auto& d : decoders) {
      fill_uniform(d.up.weight, linear_bound(d.up.weight.cols()), rng);
      fill_uniform(d.conv1.weight, he_bound(d.conv1.weight.cols()), rng);
      fill_uniform(d.conv2.weight, he_bound(d.conv2.weight.cols()), rng);
    }
    fill_uniform(head.weight, linear_bound(head.weight.cols()), rng);
  }

  std::vector<EncoderStage<Scalar>> encoders;
  std::vector<DecoderStage<Scalar>> decoders;  // decoders[i] rebuilds stage i + 1 from stage i + 2
  Conv2d<Scalar> head;

 private:
  static Scalar he_bound(Index fan_in) { return static_cast<Scalar>(std::sqrt(6.0 / static_cast<double>(fan_in))); }
  static Scalar linear_bound(Index fan_in) {
    return static_cast<Scalar>(std::sqrt(3.0 / static_cast<double>(fan_in)));
  }

  UnetConfig config_;
};

template <typename Scalar>
Index parameter_count(Unet<Scalar>& net) {
  NamedParameters<Scalar> params;
  net.collect_parameters("", params);
  Index n = 0;
  for (const auto& [name, m] : params) n += m->size();
  return n;
}

template <typename Scalar>
struct EncoderTrace {
  FeatureMap<Scalar> input;  // after pooling (or the raw branch input at stage 1)
  PoolIndices pool;
  Index unpooled_height = 0;
  Index unpooled_width = 0;
  FeatureMap<Scalar> act1;
  FeatureMap<Scalar> features;  // F at this stage, before any recalibration
};

template <typename Scalar>
struct DecoderTrace {
  FeatureMap<Scalar> below;  // decoder input coming from the stage underneath
  FeatureMap<Scalar> joined;
  FeatureMap<Scalar> act1;
  FeatureMap<Scalar> out;
};

template <typename Scalar>
struct UnetTrace {
  std::vector<EncoderTrace<Scalar>> encoders;
  std::vector<FeatureMap<Scalar>> recalibrated;  // what actually fed pooling and skips
  std::vector<DecoderTrace<Scalar>> decoders;
  FeatureMap<Scalar> logits;
};

template <typename Scalar>
void check_branch_input(const UnetConfig& cfg, const FeatureMap<Scalar>& x) {
  if (x.channels() != cfg.in_channels) {
    throw ShapeError("branch input has " + std::to_string(x.channels()) + " channels, expected " +
                     std::to_string(cfg.in_channels));
  }
  const Index m = cfg.size_multiple();
  if (x.height < m || x.width < m || x.height % m != 0 || x.width % m != 0) {
    throw ShapeError("spatial size " + std::to_string(x.height) + "x" + std::to_string(x.width) +
                     " must be a positive multiple of " + std::to_string(m));
  }
}

// Runs encoder stage `stage` (1-based). `previous` is the branch input for
// stage 1 and the (possibly recalibrated) features of stage - 1 otherwise.
template <typename Scalar>
FeatureMap<Scalar> encode_stage(const Unet<Scalar>& net, int stage, const FeatureMap<Scalar>& previous,
                                EncoderTrace<Scalar>& trace) {
  const auto& enc = net.encoders[static_cast<size_t>(stage - 1)];
  trace.unpooled_height = previous.height;
  trace.unpooled_width = previous.width;
  trace.input = stage == 1 ? previous : maxpool_forward(previous, trace.pool);
  trace.act1 = conv_forward(enc.conv1, trace.input);
  relu_inplace(trace.act1);
  trace.features = conv_forward(enc.conv2, trace.act1);
  relu_inplace(trace.features);
  return trace.features;
}

// Decoder and head. trace.recalibrated must hold one map per stage.
template <typename Scalar>
const FeatureMap<Scalar>& decode(const Unet<Scalar>& net, UnetTrace<Scalar>& trace) {
  const Index depth = net.config().depth;
  trace.decoders.resize(static_cast<size_t>(depth - 1));
  const FeatureMap<Scalar>* below = &trace.recalibrated.back();
  for (Index i = depth - 2; i >= 0; --i) {
    const auto& dec = net.decoders[static_cast<size_t>(i)];
    auto& dt = trace.decoders[static_cast<size_t>(i)];
    dt.below = *below;
    dt.joined = concat_channels(trace.recalibrated[static_cast<size_t>(i)], upconv_forward(dec.up, dt.below));
    dt.act1 = conv_forward(dec.conv1, dt.joined);
    relu_inplace(dt.act1);
    dt.out = conv_forward(dec.conv2, dt.act1);
    relu_inplace(dt.out);
    below = &dt.out;
  }
  trace.logits = conv_forward(net.head, trace.decoders.front().out);
  return trace.logits;
}

// Gradients w.r.t. the recalibrated feature of every stage (skip paths plus,
// for the bottleneck, the decoder input). Accumulates parameter gradients.
template <typename Scalar>
std::vector<FeatureMap<Scalar>> decode_backward(const Unet<Scalar>& net, const UnetTrace<Scalar>& trace,
                                                const FeatureMap<Scalar>& grad_logits, Unet<Scalar>& grad) {
  const Index depth = net.config().depth;
  std::vector<FeatureMap<Scalar>> grad_recal(static_cast<size_t>(depth));
  FeatureMap<Scalar> g = conv_backward(net.head, trace.decoders.front().out, grad_logits, grad.head);
  for (Index i = 0; i < depth - 1; ++i) {
    const auto& dec = net.decoders[static_cast<size_t>(i)];
    auto& gdec = grad.decoders[static_cast<size_t>(i)];
    const auto& dt = trace.decoders[static_cast<size_t>(i)];
    g = relu_backward(dt.out, std::move(g));
    g = conv_backward(dec.conv2, dt.act1, g, gdec.conv2);
    g = relu_backward(dt.act1, std::move(g));
    g = conv_backward(dec.conv1, dt.joined, g, gdec.conv1);
    const Index skip_c = trace.recalibrated[static_cast<size_t>(i)].channels();
    grad_recal[static_cast<size_t>(i)] = FeatureMap<Scalar>(g.data.topRows(skip_c), g.height, g.width);
    FeatureMap<Scalar> g_up(g.data.bottomRows(g.channels() - skip_c), g.height, g.width);
    // The upconv output of decoder i is a function of decoder i + 1's output
    // (or the bottleneck); its gradient is carried into the next iteration.
    g = upconv_backward(dec.up, dt.below, g_up, gdec.up);
  }
  grad_recal.back() = std::move(g);
  return grad_recal;
}

// Given dL/dF for encoder stage `stage`, returns dL/d(previous), i.e. the
// gradient w.r.t. the map that was passed to encode_stage.
template <typename Scalar>
FeatureMap<Scalar> encode_stage_backward(const Unet<Scalar>& net, int stage, const EncoderTrace<Scalar>& trace,
                                         const FeatureMap<Scalar>& grad_features, Unet<Scalar>& grad) {
  const auto& enc = net.encoders[static_cast<size_t>(stage - 1)];
  auto& genc = grad.encoders[static_cast<size_t>(stage - 1)];
  FeatureMap<Scalar> g = relu_backward(trace.features, grad_features);
  g = conv_backward(enc.conv2, trace.act1, g, genc.conv2);
  g = relu_backward(trace.act1, std::move(g));
  g = conv_backward(enc.conv1, trace.input, g, genc.conv1);
  if (stage == 1) return g;
  return maxpool_backward(trace.pool, g, trace.unpooled_height, trace.unpooled_width);
}

template <typename Scalar>
struct FeatureTap {
  int stage = 0;
  FeatureMap<Scalar> features;
};

template <typename Scalar>
struct UnetOutput {
  FeatureMap<Scalar> logits;
  std::vector<FeatureTap<Scalar>> taps;
};

// Standalone branch forward. When `recalibrated_taps` holds a map for a tap
// stage, computation resumes from that map instead of the emitted features.
template <typename Scalar>
UnetOutput<Scalar> unet_forward(const Unet<Scalar>& net, const FeatureMap<Scalar>& x,
                                const std::map<int, FeatureMap<Scalar>>& recalibrated_taps = {},
                                UnetTrace<Scalar>* trace_out = nullptr) {
  const UnetConfig& cfg = net.config();
  check_branch_input(cfg, x);
  for (const auto& [stage, map] : recalibrated_taps) {
    if (!cfg.is_tap(stage)) throw ShapeError("recalibrated tap given for non-tap stage " + std::to_string(stage));
  }
  UnetTrace<Scalar> local;
  UnetTrace<Scalar>& trace = trace_out ? *trace_out : local;
  trace.encoders.assign(static_cast<size_t>(cfg.depth), {});
  trace.recalibrated.assign(static_cast<size_t>(cfg.depth), {});
  UnetOutput<Scalar> result;
  for (int s = 1; s <= cfg.depth; ++s) {
    const FeatureMap<Scalar>& prev = s == 1 ? x : trace.recalibrated[static_cast<size_t>(s - 2)];
    FeatureMap<Scalar> f = encode_stage(net, s, prev, trace.encoders[static_cast<size_t>(s - 1)]);
    if (cfg.is_tap(s)) {
      result.taps.push_back({s, f});
      if (auto it = recalibrated_taps.find(s); it != recalibrated_taps.end()) {
        if (!it->second.same_shape(f)) {
          throw ShapeError("recalibrated tap at stage " + std::to_string(s) + " has shape " +
                           shape_string(it->second) + ", expected " + shape_string(f));
        }
        f = it->second;
      }
    }
    trace.recalibrated[static_cast<size_t>(s - 1)] = std::move(f);
  }
  result.logits = decode(net, trace);
  return result;
}

}  // namespace mmfuse
