#pragma once

// Convolution, pooling and activation primitives with hand-written backward
// passes. Every backward function accumulates into the supplied gradient
// buffers so that a batch can be processed one tile at a time.

#include "mmfuse/tensor.hpp"

#include <cmath>
#include <random>
#include <vector>

namespace mmfuse {

// Square "same"-padded convolution. weight is (out, in * k * k) with the
// column index (c * k + ky) * k + kx; bias is (out, 1).
template <typename Scalar>
struct Conv2d {
  Index kernel = 3;
  Matrix<Scalar> weight;
  Matrix<Scalar> bias;

  Conv2d() = default;
  Conv2d(Index in, Index out, Index k)
      : kernel(k), weight(Matrix<Scalar>::Zero(out, in * k * k)), bias(Matrix<Scalar>::Zero(out, 1)) {}

  Index in_channels() const { return weight.cols() / (kernel * kernel); }
  Index out_channels() const { return weight.rows(); }
};

// 2x2 transposed convolution with stride 2. weight is (out * 4, in) with the
// row index co * 4 + dy * 2 + dx; bias is (out, 1).
template <typename Scalar>
struct UpConv2x2 {
  Matrix<Scalar> weight;
  Matrix<Scalar> bias;

  UpConv2x2() = default;
  UpConv2x2(Index in, Index out)
      : weight(Matrix<Scalar>::Zero(out * 4, in)), bias(Matrix<Scalar>::Zero(out, 1)) {}

  Index in_channels() const { return weight.cols(); }
  Index out_channels() const { return weight.rows() / 4; }
};

template <typename Scalar>
RowMatrix<Scalar> im2col(const FeatureMap<Scalar>& in, Index k) {
  const Index pad = k / 2;
  const Index h = in.height, w = in.width;
  RowMatrix<Scalar> cols = RowMatrix<Scalar>::Zero(in.channels() * k * k, h * w);
  for (Index c = 0; c < in.channels(); ++c) {
    const Scalar* src = in.data.row(c).data();
    for (Index ky = 0; ky < k; ++ky) {
      for (Index kx = 0; kx < k; ++kx) {
        Scalar* dst = cols.row((c * k + ky) * k + kx).data();
        const Index dy = ky - pad, dx = kx - pad;
        const Index x0 = std::max<Index>(0, -dx), x1 = std::min<Index>(w, w - dx);
        for (Index y = std::max<Index>(0, -dy); y < std::min<Index>(h, h - dy); ++y) {
          const Scalar* s = src + (y + dy) * w + dx;
          Scalar* d = dst + y * w;
          for (Index x = x0; x < x1; ++x) d[x] = s[x];
        }
      }
    }
  }
  return cols;
}

template <typename Scalar>
void col2im_add(const RowMatrix<Scalar>& cols, Index k, FeatureMap<Scalar>& out) {
  const Index pad = k / 2;
  const Index h = out.height, w = out.width;
  for (Index c = 0; c < out.channels(); ++c) {
    Scalar* dst = out.data.row(c).data();
    for (Index ky = 0; ky < k; ++ky) {
      for (Index kx = 0; kx < k; ++kx) {
        const Scalar* src = cols.row((c * k + ky) * k + kx).data();
        const Index dy = ky - pad, dx = kx - pad;
        const Index x0 = std::max<Index>(0, -dx), x1 = std::min<Index>(w, w - dx);
        for (Index y = std::max<Index>(0, -dy); y < std::min<Index>(h, h - dy); ++y) {
          Scalar* d = dst + (y + dy) * w + dx;
          const Scalar* s = src + y * w;
          for (Index x = x0; x < x1; ++x) d[x] += s[x];
        }
      }
    }
  }
}

template <typename Scalar>
FeatureMap<Scalar> conv_forward(const Conv2d<Scalar>& conv, const FeatureMap<Scalar>& in) {
  if (in.channels() != conv.in_channels()) {
    throw ShapeError("conv: expected " + std::to_string(conv.in_channels()) + " input channels, got " +
                     std::to_string(in.channels()));
  }
  FeatureMap<Scalar> out;
  out.height = in.height;
  out.width = in.width;
  if (conv.kernel == 1) {
    out.data.noalias() = conv.weight * in.data;
  } else {
    out.data.noalias() = conv.weight * im2col(in, conv.kernel);
  }
  out.data.colwise() += conv.bias.col(0);
  return out;
}

// Returns the gradient w.r.t. the input; accumulates weight/bias gradients.
template <typename Scalar>
FeatureMap<Scalar> conv_backward(const Conv2d<Scalar>& conv, const FeatureMap<Scalar>& in,
                                 const FeatureMap<Scalar>& grad_out, Conv2d<Scalar>& grad) {
  grad.bias.col(0) += grad_out.data.rowwise().sum();
  FeatureMap<Scalar> grad_in(in.channels(), in.height, in.width);
  if (conv.kernel == 1) {
    grad.weight.noalias() += grad_out.data * in.data.transpose();
    grad_in.data.noalias() = conv.weight.transpose() * grad_out.data;
  } else {
    grad.weight.noalias() += grad_out.data * im2col(in, conv.kernel).transpose();
    RowMatrix<Scalar> grad_cols = conv.weight.transpose() * grad_out.data;
    col2im_add(grad_cols, conv.kernel, grad_in);
  }
  return grad_in;
}

template <typename Scalar>
FeatureMap<Scalar> upconv_forward(const UpConv2x2<Scalar>& up, const FeatureMap<Scalar>& in) {
  if (in.channels() != up.in_channels()) throw ShapeError("upconv: input channel mismatch");
  const Index co_n = up.out_channels();
  const Index h = in.height, w = in.width;
  const RowMatrix<Scalar> y = up.weight * in.data;
  FeatureMap<Scalar> out(co_n, 2 * h, 2 * w);
  for (Index co = 0; co < co_n; ++co) {
    const Scalar b = up.bias(co, 0);
    for (Index q = 0; q < 4; ++q) {
      const Index dy = q / 2, dx = q % 2;
      const Scalar* src = y.row(co * 4 + q).data();
      for (Index r = 0; r < h; ++r) {
        for (Index c = 0; c < w; ++c) out(co, 2 * r + dy, 2 * c + dx) = src[r * w + c] + b;
      }
    }
  }
  return out;
}

template <typename Scalar>
FeatureMap<Scalar> upconv_backward(const UpConv2x2<Scalar>& up, const FeatureMap<Scalar>& in,
                                   const FeatureMap<Scalar>& grad_out, UpConv2x2<Scalar>& grad) {
  const Index co_n = up.out_channels();
  const Index h = in.height, w = in.width;
  RowMatrix<Scalar> grad_y(co_n * 4, h * w);
  for (Index co = 0; co < co_n; ++co) {
    for (Index q = 0; q < 4; ++q) {
      const Index dy = q / 2, dx = q % 2;
      Scalar* dst = grad_y.row(co * 4 + q).data();
      for (Index r = 0; r < h; ++r) {
        for (Index c = 0; c < w; ++c) dst[r * w + c] = grad_out(co, 2 * r + dy, 2 * c + dx);
      }
    }
  }
  grad.bias.col(0) += grad_out.data.rowwise().sum();
  grad.weight.noalias() += grad_y * in.data.transpose();
  FeatureMap<Scalar> grad_in(in.channels(), h, w);
  grad_in.data.noalias() = up.weight.transpose() * grad_y;
  return grad_in;
}

template <typename Scalar>
void relu_inplace(FeatureMap<Scalar>& f) {
  f.data = f.data.cwiseMax(Scalar(0));
}

// grad_out masked by the post-activation output.
template <typename Scalar>
FeatureMap<Scalar> relu_backward(const FeatureMap<Scalar>& out, FeatureMap<Scalar> grad_out) {
  grad_out.data = (out.data.array() > Scalar(0)).select(grad_out.data, Scalar(0));
  return grad_out;
}

struct PoolIndices {
  std::vector<Index> argmax;  // per output element, flat input pixel index
};

// 2x2 max pooling; ties resolve to the first element in row-major order.
template <typename Scalar>
FeatureMap<Scalar> maxpool_forward(const FeatureMap<Scalar>& in, PoolIndices& indices) {
  if (in.height % 2 != 0 || in.width % 2 != 0) throw ShapeError("maxpool: odd spatial size " + shape_string(in));
  const Index h = in.height / 2, w = in.width / 2;
  FeatureMap<Scalar> out(in.channels(), h, w);
  indices.argmax.assign(static_cast<size_t>(in.channels() * h * w), 0);
  for (Index c = 0; c < in.channels(); ++c) {
    for (Index r = 0; r < h; ++r) {
      for (Index col = 0; col < w; ++col) {
        Index best = (2 * r) * in.width + 2 * col;
        Scalar best_v = in.data(c, best);
        for (Index q = 1; q < 4; ++q) {
          const Index idx = (2 * r + q / 2) * in.width + 2 * col + q % 2;
          if (in.data(c, idx) > best_v) {
            best_v = in.data(c, idx);
            best = idx;
          }
        }
        out.data(c, r * w + col) = best_v;
        indices.argmax[static_cast<size_t>((c * h + r) * w + col)] = best;
      }
    }
  }
  return out;
}

template <typename Scalar>
FeatureMap<Scalar> maxpool_backward(const PoolIndices& indices, const FeatureMap<Scalar>& grad_out, Index in_h,
                                    Index in_w) {
  FeatureMap<Scalar> grad_in(grad_out.channels(), in_h, in_w);
  const Index n = grad_out.pixels();
  for (Index c = 0; c < grad_out.channels(); ++c) {
    for (Index p = 0; p < n; ++p) {
      grad_in.data(c, indices.argmax[static_cast<size_t>(c * n + p)]) += grad_out.data(c, p);
    }
  }
  return grad_in;
}

template <typename Scalar>
FeatureMap<Scalar> concat_channels(const FeatureMap<Scalar>& a, const FeatureMap<Scalar>& b) {
  if (a.height != b.height || a.width != b.width) throw ShapeError("concat: spatial size mismatch");
  FeatureMap<Scalar> out(a.channels() + b.channels(), a.height, a.width);
  out.data.topRows(a.channels()) = a.data;
  out.data.bottomRows(b.channels()) = b.data;
  return out;
}

template <typename Scalar>
Scalar logistic(Scalar x) {
  if (x >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-x));
  const Scalar e = std::exp(x);
  return e / (Scalar(1) + e);
}

template <typename Scalar, typename Derived>
auto logistic(const Eigen::MatrixBase<Derived>& x) {
  return x.unaryExpr([](Scalar v) { return logistic(v); });
}

// Probability map from logits, elementwise.
template <typename Scalar>
FeatureMap<Scalar> sigmoid_probability(const FeatureMap<Scalar>& logits) {
  return FeatureMap<Scalar>(logistic<Scalar>(logits.data), logits.height, logits.width);
}

// Uniform(-bound, bound) fill from a seeded engine.
template <typename Scalar, typename Derived>
void fill_uniform(Eigen::MatrixBase<Derived>& m, Scalar bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-static_cast<double>(bound), static_cast<double>(bound));
  for (Index j = 0; j < m.cols(); ++j) {
    for (Index i = 0; i < m.rows(); ++i) m(i, j) = static_cast<Scalar>(dist(rng));
  }
}

}  // namespace mmfuse
