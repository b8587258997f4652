#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace mmfuse {

using Index = Eigen::Index;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A C x H x W raster. Stored as a row-major (C, H*W) matrix so that each
// channel is one contiguous row and convolutions reduce to a single GEMM
// over im2col columns.
// Pixel (y, x) lives in column y * width + x.
template <typename Scalar>
struct FeatureMap {
  Index height = 0;
  Index width = 0;
  RowMatrix<Scalar> data;

  FeatureMap() = default;
  FeatureMap(Index channels, Index h, Index w)
      : height(h), width(w), data(RowMatrix<Scalar>::Zero(channels, h * w)) {}
  FeatureMap(RowMatrix<Scalar> values, Index h, Index w)
      : height(h), width(w), data(std::move(values)) {
    if (data.cols() != h * w) throw ShapeError("feature map: column count != height * width");
  }

  Index channels() const { return data.rows(); }
  Index pixels() const { return height * width; }

  Scalar& operator()(Index c, Index y, Index x) { return data(c, y * width + x); }
  Scalar operator()(Index c, Index y, Index x) const { return data(c, y * width + x); }

  bool same_shape(const FeatureMap& other) const {
    return channels() == other.channels() && height == other.height && width == other.width;
  }

  template <typename Other>
  FeatureMap<Other> cast() const {
    return FeatureMap<Other>(data.template cast<Other>(), height, width);
  }

  friend bool operator==(const FeatureMap& a, const FeatureMap& b) {
    return a.same_shape(b) && a.data == b.data;
  }
};

inline std::string shape_string(Index c, Index h, Index w) {
  return "[" + std::to_string(c) + " x " + std::to_string(h) + " x " + std::to_string(w) + "]";
}

template <typename Scalar>
std::string shape_string(const FeatureMap<Scalar>& f) {
  return shape_string(f.channels(), f.height, f.width);
}

}  // namespace mmfuse
