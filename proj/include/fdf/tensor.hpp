#pragma once

// Deterministic numerical kernel for the feature network: same-size
// correlation with replicate padding, rectification, 1x1 channel mixing,
// 2x2 max pooling, dense layers and a momentum SGD update. Everything is
// templated on the scalar type; the pipeline instantiates double.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "fdf/error.hpp"

namespace fdf {

template <typename Scalar>
using Grid = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Grayscale raster, one pixel per coefficient, values in [0, 1].
using ImageGrid = Grid<double>;
using Kernel = Grid<double>;

/// Multi-channel activation volume; every channel has the same shape.
template <typename Scalar>
using FeatureMap = std::vector<Grid<Scalar>>;

enum class Padding { replicate };

template <typename Scalar>
struct DenseLayer {
  Grid<Scalar> weights; // out_dim x in_dim
  Vector<Scalar> biases;

  Eigen::Index in_dim() const { return weights.cols(); }
  Eigen::Index out_dim() const { return weights.rows(); }
};

enum class Activation { relu, softmax, identity };

namespace detail {

inline void check_kernel_shapes(Eigen::Index kh, Eigen::Index kw, Eigen::Index h, Eigen::Index w) {
  if (kh % 2 == 0 || kw % 2 == 0)
    throw DimensionError("conv2d: kernel dimensions must be odd, got " + std::to_string(kh) + "x" +
                         std::to_string(kw));
  if (kh > h + 2 * (kh / 2) || kw > w + 2 * (kw / 2))
    throw DimensionError("conv2d: kernel larger than padded input");
}

template <typename KernelRange>
void check_common_shape(const KernelRange& kernels) {
  if (kernels.empty()) throw DimensionError("conv2d: empty kernel list");
  for (const auto& k : kernels)
    if (k.rows() != kernels.front().rows() || k.cols() != kernels.front().cols())
      throw DimensionError("conv2d: all kernels must share one shape");
}

} // namespace detail

/// Copies `input` into a larger grid whose border repeats the nearest edge pixel.
template <typename Derived>
Grid<typename Derived::Scalar> pad_replicate(const Eigen::MatrixBase<Derived>& input,
                                             Eigen::Index pad_rows, Eigen::Index pad_cols) {
  const Eigen::Index h = input.rows();
  const Eigen::Index w = input.cols();
  Grid<typename Derived::Scalar> out(h + 2 * pad_rows, w + 2 * pad_cols);
  for (Eigen::Index c = 0; c < out.cols(); ++c) {
    const Eigen::Index sc = std::clamp<Eigen::Index>(c - pad_cols, 0, w - 1);
    for (Eigen::Index r = 0; r < out.rows(); ++r) {
      const Eigen::Index sr = std::clamp<Eigen::Index>(r - pad_rows, 0, h - 1);
      out(r, c) = input(sr, sc);
    }
  }
  return out;
}

/// Correlation of a padded grid with one kernel; output keeps the unpadded size.
template <typename Scalar>
void correlate_padded(const Grid<Scalar>& padded, const Grid<Scalar>& kernel, Eigen::Index h,
                      Eigen::Index w, Grid<Scalar>& out) {
  out.setZero(h, w);
  for (Eigen::Index j = 0; j < kernel.cols(); ++j)
    for (Eigen::Index i = 0; i < kernel.rows(); ++i) {
      const Scalar tap = kernel(i, j);
      if (tap != Scalar(0)) out.noalias() += tap * padded.block(i, j, h, w);
    }
}

/**
 * Stride-1 same-size correlation: output channel k is the input correlated
 * with kernel k, anchored at the kernel centre, with replicate-edge padding.
 */
template <typename Derived, typename KernelRange>
FeatureMap<typename Derived::Scalar> conv2d(const Eigen::MatrixBase<Derived>& input,
                                            const KernelRange& kernels,
                                            Padding = Padding::replicate) {
  using Scalar = typename Derived::Scalar;
  detail::check_common_shape(kernels);
  const Eigen::Index kh = kernels.front().rows();
  const Eigen::Index kw = kernels.front().cols();
  const Eigen::Index h = input.rows();
  const Eigen::Index w = input.cols();
  if (h == 0 || w == 0) throw DimensionError("conv2d: empty input");
  detail::check_kernel_shapes(kh, kw, h, w);

  const Grid<Scalar> padded = pad_replicate(input, kh / 2, kw / 2);
  FeatureMap<Scalar> out(kernels.size());
  std::size_t k = 0;
  for (const auto& kernel : kernels) correlate_padded<Scalar>(padded, kernel, h, w, out[k++]);
  return out;
}

/// Multi-channel entry point; the feature network only convolves single-channel maps.
template <typename Scalar, typename KernelRange>
FeatureMap<Scalar> conv2d(const FeatureMap<Scalar>& input, const KernelRange& kernels,
                          Padding padding = Padding::replicate) {
  if (input.size() != 1)
    throw DimensionError("conv2d: expected a single-channel map, got " +
                         std::to_string(input.size()) + " channels");
  return conv2d(input.front(), kernels, padding);
}

/**
 * Adjoint of conv2d with respect to its input. Accumulates, for every
 * channel, the upstream gradient scattered through the kernel taps, then
 * folds the padding border back onto the edge pixels it replicated.
 */
template <typename Scalar, typename KernelRange>
Grid<Scalar> conv2d_input_gradient(const FeatureMap<Scalar>& upstream, const KernelRange& kernels) {
  detail::check_common_shape(kernels);
  if (upstream.size() != kernels.size())
    throw DimensionError("conv2d_input_gradient: channel/kernel count mismatch");
  const Eigen::Index kh = kernels.front().rows();
  const Eigen::Index kw = kernels.front().cols();
  const Eigen::Index ph = kh / 2;
  const Eigen::Index pw = kw / 2;
  const Eigen::Index h = upstream.front().rows();
  const Eigen::Index w = upstream.front().cols();

  Grid<Scalar> padded = Grid<Scalar>::Zero(h + 2 * ph, w + 2 * pw);
  std::size_t k = 0;
  for (const auto& kernel : kernels) {
    const Grid<Scalar>& g = upstream[k++];
    for (Eigen::Index j = 0; j < kw; ++j)
      for (Eigen::Index i = 0; i < kh; ++i) {
        const Scalar tap = kernel(i, j);
        if (tap != Scalar(0)) padded.block(i, j, h, w).noalias() += tap * g;
      }
  }

  Grid<Scalar> grad = padded.block(ph, pw, h, w);
  for (Eigen::Index c = 0; c < padded.cols(); ++c) {
    const bool col_border = c < pw || c >= pw + w;
    const Eigen::Index dc = std::clamp<Eigen::Index>(c - pw, 0, w - 1);
    for (Eigen::Index r = 0; r < padded.rows(); ++r) {
      if (!col_border && r >= ph && r < ph + h) continue;
      const Eigen::Index dr = std::clamp<Eigen::Index>(r - ph, 0, h - 1);
      grad(dr, dc) += padded(r, c);
    }
  }
  return grad;
}

template <typename Scalar>
FeatureMap<Scalar> relu(FeatureMap<Scalar> map) {
  for (auto& ch : map) ch = ch.cwiseMax(Scalar(0));
  return map;
}

/// 0/1 step used when post-rectification maps are hard-binarized.
template <typename Scalar>
FeatureMap<Scalar> hard_step(FeatureMap<Scalar> map) {
  for (auto& ch : map) ch = (ch.array() > Scalar(0)).template cast<Scalar>().matrix();
  return map;
}

/// Weighted channel sum: out(y, x) = sum_c weights[c] * maps[c](y, x).
template <typename Scalar, typename WeightDerived>
Grid<Scalar> combine1x1(const FeatureMap<Scalar>& maps,
                        const Eigen::MatrixBase<WeightDerived>& weights) {
  if (static_cast<Eigen::Index>(maps.size()) != weights.size())
    throw DimensionError("combine1x1: " + std::to_string(weights.size()) + " weights for " +
                         std::to_string(maps.size()) + " channels");
  if (maps.empty()) throw DimensionError("combine1x1: no channels");
  Grid<Scalar> out = Grid<Scalar>::Zero(maps.front().rows(), maps.front().cols());
  for (std::size_t c = 0; c < maps.size(); ++c) {
    if (maps[c].rows() != out.rows() || maps[c].cols() != out.cols())
      throw DimensionError("combine1x1: channel shapes differ");
    out.noalias() += weights(static_cast<Eigen::Index>(c)) * maps[c];
  }
  return out;
}

/// Linear index (column-major, into the input) of the maximum of each 2x2 block.
using PoolIndex = Eigen::Matrix<Eigen::Index, Eigen::Dynamic, Eigen::Dynamic>;

/// 2x2 / stride-2 max pooling. Ties resolve to the first cell in column-major order.
template <typename Derived>
Grid<typename Derived::Scalar> maxpool2(const Eigen::MatrixBase<Derived>& map,
                                        PoolIndex* argmax = nullptr) {
  const Eigen::Index h = map.rows();
  const Eigen::Index w = map.cols();
  if (h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0)
    throw DimensionError("maxpool2: spatial dims must be even and positive, got " +
                         std::to_string(h) + "x" + std::to_string(w));
  Grid<typename Derived::Scalar> out(h / 2, w / 2);
  if (argmax) argmax->resize(h / 2, w / 2);
  for (Eigen::Index c = 0; c < w / 2; ++c)
    for (Eigen::Index r = 0; r < h / 2; ++r) {
      Eigen::Index best_r = 2 * r;
      Eigen::Index best_c = 2 * c;
      for (Eigen::Index dc = 0; dc < 2; ++dc)
        for (Eigen::Index dr = 0; dr < 2; ++dr)
          if (map(2 * r + dr, 2 * c + dc) > map(best_r, best_c)) {
            best_r = 2 * r + dr;
            best_c = 2 * c + dc;
          }
      out(r, c) = map(best_r, best_c);
      if (argmax) (*argmax)(r, c) = best_c * h + best_r;
    }
  return out;
}

/// Routes a pooled gradient back to the winning cells.
template <typename Scalar>
Grid<Scalar> maxpool2_backward(const Grid<Scalar>& upstream, const PoolIndex& argmax,
                               Eigen::Index rows, Eigen::Index cols) {
  Grid<Scalar> grad = Grid<Scalar>::Zero(rows, cols);
  for (Eigen::Index c = 0; c < upstream.cols(); ++c)
    for (Eigen::Index r = 0; r < upstream.rows(); ++r) grad(argmax(r, c)) += upstream(r, c);
  return grad;
}

template <typename Derived>
Vector<typename Derived::Scalar> softmax(const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  const Scalar peak = logits.maxCoeff();
  Vector<Scalar> e = (logits.array() - peak).exp().matrix();
  return e / e.sum();
}

/// weights * input + biases followed by the requested activation.
template <typename Scalar, typename Derived>
Vector<Scalar> dense_forward(const DenseLayer<Scalar>& layer, const Eigen::MatrixBase<Derived>& input,
                             Activation activation = Activation::relu) {
  if (input.size() != layer.in_dim())
    throw DimensionError("dense_forward: input length " + std::to_string(input.size()) +
                         " != in_dim " + std::to_string(layer.in_dim()));
  Vector<Scalar> z = layer.weights * input + layer.biases;
  switch (activation) {
  case Activation::relu:
    return z.cwiseMax(Scalar(0));
  case Activation::softmax:
    return softmax(z);
  case Activation::identity:
    break;
  }
  return z;
}

/**
 * In-place momentum SGD on a flat parameter vector:
 * velocity <- momentum * velocity - lr * grad; params <- params + velocity.
 */
template <typename Scalar>
void sgd_step(Eigen::Ref<Vector<Scalar>> params, const Eigen::Ref<const Vector<Scalar>>& gradients,
              Eigen::Ref<Vector<Scalar>> velocity, Scalar learning_rate, Scalar momentum) {
  if (params.size() != gradients.size() || params.size() != velocity.size())
    throw DimensionError("sgd_step: parameter, gradient and velocity lengths differ");
  if (!(learning_rate > Scalar(0))) throw TrainingError("sgd_step: learning rate must be positive");
  if (!(momentum >= Scalar(0) && momentum < Scalar(1)))
    throw TrainingError("sgd_step: momentum must lie in [0, 1)");
  for (Eigen::Index i = 0; i < gradients.size(); ++i)
    if (!std::isfinite(gradients(i)))
      throw TrainingError("sgd_step: non-finite gradient at parameter index " + std::to_string(i));
  velocity = momentum * velocity - learning_rate * gradients;
  params += velocity;
}

} // namespace fdf
