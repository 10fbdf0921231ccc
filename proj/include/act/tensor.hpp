#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace act {

using Real = double;
using Index = Eigen::Index;

/// Grayscale image, H rows by W columns. Row-major so that `data()[y * W + x]`
/// is pixel n = y * W + x, the flat pixel order used by every per-pixel field.
template <typename Scalar>
using ImageT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Image = ImageT<Real>;

using LabelGrid = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Per-pixel class indices in {0, ..., C-1}.
struct LabelMask {
  LabelGrid labels;
  int num_classes = 2;

  LabelMask() = default;
  LabelMask(Index height, Index width, int classes)
      : labels(LabelGrid::Zero(height, width)), num_classes(classes) {}
  LabelMask(LabelGrid grid, int classes) : labels(std::move(grid)), num_classes(classes) {}

  Index height() const { return labels.rows(); }
  Index width() const { return labels.cols(); }
  Index pixels() const { return labels.size(); }
  int operator[](Index n) const { return labels.data()[n]; }
  int& operator[](Index n) { return labels.data()[n]; }

  friend bool operator==(const LabelMask& a, const LabelMask& b) {
    return a.num_classes == b.num_classes && a.labels.rows() == b.labels.rows() &&
           a.labels.cols() == b.labels.cols() && a.labels == b.labels;
  }
};

/// Per-pixel class distribution, stored C x (H*W): column n is pixel n.
template <typename Scalar>
struct ProbMapT {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  Index height = 0;
  Index width = 0;
  Matrix probs;

  int num_classes() const { return static_cast<int>(probs.rows()); }
  Index pixels() const { return probs.cols(); }
};
using ProbMap = ProbMapT<Real>;

/// Soft per-pixel targets (C x H*W) plus a per-pixel loss weight in [0, 1].
template <typename Scalar>
struct SoftLabelMapT {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Weights = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

  Index height = 0;
  Index width = 0;
  Matrix targets;
  Weights pixel_weights;

  int num_classes() const { return static_cast<int>(targets.rows()); }
  Index pixels() const { return targets.cols(); }
};
using SoftLabelMap = SoftLabelMapT<Real>;

// ---------------------------------------------------------------------------
// Validation

inline void check_mask(const LabelMask& mask) {
  if (mask.num_classes < 2) throw std::invalid_argument("label mask needs at least 2 classes");
  if (mask.pixels() == 0) throw std::invalid_argument("empty label mask");
  if ((mask.labels.array() < 0).any() || (mask.labels.array() >= mask.num_classes).any())
    throw std::invalid_argument("label outside [0, " + std::to_string(mask.num_classes) + ")");
}

template <typename Scalar>
void check_image(const ImageT<Scalar>& image) {
  if (image.rows() < 1 || image.cols() < 1) throw std::invalid_argument("empty image");
  if (!image.allFinite()) throw std::invalid_argument("non-finite image values");
}

// ---------------------------------------------------------------------------
// Elementary per-pixel transforms

/// Column-wise softmax of a C x (H*W) logit field. The per-pixel max is
/// subtracted before exponentiation.
template <typename Derived>
ProbMapT<typename Derived::Scalar> softmax_per_pixel(const Eigen::MatrixBase<Derived>& logits,
                                                     Index height, Index width) {
  using Scalar = typename Derived::Scalar;
  if (logits.cols() != height * width) throw std::invalid_argument("logit field does not match H x W");
  if (!logits.allFinite()) throw std::invalid_argument("non-finite logits");

  ProbMapT<Scalar> out;
  out.height = height;
  out.width = width;
  out.probs.resize(logits.rows(), logits.cols());
  const Index classes = logits.rows();
  for (Index n = 0; n < logits.cols(); ++n) {
    Scalar peak = logits(0, n);
    for (Index c = 1; c < classes; ++c) peak = std::max<Scalar>(peak, logits(c, n));
    Scalar total = 0;
    for (Index c = 0; c < classes; ++c) total += out.probs(c, n) = std::exp(logits(c, n) - peak);
    for (Index c = 0; c < classes; ++c) out.probs(c, n) /= total;
  }
  return out;
}

/// Index of the largest probability per pixel; ties go to the lowest class.
template <typename Scalar>
LabelMask argmax_per_pixel(const ProbMapT<Scalar>& p) {
  LabelMask mask(p.height, p.width, p.num_classes());
  for (Index n = 0; n < p.pixels(); ++n) {
    int best = 0;
    for (int c = 1; c < p.num_classes(); ++c)
      if (p.probs(c, n) > p.probs(best, n)) best = c;
    mask[n] = best;
  }
  return mask;
}

template <typename Scalar = Real>
SoftLabelMapT<Scalar> one_hot(const LabelMask& mask) {
  check_mask(mask);
  SoftLabelMapT<Scalar> out;
  out.height = mask.height();
  out.width = mask.width();
  out.targets.setZero(mask.num_classes, mask.pixels());
  out.pixel_weights.setOnes(mask.pixels());
  for (Index n = 0; n < mask.pixels(); ++n) out.targets(mask[n], n) = Scalar(1);
  return out;
}

}  // namespace act
