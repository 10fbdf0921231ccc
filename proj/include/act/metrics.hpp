#pragma once

#include "act/datagen.hpp"
#include "act/segmentor.hpp"
#include "act/tensor.hpp"

#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace act {

/// Class id used for the pooled foreground (all non-background classes).
inline constexpr int kWholeForeground = -1;

struct ClassMetrics {
  int class_id = 0;
  Real dsc = 0;
  Real hd = 0;  // pixels; the image diagonal when exactly one side is empty

  friend bool operator==(const ClassMetrics&, const ClassMetrics&) = default;
};

/// Fractions of pixels on which both, exactly one, or none of two segmentors
/// are confident.
struct Consensus {
  Real both = 0;
  Real only_one = 0;
  Real none = 0;

  friend bool operator==(const Consensus&, const Consensus&) = default;
};

struct IterationRecord {
  int iteration = 0;
  Real lambda = 0;
  int u_phi = 0;
  int u_theta = 0;
  Real loss_phi = 0;
  Real loss_theta = 0;
  std::optional<Consensus> consensus;  // over the unlabeled batch; two-segmentor modes only

  friend bool operator==(const IterationRecord&, const IterationRecord&) = default;
};

/// Periodic evaluation of the test-time segmentor on the target test set.
struct Checkpoint {
  int iteration = 0;
  Real dsc = 0;  // whole foreground
  Real hd = 0;
  std::optional<Consensus> consensus;  // over test pixels; two-segmentor modes only

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

struct RunReport {
  std::string mode;
  std::uint64_t seed = 0;
  std::string config;  // canonical JSON echo of the run configuration
  std::vector<IterationRecord> per_iteration;
  std::vector<Checkpoint> checkpoints;
  std::vector<ClassMetrics> final_metrics;  // classes 1..C-1, then kWholeForeground

  const ClassMetrics& whole() const;
  friend bool operator==(const RunReport&, const RunReport&) = default;
};

/// 2|A∩B| / (|A| + |B|) over pixels whose label lies in `class_set`;
/// 1 when both sets are empty.
Real dsc(const LabelMask& pred, const LabelMask& gt, const std::set<int>& class_set);

/// Symmetric Hausdorff distance between the `class_set` pixel sets, with
/// Euclidean pixel-centre distance. 0 when both sets are empty, the image
/// diagonal sqrt(H^2 + W^2) when exactly one is.
Real hausdorff(const LabelMask& pred, const LabelMask& gt, const std::set<int>& class_set);

Real empty_set_distance(Index height, Index width);

/// Squared Euclidean distance from every pixel to the nearest pixel of
/// `mask` (exact, separable lower-envelope transform). Pixels are infinite
/// when `mask` is empty.
Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> squared_distance_transform(
    const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& mask);

/// Per-class and whole-foreground metrics for predictions against ground truth.
std::vector<ClassMetrics> mask_metrics(const LabelMask& pred, const LabelMask& gt);

/// forward -> argmax -> mask_metrics per image, averaged over images.
std::vector<ClassMetrics> evaluate(const SegmentorParams<Real>& params,
                                   std::span<const LabeledSample> test);

struct SummaryRow {
  std::string metric;  // "dsc" or "hd"
  std::string class_label;  // class id or "whole"
  Real mean = 0;
  Real std = 0;
};

struct Summary {
  std::string mode;
  std::vector<SummaryRow> rows;

  const SummaryRow& find(const std::string& metric, const std::string& class_label) const;
};

std::string class_label(int class_id);

/// Mean and population standard deviation of every final metric.
Summary aggregate(std::span<const RunReport> reports);

}  // namespace act
