#pragma once

#include "act/datagen.hpp"
#include "act/metrics.hpp"
#include "act/random.hpp"
#include "act/segmentor.hpp"
#include "act/tensor.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace act {

struct ActConfig {
  Real epsilon = 0.5;       // pseudo-label confidence threshold (strict >)
  Real lambda0 = 1.0;       // initial weight of ground-truth samples in the mix
  Real decay_k = 5.0;       // lambda = lambda0 * exp(-decay_k * I / I_max)
  int batch_size = 8;       // N
  Real eta = 1e-3;          // SGD learning rate
  int total_iterations = 2000;
  Real pair_fraction = 1.0; // share of the |U| x N mix pairs kept per iteration
  int features = 8;         // segmentor feature width F
  int eval_every = 200;     // test-set checkpoint period; 0 = only I = 0 and I_max
  std::optional<Real> fixed_lambda;  // overrides the schedule (0 disables mixing)
};

void validate(const ActConfig& config);

enum class SegmentorTag { phi, theta };

/// Hard pseudo labels of one unlabeled image plus the confident-pixel mask.
struct PseudoLabelMap {
  LabelMask labels;
  Eigen::Matrix<Real, 1, Eigen::Dynamic> confidence;
  Eigen::Array<bool, 1, Eigen::Dynamic> selected;

  Index selected_count() const { return selected.count(); }
};

struct PseudoEntry {
  int image_index = 0;
  Image image;
  PseudoLabelMap pmap;
};

struct PseudoSet {
  std::vector<PseudoEntry> entries;
  SegmentorTag source_segmentor = SegmentorTag::phi;

  std::size_t size() const { return entries.size(); }
  bool empty() const { return entries.empty(); }
};

struct MixedSample {
  Image image;
  SoftLabelMap target;
  Real lambda_used = 0;
};

struct TrainState {
  SegmentorParams<Real> phi;    // cross-domain (UDA) segmentor
  SegmentorParams<Real> theta;  // target-domain (SSL) segmentor, used at test time
  int iteration = 0;
  std::uint64_t seed = 0;  // per-iteration randomness is derived from (seed, iteration)
};

struct IterationBatches {
  std::vector<LabeledSample> source;
  std::vector<LabeledSample> target_labeled;
  std::vector<Image> target_unlabeled;
};

/// Per pixel: confidence = max_c p, selected iff confidence > epsilon,
/// label = argmax (lowest index on ties).
PseudoLabelMap select_pseudo_labels(const ProbMap& p, Real epsilon);

PseudoSet build_pseudo_set(const SegmentorParams<Real>& params, std::span<const Image> images,
                           Real epsilon, SegmentorTag tag);

/// Same as above from predictions already computed for `images`.
PseudoSet build_pseudo_set(std::span<const ProbMap> predictions, std::span<const Image> images,
                           Real epsilon, SegmentorTag tag);

/// lambda0 * exp(-decay_k * I / I_max), clamped to [0, 1].
Real emd_lambda(int iteration, const ActConfig& config);

/// Blends a labeled sample with a pseudo-labeled one. Selected pixels get the
/// target lambda*onehot(y) + (1-lambda)*onehot(y_hat) at weight 1; unselected
/// pixels keep onehot(y) at weight lambda.
MixedSample mixup_pair(const Image& labeled_image, const LabelMask& labeled_mask,
                       const Image& pseudo_image, const PseudoLabelMap& pseudo, Real lambda);

/// All |pseudo| x N pairs (pseudo-major order), thinned to
/// ceil(pair_fraction * |pseudo| * N) pairs sampled without replacement.
std::vector<MixedSample> build_mixed_set(const PseudoSet& pseudo,
                                         std::span<const LabeledSample> labeled_batch, Real lambda,
                                         Real pair_fraction, Rng& rng);

Consensus consensus_stats(const ProbMap& p_phi, const ProbMap& p_theta, Real epsilon);

/// Mean per-sample loss and gradient over a set of training samples.
struct BatchGradient {
  Real loss = 0;
  GradientBundle<Real> grad;
  int samples = 0;
};

BatchGradient supervised_gradient(const SegmentorParams<Real>& params,
                                  std::span<const LabeledSample> batch);
BatchGradient mixed_gradient(const SegmentorParams<Real>& params,
                             std::span<const MixedSample> batch);

/// One co-training iteration: pseudo sets from each segmentor on the
/// unlabeled batch, EMD mixing (phi's set with the labeled target batch,
/// theta's set with the source batch), then
///   phi   <- phi   - eta * grad(L(phi, source) + L(phi, mix(source, U_theta)))
///   theta <- theta - eta * grad(L(theta, target_labeled) + L(theta, mix(target_labeled, U_phi)))
std::pair<TrainState, IterationRecord> act_iteration(TrainState state,
                                                     const IterationBatches& batches,
                                                     const ActConfig& config);

/// Single-segmentor pseudo labeling with the same EMD mixing, used by the
/// UDA-branch and target-only SSL reference modes.
std::pair<SegmentorParams<Real>, IterationRecord> self_training_iteration(
    const SegmentorParams<Real>& params, std::span<const LabeledSample> labeled,
    std::span<const Image> unlabeled, int iteration, std::uint64_t seed, const ActConfig& config);

/// Plain supervised SGD step on one batch.
std::pair<SegmentorParams<Real>, Real> supervised_iteration(const SegmentorParams<Real>& params,
                                                           std::span<const LabeledSample> batch,
                                                           const ActConfig& config);

/// N indices from [0, population): without replacement when population >= N,
/// with replacement otherwise.
std::vector<std::size_t> sample_indices(Rng& rng, std::size_t population, int n);

/// Evaluation of the test-time segmentor plus, when `phi` is given, the
/// two-segmentor consensus over all test pixels.
Checkpoint checkpoint(const SegmentorParams<Real>& test_model, const SegmentorParams<Real>* phi,
                      std::span<const LabeledSample> test, int iteration, Real epsilon);

/// Runs act_iteration total_iterations times with fresh batches; the final
/// metrics are computed with theta on the target test set.
std::pair<TrainState, RunReport> train(const TrainingData& data,
                                       std::span<const LabeledSample> test,
                                       const ActConfig& config, std::uint64_t seed);
std::pair<TrainState, RunReport> train(const DatasetSplits& splits, const ActConfig& config,
                                       std::uint64_t seed);

// Seed streams derived from a run seed.
namespace streams {
inline constexpr std::uint64_t kInitPhi = 11;
inline constexpr std::uint64_t kInitTheta = 12;
inline constexpr std::uint64_t kBatches = 13;
inline constexpr std::uint64_t kMixing = 14;
}  // namespace streams

}  // namespace act
