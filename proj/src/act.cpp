#include "act/act.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace act {
namespace {

void check_same_size(const Image& a, const Image& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument("image dimensions differ");
}

/// Sum of the non-empty gradients, or nullopt when nothing supervised the model.
std::optional<SegmentorParams<Real>> apply(const SegmentorParams<Real>& params,
                                           std::initializer_list<const BatchGradient*> parts,
                                           Real eta) {
  std::vector<GradientBundle<Real>> grads;
  for (const auto* part : parts)
    if (part->samples > 0) grads.push_back(part->grad);
  if (grads.empty()) return std::nullopt;
  return sgd_step<Real>(params, grads, eta);
}

template <typename Sample, typename TargetFn>
BatchGradient mean_gradient(const SegmentorParams<Real>& params, std::span<const Sample> batch,
                            TargetFn&& target_of) {
  BatchGradient out{0, GradientBundle<Real>::zeros(params.features(), params.num_classes()), 0};
  for (const auto& sample : batch) {
    auto [loss, grad] = loss_and_grad(params, sample.image, target_of(sample));
    out.loss += loss;
    out.grad.conv1_w += grad.conv1_w;
    out.grad.conv1_b += grad.conv1_b;
    out.grad.conv2_w += grad.conv2_w;
    out.grad.conv2_b += grad.conv2_b;
    out.grad.head_w += grad.head_w;
    out.grad.head_b += grad.head_b;
    ++out.samples;
  }
  if (out.samples > 0) {
    const Real scale = 1.0 / out.samples;
    out.loss *= scale;
    out.grad.for_each_block([scale](Real* data, Index n) {
      Eigen::Map<Eigen::Matrix<Real, Eigen::Dynamic, 1>>(data, n) *= scale;
    });
  }
  return out;
}

}  // namespace

void validate(const ActConfig& c) {
  if (!(c.epsilon > 0.0 && c.epsilon < 1.0)) throw std::invalid_argument("epsilon must lie in (0, 1)");
  if (!std::isfinite(c.lambda0) || c.lambda0 < 0.0) throw std::invalid_argument("lambda0 must be >= 0");
  if (!(c.decay_k > 0.0)) throw std::invalid_argument("decay_k must be > 0");
  if (c.batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (!(c.eta > 0.0)) throw std::invalid_argument("eta must be > 0");
  if (c.total_iterations < 0) throw std::invalid_argument("total_iterations must be >= 0");
  if (!(c.pair_fraction > 0.0 && c.pair_fraction <= 1.0))
    throw std::invalid_argument("pair_fraction must lie in (0, 1]");
  if (c.features < 1) throw std::invalid_argument("features must be >= 1");
  if (c.eval_every < 0) throw std::invalid_argument("eval_every must be >= 0");
  if (c.fixed_lambda && !(*c.fixed_lambda >= 0.0 && *c.fixed_lambda <= 1.0))
    throw std::invalid_argument("fixed_lambda must lie in [0, 1]");
}

PseudoLabelMap select_pseudo_labels(const ProbMap& p, Real epsilon) {
  PseudoLabelMap out;
  out.labels = argmax_per_pixel(p);
  out.confidence.resize(p.pixels());
  out.selected.resize(p.pixels());
  for (Index n = 0; n < p.pixels(); ++n) {
    out.confidence(n) = p.probs(out.labels[n], n);
    out.selected(n) = out.confidence(n) > epsilon;
  }
  return out;
}

PseudoSet build_pseudo_set(std::span<const ProbMap> predictions, std::span<const Image> images,
                           Real epsilon, SegmentorTag tag) {
  if (predictions.size() != images.size())
    throw std::invalid_argument("one prediction per image required");
  PseudoSet set;
  set.source_segmentor = tag;
  for (std::size_t i = 0; i < images.size(); ++i) {
    check_same_size(images[i], images.front());
    auto pmap = select_pseudo_labels(predictions[i], epsilon);
    if (pmap.selected_count() == 0) continue;
    set.entries.push_back({static_cast<int>(i), images[i], std::move(pmap)});
  }
  return set;
}

PseudoSet build_pseudo_set(const SegmentorParams<Real>& params, std::span<const Image> images,
                           Real epsilon, SegmentorTag tag) {
  std::vector<ProbMap> predictions;
  predictions.reserve(images.size());
  for (const auto& image : images) predictions.push_back(forward(params, image));
  return build_pseudo_set(predictions, images, epsilon, tag);
}

Real emd_lambda(int iteration, const ActConfig& config) {
  if (iteration < 0 || iteration > std::max(config.total_iterations, 0))
    throw std::invalid_argument("iteration outside [0, I_max]");
  const Real progress =
      config.total_iterations > 0 ? static_cast<Real>(iteration) / config.total_iterations : 0.0;
  return std::clamp(config.lambda0 * std::exp(-config.decay_k * progress), 0.0, 1.0);
}

MixedSample mixup_pair(const Image& labeled_image, const LabelMask& labeled_mask,
                       const Image& pseudo_image, const PseudoLabelMap& pseudo, Real lambda) {
  check_same_size(labeled_image, pseudo_image);
  if (labeled_mask.height() != labeled_image.rows() || labeled_mask.width() != labeled_image.cols() ||
      pseudo.labels.height() != pseudo_image.rows() || pseudo.labels.width() != pseudo_image.cols())
    throw std::invalid_argument("mask dimensions do not match image");
  if (labeled_mask.num_classes != pseudo.labels.num_classes)
    throw std::invalid_argument("class counts differ between labeled and pseudo masks");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("lambda outside [0, 1]");

  MixedSample out;
  out.lambda_used = lambda;
  out.image = lambda * labeled_image + (1.0 - lambda) * pseudo_image;
  out.target.height = labeled_image.rows();
  out.target.width = labeled_image.cols();
  out.target.targets.setZero(labeled_mask.num_classes, labeled_mask.pixels());
  out.target.pixel_weights.resize(labeled_mask.pixels());
  for (Index n = 0; n < labeled_mask.pixels(); ++n) {
    if (pseudo.selected(n)) {
      out.target.targets(labeled_mask[n], n) += lambda;
      out.target.targets(pseudo.labels[n], n) += 1.0 - lambda;
      out.target.pixel_weights(n) = 1.0;
    } else {
      out.target.targets(labeled_mask[n], n) = 1.0;
      out.target.pixel_weights(n) = lambda;
    }
  }
  return out;
}

std::vector<MixedSample> build_mixed_set(const PseudoSet& pseudo,
                                         std::span<const LabeledSample> labeled_batch, Real lambda,
                                         Real pair_fraction, Rng& rng) {
  if (!(pair_fraction > 0.0 && pair_fraction <= 1.0))
    throw std::invalid_argument("pair_fraction must lie in (0, 1]");
  if (pseudo.empty()) return {};
  if (labeled_batch.empty()) throw std::invalid_argument("labeled batch is empty");

  const std::size_t total = pseudo.size() * labeled_batch.size();
  const auto keep = std::min(
      total, static_cast<std::size_t>(std::ceil(pair_fraction * static_cast<Real>(total) - 1e-9)));
  std::vector<std::size_t> all(total);
  std::iota(all.begin(), all.end(), std::size_t{0});
  std::vector<std::size_t> chosen;
  if (keep == total) {
    chosen = std::move(all);
  } else {
    chosen.reserve(keep);
    std::sample(all.begin(), all.end(), std::back_inserter(chosen), keep, rng);
  }

  std::vector<MixedSample> out;
  out.reserve(chosen.size());
  for (std::size_t pair : chosen) {
    const auto& entry = pseudo.entries[pair / labeled_batch.size()];
    const auto& labeled = labeled_batch[pair % labeled_batch.size()];
    out.push_back(mixup_pair(labeled.image, labeled.mask, entry.image, entry.pmap, lambda));
  }
  return out;
}

Consensus consensus_stats(const ProbMap& p_phi, const ProbMap& p_theta, Real epsilon) {
  if (p_phi.height != p_theta.height || p_phi.width != p_theta.width ||
      p_phi.pixels() != p_theta.pixels())
    throw std::invalid_argument("probability maps differ in size");
  Index both = 0, one = 0;
  for (Index n = 0; n < p_phi.pixels(); ++n) {
    const bool a = p_phi.probs.col(n).maxCoeff() > epsilon;
    const bool b = p_theta.probs.col(n).maxCoeff() > epsilon;
    both += a && b;
    one += a != b;
  }
  const auto total = static_cast<Real>(p_phi.pixels());
  Consensus c;
  c.both = static_cast<Real>(both) / total;
  c.only_one = static_cast<Real>(one) / total;
  c.none = static_cast<Real>(p_phi.pixels() - both - one) / total;
  return c;
}

BatchGradient supervised_gradient(const SegmentorParams<Real>& params,
                                  std::span<const LabeledSample> batch) {
  return mean_gradient(params, batch, [](const LabeledSample& s) { return one_hot(s.mask); });
}

BatchGradient mixed_gradient(const SegmentorParams<Real>& params,
                             std::span<const MixedSample> batch) {
  return mean_gradient(params, batch, [](const MixedSample& s) -> const SoftLabelMap& { return s.target; });
}

std::pair<TrainState, IterationRecord> act_iteration(TrainState state,
                                                     const IterationBatches& batches,
                                                     const ActConfig& config) {
  if (state.iteration >= config.total_iterations)
    throw std::invalid_argument("training already reached total_iterations");

  std::vector<ProbMap> p_phi, p_theta;
  for (const auto& image : batches.target_unlabeled) {
    p_phi.push_back(forward(state.phi, image));
    p_theta.push_back(forward(state.theta, image));
  }
  // U^phi holds phi's confident predictions and teaches theta; U^theta the reverse.
  const PseudoSet u_phi =
      build_pseudo_set(p_phi, batches.target_unlabeled, config.epsilon, SegmentorTag::phi);
  const PseudoSet u_theta =
      build_pseudo_set(p_theta, batches.target_unlabeled, config.epsilon, SegmentorTag::theta);

  const Real lambda = config.fixed_lambda.value_or(emd_lambda(state.iteration, config));
  Rng rng(derive_seed(state.seed, streams::kMixing, static_cast<std::uint64_t>(state.iteration)));
  const auto mixed_for_theta =
      batches.target_labeled.empty()
          ? std::vector<MixedSample>{}
          : build_mixed_set(u_phi, batches.target_labeled, lambda, config.pair_fraction, rng);
  const auto mixed_for_phi =
      batches.source.empty()
          ? std::vector<MixedSample>{}
          : build_mixed_set(u_theta, batches.source, lambda, config.pair_fraction, rng);

  const auto phi_sup = supervised_gradient(state.phi, batches.source);
  const auto phi_mix = mixed_gradient(state.phi, mixed_for_phi);
  const auto theta_sup = supervised_gradient(state.theta, batches.target_labeled);
  const auto theta_mix = mixed_gradient(state.theta, mixed_for_theta);

  IterationRecord record;
  record.iteration = state.iteration;
  record.lambda = lambda;
  record.u_phi = static_cast<int>(u_phi.size());
  record.u_theta = static_cast<int>(u_theta.size());
  record.loss_phi = phi_sup.loss + phi_mix.loss;
  record.loss_theta = theta_sup.loss + theta_mix.loss;
  if (!p_phi.empty()) {
    Consensus mean;
    for (std::size_t i = 0; i < p_phi.size(); ++i) {
      const auto c = consensus_stats(p_phi[i], p_theta[i], config.epsilon);
      mean.both += c.both;
      mean.only_one += c.only_one;
      mean.none += c.none;
    }
    const auto n = static_cast<Real>(p_phi.size());
    record.consensus = Consensus{mean.both / n, mean.only_one / n, mean.none / n};
  }

  if (auto next = apply(state.phi, {&phi_sup, &phi_mix}, config.eta)) state.phi = std::move(*next);
  if (auto next = apply(state.theta, {&theta_sup, &theta_mix}, config.eta))
    state.theta = std::move(*next);
  ++state.iteration;
  return {std::move(state), record};
}

std::pair<SegmentorParams<Real>, IterationRecord> self_training_iteration(
    const SegmentorParams<Real>& params, std::span<const LabeledSample> labeled,
    std::span<const Image> unlabeled, int iteration, std::uint64_t seed, const ActConfig& config) {
  std::vector<ProbMap> predictions;
  for (const auto& image : unlabeled) predictions.push_back(forward(params, image));
  const PseudoSet pseudo = build_pseudo_set(predictions, unlabeled, config.epsilon, SegmentorTag::phi);
  const Real lambda = config.fixed_lambda.value_or(emd_lambda(iteration, config));
  Rng rng(derive_seed(seed, streams::kMixing, static_cast<std::uint64_t>(iteration)));
  const auto mixed = labeled.empty() ? std::vector<MixedSample>{}
                                     : build_mixed_set(pseudo, labeled, lambda, config.pair_fraction, rng);
  const auto sup = supervised_gradient(params, labeled);
  const auto mix = mixed_gradient(params, mixed);

  IterationRecord record;
  record.iteration = iteration;
  record.lambda = lambda;
  record.u_phi = static_cast<int>(pseudo.size());
  record.loss_phi = sup.loss + mix.loss;
  auto next = apply(params, {&sup, &mix}, config.eta);
  return {next ? std::move(*next) : params, record};
}

std::pair<SegmentorParams<Real>, Real> supervised_iteration(const SegmentorParams<Real>& params,
                                                           std::span<const LabeledSample> batch,
                                                           const ActConfig& config) {
  const auto sup = supervised_gradient(params, batch);
  auto next = apply(params, {&sup}, config.eta);
  return {next ? std::move(*next) : params, sup.loss};
}

std::vector<std::size_t> sample_indices(Rng& rng, std::size_t population, int n) {
  std::vector<std::size_t> out;
  if (population == 0 || n <= 0) return out;
  const auto want = static_cast<std::size_t>(n);
  if (population >= want) {
    std::vector<std::size_t> pool(population);
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    for (std::size_t i = 0; i < want; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, population - 1);
      std::swap(pool[i], pool[pick(rng)]);
    }
    out.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(want));
  } else {
    std::uniform_int_distribution<std::size_t> pick(0, population - 1);
    for (std::size_t i = 0; i < want; ++i) out.push_back(pick(rng));
  }
  return out;
}

Checkpoint checkpoint(const SegmentorParams<Real>& test_model, const SegmentorParams<Real>* phi,
                      std::span<const LabeledSample> test, int iteration, Real epsilon) {
  Checkpoint out;
  out.iteration = iteration;
  if (test.empty()) return out;
  Consensus sum;
  std::set<int> foreground;
  for (int c = 1; c < test.front().mask.num_classes; ++c) foreground.insert(c);
  for (const auto& sample : test) {
    const ProbMap p = forward(test_model, sample.image);
    const LabelMask pred = argmax_per_pixel(p);
    out.dsc += dsc(pred, sample.mask, foreground);
    out.hd += hausdorff(pred, sample.mask, foreground);
    if (phi) {
      const auto c = consensus_stats(forward(*phi, sample.image), p, epsilon);
      sum.both += c.both;
      sum.only_one += c.only_one;
      sum.none += c.none;
    }
  }
  const auto n = static_cast<Real>(test.size());
  out.dsc /= n;
  out.hd /= n;
  if (phi) out.consensus = Consensus{sum.both / n, sum.only_one / n, sum.none / n};
  return out;
}

std::pair<TrainState, RunReport> train(const TrainingData& data,
                                       std::span<const LabeledSample> test,
                                       const ActConfig& config, std::uint64_t seed) {
  validate(config);
  if (data.target_unlabeled_size() == 0) throw std::invalid_argument("no unlabeled target data");
  if (data.source_size() == 0 && data.target_labeled_size() == 0)
    throw std::invalid_argument("no labeled data");
  const int classes = data.num_classes();

  TrainState state{init_params<Real>(derive_seed(seed, streams::kInitPhi), config.features, classes),
                   init_params<Real>(derive_seed(seed, streams::kInitTheta), config.features, classes),
                   0, seed};
  RunReport report;
  report.mode = "act";
  report.seed = seed;
  report.checkpoints.push_back(checkpoint(state.theta, &state.phi, test, 0, config.epsilon));

  for (int it = 0; it < config.total_iterations; ++it) {
    Rng rng(derive_seed(seed, streams::kBatches, static_cast<std::uint64_t>(it)));
    IterationBatches batches;
    for (auto i : sample_indices(rng, data.source_size(), config.batch_size))
      batches.source.push_back(data.source(i));
    for (auto i : sample_indices(rng, data.target_labeled_size(), config.batch_size))
      batches.target_labeled.push_back(data.target_labeled(i));
    for (auto i : sample_indices(rng, data.target_unlabeled_size(), config.batch_size))
      batches.target_unlabeled.push_back(data.target_unlabeled(i));

    auto [next, record] = act_iteration(std::move(state), batches, config);
    state = std::move(next);
    report.per_iteration.push_back(record);
    const int done = it + 1;
    if (done == config.total_iterations || (config.eval_every > 0 && done % config.eval_every == 0))
      report.checkpoints.push_back(checkpoint(state.theta, &state.phi, test, done, config.epsilon));
  }
  if (!test.empty()) report.final_metrics = evaluate(state.theta, test);
  return {std::move(state), std::move(report)};
}

std::pair<TrainState, RunReport> train(const DatasetSplits& splits, const ActConfig& config,
                                       std::uint64_t seed) {
  TrainingData data(splits);
  return train(data, splits.target_test, config, seed);
}

}  // namespace act
