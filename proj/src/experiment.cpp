#include "act/experiment.hpp"

#include <array>
#include <stdexcept>

namespace act {
namespace {

constexpr std::array<std::pair<ExperimentMode, std::string_view>, 6> kModeNames{{
    {ExperimentMode::source_only, "source_only"},
    {ExperimentMode::target_only_ssl, "target_only_ssl"},
    {ExperimentMode::uda_branch, "uda_branch"},
    {ExperimentMode::act, "act"},
    {ExperimentMode::act_no_emd, "act_no_emd"},
    {ExperimentMode::joint, "joint"},
}};

enum class Pool { source, target_labeled, target_unlabeled };

std::vector<LabeledSample> labeled_batch(const TrainingData& data, Pool pool, Rng& rng, int n) {
  std::vector<LabeledSample> out;
  const std::size_t size = pool == Pool::source ? data.source_size() : data.target_labeled_size();
  for (auto i : sample_indices(rng, size, n))
    out.push_back(pool == Pool::source ? data.source(i) : data.target_labeled(i));
  return out;
}

std::vector<Image> unlabeled_batch(const TrainingData& data, Rng& rng, int n) {
  std::vector<Image> out;
  for (auto i : sample_indices(rng, data.target_unlabeled_size(), n))
    out.push_back(data.target_unlabeled(i));
  return out;
}

/// N source, N labeled target and N unlabeled target samples with revealed
/// masks, drawn in the same order as the co-training batches.
std::array<std::vector<LabeledSample>, 3> joint_batches(const TrainingData& data, Rng& rng, int n) {
  std::array<std::vector<LabeledSample>, 3> out;
  out[0] = labeled_batch(data, Pool::source, rng, n);
  out[1] = labeled_batch(data, Pool::target_labeled, rng, n);
  for (auto i : sample_indices(rng, data.target_unlabeled_size(), n))
    out[2].push_back({data.target_unlabeled(i), data.target_unlabeled_mask(i), 0});
  return out;
}

RunOutcome run_single_model(ExperimentMode mode, const TrainingData& data,
                            std::span<const LabeledSample> test, const ActConfig& config,
                            std::uint64_t seed) {
  const bool is_phi = mode == ExperimentMode::uda_branch;
  auto model = init_params<Real>(derive_seed(seed, is_phi ? streams::kInitPhi : streams::kInitTheta),
                                 config.features, data.num_classes());
  RunReport report;
  report.mode = std::string(to_string(mode));
  report.seed = seed;
  report.checkpoints.push_back(checkpoint(model, nullptr, test, 0, config.epsilon));

  for (int it = 0; it < config.total_iterations; ++it) {
    Rng rng(derive_seed(seed, streams::kBatches, static_cast<std::uint64_t>(it)));
    IterationRecord record;
    switch (mode) {
      case ExperimentMode::source_only: {
        const auto batch = labeled_batch(data, Pool::source, rng, config.batch_size);
        auto [next, loss] = supervised_iteration(model, batch, config);
        model = std::move(next);
        record.iteration = it;
        record.loss_theta = loss;
        break;
      }
      case ExperimentMode::joint: {
        // one mean loss per list, summed like the co-training update
        std::vector<GradientBundle<Real>> grads;
        Real loss = 0;
        for (const auto& batch : joint_batches(data, rng, config.batch_size)) {
          if (batch.empty()) continue;
          auto part = supervised_gradient(model, batch);
          loss += part.loss;
          grads.push_back(std::move(part.grad));
        }
        if (!grads.empty()) model = sgd_step<Real>(model, grads, config.eta);
        record.iteration = it;
        record.loss_theta = loss;
        break;
      }
      case ExperimentMode::target_only_ssl:
      case ExperimentMode::uda_branch: {
        const auto labeled =
            labeled_batch(data, is_phi ? Pool::source : Pool::target_labeled, rng, config.batch_size);
        const auto unlabeled = unlabeled_batch(data, rng, config.batch_size);
        auto [next, rec] = self_training_iteration(model, labeled, unlabeled, it, seed, config);
        model = std::move(next);
        record = rec;
        if (!is_phi) {
          std::swap(record.u_phi, record.u_theta);
          std::swap(record.loss_phi, record.loss_theta);
        }
        break;
      }
      default:
        throw std::logic_error("not a single-model mode");
    }
    report.per_iteration.push_back(record);
    const int done = it + 1;
    if (done == config.total_iterations || (config.eval_every > 0 && done % config.eval_every == 0))
      report.checkpoints.push_back(checkpoint(model, nullptr, test, done, config.epsilon));
  }
  if (!test.empty()) report.final_metrics = evaluate(model, test);
  return {std::move(report), std::move(model), std::nullopt};
}

}  // namespace

std::string_view to_string(ExperimentMode mode) {
  for (const auto& [m, name] : kModeNames)
    if (m == mode) return name;
  throw std::logic_error("unknown mode");
}

ExperimentMode parse_mode(std::string_view name) {
  for (const auto& [m, n] : kModeNames)
    if (n == name) return m;
  throw std::invalid_argument("unknown mode '" + std::string(name) +
                              "' (expected source_only, target_only_ssl, uda_branch, act, "
                              "act_no_emd or joint)");
}

void check_requirements(ExperimentMode mode, const TrainingData& data) {
  switch (mode) {
    case ExperimentMode::source_only:
      if (data.source_size() == 0) throw std::invalid_argument("source_only needs source data");
      break;
    case ExperimentMode::target_only_ssl:
      if (data.target_labeled_size() == 0 || data.target_unlabeled_size() == 0)
        throw std::invalid_argument("target_only_ssl needs labeled and unlabeled target data");
      break;
    case ExperimentMode::uda_branch:
      if (data.source_size() == 0 || data.target_unlabeled_size() == 0)
        throw std::invalid_argument("uda_branch needs source and unlabeled target data");
      break;
    case ExperimentMode::joint:
      if (data.source_size() + data.target_labeled_size() + data.target_unlabeled_size() == 0)
        throw std::invalid_argument("joint mode needs training data");
      if (data.target_unlabeled_size() > 0 && !data.has_target_unlabeled_masks())
        throw std::invalid_argument("joint mode needs masks for every unlabeled target image");
      break;
    case ExperimentMode::act:
    case ExperimentMode::act_no_emd:
      if (data.target_unlabeled_size() == 0)
        throw std::invalid_argument(std::string(to_string(mode)) + " needs unlabeled target data");
      if (data.source_size() == 0 && data.target_labeled_size() == 0)
        throw std::invalid_argument(std::string(to_string(mode)) + " needs labeled data");
      break;
  }
}

RunOutcome run_mode(ExperimentMode mode, const TrainingData& data,
                    std::span<const LabeledSample> test, const ActConfig& config,
                    std::uint64_t seed) {
  validate(config);
  check_requirements(mode, data);

  if (mode == ExperimentMode::act || mode == ExperimentMode::act_no_emd) {
    ActConfig cfg = config;
    if (mode == ExperimentMode::act_no_emd) cfg.fixed_lambda = 0.0;
    auto [state, report] = train(data, test, cfg, seed);
    report.mode = std::string(to_string(mode));
    return {std::move(report), std::move(state.theta), std::move(state.phi)};
  }
  return run_single_model(mode, data, test, config, seed);
}

}  // namespace act
