#pragma once

#include "act/act.hpp"
#include "act/datagen.hpp"
#include "act/metrics.hpp"

#include <optional>
#include <span>
#include <string>
#include <string_view>

namespace act {

/// Baseline and ablation rows of the comparison table.
enum class ExperimentMode {
  source_only,      // one segmentor, supervised on source only
  target_only_ssl,  // one segmentor, labeled target + its own pseudo labels
  uda_branch,       // one segmentor, source + its own pseudo labels on unlabeled target
  act,              // asymmetric co-training with EMD mixing
  act_no_emd,       // co-training with lambda fixed at 0
  joint,            // supervised on source, labeled target and revealed unlabeled target
};

std::string_view to_string(ExperimentMode mode);
ExperimentMode parse_mode(std::string_view name);  // throws std::invalid_argument

struct RunOutcome {
  RunReport report;
  SegmentorParams<Real> test_model;           // theta for co-training modes
  std::optional<SegmentorParams<Real>> phi;   // co-training modes only
};

/// Throws std::invalid_argument when `data` lacks a list the mode trains on.
void check_requirements(ExperimentMode mode, const TrainingData& data);

/// Trains one seeded run of `mode`. Training data is read only through
/// `data`, so its access counters show which lists the mode touched.
RunOutcome run_mode(ExperimentMode mode, const TrainingData& data,
                    std::span<const LabeledSample> test, const ActConfig& config,
                    std::uint64_t seed);

}  // namespace act
