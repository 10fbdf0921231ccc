#pragma once

#include "act/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace act {

/// Lesion geometry knobs for generate_scene.
struct ShapeParams {
  Real min_radius = 8.0;   // outer lesion semi-axis bounds, pixels
  Real max_radius = 20.0;
  Real min_inner_scale = 0.45;  // each nested ellipse shrinks by a factor in this range
  Real max_inner_scale = 0.75;
  int min_levels = 1;
  int max_levels = 3;
  bool require_all_classes = true;
  int max_attempts = 64;
};

/// Ground-truth geometry of one subject. Class ids: 0 background, 1 core,
/// 2 enhancing, 3 edema (for C = 4).
struct Scene {
  LabelMask gt;
  std::uint64_t seed = 0;
};

/// Appearance model of one domain.
struct DomainStyle {
  std::vector<Real> class_intensities;
  Real noise_sigma = 0.0;
  Real gamma = 1.0;
  Real bias_amplitude = 0.0;
};

void validate(const DomainStyle& style, int num_classes);

struct LabeledSample {
  Image image;
  LabelMask mask;
  std::uint64_t seed = 0;  // scene seed; 0 for file-backed data
};

struct UnlabeledSample {
  Image image;
  std::uint64_t seed = 0;
};

/// Source, labeled target, unlabeled target and target test sets.
///
/// `target_unlabeled_masks` holds the withheld ground truth of the unlabeled
/// target scenes when it is known (generated data, or a manifest that lists
/// masks for unlabeled entries); it is only consulted by the fully supervised
/// reference mode. `source_test` is an optional held-out source set used to
/// measure the domain gap.
struct DatasetSplits {
  std::vector<LabeledSample> source_labeled;
  std::vector<LabeledSample> target_labeled;
  std::vector<UnlabeledSample> target_unlabeled;
  std::vector<LabeledSample> target_test;
  std::vector<LabelMask> target_unlabeled_masks;
  std::vector<LabeledSample> source_test;
  int num_classes = 4;

  Index height() const;
  Index width() const;
};

/// Read access to the training lists of a DatasetSplits with per-list access
/// counters, so that experiment modes can be checked for which data they touch.
/// Sizes are metadata and are not counted.
class TrainingData {
 public:
  struct AccessCounts {
    std::size_t source = 0;
    std::size_t target_labeled = 0;
    std::size_t target_unlabeled = 0;
    std::size_t target_unlabeled_masks = 0;
  };

  explicit TrainingData(const DatasetSplits& splits) : splits_(&splits) {}

  std::size_t source_size() const { return splits_->source_labeled.size(); }
  std::size_t target_labeled_size() const { return splits_->target_labeled.size(); }
  std::size_t target_unlabeled_size() const { return splits_->target_unlabeled.size(); }
  bool has_target_unlabeled_masks() const {
    return !splits_->target_unlabeled.empty() &&
           splits_->target_unlabeled_masks.size() == splits_->target_unlabeled.size();
  }
  int num_classes() const { return splits_->num_classes; }

  const LabeledSample& source(std::size_t i) const {
    ++counts_.source;
    return splits_->source_labeled.at(i);
  }
  const LabeledSample& target_labeled(std::size_t i) const {
    ++counts_.target_labeled;
    return splits_->target_labeled.at(i);
  }
  const Image& target_unlabeled(std::size_t i) const {
    ++counts_.target_unlabeled;
    return splits_->target_unlabeled.at(i).image;
  }
  const LabelMask& target_unlabeled_mask(std::size_t i) const {
    ++counts_.target_unlabeled_masks;
    return splits_->target_unlabeled_masks.at(i);
  }

  const AccessCounts& counts() const { return counts_; }

 private:
  const DatasetSplits* splits_;
  mutable AccessCounts counts_;
};

struct DatagenConfig {
  Index height = 64;
  Index width = 64;
  int num_classes = 4;
  int n_source = 40;
  int n_target_labeled = 1;
  int n_target_unlabeled = 32;
  int n_test = 12;
  int n_source_test = 12;
  ShapeParams shape;
  DomainStyle source_style;
  DomainStyle target_style;
  std::uint64_t seed = 1;
};

void validate(const ShapeParams& shape, Index height, Index width, int num_classes);
void validate(const DatagenConfig& config);

/// Default cross-domain task. Target background sits just under the source
/// background/edema midpoint and target core and edema trade intensities,
/// so a source-trained segmentor labels part of the target background as
/// tumour.
DomainStyle default_source_style();
DomainStyle default_target_style();
DatagenConfig default_datagen_config();

Scene generate_scene(std::uint64_t seed, Index height, Index width, const ShapeParams& shape,
                     int num_classes = 4);

/// intensity = clamp(bias(n) * class_intensities[gt[n]]^gamma + noise, 0, 1)
Image render(const Scene& scene, const DomainStyle& style, std::uint64_t seed);

DatasetSplits make_splits(const DatagenConfig& config);

// --- file-backed data -------------------------------------------------------

/// Binary PGM (P5), 8- or 16-bit. Intensities are scaled to [0, 1].
Image read_pgm_image(const std::filesystem::path& path);
/// Binary PGM whose pixel values are class indices.
LabelMask read_pgm_mask(const std::filesystem::path& path, int num_classes);
void write_pgm_image(const std::filesystem::path& path, const Image& image, bool sixteen_bit = true);
void write_pgm_mask(const std::filesystem::path& path, const LabelMask& mask);

/// Manifest: one `role<TAB>image<TAB>mask` record per line, role in
/// {source, target_labeled, target_unlabeled, target_test, source_test},
/// `-` for an absent mask. Relative paths resolve against the manifest's
/// directory; blank lines and lines starting with '#' are skipped.
DatasetSplits load_dataset(const std::filesystem::path& manifest_path, int num_classes = 4);

}  // namespace act
