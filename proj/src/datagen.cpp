#include "act/datagen.hpp"

#include "act/random.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cctype>
#include <fstream>
#include <optional>
#include <numbers>
#include <set>
#include <sstream>
#include <stdexcept>

namespace act {
namespace {

struct Ellipse {
  Real cy = 0, cx = 0;
  Real ry = 1, rx = 1;
  Real angle = 0;

  bool contains(Real y, Real x) const {
    const Real dy = y - cy;
    const Real dx = x - cx;
    const Real c = std::cos(angle);
    const Real s = std::sin(angle);
    const Real u = dx * c + dy * s;
    const Real v = -dx * s + dy * c;
    return (u * u) / (rx * rx) + (v * v) / (ry * ry) <= 1.0;
  }
};

/// Class painted at each nesting level, outermost first.
std::vector<int> level_classes(int num_classes) {
  if (num_classes == 4) return {3, 1, 2};  // edema, core, enhancing
  std::vector<int> out;
  for (int c = 1; c < num_classes; ++c) out.push_back(c);
  return out;
}

bool has_all_classes(const LabelMask& mask) {
  std::vector<bool> seen(static_cast<std::size_t>(mask.num_classes), false);
  for (Index n = 0; n < mask.pixels(); ++n) seen[static_cast<std::size_t>(mask[n])] = true;
  return std::all_of(seen.begin(), seen.end(), [](bool b) { return b; });
}

enum class SplitList : std::uint64_t {
  source = 1,
  target_labeled = 2,
  target_unlabeled = 3,
  target_test = 4,
  source_test = 5,
};

constexpr std::uint64_t kRenderStream = 0x72656e646572ULL;

}  // namespace

Index DatasetSplits::height() const {
  if (!source_labeled.empty()) return source_labeled.front().image.rows();
  if (!target_labeled.empty()) return target_labeled.front().image.rows();
  if (!target_unlabeled.empty()) return target_unlabeled.front().image.rows();
  if (!target_test.empty()) return target_test.front().image.rows();
  return 0;
}

Index DatasetSplits::width() const {
  if (!source_labeled.empty()) return source_labeled.front().image.cols();
  if (!target_labeled.empty()) return target_labeled.front().image.cols();
  if (!target_unlabeled.empty()) return target_unlabeled.front().image.cols();
  if (!target_test.empty()) return target_test.front().image.cols();
  return 0;
}

void validate(const DomainStyle& style, int num_classes) {
  if (static_cast<int>(style.class_intensities.size()) != num_classes)
    throw std::invalid_argument("domain style needs one intensity per class");
  for (Real v : style.class_intensities)
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("class intensity outside [0, 1]");
  if (!(style.gamma > 0.2 && style.gamma < 5.0)) throw std::invalid_argument("gamma outside (0.2, 5)");
  if (!(style.noise_sigma >= 0.0 && style.noise_sigma <= 0.5))
    throw std::invalid_argument("noise_sigma outside [0, 0.5]");
  if (!(style.bias_amplitude >= 0.0)) throw std::invalid_argument("bias_amplitude must be >= 0");
}

void validate(const ShapeParams& shape, Index height, Index width, int num_classes) {
  if (height < 32 || width < 32) throw std::invalid_argument("scene must be at least 32x32");
  if (num_classes < 2) throw std::invalid_argument("scene needs at least 2 classes");
  if (!(shape.min_radius > 0.0) || !(shape.max_radius >= shape.min_radius))
    throw std::invalid_argument("degenerate lesion shape: radii must satisfy 0 < min <= max");
  if (!(shape.min_inner_scale > 0.0) || !(shape.max_inner_scale < 1.0) ||
      shape.min_inner_scale > shape.max_inner_scale)
    throw std::invalid_argument("inner scale range must lie inside (0, 1)");
  if (shape.min_levels < 1 || shape.max_levels < shape.min_levels ||
      shape.max_levels > static_cast<int>(level_classes(num_classes).size()))
    throw std::invalid_argument("lesion levels must satisfy 1 <= min <= max <= C - 1");
  if (shape.max_attempts < 1) throw std::invalid_argument("max_attempts must be >= 1");
  const Real fit = 0.5 * static_cast<Real>(std::min(height, width)) - 2.0;
  if (std::min(shape.max_radius, fit) < shape.min_radius)
    throw std::invalid_argument("lesion radius does not fit the image");
}

void validate(const DatagenConfig& config) {
  if (config.n_source < 0 || config.n_target_labeled < 0 || config.n_target_unlabeled < 0 ||
      config.n_test < 0 || config.n_source_test < 0)
    throw std::invalid_argument("split sizes must be non-negative");
  if (config.n_target_labeled * 10 > config.n_source)
    throw std::invalid_argument("target-labeled budget exceeds SSDA regime (need N^lt <= N^s / 10)");
  validate(config.shape, config.height, config.width, config.num_classes);
  validate(config.source_style, config.num_classes);
  validate(config.target_style, config.num_classes);
}

DomainStyle default_source_style() {
  return DomainStyle{{0.10, 0.55, 0.90, 0.35}, 0.04, 1.0, 0.10};
}

DomainStyle default_target_style() {
  return DomainStyle{{0.19, 0.30, 0.75, 0.55}, 0.05, 1.0, 0.15};
}

DatagenConfig default_datagen_config() {
  DatagenConfig cfg;
  cfg.source_style = default_source_style();
  cfg.target_style = default_target_style();
  return cfg;
}

Scene generate_scene(std::uint64_t seed, Index height, Index width, const ShapeParams& shape,
                     int num_classes) {
  validate(shape, height, width, num_classes);
  const auto classes = level_classes(num_classes);
  const Real fit = 0.5 * static_cast<Real>(std::min(height, width)) - 2.0;
  const Real max_r = std::min(shape.max_radius, fit);

  Rng rng(seed);
  std::uniform_real_distribution<Real> unit(0.0, 1.0);
  auto uniform = [&](Real lo, Real hi) { return lo + (hi - lo) * unit(rng); };

  LabelMask mask(height, width, num_classes);
  for (int attempt = 0; attempt < shape.max_attempts; ++attempt) {
    const int levels = shape.min_levels +
                       static_cast<int>(unit(rng) * (shape.max_levels - shape.min_levels + 1));
    Ellipse e;
    e.ry = uniform(shape.min_radius, max_r);
    e.rx = uniform(shape.min_radius, max_r);
    e.angle = uniform(0.0, std::numbers::pi);
    const Real reach = std::max(e.rx, e.ry) + 1.0;
    e.cy = uniform(reach, static_cast<Real>(height) - 1.0 - reach);
    e.cx = uniform(reach, static_cast<Real>(width) - 1.0 - reach);

    mask.labels.setZero();
    std::vector<Ellipse> chain{e};
    for (int level = 1; level < std::min<int>(levels, static_cast<int>(classes.size())); ++level) {
      const Ellipse& parent = chain.back();
      Ellipse inner;
      const Real scale = uniform(shape.min_inner_scale, shape.max_inner_scale);
      inner.ry = parent.ry * scale;
      inner.rx = parent.rx * scale;
      inner.angle = parent.angle + uniform(-0.3, 0.3);
      const Real jitter = 0.5 * (1.0 - scale) * std::min(parent.rx, parent.ry);
      const Real dir = uniform(0.0, 2.0 * std::numbers::pi);
      const Real mag = uniform(0.0, jitter);
      inner.cy = parent.cy + mag * std::sin(dir);
      inner.cx = parent.cx + mag * std::cos(dir);
      chain.push_back(inner);
    }

    for (Index y = 0; y < height; ++y) {
      for (Index x = 0; x < width; ++x) {
        int label = 0;
        for (std::size_t level = 0; level < chain.size(); ++level) {
          if (!chain[level].contains(static_cast<Real>(y), static_cast<Real>(x))) break;
          label = classes[level];
        }
        mask.labels(y, x) = label;
      }
    }
    if (!shape.require_all_classes || has_all_classes(mask)) return Scene{mask, seed};
  }
  throw std::runtime_error("could not draw a scene containing every class within max_attempts");
}

Image render(const Scene& scene, const DomainStyle& style, std::uint64_t seed) {
  check_mask(scene.gt);
  validate(style, scene.gt.num_classes);
  const Index h = scene.gt.height();
  const Index w = scene.gt.width();

  Rng rng(seed);
  std::uniform_real_distribution<Real> unit(0.0, 1.0);
  // Smooth multiplicative bias: one low-frequency separable cosine product.
  const Real fy = 0.5 + unit(rng);
  const Real fx = 0.5 + unit(rng);
  const Real py = 2.0 * std::numbers::pi * unit(rng);
  const Real px = 2.0 * std::numbers::pi * unit(rng);
  std::normal_distribution<Real> noise(0.0, 1.0);

  std::vector<Real> base(style.class_intensities.size());
  for (std::size_t c = 0; c < base.size(); ++c) base[c] = std::pow(style.class_intensities[c], style.gamma);

  Image image(h, w);
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      const Real bias = 1.0 + style.bias_amplitude *
                                  std::cos(2.0 * std::numbers::pi * fy * static_cast<Real>(y) / h + py) *
                                  std::cos(2.0 * std::numbers::pi * fx * static_cast<Real>(x) / w + px);
      Real v = bias * base[static_cast<std::size_t>(scene.gt.labels(y, x))];
      if (style.noise_sigma > 0.0) v += style.noise_sigma * noise(rng);
      image(y, x) = std::clamp(v, 0.0, 1.0);
    }
  }
  return image;
}

DatasetSplits make_splits(const DatagenConfig& config) {
  validate(config);

  std::set<std::uint64_t> seen;
  auto scene_at = [&](SplitList list, int i) {
    const auto seed = derive_seed(config.seed, static_cast<std::uint64_t>(list), static_cast<std::uint64_t>(i));
    if (!seen.insert(seed).second) throw std::runtime_error("scene seed collision across splits");
    return generate_scene(seed, config.height, config.width, config.shape, config.num_classes);
  };
  auto labeled = [&](SplitList list, int i, const DomainStyle& style) {
    Scene scene = scene_at(list, i);
    Image image = render(scene, style, derive_seed(scene.seed, kRenderStream));
    return LabeledSample{std::move(image), std::move(scene.gt), scene.seed};
  };

  DatasetSplits out;
  out.num_classes = config.num_classes;
  for (int i = 0; i < config.n_source; ++i)
    out.source_labeled.push_back(labeled(SplitList::source, i, config.source_style));
  for (int i = 0; i < config.n_target_labeled; ++i)
    out.target_labeled.push_back(labeled(SplitList::target_labeled, i, config.target_style));
  for (int i = 0; i < config.n_target_unlabeled; ++i) {
    auto s = labeled(SplitList::target_unlabeled, i, config.target_style);
    out.target_unlabeled.push_back(UnlabeledSample{std::move(s.image), s.seed});
    out.target_unlabeled_masks.push_back(std::move(s.mask));
  }
  for (int i = 0; i < config.n_test; ++i)
    out.target_test.push_back(labeled(SplitList::target_test, i, config.target_style));
  for (int i = 0; i < config.n_source_test; ++i)
    out.source_test.push_back(labeled(SplitList::source_test, i, config.source_style));
  return out;
}

// ---------------------------------------------------------------------------
// PGM

namespace {

struct PgmRaster {
  Index width = 0;
  Index height = 0;
  int maxval = 0;
  std::vector<int> values;
};

PgmRaster read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  auto token = [&]() {
    std::string tok;
    int ch = 0;
    while ((ch = in.get()) != EOF) {
      if (ch == '#') {
        while ((ch = in.get()) != EOF && ch != '\n') {
        }
        continue;
      }
      if (std::isspace(ch)) {
        if (!tok.empty()) break;
        continue;
      }
      tok.push_back(static_cast<char>(ch));
    }
    return tok;
  };
  if (token() != "P5") throw std::runtime_error(path.string() + ": not a binary PGM (P5)");
  PgmRaster r;
  try {
    r.width = std::stol(token());
    r.height = std::stol(token());
    r.maxval = std::stoi(token());
  } catch (const std::exception&) {
    throw std::runtime_error(path.string() + ": malformed PGM header");
  }
  if (r.width < 1 || r.height < 1 || r.maxval < 1 || r.maxval > 65535)
    throw std::runtime_error(path.string() + ": invalid PGM dimensions or maxval");
  const bool wide = r.maxval > 255;
  const auto count = static_cast<std::size_t>(r.width * r.height);
  std::vector<unsigned char> raw(count * (wide ? 2 : 1));
  if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
    throw std::runtime_error(path.string() + ": truncated PGM data");
  r.values.resize(count);
  for (std::size_t i = 0; i < count; ++i)
    r.values[i] = wide ? (raw[2 * i] << 8) | raw[2 * i + 1] : raw[i];
  return r;
}

void write_pgm(const std::filesystem::path& path, Index height, Index width, int maxval,
               const std::vector<int>& values) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "P5\n" << width << ' ' << height << '\n' << maxval << '\n';
  for (int v : values) {
    if (maxval > 255) out.put(static_cast<char>((v >> 8) & 0xff));
    out.put(static_cast<char>(v & 0xff));
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace

Image read_pgm_image(const std::filesystem::path& path) {
  const auto r = read_pgm(path);
  Image image(r.height, r.width);
  for (Index n = 0; n < image.size(); ++n)
    image.data()[n] = static_cast<Real>(r.values[static_cast<std::size_t>(n)]) / r.maxval;
  return image;
}

LabelMask read_pgm_mask(const std::filesystem::path& path, int num_classes) {
  const auto r = read_pgm(path);
  LabelMask mask(r.height, r.width, num_classes);
  for (Index n = 0; n < mask.pixels(); ++n) {
    const int v = r.values[static_cast<std::size_t>(n)];
    if (v >= num_classes)
      throw std::runtime_error(path.string() + ": mask label " + std::to_string(v) +
                               " outside [0, " + std::to_string(num_classes) + ")");
    mask[n] = v;
  }
  return mask;
}

void write_pgm_image(const std::filesystem::path& path, const Image& image, bool sixteen_bit) {
  const int maxval = sixteen_bit ? 65535 : 255;
  std::vector<int> values(static_cast<std::size_t>(image.size()));
  for (Index n = 0; n < image.size(); ++n)
    values[static_cast<std::size_t>(n)] =
        static_cast<int>(std::lround(std::clamp(image.data()[n], 0.0, 1.0) * maxval));
  write_pgm(path, image.rows(), image.cols(), maxval, values);
}

void write_pgm_mask(const std::filesystem::path& path, const LabelMask& mask) {
  check_mask(mask);
  if (mask.num_classes > 256) throw std::invalid_argument("8-bit mask cannot hold > 256 classes");
  std::vector<int> values(mask.labels.data(), mask.labels.data() + mask.pixels());
  write_pgm(path, mask.height(), mask.width(), 255, values);
}

DatasetSplits load_dataset(const std::filesystem::path& manifest_path, int num_classes) {
  std::ifstream in(manifest_path);
  if (!in) throw std::runtime_error("cannot open manifest " + manifest_path.string());
  const auto base = manifest_path.parent_path();
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() ? path : base / path;
  };

  DatasetSplits out;
  out.num_classes = num_classes;
  Index h = -1;
  Index w = -1;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, '\t')) fields.push_back(field);
    const std::string where = manifest_path.string() + ":" + std::to_string(line_no);
    if (fields.size() != 3) throw std::runtime_error(where + ": expected role<TAB>image<TAB>mask");
    const std::string& role = fields[0];

    const auto image_path = resolve(fields[1]);
    if (!std::filesystem::exists(image_path))
      throw std::runtime_error(where + ": missing file " + image_path.string());
    Image image = read_pgm_image(image_path);
    if (h < 0) {
      h = image.rows();
      w = image.cols();
    } else if (image.rows() != h || image.cols() != w) {
      throw std::runtime_error(where + ": " + image_path.string() + " is " +
                               std::to_string(image.rows()) + "x" + std::to_string(image.cols()) +
                               ", expected " + std::to_string(h) + "x" + std::to_string(w));
    }

    std::optional<LabelMask> mask;
    if (fields[2] != "-") {
      const auto mask_path = resolve(fields[2]);
      if (!std::filesystem::exists(mask_path))
        throw std::runtime_error(where + ": missing file " + mask_path.string());
      mask = read_pgm_mask(mask_path, num_classes);
      if (mask->height() != h || mask->width() != w)
        throw std::runtime_error(where + ": mask " + mask_path.string() + " does not match " +
                                 std::to_string(h) + "x" + std::to_string(w));
    }

    auto require_mask = [&]() -> LabelMask {
      if (!mask) throw std::runtime_error(where + ": role '" + role + "' requires a mask");
      return std::move(*mask);
    };
    if (role == "source") {
      out.source_labeled.push_back({std::move(image), require_mask(), 0});
    } else if (role == "target_labeled") {
      out.target_labeled.push_back({std::move(image), require_mask(), 0});
    } else if (role == "target_unlabeled") {
      out.target_unlabeled.push_back({std::move(image), 0});
      if (mask) out.target_unlabeled_masks.push_back(std::move(*mask));
    } else if (role == "target_test") {
      out.target_test.push_back({std::move(image), require_mask(), 0});
    } else if (role == "source_test") {
      out.source_test.push_back({std::move(image), require_mask(), 0});
    } else {
      throw std::runtime_error(where + ": unknown role '" + role + "'");
    }
  }
  // Withheld masks are usable only when every unlabeled entry has one.
  if (out.target_unlabeled_masks.size() != out.target_unlabeled.size())
    out.target_unlabeled_masks.clear();
  return out;
}

}  // namespace act
