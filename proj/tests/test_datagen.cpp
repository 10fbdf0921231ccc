#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "act/datagen.hpp"

#include <filesystem>
#include <fstream>
#include <queue>
#include <set>

using namespace act;
namespace fs = std::filesystem;

namespace {

int foreground_components(const LabelMask& m, int* largest) {
  std::vector<int> seen(static_cast<std::size_t>(m.pixels()), 0);
  int components = 0;
  *largest = 0;
  for (Index start = 0; start < m.pixels(); ++start) {
    if (m[start] == 0 || seen[static_cast<std::size_t>(start)]) continue;
    ++components;
    int size = 0;
    std::queue<Index> q;
    q.push(start);
    seen[static_cast<std::size_t>(start)] = 1;
    while (!q.empty()) {
      const Index n = q.front();
      q.pop();
      ++size;
      const Index y = n / m.width(), x = n % m.width();
      const Index ny[] = {y - 1, y + 1, y, y}, nx[] = {x, x, x - 1, x + 1};
      for (int k = 0; k < 4; ++k) {
        if (ny[k] < 0 || nx[k] < 0 || ny[k] >= m.height() || nx[k] >= m.width()) continue;
        const Index j = ny[k] * m.width() + nx[k];
        if (m[j] != 0 && !seen[static_cast<std::size_t>(j)]) {
          seen[static_cast<std::size_t>(j)] = 1;
          q.push(j);
        }
      }
    }
    *largest = std::max(*largest, size);
  }
  return components;
}

DatagenConfig small_config() {
  DatagenConfig c = default_datagen_config();
  c.height = c.width = 32;
  c.shape.min_radius = 5;
  c.shape.max_radius = 10;
  c.n_source = 10;
  c.n_target_labeled = 1;
  c.n_target_unlabeled = 4;
  c.n_test = 3;
  c.n_source_test = 2;
  return c;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

Image ramp(Index h, Index w) {
  Image im(h, w);
  for (Index n = 0; n < im.size(); ++n) im.data()[n] = static_cast<Real>(n % 17) / 16.0;
  return im;
}

LabelMask stripes(Index h, Index w, int classes) {
  LabelMask m(h, w, classes);
  for (Index n = 0; n < m.pixels(); ++n) m[n] = static_cast<int>(n % classes);
  return m;
}

}  // namespace

TEST_CASE("generate_scene is deterministic") {
  const auto a = generate_scene(42, 64, 64, ShapeParams{});
  const auto b = generate_scene(42, 64, 64, ShapeParams{});
  CHECK(a.gt == b.gt);
  CHECK(a.seed == 42);
  CHECK_FALSE(generate_scene(43, 64, 64, ShapeParams{}).gt == a.gt);
}

TEST_CASE("seed 1 scene: golden lesion fraction and all classes") {
  const auto s = generate_scene(1, 64, 64, ShapeParams{});
  std::set<int> classes;
  Index lesion = 0;
  for (Index n = 0; n < s.gt.pixels(); ++n) {
    classes.insert(s.gt[n]);
    lesion += s.gt[n] != 0;
  }
  CHECK(classes == std::set<int>{0, 1, 2, 3});
  CHECK(lesion == 918);
  CHECK(static_cast<double>(lesion) / 4096.0 == doctest::Approx(0.22412109375));
}

TEST_CASE("lesions are one connected region of at least 16 pixels") {
  for (std::uint64_t seed = 1; seed <= 200; ++seed) {
    const auto s = generate_scene(seed, 64, 64, ShapeParams{});
    int largest = 0;
    CHECK(foreground_components(s.gt, &largest) == 1);
    CHECK(largest >= 16);
  }
}

TEST_CASE("inner classes only occur inside the lesion hierarchy") {
  // Outermost level is edema (3), then core (1), then enhancing (2): a pixel
  // of an inner class has all its outer classes present somewhere in the scene.
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    ShapeParams p;
    p.require_all_classes = false;
    const auto s = generate_scene(seed, 64, 64, p);
    std::set<int> present;
    for (Index n = 0; n < s.gt.pixels(); ++n) present.insert(s.gt[n]);
    if (present.count(2)) CHECK(present.count(1));
    if (present.count(1)) CHECK(present.count(3));
    CHECK(present.count(3));
  }
}

TEST_CASE("degenerate shapes are rejected") {
  ShapeParams p;
  p.min_radius = 0;
  CHECK_THROWS_AS(generate_scene(1, 64, 64, p), std::invalid_argument);
  p = ShapeParams{};
  p.max_radius = 4;
  CHECK_THROWS_AS(generate_scene(1, 64, 64, p), std::invalid_argument);
  CHECK_THROWS_AS(generate_scene(1, 16, 64, ShapeParams{}), std::invalid_argument);
}

TEST_CASE("noise-free render takes exactly C values") {
  const auto s = generate_scene(3, 64, 64, ShapeParams{});
  DomainStyle style{{0.1, 0.4, 0.7, 0.9}, 0.0, 1.0, 0.0};
  const auto im = render(s, style, 99);
  std::set<double> values(im.data(), im.data() + im.size());
  CHECK(values == std::set<double>{0.1, 0.4, 0.7, 0.9});
  CHECK(render(s, style, 99) == im);
}

TEST_CASE("swapped class intensities swap per-class means") {
  const auto s = generate_scene(5, 64, 64, ShapeParams{});
  DomainStyle a{{0.1, 0.4, 0.7, 0.9}, 0.0, 1.3, 0.0};
  DomainStyle b{{0.1, 0.9, 0.7, 0.4}, 0.0, 1.3, 0.0};
  const auto ia = render(s, a, 1), ib = render(s, b, 1);
  auto mean_of = [&](const Image& im, int c) {
    double sum = 0;
    int n = 0;
    for (Index i = 0; i < im.size(); ++i)
      if (s.gt[i] == c) sum += im.data()[i], ++n;
    return sum / n;
  };
  CHECK(mean_of(ia, 1) == doctest::Approx(mean_of(ib, 3)));
  CHECK(mean_of(ia, 3) == doctest::Approx(mean_of(ib, 1)));
  CHECK(mean_of(ia, 2) == doctest::Approx(mean_of(ib, 2)));
}

TEST_CASE("render is deterministic and clamped") {
  const auto s = generate_scene(8, 64, 64, ShapeParams{});
  const auto st = default_target_style();
  const auto a = render(s, st, 17);
  CHECK(render(s, st, 17) == a);
  CHECK_FALSE(render(s, st, 18) == a);
  CHECK(a.minCoeff() >= 0.0);
  CHECK(a.maxCoeff() <= 1.0);
}

TEST_CASE("style validation") {
  DomainStyle s{{0.1, 0.2}, 0.0, 1.0, 0.0};
  CHECK_NOTHROW(validate(s, 2));
  CHECK_THROWS(validate(s, 3));
  s.gamma = 5.0;
  CHECK_THROWS(validate(s, 2));
  s.gamma = 1.0;
  s.noise_sigma = 0.6;
  CHECK_THROWS(validate(s, 2));
}

TEST_CASE("make_splits sizes, determinism and seed disjointness") {
  auto c = default_datagen_config();
  c.n_test = 10;
  const auto a = make_splits(c);
  CHECK(a.source_labeled.size() == 40);
  CHECK(a.target_labeled.size() == 1);
  CHECK(a.target_unlabeled.size() == 32);
  CHECK(a.target_test.size() == 10);
  CHECK(a.target_unlabeled_masks.size() == 32);
  CHECK(a.height() == 64);
  CHECK(a.width() == 64);

  const auto b = make_splits(c);
  for (std::size_t i = 0; i < a.source_labeled.size(); ++i) {
    CHECK(a.source_labeled[i].image == b.source_labeled[i].image);
    CHECK(a.source_labeled[i].mask == b.source_labeled[i].mask);
  }
  for (std::size_t i = 0; i < a.target_unlabeled.size(); ++i)
    CHECK(a.target_unlabeled[i].image == b.target_unlabeled[i].image);

  std::set<std::uint64_t> train;
  for (const auto& s : a.source_labeled) train.insert(s.seed);
  for (const auto& s : a.target_labeled) train.insert(s.seed);
  for (const auto& s : a.target_unlabeled) train.insert(s.seed);
  CHECK(train.size() == 73);
  for (const auto& s : a.target_test) CHECK(train.count(s.seed) == 0);
}

TEST_CASE("make_splits guards the SSDA budget") {
  auto c = default_datagen_config();
  c.n_target_labeled = 20;
  CHECK_THROWS_WITH_AS(make_splits(c), doctest::Contains("target-labeled budget exceeds SSDA regime"),
                       std::invalid_argument);
  c.n_target_labeled = 4;
  CHECK_NOTHROW(validate(c));
  c.n_target_labeled = 5;
  CHECK_THROWS(validate(c));
  c.n_source = 50;
  CHECK_NOTHROW(validate(c));
}

TEST_CASE("PGM round trip") {
  TempDir dir("act_pgm_test");
  const Image im = ramp(9, 7);
  write_pgm_image(dir.path / "a.pgm", im, true);
  const Image back = read_pgm_image(dir.path / "a.pgm");
  CHECK((back - im).cwiseAbs().maxCoeff() <= 0.5 / 65535.0 + 1e-12);
  write_pgm_image(dir.path / "b.pgm", im, false);
  CHECK((read_pgm_image(dir.path / "b.pgm") - im).cwiseAbs().maxCoeff() <= 0.5 / 255.0 + 1e-12);

  const LabelMask m = stripes(9, 7, 4);
  write_pgm_mask(dir.path / "m.pgm", m);
  CHECK(read_pgm_mask(dir.path / "m.pgm", 4) == m);
  CHECK_THROWS_WITH(read_pgm_mask(dir.path / "m.pgm", 3), doctest::Contains("label 3"));
}

TEST_CASE("manifest loading") {
  TempDir dir("act_manifest_test");
  const auto& d = dir.path;
  for (const char* name : {"s0", "s1", "t0", "u0", "u1", "x0"}) write_pgm_image(d / (std::string(name) + ".pgm"), ramp(32, 32));
  write_pgm_mask(d / "m.pgm", stripes(32, 32, 4));
  write_pgm_image(d / "big.pgm", ramp(64, 64));
  LabelMask seven(32, 32, 8);
  seven[5] = 7;
  write_pgm_mask(d / "seven.pgm", seven);

  auto write_manifest = [&](const std::string& body) {
    std::ofstream(d / "manifest.tsv") << body;
    return d / "manifest.tsv";
  };

  const auto ok = write_manifest(
      "# role\timage\tmask\n"
      "source\ts0.pgm\tm.pgm\n"
      "source\ts1.pgm\tm.pgm\n"
      "\n"
      "target_labeled\tt0.pgm\tm.pgm\n"
      "target_unlabeled\tu0.pgm\t-\n"
      "target_unlabeled\tu1.pgm\t-\n"
      "target_test\tx0.pgm\tm.pgm\n");
  const auto splits = load_dataset(ok, 4);
  CHECK(splits.source_labeled.size() == 2);
  CHECK(splits.target_labeled.size() == 1);
  CHECK(splits.target_unlabeled.size() == 2);
  CHECK(splits.target_test.size() == 1);
  CHECK(splits.target_unlabeled_masks.empty());
  CHECK(splits.source_labeled[0].mask == stripes(32, 32, 4));

  CHECK_THROWS_WITH(load_dataset(write_manifest("source\ts0.pgm\tm.pgm\nsource\tbig.pgm\tm.pgm\n"), 4),
                    doctest::Contains("big.pgm"));
  CHECK_THROWS_WITH(load_dataset(write_manifest("source\ts0.pgm\tseven.pgm\n"), 4),
                    doctest::Contains("label 7"));
  CHECK_THROWS_WITH(load_dataset(write_manifest("source\tnope.pgm\tm.pgm\n"), 4),
                    doctest::Contains("nope.pgm"));
  CHECK_THROWS_WITH(load_dataset(write_manifest("validation\ts0.pgm\tm.pgm\n"), 4),
                    doctest::Contains("validation"));
  CHECK_THROWS(load_dataset(d / "missing.tsv", 4));
}

TEST_CASE("TrainingData counts accesses per list") {
  const auto splits = make_splits(small_config());
  TrainingData data(splits);
  CHECK(data.source_size() == 10);
  CHECK(data.counts().source == 0);
  (void)data.source(0);
  (void)data.source(3);
  (void)data.target_unlabeled(1);
  CHECK(data.counts().source == 2);
  CHECK(data.counts().target_unlabeled == 1);
  CHECK(data.counts().target_labeled == 0);
  CHECK(data.counts().target_unlabeled_masks == 0);
  CHECK(data.has_target_unlabeled_masks());
}

TEST_CASE("default task has a domain shift") {
  const auto src = default_source_style(), tgt = default_target_style();
  CHECK(src.class_intensities.size() == 4);
  CHECK(src.class_intensities != tgt.class_intensities);
}
