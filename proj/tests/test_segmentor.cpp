#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "oracles.hpp"

#include "act/datagen.hpp"
#include "act/segmentor.hpp"

#include <cstdio>
#include <filesystem>
#include <sstream>

using namespace act;

namespace {

Image test_image(Index h = 16, Index w = 16) {
  Image x(h, w);
  for (Index y = 0; y < h; ++y)
    for (Index c = 0; c < w; ++c) x(y, c) = 0.5 + 0.4 * std::sin(0.7 * y) * std::cos(0.3 * c);
  return x;
}

}  // namespace

TEST_CASE("parameter count and init") {
  const auto p = init_params<Real>(7, 8, 4);
  CHECK(p.size() == 8 * 10 + 8 * (72 + 1) + 4 * 9);
  CHECK(p == init_params<Real>(7, 8, 4));
  CHECK_FALSE(p == init_params<Real>(8, 8, 4));
  CHECK((p.conv1_b.array() == 0).all());
  CHECK((p.conv2_b.array() == 0).all());
  CHECK((p.head_b.array() == 0).all());
  CHECK(p.conv1_w.cwiseAbs().maxCoeff() <= std::sqrt(6.0 / (9 + 72)));
  CHECK(p.conv2_w.cwiseAbs().maxCoeff() <= std::sqrt(6.0 / (72 + 72)));
  CHECK(p.head_w.cwiseAbs().maxCoeff() <= std::sqrt(6.0 / (8 + 4)));
  CHECK_THROWS(init_params<Real>(1, 0, 4));
  CHECK_THROWS(init_params<Real>(1, 8, 1));
}

TEST_CASE("zero weights give a uniform prediction") {
  const auto p = forward(SegmentorParams<Real>::zeros(4, 4), test_image());
  CHECK(p.height == 16);
  CHECK(p.width == 16);
  CHECK(p.num_classes() == 4);
  CHECK((p.probs.array() - 0.25).abs().maxCoeff() < 1e-15);
}

TEST_CASE("forward shapes and errors") {
  const auto params = init_params<Real>(1, 4, 3);
  const auto p = forward(params, test_image(7, 11));
  CHECK(p.height == 7);
  CHECK(p.width == 11);
  CHECK(p.probs.rows() == 3);
  CHECK(p.probs.cols() == 77);
  CHECK_THROWS(forward(params, test_image(4, 11)));
  auto bad = params;
  bad.conv2_w(0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS(forward(bad, test_image()));
}

TEST_CASE("golden forward checksum") {
  // Seed-1 parameters on the seed-1 source scene.
  const auto scene = generate_scene(1, 64, 64, ShapeParams{});
  const auto image = render(scene, default_source_style(), 1);
  const auto p = forward(init_params<Real>(1, 8, 4), image);
  double checksum = 0;
  for (Index n = 0; n < p.pixels(); ++n)
    for (int c = 0; c < 4; ++c) checksum += (c + 1) * p.probs(c, n) * (1.0 + static_cast<double>(n % 7));
  std::printf("golden forward checksum %.12f\n", checksum);
  CHECK(checksum == doctest::Approx(41009.706839698170).epsilon(1e-10));
}

TEST_CASE("self-target loss is the entropy and stationary at uniform") {
  const auto params = init_params<Real>(3, 4, 3);
  const auto x = test_image();
  const auto p = forward(params, x);
  SoftLabelMap t{p.height, p.width, p.probs, SoftLabelMap::Weights::Ones(p.pixels())};
  double entropy = 0;
  for (Index i = 0; i < p.probs.size(); ++i) entropy -= p.probs.data()[i] * std::log(p.probs.data()[i] + kLogFloor);
  CHECK(loss_and_grad(params, x, t).first == doctest::Approx(entropy / p.pixels()).epsilon(1e-12));

  const auto zero = SegmentorParams<Real>::zeros(4, 3);
  const auto u = forward(zero, x);
  SoftLabelMap tu{u.height, u.width, u.probs, SoftLabelMap::Weights::Ones(u.pixels())};
  CHECK(loss_and_grad(zero, x, tu).second.head_b.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("confident correct prediction has ~zero loss") {
  auto params = SegmentorParams<Real>::zeros(2, 3);
  params.head_b << 100, 0, 0;
  const auto x = test_image();
  const auto t = one_hot(LabelMask(16, 16, 3));
  const Real loss = loss_and_grad(params, x, t).first;
  CHECK(loss <= 1e-10);
  CHECK(loss >= -2e-12);  // -log(1 + 1e-12) from the floor
}

TEST_CASE("empty supervision and shape errors") {
  const auto params = init_params<Real>(1, 2, 3);
  auto t = one_hot(LabelMask(16, 16, 3));
  t.pixel_weights.setZero();
  CHECK_THROWS_WITH(loss_and_grad(params, test_image(), t), "empty supervision");
  CHECK_THROWS(loss_and_grad(params, test_image(8, 8), one_hot(LabelMask(16, 16, 3))));
  CHECK_THROWS(loss_and_grad(params, test_image(), one_hot(LabelMask(16, 16, 4))));
}

TEST_CASE("analytic gradient matches central differences") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto c = oracle::random_grad_case(seed);
    const auto r = oracle::check_gradient(c.params, c.image, c.target);
    CAPTURE(seed);
    CHECK(r.max_rel_error <= 1e-3);
    CHECK(r.checked >= r.skipped * 4);
  }
}

TEST_CASE("loss is non-negative up to the log floor") {
  for (std::uint64_t seed = 100; seed < 130; ++seed) {
    const auto c = oracle::random_grad_case(seed, 3, 4);
    CHECK(loss_and_grad(c.params, c.image, c.target).first >= -2e-12);
  }
}

TEST_CASE("permuting head classes and targets together keeps the loss") {
  const auto c = oracle::random_grad_case(77, 3, 4);
  const Eigen::Vector4i perm(2, 0, 3, 1);
  auto params = c.params;
  auto target = c.target;
  for (int k = 0; k < 4; ++k) {
    params.head_w.row(perm(k)) = c.params.head_w.row(k);
    params.head_b(perm(k)) = c.params.head_b(k);
    target.targets.row(perm(k)) = c.target.targets.row(k);
  }
  const Real a = loss_and_grad(c.params, c.image, c.target).first;
  const Real b = loss_and_grad(params, c.image, target).first;
  CHECK(std::abs(a - b) <= 1e-10);
}

TEST_CASE("sgd_step linearity") {
  const auto p = init_params<Real>(5, 3, 3);
  const auto g1 = init_params<Real>(6, 3, 3);
  const auto g2 = init_params<Real>(9, 3, 3);
  std::vector<GradientBundle<Real>> zero{SegmentorParams<Real>::zeros(3, 3)};
  CHECK(sgd_step<Real>(p, zero, 0.1) == p);

  std::vector<GradientBundle<Real>> one{g1};
  const auto stepped = sgd_step<Real>(p, one, 1.0);
  CHECK(stepped.flatten() == (p.flatten() - g1.flatten()));

  auto sum = g1;
  sum.conv1_w += g2.conv1_w;
  sum.conv1_b += g2.conv1_b;
  sum.conv2_w += g2.conv2_w;
  sum.conv2_b += g2.conv2_b;
  sum.head_w += g2.head_w;
  sum.head_b += g2.head_b;
  std::vector<GradientBundle<Real>> two{g1, g2}, combined{sum};
  CHECK(sgd_step<Real>(p, two, 0.3) == sgd_step<Real>(p, combined, 0.3));

  CHECK_THROWS(sgd_step<Real>(p, one, 0.0));
  std::vector<GradientBundle<Real>> wrong{init_params<Real>(1, 4, 3)};
  CHECK_THROWS(sgd_step<Real>(p, wrong, 0.1));
}

TEST_CASE("SGD overfits a single sample") {
  const auto scene = generate_scene(2, 32, 32, ShapeParams{8, 12});
  const auto image = render(scene, default_source_style(), 3);
  const auto target = one_hot(scene.gt);
  auto params = init_params<Real>(4, 8, 4);
  Real loss = 0;
  for (int step = 0; step < 500; ++step) {
    auto [l, g] = loss_and_grad(params, image, target);
    loss = l;
    std::vector<GradientBundle<Real>> grads{std::move(g)};
    params = sgd_step<Real>(params, grads, 0.5);
  }
  loss = loss_and_grad(params, image, target).first;
  CHECK(loss < 0.05);
}

TEST_CASE("float and double forward agree") {
  const auto p = init_params<Real>(2, 4, 3);
  const auto x = test_image();
  const auto pd = forward(p, x);
  const auto pf = forward(p.cast<float>(), ImageT<float>(x.cast<float>()));
  CHECK((pd.probs.cast<float>() - pf.probs).cwiseAbs().maxCoeff() < 1e-5f);
}

TEST_CASE("snapshot round trip and corruption") {
  const auto p = init_params<Real>(11, 4, 3);
  std::stringstream ss;
  write_snapshot(ss, p);
  const std::string bytes = ss.str();
  CHECK(bytes.size() == 16 + 4 * static_cast<std::size_t>(p.size()));
  std::stringstream in(bytes);
  const auto back = read_snapshot(in);
  CHECK(back == p.cast<float>().cast<Real>());

  std::stringstream truncated(bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS(read_snapshot(truncated));
  std::string bad = bytes;
  bad[0] ^= 0x5a;
  std::stringstream bad_magic(bad);
  CHECK_THROWS(read_snapshot(bad_magic));

  const auto path = (std::filesystem::temp_directory_path() / "act_snapshot_test.bin").string();
  save_snapshot(path, p);
  CHECK(load_snapshot(path) == back);
  std::filesystem::remove(path);
}
