#pragma once

#include "act/random.hpp"
#include "act/tensor.hpp"

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>

namespace act {

/// Weights of the per-pixel segmentation network
///
///   conv3x3(1 -> F) -> ReLU -> conv3x3(F -> F) -> ReLU -> conv1x1(F -> C) -> softmax
///
/// Convolution kernels are stored as dense matrices acting on im2col columns.
/// Column `k * Cin + c` of a kernel matrix is tap k = ky * 3 + kx of input
/// channel c.
template <typename Scalar>
struct SegmentorParams {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  Matrix conv1_w;  // F x 9
  Vector conv1_b;  // F
  Matrix conv2_w;  // F x 9F
  Vector conv2_b;  // F
  Matrix head_w;   // C x F
  Vector head_b;   // C

  static SegmentorParams zeros(int features, int classes) {
    SegmentorParams p;
    p.conv1_w.setZero(features, 9);
    p.conv1_b.setZero(features);
    p.conv2_w.setZero(features, 9 * features);
    p.conv2_b.setZero(features);
    p.head_w.setZero(classes, features);
    p.head_b.setZero(classes);
    return p;
  }

  int features() const { return static_cast<int>(conv1_w.rows()); }
  int num_classes() const { return static_cast<int>(head_w.rows()); }

  /// F(9+1) + F(9F+1) + C(F+1)
  Index size() const {
    return conv1_w.size() + conv1_b.size() + conv2_w.size() + conv2_b.size() + head_w.size() +
           head_b.size();
  }

  /// Visits the six parameter blocks in canonical order as contiguous arrays.
  template <typename Fn>
  void for_each_block(Fn&& fn) {
    fn(conv1_w.data(), conv1_w.size());
    fn(conv1_b.data(), conv1_b.size());
    fn(conv2_w.data(), conv2_w.size());
    fn(conv2_b.data(), conv2_b.size());
    fn(head_w.data(), head_w.size());
    fn(head_b.data(), head_b.size());
  }
  template <typename Fn>
  void for_each_block(Fn&& fn) const {
    fn(conv1_w.data(), conv1_w.size());
    fn(conv1_b.data(), conv1_b.size());
    fn(conv2_w.data(), conv2_w.size());
    fn(conv2_b.data(), conv2_b.size());
    fn(head_w.data(), head_w.size());
    fn(head_b.data(), head_b.size());
  }

  bool congruent(const SegmentorParams& other) const {
    return conv1_w.rows() == other.conv1_w.rows() && conv1_w.cols() == other.conv1_w.cols() &&
           conv1_b.size() == other.conv1_b.size() && conv2_w.rows() == other.conv2_w.rows() &&
           conv2_w.cols() == other.conv2_w.cols() && conv2_b.size() == other.conv2_b.size() &&
           head_w.rows() == other.head_w.rows() && head_w.cols() == other.head_w.cols() &&
           head_b.size() == other.head_b.size();
  }

  bool all_finite() const {
    return conv1_w.allFinite() && conv1_b.allFinite() && conv2_w.allFinite() &&
           conv2_b.allFinite() && head_w.allFinite() && head_b.allFinite();
  }

  /// Coordinate access in canonical flat order; used by gradient checks.
  Scalar& coeff(Index i) {
    Scalar* found = nullptr;
    for_each_block([&](Scalar* data, Index n) {
      if (!found && i < n) found = data + i;
      if (!found) i -= n;
    });
    if (!found) throw std::out_of_range("parameter index");
    return *found;
  }

  Vector flatten() const {
    Vector out(size());
    Index offset = 0;
    for_each_block([&](const Scalar* data, Index n) {
      out.segment(offset, n) = Eigen::Map<const Vector>(data, n);
      offset += n;
    });
    return out;
  }

  template <typename Other>
  SegmentorParams<Other> cast() const {
    SegmentorParams<Other> p;
    p.conv1_w = conv1_w.template cast<Other>();
    p.conv1_b = conv1_b.template cast<Other>();
    p.conv2_w = conv2_w.template cast<Other>();
    p.conv2_b = conv2_b.template cast<Other>();
    p.head_w = head_w.template cast<Other>();
    p.head_b = head_b.template cast<Other>();
    return p;
  }

  friend bool operator==(const SegmentorParams& a, const SegmentorParams& b) {
    return a.congruent(b) && a.flatten() == b.flatten();
  }
};

/// dL/dw, laid out exactly like the parameters it differentiates.
template <typename Scalar>
using GradientBundle = SegmentorParams<Scalar>;

template <typename Scalar>
SegmentorParams<Scalar> init_params(std::uint64_t seed, int features, int classes) {
  if (features < 1) throw std::invalid_argument("feature width must be >= 1");
  if (classes < 2) throw std::invalid_argument("need at least 2 classes");
  auto p = SegmentorParams<Scalar>::zeros(features, classes);
  Rng rng(seed);
  auto fill = [&rng](auto& w, double fan_in, double fan_out) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const double a = std::sqrt(6.0 / (fan_in + fan_out));
    for (Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<Scalar>(a * u(rng));
  };
  fill(p.conv1_w, 9.0, 9.0 * features);
  fill(p.conv2_w, 9.0 * features, 9.0 * features);
  fill(p.head_w, features, classes);
  return p;
}

namespace detail {

/// 3x3 same-padded patch extraction: in is Cin x (H*W), out is 9*Cin x (H*W).
template <typename Scalar>
void im2col3x3(const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& in, Index height,
               Index width, Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& out) {
  const Index cin = in.rows();
  const auto bytes = sizeof(Scalar) * static_cast<std::size_t>(cin);
  out.resize(9 * cin, height * width);
  const Scalar* src = in.data();
  Scalar* dst = out.data();
  for (Index y = 0; y < height; ++y) {
    for (Index x = 0; x < width; ++x) {
      Scalar* col = dst + (y * width + x) * 9 * cin;
      for (Index ky = 0; ky < 3; ++ky) {
        const Index yy = y + ky - 1;
        for (Index kx = 0; kx < 3; ++kx) {
          const Index xx = x + kx - 1;
          Scalar* tap = col + (ky * 3 + kx) * cin;
          if (yy < 0 || yy >= height || xx < 0 || xx >= width)
            std::memset(tap, 0, bytes);
          else
            std::memcpy(tap, src + (yy * width + xx) * cin, bytes);
        }
      }
    }
  }
}

/// Adjoint of im2col3x3.
template <typename Scalar>
void col2im3x3(const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& cols, Index cin,
               Index height, Index width,
               Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& out) {
  out.setZero(cin, height * width);
  const Scalar* src = cols.data();
  Scalar* dst = out.data();
  for (Index y = 0; y < height; ++y) {
    for (Index x = 0; x < width; ++x) {
      const Scalar* col = src + (y * width + x) * 9 * cin;
      for (Index ky = 0; ky < 3; ++ky) {
        const Index yy = y + ky - 1;
        if (yy < 0 || yy >= height) continue;
        for (Index kx = 0; kx < 3; ++kx) {
          const Index xx = x + kx - 1;
          if (xx < 0 || xx >= width) continue;
          const Scalar* tap = col + (ky * 3 + kx) * cin;
          Scalar* target = dst + (yy * width + xx) * cin;
          for (Index c = 0; c < cin; ++c) target[c] += tap[c];
        }
      }
    }
  }
}

template <typename Scalar>
struct ForwardCache {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  Matrix cols1;  // 9 x HW
  Matrix z1;     // F x HW
  Matrix a1;     // F x HW
  Matrix cols2;  // 9F x HW
  Matrix z2;     // F x HW
  Matrix a2;     // F x HW
  Matrix logits; // C x HW
  ProbMapT<Scalar> prob;

  // backward temporaries
  Matrix dlogits;
  Matrix dz2;
  Matrix dcols2;
  Matrix dz1;
};

/// Per-thread scratch buffers. Reusing them avoids re-faulting multi-megabyte
/// allocations on every call.
template <typename Scalar>
ForwardCache<Scalar>& workspace() {
  thread_local ForwardCache<Scalar> cache;
  return cache;
}

template <typename Scalar>
void check_forward_inputs(const SegmentorParams<Scalar>& params, const ImageT<Scalar>& x) {
  if (x.rows() < 5 || x.cols() < 5) throw std::invalid_argument("image must be at least 5x5");
  if (!x.allFinite()) throw std::invalid_argument("non-finite image values");
  if (!params.all_finite()) throw std::invalid_argument("non-finite segmentor weights");
}

template <typename Scalar>
void forward_cached(const SegmentorParams<Scalar>& params, const ImageT<Scalar>& x,
                    ForwardCache<Scalar>& cache) {
  using Matrix = typename ForwardCache<Scalar>::Matrix;
  check_forward_inputs(params, x);
  const Index h = x.rows();
  const Index w = x.cols();

  // conv1 taps: a single input channel makes the im2col column a 3x3 patch.
  im2col3x3(Matrix(Eigen::Map<const Matrix>(x.data(), 1, h * w)), h, w, cache.cols1);
  cache.z1.noalias() = params.conv1_w * cache.cols1;
  cache.z1.colwise() += params.conv1_b;
  cache.a1 = cache.z1.cwiseMax(Scalar(0));

  im2col3x3(cache.a1, h, w, cache.cols2);
  cache.z2.noalias() = params.conv2_w * cache.cols2;
  cache.z2.colwise() += params.conv2_b;
  cache.a2 = cache.z2.cwiseMax(Scalar(0));

  cache.logits.noalias() = params.head_w * cache.a2;
  cache.logits.colwise() += params.head_b;
  cache.prob = softmax_per_pixel(cache.logits, h, w);
}

}  // namespace detail

template <typename Scalar>
ProbMapT<Scalar> forward(const SegmentorParams<Scalar>& params, const ImageT<Scalar>& x) {
  auto& cache = detail::workspace<Scalar>();
  detail::forward_cached(params, x, cache);
  return cache.prob;
}

inline constexpr double kLogFloor = 1e-12;

/// Weighted soft cross-entropy and its exact gradient.
///
/// loss = (1 / sum_n w_n) * sum_n w_n * -sum_c t[n][c] * log(p[n][c] + 1e-12)
template <typename Scalar>
std::pair<Scalar, GradientBundle<Scalar>> loss_and_grad(const SegmentorParams<Scalar>& params,
                                                        const ImageT<Scalar>& x,
                                                        const SoftLabelMapT<Scalar>& target) {
  if (target.height != x.rows() || target.width != x.cols() ||
      target.pixels() != x.size() || target.pixel_weights.size() != x.size())
    throw std::invalid_argument("target dimensions do not match image");
  if (target.num_classes() != params.num_classes())
    throw std::invalid_argument("target class count does not match segmentor head");

  const Scalar total_weight = target.pixel_weights.sum();
  if (!(total_weight > Scalar(0))) throw std::invalid_argument("empty supervision");

  auto& cache = detail::workspace<Scalar>();
  detail::forward_cached(params, x, cache);
  const auto& p = cache.prob.probs;
  const Index h = x.rows();
  const Index w = x.cols();
  const Index classes = p.rows();
  const Scalar floor = static_cast<Scalar>(kLogFloor);

  // dL/dlogit for the floored log: with r_c = t_c p_c / (p_c + floor),
  // d/dl_k [-sum_c t_c log(p_c + floor)] = -r_k + p_k * sum_c r_c.
  auto& dlogits = cache.dlogits;
  dlogits.resize(classes, p.cols());
  Scalar loss = 0;
  for (Index n = 0; n < p.cols(); ++n) {
    const Scalar wn = target.pixel_weights(n);
    if (wn == Scalar(0)) {
      dlogits.col(n).setZero();
      continue;
    }
    Scalar ce = 0;
    Scalar rsum = 0;
    for (Index c = 0; c < classes; ++c) {
      const Scalar t = target.targets(c, n);
      const Scalar pc = p(c, n);
      if (t != Scalar(0)) ce -= t * std::log(pc + floor);
      const Scalar r = t * pc / (pc + floor);
      dlogits(c, n) = -r;
      rsum += r;
    }
    loss += wn * ce;
    const Scalar scale = wn / total_weight;
    for (Index c = 0; c < classes; ++c) dlogits(c, n) = scale * (dlogits(c, n) + p(c, n) * rsum);
  }
  loss /= total_weight;

  auto grad = GradientBundle<Scalar>::zeros(params.features(), params.num_classes());
  grad.head_w.noalias() = dlogits * cache.a2.transpose();
  grad.head_b = dlogits.rowwise().sum();

  auto& dz2 = cache.dz2;
  dz2.noalias() = params.head_w.transpose() * dlogits;
  dz2.array() *= (cache.z2.array() > Scalar(0)).template cast<Scalar>();
  grad.conv2_w.noalias() = dz2 * cache.cols2.transpose();
  grad.conv2_b = dz2.rowwise().sum();

  cache.dcols2.noalias() = params.conv2_w.transpose() * dz2;
  auto& dz1 = cache.dz1;
  detail::col2im3x3(cache.dcols2, params.features(), h, w, dz1);
  dz1.array() *= (cache.z1.array() > Scalar(0)).template cast<Scalar>();
  grad.conv1_w.noalias() = dz1 * cache.cols1.transpose();
  grad.conv1_b = dz1.rowwise().sum();

  return {loss, std::move(grad)};
}

/// w <- w - eta * sum(grads). Bundles are summed in index order first.
template <typename Scalar>
SegmentorParams<Scalar> sgd_step(const SegmentorParams<Scalar>& params,
                                 std::span<const GradientBundle<Scalar>> grads, Scalar eta) {
  if (!(eta > Scalar(0))) throw std::invalid_argument("learning rate must be positive");
  auto total = GradientBundle<Scalar>::zeros(params.features(), params.num_classes());
  for (const auto& g : grads) {
    if (!g.congruent(params)) throw std::invalid_argument("gradient bundle shape mismatch");
    total.conv1_w += g.conv1_w;
    total.conv1_b += g.conv1_b;
    total.conv2_w += g.conv2_w;
    total.conv2_b += g.conv2_b;
    total.head_w += g.head_w;
    total.head_b += g.head_b;
  }
  SegmentorParams<Scalar> out = params;
  out.conv1_w -= eta * total.conv1_w;
  out.conv1_b -= eta * total.conv1_b;
  out.conv2_w -= eta * total.conv2_w;
  out.conv2_b -= eta * total.conv2_b;
  out.head_w -= eta * total.head_w;
  out.head_b -= eta * total.head_b;
  return out;
}

// Parameter snapshots: 16-byte header (magic, F, C, count as little-endian
// uint32) followed by `count` little-endian float32 values in block order.
inline constexpr std::uint32_t kSnapshotMagic = 0x50544341;  // "ACTP"

void write_snapshot(std::ostream& out, const SegmentorParams<Real>& params);
SegmentorParams<Real> read_snapshot(std::istream& in);
void save_snapshot(const std::string& path, const SegmentorParams<Real>& params);
SegmentorParams<Real> load_snapshot(const std::string& path);

}  // namespace act
