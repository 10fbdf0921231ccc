#include "act/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace act {
namespace {

using BoolGrid = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using DistGrid = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void check_same_shape(const LabelMask& a, const LabelMask& b) {
  if (a.height() != b.height() || a.width() != b.width())
    throw std::invalid_argument("mask dimensions differ");
}

BoolGrid membership(const LabelMask& mask, const std::set<int>& class_set) {
  BoolGrid out(mask.height(), mask.width());
  for (Index n = 0; n < mask.pixels(); ++n) out.data()[n] = class_set.count(mask[n]) > 0;
  return out;
}

/// Lower envelope of parabolas (q - p)^2 + f[p] sampled at integer q.
void distance_1d(const std::vector<Real>& f, std::vector<Real>& d, std::vector<Index>& v,
                 std::vector<Real>& z) {
  constexpr Real inf = std::numeric_limits<Real>::infinity();
  const auto n = static_cast<Index>(f.size());
  auto intersect = [&](Index q, Index p) {
    return ((f[q] + Real(q * q)) - (f[p] + Real(p * p))) / Real(2 * q - 2 * p);
  };
  Index k = -1;
  for (Index q = 0; q < n; ++q) {
    if (f[q] == inf) continue;
    Real s = 0;
    while (k >= 0 && (s = intersect(q, v[k])) <= z[k]) --k;
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -inf;
      z[1] = inf;
    } else {
      ++k;
      v[k] = q;
      z[k] = s;
      z[k + 1] = inf;
    }
  }
  if (k < 0) {
    std::fill(d.begin(), d.end(), inf);
    return;
  }
  k = 0;
  for (Index q = 0; q < n; ++q) {
    while (z[k + 1] < Real(q)) ++k;
    const Real dq = Real(q - v[k]);
    d[q] = dq * dq + f[v[k]];
  }
}

Real directed_max(const BoolGrid& from, const DistGrid& to_sq) {
  Real worst = 0;
  for (Index n = 0; n < from.size(); ++n)
    if (from.data()[n]) worst = std::max(worst, to_sq.data()[n]);
  return worst;
}

}  // namespace

const ClassMetrics& RunReport::whole() const {
  for (const auto& m : final_metrics)
    if (m.class_id == kWholeForeground) return m;
  throw std::logic_error("report has no whole-foreground metrics");
}

Real dsc(const LabelMask& pred, const LabelMask& gt, const std::set<int>& class_set) {
  check_same_shape(pred, gt);
  Index a = 0, b = 0, both = 0;
  for (Index n = 0; n < pred.pixels(); ++n) {
    const bool in_a = class_set.count(pred[n]) > 0;
    const bool in_b = class_set.count(gt[n]) > 0;
    a += in_a;
    b += in_b;
    both += in_a && in_b;
  }
  if (a + b == 0) return 1.0;
  return 2.0 * static_cast<Real>(both) / static_cast<Real>(a + b);
}

Real empty_set_distance(Index height, Index width) {
  return std::sqrt(static_cast<Real>(height * height + width * width));
}

DistGrid squared_distance_transform(const BoolGrid& mask) {
  constexpr Real inf = std::numeric_limits<Real>::infinity();
  const Index h = mask.rows();
  const Index w = mask.cols();
  DistGrid out(h, w);
  const Index len = std::max(h, w);
  std::vector<Real> f, d;
  std::vector<Index> v(static_cast<std::size_t>(len));
  std::vector<Real> z(static_cast<std::size_t>(len) + 1);

  // Columns first, then rows over the column result.
  f.resize(static_cast<std::size_t>(h));
  d.resize(static_cast<std::size_t>(h));
  for (Index x = 0; x < w; ++x) {
    for (Index y = 0; y < h; ++y) f[static_cast<std::size_t>(y)] = mask(y, x) ? 0.0 : inf;
    distance_1d(f, d, v, z);
    for (Index y = 0; y < h; ++y) out(y, x) = d[static_cast<std::size_t>(y)];
  }
  f.resize(static_cast<std::size_t>(w));
  d.resize(static_cast<std::size_t>(w));
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) f[static_cast<std::size_t>(x)] = out(y, x);
    distance_1d(f, d, v, z);
    for (Index x = 0; x < w; ++x) out(y, x) = d[static_cast<std::size_t>(x)];
  }
  return out;
}

Real hausdorff(const LabelMask& pred, const LabelMask& gt, const std::set<int>& class_set) {
  check_same_shape(pred, gt);
  const BoolGrid a = membership(pred, class_set);
  const BoolGrid b = membership(gt, class_set);
  const bool a_empty = !a.any();
  const bool b_empty = !b.any();
  if (a_empty && b_empty) return 0.0;
  if (a_empty || b_empty) return empty_set_distance(pred.height(), pred.width());
  const Real forward = directed_max(a, squared_distance_transform(b));
  const Real backward = directed_max(b, squared_distance_transform(a));
  return std::sqrt(std::max(forward, backward));
}

std::vector<ClassMetrics> mask_metrics(const LabelMask& pred, const LabelMask& gt) {
  check_same_shape(pred, gt);
  std::vector<ClassMetrics> out;
  std::set<int> foreground;
  for (int c = 1; c < gt.num_classes; ++c) {
    foreground.insert(c);
    out.push_back({c, dsc(pred, gt, {c}), hausdorff(pred, gt, {c})});
  }
  out.push_back({kWholeForeground, dsc(pred, gt, foreground), hausdorff(pred, gt, foreground)});
  return out;
}

std::vector<ClassMetrics> evaluate(const SegmentorParams<Real>& params,
                                   std::span<const LabeledSample> test) {
  if (test.empty()) throw std::invalid_argument("evaluation set is empty");
  std::vector<ClassMetrics> sum;
  for (const auto& sample : test) {
    const auto metrics = mask_metrics(argmax_per_pixel(forward(params, sample.image)), sample.mask);
    if (sum.empty()) {
      sum = metrics;
      continue;
    }
    for (std::size_t i = 0; i < sum.size(); ++i) {
      sum[i].dsc += metrics[i].dsc;
      sum[i].hd += metrics[i].hd;
    }
  }
  for (auto& m : sum) {
    m.dsc /= static_cast<Real>(test.size());
    m.hd /= static_cast<Real>(test.size());
  }
  return sum;
}

std::string class_label(int class_id) {
  return class_id == kWholeForeground ? "whole" : std::to_string(class_id);
}

const SummaryRow& Summary::find(const std::string& metric, const std::string& label) const {
  for (const auto& row : rows)
    if (row.metric == metric && row.class_label == label) return row;
  throw std::out_of_range("summary has no row " + metric + "/" + label);
}

Summary aggregate(std::span<const RunReport> reports) {
  if (reports.empty()) throw std::invalid_argument("aggregate needs at least one report");
  const RunReport& first = reports.front();
  for (const auto& r : reports) {
    if (r.mode != first.mode || r.config != first.config)
      throw std::invalid_argument("cannot aggregate reports with heterogeneous configs");
    if (r.final_metrics.size() != first.final_metrics.size())
      throw std::invalid_argument("cannot aggregate reports with different metric layouts");
    for (std::size_t i = 0; i < r.final_metrics.size(); ++i)
      if (r.final_metrics[i].class_id != first.final_metrics[i].class_id)
        throw std::invalid_argument("cannot aggregate reports with different metric layouts");
  }

  const auto count = static_cast<Real>(reports.size());
  auto moments = [&](auto pick) {
    Real mean = 0;
    for (const auto& r : reports) mean += pick(r);
    mean /= count;
    Real var = 0;
    for (const auto& r : reports) var += (pick(r) - mean) * (pick(r) - mean);
    return std::pair{mean, std::sqrt(var / count)};
  };

  Summary summary{first.mode, {}};
  for (std::size_t i = 0; i < first.final_metrics.size(); ++i) {
    const std::string label = class_label(first.final_metrics[i].class_id);
    const auto [dsc_mean, dsc_std] = moments([i](const RunReport& r) { return r.final_metrics[i].dsc; });
    const auto [hd_mean, hd_std] = moments([i](const RunReport& r) { return r.final_metrics[i].hd; });
    summary.rows.push_back({"dsc", label, dsc_mean, dsc_std});
    summary.rows.push_back({"hd", label, hd_mean, hd_std});
  }
  return summary;
}

}  // namespace act
