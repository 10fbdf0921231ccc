#include "act/segmentor.hpp"

#include <array>
#include <bit>
#include <fstream>
#include <istream>
#include <ostream>
#include <vector>

namespace act {
namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> bytes{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                                  static_cast<char>((v >> 16) & 0xff),
                                  static_cast<char>((v >> 24) & 0xff)};
  out.write(bytes.data(), 4);
}

std::uint32_t get_u32(std::istream& in) {
  std::array<unsigned char, 4> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 4)) throw std::runtime_error("truncated snapshot");
  return std::uint32_t{b[0]} | (std::uint32_t{b[1]} << 8) | (std::uint32_t{b[2]} << 16) |
         (std::uint32_t{b[3]} << 24);
}

}  // namespace

void write_snapshot(std::ostream& out, const SegmentorParams<Real>& params) {
  put_u32(out, kSnapshotMagic);
  put_u32(out, static_cast<std::uint32_t>(params.features()));
  put_u32(out, static_cast<std::uint32_t>(params.num_classes()));
  put_u32(out, static_cast<std::uint32_t>(params.size()));
  params.for_each_block([&](const Real* data, Index n) {
    for (Index i = 0; i < n; ++i) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(data[i])));
  });
  if (!out) throw std::runtime_error("failed writing snapshot");
}

SegmentorParams<Real> read_snapshot(std::istream& in) {
  if (get_u32(in) != kSnapshotMagic) throw std::runtime_error("not a segmentor snapshot (bad magic)");
  const auto features = static_cast<int>(get_u32(in));
  const auto classes = static_cast<int>(get_u32(in));
  const auto count = get_u32(in);
  if (features < 1 || classes < 2) throw std::runtime_error("snapshot header has invalid F or C");
  auto params = SegmentorParams<Real>::zeros(features, classes);
  if (count != params.size()) throw std::runtime_error("snapshot count does not match F and C");
  params.for_each_block([&](Real* data, Index n) {
    for (Index i = 0; i < n; ++i) data[i] = std::bit_cast<float>(get_u32(in));
  });
  return params;
}

void save_snapshot(const std::string& path, const SegmentorParams<Real>& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  write_snapshot(out, params);
}

SegmentorParams<Real> load_snapshot(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return read_snapshot(in);
}

}  // namespace act
