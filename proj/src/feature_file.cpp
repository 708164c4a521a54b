#include "msafeb/feature_file.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <fstream>
#include <istream>
#include <ostream>
#include <vector>

#include "msafeb/errors.hpp"

namespace msafeb {

void write_u32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                              static_cast<char>((v >> 16) & 0xff),
                              static_cast<char>((v >> 24) & 0xff)};
  out.write(b.data(), 4);
}

std::uint32_t read_u32(std::istream& in, const std::string& what) {
  std::array<unsigned char, 4> b{};
  in.read(reinterpret_cast<char*>(b.data()), 4);
  if (in.gcount() != 4) throw FormatError(what + ": truncated header");
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
         (std::uint32_t(b[3]) << 24);
}

void write_tensor_block(std::ostream& out, const Tensor& t) {
  out.write(kFeatureMagic, 4);
  write_u32(out, kFeatureVersion);
  write_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.dims()) write_u32(out, static_cast<std::uint32_t>(d));
  std::vector<char> payload(4 * t.numel());
  auto v = t.data();
  for (std::size_t i = 0; i < v.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(v[i]);
    for (int k = 0; k < 4; ++k) payload[4 * i + k] = static_cast<char>((bits >> (8 * k)) & 0xff);
  }
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
}

Tensor read_tensor_block(std::istream& in, const std::string& what) {
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() != 4 || !std::equal(magic, magic + 4, kFeatureMagic)) {
    throw FormatError(what + ": bad magic");
  }
  const std::uint32_t version = read_u32(in, what);
  if (version != kFeatureVersion) {
    throw FormatError(what + ": unsupported version " + std::to_string(version));
  }
  const std::uint32_t rank = read_u32(in, what);
  if (rank < 1 || rank > 4) throw FormatError(what + ": bad rank " + std::to_string(rank));
  Dims dims(rank);
  for (auto& d : dims) {
    d = read_u32(in, what);
    if (d == 0) throw FormatError(what + ": zero extent in dims");
  }
  const std::size_t expected = 4 * product(dims);
  std::vector<unsigned char> payload(expected);
  in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(expected));
  const auto got = static_cast<std::size_t>(in.gcount());
  if (got != expected) {
    throw FormatError(what + ": payload length mismatch: expected " + std::to_string(expected) +
                      " bytes, got " + std::to_string(got));
  }
  std::vector<float> values(product(dims));
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::uint32_t bits = std::uint32_t(payload[4 * i]) |
                               (std::uint32_t(payload[4 * i + 1]) << 8) |
                               (std::uint32_t(payload[4 * i + 2]) << 16) |
                               (std::uint32_t(payload[4 * i + 3]) << 24);
    values[i] = std::bit_cast<float>(bits);
  }
  return Tensor::create(std::move(dims), std::move(values));
}

void write_features(const std::filesystem::path& path, const Tensor& batch) {
  if (!batch.defined() || batch.rank() != 4) {
    throw ShapeError("write_features: expected a rank-4 tensor");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  write_tensor_block(out, batch);
  if (!out) throw FormatError("write failed: " + path.string());
}

Tensor read_features(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  Tensor t = read_tensor_block(in, path.string());
  if (t.rank() != 4) {
    throw FormatError(path.string() + ": bad rank " + std::to_string(t.rank()) +
                      " (feature files are rank-4)");
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw FormatError(path.string() + ": payload length mismatch: trailing bytes after " +
                      std::to_string(4 * t.numel()) + " payload bytes");
  }
  return t;
}

}  // namespace msafeb
