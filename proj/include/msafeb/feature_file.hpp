#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>

#include "msafeb/tensor.hpp"

namespace msafeb {

// FeatureFile layout, all integers and floats little-endian:
//   "MSFT" | u32 version | u32 rank | u32 dims[rank] | f32 payload[prod(dims)]

inline constexpr char kFeatureMagic[4] = {'M', 'S', 'F', 'T'};
inline constexpr std::uint32_t kFeatureVersion = 1;

/// Writes one tensor block (any rank 1..4) to a stream.
void write_tensor_block(std::ostream& out, const Tensor& t);

/// Reads one tensor block. `what` names the block in error messages.
/// Throws FormatError on bad magic, version, rank, or short payload.
Tensor read_tensor_block(std::istream& in, const std::string& what);

/// Rank-4 (N, C, H, W) feature batches.
void write_features(const std::filesystem::path& path, const Tensor& batch);
Tensor read_features(const std::filesystem::path& path);

void write_u32(std::ostream& out, std::uint32_t v);
std::uint32_t read_u32(std::istream& in, const std::string& what);

}  // namespace msafeb
