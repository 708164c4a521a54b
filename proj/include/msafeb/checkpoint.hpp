#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "msafeb/params.hpp"

namespace msafeb {

// Checkpoint layout (little-endian):
//   "MSCK" | u32 version | u32 stage count |
//   per stage: u32 name length | name bytes | tensor block (FeatureFile layout)
// Stages are the model's parameters and batch-norm buffers in registration order.

inline constexpr char kCheckpointMagic[4] = {'M', 'S', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

void save_checkpoint(const ParameterSet& params, const std::filesystem::path& path);

/// Raw stages in file order.
NamedTensors read_checkpoint(const std::filesystem::path& path);

/// Loads into an existing parameter set. Stage names, order and shapes must
/// match exactly; the error names the first offending stage. The target is
/// untouched when validation fails.
void load_checkpoint(ParameterSet& params, const std::filesystem::path& path);

}  // namespace msafeb
