#pragma once

// Small model configurations and generators shared by the suites.

#include <atomic>
#include <cstddef>
#include <filesystem>
#include <string>
#include <unistd.h>
#include <vector>

#include "msafeb/msafeb.hpp"
#include "msafeb/model.hpp"
#include "msafeb/params.hpp"
#include "msafeb/rng.hpp"
#include "support/oracles.hpp"

namespace fixture {

/// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("msafeb_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

/// K=8, 4 filters, groups 2: small enough for exhaustive finite differences.
inline msafeb::MsafebConfig reduced_block() {
  msafeb::MsafebConfig c;
  c.input_channels = 8;
  c.branch_filters = 4;
  c.branch_groups = 2;
  c.aspp_branch_channels = 2;
  c.fusion_channels = 8;
  c.attention.reduction_ratio = 4;
  c.attention.spatial_kernel = 3;
  return c;
}

/// Random valid block configuration.
inline msafeb::MsafebConfig random_block(msafeb::Rng& rng) {
  msafeb::MsafebConfig c;
  c.branch_groups = oracle::extent(rng, 1, 4);
  c.input_channels = c.branch_groups * oracle::extent(rng, 1, 4);
  c.branch_filters = c.branch_groups * oracle::extent(rng, 1, 3);
  c.branch_dilation = oracle::extent(rng, 1, 4);
  c.branch_kernels.clear();
  for (std::size_t k = 1; k <= 7; k += 2)
    if (rng.bernoulli(0.6)) c.branch_kernels.push_back(k);
  if (c.branch_kernels.empty()) c.branch_kernels.push_back(3);
  c.aspp_rates = {1};
  const std::size_t extra = rng.below(4);
  for (std::size_t i = 0; i < extra; ++i) c.aspp_rates.push_back(c.aspp_rates.back() + oracle::extent(rng, 1, 6));
  c.aspp_branch_channels = oracle::extent(rng, 1, 3);
  c.fusion_channels = oracle::extent(rng, 1, 9);
  c.attention.variant = static_cast<msafeb::AttentionVariant>(rng.below(3));
  c.attention.reduction_ratio = oracle::extent(rng, 1, 8);
  c.attention.spatial_kernel = 1 + 2 * rng.below(4);
  return c;
}

/// 16x16 input, two backbone stages, K=16 feeding a quarter-width block.
inline msafeb::ModelConfig small_model(bool with_block, std::uint64_t seed = 0) {
  msafeb::ModelConfig m;
  m.backbone.stage_channels = {4, 8};
  m.backbone.out_channels = 16;
  m.backbone.input_height = 16;
  m.backbone.input_width = 16;
  m.msafeb = msafeb::MsafebConfig::desk(16);
  m.msafeb.branch_groups = 4;
  m.n_classes = 3;
  m.with_msafeb = with_block;
  m.seed = seed;
  return m;
}

/// Nonnegative weights of mean 1/fan_in and positive biases: with positive
/// inputs every ReLU stays in its linear regime, so finite differences never
/// straddle a kink. A large bias on the last fused channel makes it the
/// channel max everywhere, so the spatial gate's max never switches channel.
/// BN parameters keep their initial values.
inline void kink_free(msafeb::ParameterSet& params, msafeb::Rng& rng) {
  for (auto& p : params.entries()) {
    if (!p.learnable || p.name.find(".bn.") != std::string::npos) continue;
    const msafeb::Dims& d = p.value.dims();
    auto v = p.value.mutable_data();
    if (p.name.find(".fusion.bias") != std::string::npos) {
      for (auto& x : v) x = float(rng.uniform(0.05, 0.3));
      v.back() = 3.0f;
    } else if (d.size() == 1) {
      for (auto& x : v) x = float(rng.uniform(0.05, 0.3));
    } else {
      const double fan = d.size() == 4 ? double(d[1] * d[2] * d[3]) : double(d[0]);
      for (auto& x : v) x = float(rng.uniform(0.0, 2.0 / fan));
    }
  }
}

}  // namespace fixture
