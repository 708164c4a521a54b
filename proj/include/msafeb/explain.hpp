#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "msafeb/image.hpp"
#include "msafeb/model.hpp"

namespace msafeb {

struct GradCamMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> values;  // row-major, in [0, 1]
  std::size_t target_class = 0;
  std::string target_layer = "E";
  std::size_t input_height = 0;
  std::size_t input_width = 0;

  float at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
};

/// Core combination step on one activation A (C x H x W) and its gradient:
/// ReLU(sum_c mean(dA_c) * A_c), divided by its maximum. An identically
/// zero map stays zero.
std::vector<float> grad_cam_combine(std::span<const float> activation,
                                    std::span<const float> gradient, std::size_t channels,
                                    std::size_t height, std::size_t width);

/// Grad-CAM of target_class at a named stage (see Model::stage_names()).
/// The image is resized to the model input when needed. Throws UsageError
/// for an unknown stage (listing the valid ones), a class out of range, or
/// a stage that is not rank 4.
GradCamMap grad_cam(Model& model, const Image& image, std::size_t target_class,
                    const std::string& layer = "E");

/// Bilinear resampling of the map to width x height (half-pixel centers).
std::vector<float> upsample_map(const GradCamMap& map, std::size_t width, std::size_t height);

/// Blue-to-red ramp of the upsampled map blended at alpha 0.5 over the
/// grayscale image.
Image overlay_heatmap(const GradCamMap& map, const Image& image);

/// Writes the overlay as PPM and, optionally, the raw map as a
/// 1 x 1 x H x W feature file.
void render_heatmap(const GradCamMap& map, const Image& image,
                    const std::filesystem::path& out_path,
                    const std::optional<std::filesystem::path>& raw_map_path = std::nullopt);

}  // namespace msafeb
