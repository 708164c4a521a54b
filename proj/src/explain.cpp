#include "msafeb/explain.hpp"

#include <algorithm>
#include <cmath>

#include "msafeb/data.hpp"
#include "msafeb/errors.hpp"
#include "msafeb/feature_file.hpp"

namespace msafeb {

std::vector<float> grad_cam_combine(std::span<const float> activation,
                                    std::span<const float> gradient, std::size_t channels,
                                    std::size_t height, std::size_t width) {
  const std::size_t plane = height * width;
  if (activation.size() != channels * plane || gradient.size() != channels * plane) {
    throw ShapeError("grad_cam: activation/gradient size does not match C x H x W");
  }
  std::vector<double> raw(plane, 0.0);
  for (std::size_t c = 0; c < channels; ++c) {
    double w = 0.0;
    for (std::size_t i = 0; i < plane; ++i) w += gradient[c * plane + i];
    w /= double(plane);
    if (w == 0.0) continue;
    for (std::size_t i = 0; i < plane; ++i) raw[i] += w * activation[c * plane + i];
  }
  double peak = 0.0;
  for (auto& r : raw) {
    r = std::max(r, 0.0);
    peak = std::max(peak, r);
  }
  std::vector<float> out(plane, 0.0f);
  if (peak > 0.0) {
    for (std::size_t i = 0; i < plane; ++i) out[i] = static_cast<float>(raw[i] / peak);
  }
  return out;
}

GradCamMap grad_cam(Model& model, const Image& image, std::size_t target_class,
                    const std::string& layer) {
  const auto& cfg = model.config();
  if (target_class >= cfg.n_classes) {
    throw UsageError("class " + std::to_string(target_class) + " out of range [0, " +
                     std::to_string(cfg.n_classes) + ")");
  }
  const auto names = model.stage_names();
  if (std::find(names.begin(), names.end(), layer) == names.end()) {
    std::string list;
    for (const auto& n : names) list += (list.empty() ? "" : ", ") + n;
    throw UsageError("unknown stage '" + layer + "'; valid stages: " + list);
  }

  const Image input = (image.width == cfg.backbone.input_width &&
                       image.height == cfg.backbone.input_height)
                          ? image
                          : resize_bilinear(image, cfg.backbone.input_width, cfg.backbone.input_height);
  const Image batch[1] = {input};
  const ModelOutputs out = model.forward(images_to_tensor(batch), Mode::eval);
  const Tensor* a = out.stage(layer);
  if (!a || !a->defined() || a->rank() != 4) {
    throw UsageError("stage '" + layer + "' is not a rank-4 activation");
  }
  if (!a->impl()->needs_grad()) {
    throw UsageError("stage '" + layer + "' has no gradient path (frozen?)");
  }
  Tensor act = *a;
  act.retain_grad();

  std::vector<float> onehot(cfg.n_classes, 0.0f);
  onehot[target_class] = 1.0f;
  const Tensor score = sum(mul(out.logits, Tensor::create({1, cfg.n_classes}, onehot)));
  model.params().clear_grads();
  backward(score);

  GradCamMap map;
  const std::size_t c = act.dim(1);
  map.height = act.dim(2);
  map.width = act.dim(3);
  map.values = grad_cam_combine(act.data(), act.grad(), c, map.height, map.width);
  map.target_class = target_class;
  map.target_layer = layer;
  map.input_height = image.height;
  map.input_width = image.width;
  model.params().clear_grads();
  return map;
}

std::vector<float> upsample_map(const GradCamMap& map, std::size_t width, std::size_t height) {
  std::vector<float> out(width * height);
  const double sx = double(map.width) / double(width);
  const double sy = double(map.height) / double(height);
  for (std::size_t y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, double(map.height - 1));
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, map.height - 1);
    const double ty = fy - double(y0);
    for (std::size_t x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, double(map.width - 1));
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, map.width - 1);
      const double tx = fx - double(x0);
      const double top = map.at(y0, x0) * (1.0 - tx) + map.at(y0, x1) * tx;
      const double bot = map.at(y1, x0) * (1.0 - tx) + map.at(y1, x1) * tx;
      out[y * width + x] = static_cast<float>(top * (1.0 - ty) + bot * ty);
    }
  }
  return out;
}

Image overlay_heatmap(const GradCamMap& map, const Image& image) {
  const std::vector<float> up = upsample_map(map, image.width, image.height);
  const std::vector<float> gray = to_gray(image);
  Image out(image.width, image.height);
  for (std::size_t i = 0; i < up.size(); ++i) {
    const double v = std::clamp(double(up[i]), 0.0, 1.0);
    const double color[3] = {255.0 * v, 0.0, 255.0 * (1.0 - v)};
    for (std::size_t c = 0; c < 3; ++c) {
      const double blended = 0.5 * gray[i] + 0.5 * color[c];
      out.pixels[3 * i + c] = static_cast<std::uint8_t>(std::clamp(std::lround(blended), 0L, 255L));
    }
  }
  return out;
}

void render_heatmap(const GradCamMap& map, const Image& image,
                    const std::filesystem::path& out_path,
                    const std::optional<std::filesystem::path>& raw_map_path) {
  write_ppm(out_path, overlay_heatmap(map, image));
  if (raw_map_path) {
    write_features(*raw_map_path, Tensor::create({1, 1, map.height, map.width}, map.values));
  }
}

}  // namespace msafeb
