#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "msafeb/image.hpp"
#include "msafeb/rng.hpp"
#include "msafeb/tensor.hpp"

namespace msafeb {

struct Box {
  std::size_t x0 = 0, y0 = 0, width = 0, height = 0;
  bool contains(std::size_t x, std::size_t y) const {
    return x >= x0 && x < x0 + width && y >= y0 && y < y0 + height;
  }
};

enum class DatasetSource { directory, synthetic };

struct Dataset {
  std::vector<Image> images;
  std::vector<std::size_t> labels;
  std::vector<std::string> class_names;
  DatasetSource source = DatasetSource::synthetic;
  /// Planted-pattern boxes, one per image; only for synthetic data.
  std::vector<Box> patches;

  std::size_t size() const { return images.size(); }
  std::size_t class_count() const { return class_names.size(); }
  std::vector<std::size_t> class_counts() const;
  /// Throws UsageError if labels/images disagree or dimensions differ.
  void validate() const;
};

/// Class-per-subdirectory layout: root/<class>/<image>.ppm. Classes are
/// ranked by lexicographic directory name; images are resized to the target.
Dataset load_image_dataset(const std::filesystem::path& root, std::size_t width,
                           std::size_t height);

/// Writes a dataset back out in the directory layout. Returns the file
/// paths relative to root, in sample order.
std::vector<std::filesystem::path> save_image_dataset(const Dataset& data, const std::filesystem::path& root);

/// Oriented sinusoidal gratings (orientation k * 180deg / n_classes) inside
/// a random patch covering 25-50% of the image, over speckle noise.
Dataset synth_dataset(std::size_t n_classes, std::size_t per_class, std::size_t width,
                      std::size_t height, std::uint64_t seed);

struct DatasetSplit {
  std::size_t split_id = 0;
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> test_indices;
  double train_ratio = 0.5;
  std::uint64_t seed = 0;
};

/// Stratified split of `indices` (defaults to the whole dataset): per class,
/// round(ratio * count) samples go to train, at least one on each side.
DatasetSplit stratified_split(const Dataset& data, std::span<const std::size_t> indices,
                              double train_ratio, std::uint64_t seed);

/// n_splits stratified random splits; split k uses seed + k.
std::vector<DatasetSplit> make_splits(const Dataset& data, double train_ratio,
                                      std::size_t n_splits, std::uint64_t seed);

struct AugmentFlags {
  bool enabled = true;
  bool hflip = true;
  bool random_crop = true;
  double crop_fraction = 0.875;
};

/// Random horizontal flip (p = 0.5) and random crop resized back to the
/// original size. Identity when disabled.
Image augment(const Image& image, Rng& rng, const AugmentFlags& flags);

/// Stacks images into N x 3 x H x W, mapping [0, 255] to [-1, 1].
Tensor images_to_tensor(std::span<const Image> images);
Tensor batch_tensor(const Dataset& data, std::span<const std::size_t> indices);

}  // namespace msafeb
