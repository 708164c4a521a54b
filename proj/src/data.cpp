#include "msafeb/data.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>

#include "msafeb/errors.hpp"
#include "msafeb/feature_file.hpp"

namespace msafeb {

namespace fs = std::filesystem;

std::vector<std::size_t> Dataset::class_counts() const {
  std::vector<std::size_t> counts(class_count(), 0);
  for (auto l : labels) ++counts.at(l);
  return counts;
}

void Dataset::validate() const {
  if (images.size() != labels.size()) {
    throw UsageError("dataset: " + std::to_string(images.size()) + " images but " +
                     std::to_string(labels.size()) + " labels");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= class_count()) {
      throw UsageError("dataset: label " + std::to_string(labels[i]) + " of sample " +
                       std::to_string(i) + " exceeds class count");
    }
    if (images[i].width != images[0].width || images[i].height != images[0].height) {
      throw UsageError("dataset: sample " + std::to_string(i) + " has different dimensions");
    }
  }
  if (!patches.empty() && patches.size() != images.size()) {
    throw UsageError("dataset: patch metadata does not cover every image");
  }
}

namespace {

Image load_one(const fs::path& path) {
  if (path.extension() == ".msft") {
    // Raw float dump: (1, 3, H, W) with values in [0, 1].
    const Tensor t = read_features(path);
    if (t.dim(0) != 1 || t.dim(1) != 3) {
      throw FormatError(path.string() + ": expected a 1 x 3 x H x W image dump");
    }
    const std::size_t h = t.dim(2), w = t.dim(3);
    Image img(w, h);
    auto v = t.data();
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const float f = std::clamp(v[(c * h + y) * w + x], 0.0f, 1.0f);
          img.at(x, y, c) = static_cast<std::uint8_t>(std::lround(f * 255.0f));
        }
    return img;
  }
  return read_ppm(path);
}

std::string class_name(std::size_t k, std::size_t n_classes) {
  const std::size_t width = std::to_string(n_classes - 1).size();
  std::string digits = std::to_string(k);
  return "class_" + std::string(width - digits.size(), '0') + digits;
}

}  // namespace

Dataset load_image_dataset(const fs::path& root, std::size_t width, std::size_t height) {
  if (!fs::is_directory(root)) throw FormatError("not a directory: " + root.string());
  std::vector<fs::path> class_dirs;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory()) class_dirs.push_back(e.path());
  }
  std::sort(class_dirs.begin(), class_dirs.end(),
            [](const fs::path& a, const fs::path& b) { return a.filename() < b.filename(); });
  if (class_dirs.size() < 2) {
    throw FormatError(root.string() + ": need at least 2 class subdirectories, found " +
                      std::to_string(class_dirs.size()));
  }
  Dataset data;
  data.source = DatasetSource::directory;
  for (std::size_t k = 0; k < class_dirs.size(); ++k) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(class_dirs[k])) {
      const auto ext = e.path().extension();
      if (e.is_regular_file() && (ext == ".ppm" || ext == ".msft")) files.push_back(e.path());
    }
    if (files.empty()) throw FormatError("empty class directory: " + class_dirs[k].string());
    std::sort(files.begin(), files.end());
    data.class_names.push_back(class_dirs[k].filename().string());
    for (const auto& f : files) {
      Image img = load_one(f);
      if (img.width != width || img.height != height) img = resize_bilinear(img, width, height);
      data.images.push_back(std::move(img));
      data.labels.push_back(k);
    }
  }
  return data;
}

std::vector<fs::path> save_image_dataset(const Dataset& data, const fs::path& root) {
  data.validate();
  std::vector<std::size_t> seen(data.class_count(), 0);
  for (const auto& name : data.class_names) fs::create_directories(root / name);
  const std::size_t width = std::to_string(data.size()).size();
  std::vector<fs::path> written;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::size_t k = data.labels[i];
    std::string idx = std::to_string(seen[k]++);
    idx = std::string(width - idx.size(), '0') + idx;
    written.push_back(fs::path(data.class_names[k]) / ("img_" + idx + ".ppm"));
    write_ppm(root / written.back(), data.images[i]);
  }
  return written;
}

Dataset synth_dataset(std::size_t n_classes, std::size_t per_class, std::size_t width,
                      std::size_t height, std::uint64_t seed) {
  if (n_classes < 2) throw UsageError("synth_dataset: need >= 2 classes");
  if (per_class == 0 || width < 4 || height < 4) {
    throw UsageError("synth_dataset: per_class must be >= 1 and images at least 4x4");
  }
  Rng rng(seed);
  Dataset data;
  data.source = DatasetSource::synthetic;
  for (std::size_t k = 0; k < n_classes; ++k) data.class_names.push_back(class_name(k, n_classes));

  const double area = double(width) * double(height);
  for (std::size_t k = 0; k < n_classes; ++k) {
    const double theta = double(k) * std::numbers::pi / double(n_classes);
    const double ct = std::cos(theta), st = std::sin(theta);
    for (std::size_t s = 0; s < per_class; ++s) {
      const double frac = rng.uniform(0.25, 0.5);
      const double aspect = rng.uniform(0.75, 4.0 / 3.0);
      auto bw = static_cast<std::size_t>(std::lround(std::sqrt(frac * area * aspect)));
      bw = std::clamp<std::size_t>(bw, 1, width);
      auto bh = static_cast<std::size_t>(std::lround(frac * area / double(bw)));
      bh = std::clamp<std::size_t>(bh, 1, height);
      Box box{static_cast<std::size_t>(rng.below(width - bw + 1)),
              static_cast<std::size_t>(rng.below(height - bh + 1)), bw, bh};
      const double period = rng.uniform(5.0, 8.0);
      const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      const double tint[3] = {rng.uniform(0.8, 1.2), rng.uniform(0.8, 1.2), rng.uniform(0.8, 1.2)};

      Image img(width, height);
      for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) {
          const double speckle = rng.uniform(0.2, 0.8);
          double v = speckle;
          if (box.contains(x, y)) {
            const double t = 2.0 * std::numbers::pi * (double(x) * ct + double(y) * st) / period;
            v = 0.5 + 0.4 * std::sin(t + phase) + 0.15 * (speckle - 0.5);
          }
          for (std::size_t c = 0; c < 3; ++c) {
            const double p = std::clamp(v * tint[c], 0.0, 1.0);
            img.at(x, y, c) = static_cast<std::uint8_t>(std::lround(p * 255.0));
          }
        }
      }
      data.images.push_back(std::move(img));
      data.labels.push_back(k);
      data.patches.push_back(box);
    }
  }
  return data;
}

DatasetSplit stratified_split(const Dataset& data, std::span<const std::size_t> indices,
                              double train_ratio, std::uint64_t seed) {
  if (!(train_ratio > 0.0 && train_ratio < 1.0)) {
    throw UsageError("train ratio must lie in (0, 1), got " + std::to_string(train_ratio));
  }
  std::map<std::size_t, std::vector<std::size_t>> by_class;
  if (indices.empty()) {
    for (std::size_t i = 0; i < data.size(); ++i) by_class[data.labels.at(i)].push_back(i);
  }
  for (auto i : indices) by_class[data.labels.at(i)].push_back(i);
  Rng rng(seed);
  DatasetSplit split;
  split.train_ratio = train_ratio;
  split.seed = seed;
  for (auto& [label, members] : by_class) {
    if (members.size() < 2) {
      throw UsageError("class '" + data.class_names.at(label) + "' has " +
                       std::to_string(members.size()) + " sample(s); need >= 2 to stratify");
    }
    rng.shuffle(members);
    auto n_train = static_cast<std::size_t>(std::lround(train_ratio * double(members.size())));
    n_train = std::clamp<std::size_t>(n_train, 1, members.size() - 1);
    split.train_indices.insert(split.train_indices.end(), members.begin(), members.begin() + n_train);
    split.test_indices.insert(split.test_indices.end(), members.begin() + n_train, members.end());
  }
  std::sort(split.train_indices.begin(), split.train_indices.end());
  std::sort(split.test_indices.begin(), split.test_indices.end());
  return split;
}

std::vector<DatasetSplit> make_splits(const Dataset& data, double train_ratio,
                                      std::size_t n_splits, std::uint64_t seed) {
  if (n_splits == 0) throw UsageError("make_splits: need at least one split");
  std::vector<std::size_t> all(data.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  std::vector<DatasetSplit> splits;
  for (std::size_t k = 0; k < n_splits; ++k) {
    DatasetSplit s = stratified_split(data, all, train_ratio, seed + k);
    s.split_id = k;
    splits.push_back(std::move(s));
  }
  return splits;
}

Image augment(const Image& image, Rng& rng, const AugmentFlags& flags) {
  if (!flags.enabled) return image;
  Image out = image;
  if (flags.hflip && rng.bernoulli(0.5)) out = flip_horizontal(out);
  if (flags.random_crop) {
    const auto cw = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::lround(flags.crop_fraction * double(out.width))));
    const auto ch = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::lround(flags.crop_fraction * double(out.height))));
    const auto x0 = static_cast<std::size_t>(rng.below(out.width - cw + 1));
    const auto y0 = static_cast<std::size_t>(rng.below(out.height - ch + 1));
    out = resize_bilinear(crop(out, x0, y0, cw, ch), image.width, image.height);
  }
  return out;
}

Tensor images_to_tensor(std::span<const Image> images) {
  if (images.empty()) throw UsageError("images_to_tensor: empty batch");
  const std::size_t w = images[0].width, h = images[0].height;
  std::vector<float> v(images.size() * 3 * h * w);
  for (std::size_t n = 0; n < images.size(); ++n) {
    const Image& img = images[n];
    if (img.width != w || img.height != h) throw ShapeError("images_to_tensor: mixed sizes");
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
          v[((n * 3 + c) * h + y) * w + x] = img.at(x, y, c) / 127.5f - 1.0f;
  }
  return Tensor::create({images.size(), 3, h, w}, std::move(v));
}

Tensor batch_tensor(const Dataset& data, std::span<const std::size_t> indices) {
  std::vector<Image> imgs;
  imgs.reserve(indices.size());
  for (auto i : indices) imgs.push_back(data.images.at(i));
  return images_to_tensor(imgs);
}

}  // namespace msafeb
