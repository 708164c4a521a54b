#include <doctest.h>

#include <fstream>
#include <set>

#include "msafeb/data.hpp"
#include "msafeb/errors.hpp"
#include "msafeb/feature_file.hpp"
#include "msafeb/image.hpp"
#include "support/fixtures.hpp"

using namespace msafeb;
namespace fs = std::filesystem;

namespace {

std::string error_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    return e.what();
  }
  return {};
}

Image random_image(Rng& rng, std::size_t w, std::size_t h) {
  Image img(w, h);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.below(256));
  return img;
}

/// Balanced or ragged labels over 1x1 images.
Dataset labelled(const std::vector<std::size_t>& per_class) {
  Dataset d;
  d.source = DatasetSource::directory;
  for (std::size_t k = 0; k < per_class.size(); ++k) {
    d.class_names.push_back("c" + std::to_string(k));
    for (std::size_t i = 0; i < per_class[k]; ++i) {
      d.images.emplace_back(1, 1);
      d.labels.push_back(k);
    }
  }
  return d;
}

void check_split_invariants(const Dataset& d, const DatasetSplit& s) {
  std::vector<int> seen(d.size(), 0);
  for (auto i : s.train_indices) ++seen.at(i);
  for (auto i : s.test_indices) ++seen.at(i);
  for (int v : seen) REQUIRE(v == 1);
  std::vector<std::size_t> train_per(d.class_count(), 0);
  for (auto i : s.train_indices) ++train_per[d.labels[i]];
  const auto counts = d.class_counts();
  for (std::size_t k = 0; k < counts.size(); ++k)
    REQUIRE(std::fabs(double(train_per[k]) - s.train_ratio * double(counts[k])) <= 1.0);
}

}  // namespace

TEST_CASE("PPM read/write and image primitives") {
  fixture::TempDir dir("ppm");
  Rng rng(60);
  const Image img = random_image(rng, 5, 3);
  write_ppm(dir / "a.ppm", img);
  CHECK(read_ppm(dir / "a.ppm") == img);

  {
    std::ofstream out(dir / "c.ppm", std::ios::binary);
    out << "P6\n# comment\n2 1\n255\n";
    out.write("\x01\x02\x03\x04\x05\x06", 6);
  }
  const Image c = read_ppm(dir / "c.ppm");
  CHECK(c.width == 2);
  CHECK(c.at(1, 0, 2) == 6);

  {
    std::ofstream out(dir / "gray.ppm", std::ios::binary);
    out << "P5\n2 2\n255\n";
    out.write("\0\0\0\0", 4);
  }
  const std::string msg = error_of([&] { read_ppm(dir / "gray.ppm"); });
  CHECK(msg.find("gray.ppm") != std::string::npos);
  CHECK(msg.find("bad magic") != std::string::npos);
  CHECK_THROWS_AS(read_ppm(dir / "gray.ppm"), FormatError);

  Image flat(7, 5);
  for (std::size_t i = 0; i < flat.pixels.size(); i += 3) {
    flat.pixels[i] = 10;
    flat.pixels[i + 1] = 200;
    flat.pixels[i + 2] = 77;
  }
  for (auto [w, h] : {std::pair{3, 2}, {16, 9}, {7, 5}}) {
    const Image r = resize_bilinear(flat, w, h);
    CHECK(r.width == std::size_t(w));
    for (std::size_t i = 0; i < r.pixels.size(); i += 3) {
      REQUIRE(r.pixels[i] == 10);
      REQUIRE(r.pixels[i + 1] == 200);
      REQUIRE(r.pixels[i + 2] == 77);
    }
  }
  CHECK(flip_horizontal(img).at(0, 1, 2) == img.at(4, 1, 2));
  CHECK_THROWS_AS(crop(img, 3, 0, 3, 1), UsageError);
}

TEST_CASE("directory loader") {
  fixture::TempDir dir("loader");
  Rng rng(61);
  fs::create_directories(dir / "b");
  fs::create_directories(dir / "a");
  for (int i = 0; i < 2; ++i) write_ppm(dir.path() / "a" / ("x" + std::to_string(i) + ".ppm"), random_image(rng, 6, 4));
  for (int i = 0; i < 3; ++i) write_ppm(dir.path() / "b" / ("y" + std::to_string(i) + ".ppm"), random_image(rng, 3, 3));
  std::ofstream(dir.path() / "b" / "notes.txt") << "ignored";
  const Tensor dump = oracle::random_tensor(rng, {1, 3, 4, 4}, 0, 1);
  write_features(dir.path() / "b" / "z.msft", dump);

  const Dataset d = load_image_dataset(dir.path(), 8, 8);
  CHECK(d.size() == 6);
  CHECK(d.labels == std::vector<std::size_t>{0, 0, 1, 1, 1, 1});
  CHECK(d.class_names == std::vector<std::string>{"a", "b"});
  CHECK(d.source == DatasetSource::directory);
  for (const auto& img : d.images) CHECK((img.width == 8 && img.height == 8));

  fs::create_directories(dir / "c");
  CHECK(error_of([&] { load_image_dataset(dir.path(), 8, 8); }).find("empty class directory") != std::string::npos);
  fs::remove(dir / "c");

  std::ofstream(dir.path() / "a" / "broken.ppm") << "P6\n2 2\n255\nxx";
  const std::string msg = error_of([&] { load_image_dataset(dir.path(), 8, 8); });
  CHECK(msg.find("broken.ppm") != std::string::npos);
}

TEST_CASE("synthetic generator") {
  const Dataset d = synth_dataset(4, 200, 64, 64, 7);
  CHECK(d.size() == 800);
  CHECK(d.class_counts() == std::vector<std::size_t>{200, 200, 200, 200});
  CHECK(d.patches.size() == 800);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const Box& b = d.patches[i];
    const double frac = double(b.width * b.height) / (64.0 * 64.0);
    REQUIRE(frac >= 0.25 - 0.02);
    REQUIRE(frac <= 0.50 + 0.02);
    REQUIRE(b.x0 + b.width <= 64);
    REQUIRE(b.y0 + b.height <= 64);
  }
  const Dataset again = synth_dataset(4, 200, 64, 64, 7);
  CHECK(again.images == d.images);
  CHECK(again.labels == d.labels);
  CHECK(synth_dataset(4, 2, 64, 64, 8).images != synth_dataset(4, 2, 64, 64, 7).images);
  CHECK_THROWS_AS(synth_dataset(1, 10, 16, 16, 0), UsageError);
}

TEST_CASE("synthetic classes are separable by an orientation statistic") {
  const Dataset d = synth_dataset(4, 200, 64, 64, 7);
  std::vector<std::array<double, 2>> feats;
  std::vector<std::array<double, 2>> centroid(4, {0.0, 0.0});
  for (std::size_t i = 0; i < d.size(); ++i) {
    feats.push_back(oracle::orientation_feature(d.images[i]));
    centroid[d.labels[i]][0] += feats.back()[0] / 200.0;
    centroid[d.labels[i]][1] += feats.back()[1] / 200.0;
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    std::size_t best = 0;
    double best_d = 1e300;
    for (std::size_t k = 0; k < 4; ++k) {
      const double dd = std::hypot(feats[i][0] - centroid[k][0], feats[i][1] - centroid[k][1]);
      if (dd < best_d) {
        best_d = dd;
        best = k;
      }
    }
    correct += best == d.labels[i];
  }
  const double purity = double(correct) / double(d.size());
  MESSAGE("nearest-centroid purity " << purity);
  CHECK(purity >= 0.90);
}

TEST_CASE("stratified splits") {
  const Dataset two = labelled({50, 50});
  const auto splits = make_splits(two, 0.2, 5, 3);
  REQUIRE(splits.size() == 5);
  for (const auto& s : splits) {
    CHECK(s.train_indices.size() == 20);
    CHECK(s.test_indices.size() == 80);
    std::size_t zeros = 0;
    for (auto i : s.train_indices) zeros += two.labels[i] == 0;
    CHECK(zeros == 10);
  }
  for (std::size_t a = 0; a < 5; ++a) {
    CHECK(splits[a].split_id == a);
    CHECK(splits[a].seed == 3 + a);
    for (std::size_t b = a + 1; b < 5; ++b) CHECK(splits[a].train_indices != splits[b].train_indices);
  }
  CHECK(make_splits(two, 0.2, 2, 3)[1].train_indices == splits[1].train_indices);

  Rng rng(62);
  for (int inst = 0; inst < 50; ++inst) {
    std::vector<std::size_t> per(oracle::extent(rng, 2, 6));
    for (auto& p : per) p = oracle::extent(rng, 2, 40);
    const Dataset d = labelled(per);
    const double ratio = rng.uniform(0.05, 0.95);
    for (const auto& s : make_splits(d, ratio, 3, rng.next_u64())) check_split_invariants(d, s);
  }

  const Dataset tiny = labelled({5, 1});
  CHECK(error_of([&] { make_splits(tiny, 0.5, 1, 0); }).find("'c1'") != std::string::npos);
  CHECK_THROWS_AS(make_splits(two, 1.0, 1, 0), UsageError);
  CHECK_THROWS_AS(make_splits(two, 0.0, 1, 0), UsageError);
}

TEST_CASE("augmentation") {
  Rng rng(63);
  const Image img = random_image(rng, 16, 12);
  AugmentFlags off;
  off.enabled = false;
  Rng a(1);
  CHECK(augment(img, a, off) == img);
  CHECK(flip_horizontal(flip_horizontal(img)) == img);

  for (int inst = 0; inst < 50; ++inst) {
    AugmentFlags f;
    f.hflip = rng.bernoulli(0.5);
    f.random_crop = rng.bernoulli(0.5);
    Rng r(rng.next_u64());
    const Image out = augment(img, r, f);
    CHECK(out.width == img.width);
    CHECK(out.height == img.height);
    CHECK(out.pixels.size() == img.pixels.size());
  }

  // Horizontally constant, vertically increasing ramp.
  Image ramp(20, 20);
  for (std::size_t y = 0; y < 20; ++y)
    for (std::size_t x = 0; x < 20; ++x)
      for (std::size_t c = 0; c < 3; ++c) ramp.at(x, y, c) = static_cast<std::uint8_t>(10 * y + 5);
  AugmentFlags crop_only;
  crop_only.hflip = false;
  for (int inst = 0; inst < 20; ++inst) {
    Rng r(rng.next_u64());
    const Image out = augment(ramp, r, crop_only);
    for (std::size_t y = 1; y < 20; ++y)
      for (std::size_t x = 0; x < 20; ++x) REQUIRE(out.at(x, y, 0) >= out.at(x, y - 1, 0));
  }

  Rng s1(9), s2(9);
  AugmentFlags on;
  CHECK(augment(img, s1, on) == augment(img, s2, on));
}

TEST_CASE("tensor conversion and directory round trip") {
  Image img(2, 1);
  img.at(0, 0, 0) = 0;
  img.at(1, 0, 0) = 255;
  const Tensor t = images_to_tensor(std::vector<Image>{img});
  CHECK(t.dims() == Dims{1, 3, 1, 2});
  CHECK(t.data()[0] == -1.0f);
  CHECK(t.data()[1] == 1.0f);
  CHECK_THROWS_AS(images_to_tensor(std::vector<Image>{img, Image(3, 1)}), ShapeError);

  fixture::TempDir dir("roundtrip");
  const Dataset d = synth_dataset(3, 4, 16, 16, 2);
  const auto paths = save_image_dataset(d, dir.path());
  REQUIRE(paths.size() == d.size());
  const Dataset back = load_image_dataset(dir.path(), 16, 16);
  CHECK(back.images == d.images);
  CHECK(back.labels == d.labels);
  CHECK(back.class_names == d.class_names);
}

TEST_CASE("dataset validation") {
  Dataset d = labelled({2, 2});
  CHECK_NOTHROW(d.validate());
  d.labels.back() = 5;
  CHECK_THROWS_AS(d.validate(), UsageError);
  d = labelled({2, 2});
  d.images[1] = Image(2, 1);
  CHECK_THROWS_AS(d.validate(), UsageError);
}
