#include <doctest.h>

#include <cstring>
#include <fstream>
#include <limits>

#include "msafeb/backbone.hpp"
#include "msafeb/checkpoint.hpp"
#include "msafeb/errors.hpp"
#include "msafeb/feature_file.hpp"
#include "msafeb/grad_check.hpp"
#include "msafeb/model.hpp"
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

std::vector<char> bytes_of(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& p, const std::vector<char>& b) {
  std::ofstream out(p, std::ios::binary);
  out.write(b.data(), static_cast<std::streamsize>(b.size()));
}

bool same_bits(const Tensor& a, const Tensor& b) {
  return a.dims() == b.dims() &&
         std::memcmp(a.data().data(), b.data().data(), 4 * a.numel()) == 0;
}

}  // namespace

TEST_CASE("backbone output geometry") {
  Rng rng(50);
  ParameterSet params;
  Backbone desk(BackboneConfig{}, params, "backbone", rng);
  CHECK(desk.forward(oracle::random_tensor(rng, {2, 3, 64, 64}), Mode::train).dims() == Dims{2, 64, 8, 8});

  BackboneConfig full;
  full.out_channels = 1920;
  full.input_height = 56;
  full.input_width = 56;
  ParameterSet pp;
  Backbone wide(full, pp, "backbone", rng);
  CHECK(wide.forward(oracle::random_tensor(rng, {1, 3, 56, 56}), Mode::eval).dims() == Dims{1, 1920, 7, 7});

  BackboneConfig odd;
  odd.input_height = 60;
  ParameterSet po;
  CHECK_THROWS_AS(Backbone(odd, po, "backbone", rng), ConfigError);
  CHECK_THROWS_AS(desk.forward(oracle::random_tensor(rng, {1, 3, 32, 32}), Mode::eval), UsageError);
}

TEST_CASE("backbone with zero weights yields zero features") {
  Rng rng(51);
  ParameterSet params;
  Backbone b(BackboneConfig{}, params, "backbone", rng);
  for (auto& p : params.entries())
    if (p.name.find(".bn.") == std::string::npos)
      for (auto& v : p.value.mutable_data()) v = 0.0f;
  const Tensor y = b.forward(oracle::random_tensor(rng, {2, 3, 64, 64}), Mode::train);
  for (float v : y.data()) REQUIRE(v == 0.0f);
}

TEST_CASE("backbone is deterministic under a fixed seed and differentiable") {
  auto features = [](std::uint64_t seed) {
    Rng rng(seed);
    ParameterSet params;
    BackboneConfig c;
    c.input_height = c.input_width = 16;
    Backbone b(c, params, "backbone", rng);
    Rng data(7);
    const Tensor y = b.forward(oracle::random_tensor(data, {2, 3, 16, 16}), Mode::train);
    return std::vector<float>(y.data().begin(), y.data().end());
  };
  CHECK(features(3) == features(3));
  CHECK(features(3) != features(4));

  Rng rng(52);
  ParameterSet params;
  BackboneConfig c;
  c.stage_channels = {4, 4};
  c.out_channels = 4;
  c.input_height = c.input_width = 8;
  Backbone b(c, params, "backbone", rng);
  const Tensor x = oracle::random_tensor(rng, {2, 3, 8, 8});
  const std::uint64_t probe = rng.next_u64();
  CHECK(grad_check([&](const Tensor& t) { return oracle::probe_sum(b.forward(t, Mode::train), probe); }, x) < 1e-3);
}

TEST_CASE("feature file round trip and corruption") {
  fixture::TempDir dir("features");
  Rng rng(53);
  for (int inst = 0; inst < 20; ++inst) {
    const Dims d{oracle::extent(rng, 1, 3), oracle::extent(rng, 1, 5), oracle::extent(rng, 1, 4),
                 oracle::extent(rng, 1, 4)};
    std::vector<float> v = oracle::random_values(rng, product(d), -1e6, 1e6);
    v[0] = -0.0f;
    if (v.size() > 1) v[1] = std::numeric_limits<float>::denorm_min();
    const Tensor t = Tensor::create(d, v);
    write_features(dir / "f.msft", t);
    CHECK(same_bits(read_features(dir / "f.msft"), t));
  }

  const Tensor t = oracle::random_tensor(rng, {2, 4, 3, 3});
  write_features(dir / "good.msft", t);
  const auto good = bytes_of(dir / "good.msft");
  CHECK(good.size() == 4 + 4 + 4 + 16 + 4 * 72);
  CHECK(std::string(good.data(), 4) == "MSFT");

  auto magic = good;
  std::copy_n("XXXX", 4, magic.begin());
  write_bytes(dir / "magic.msft", magic);
  CHECK(error_of([&] { read_features(dir / "magic.msft"); }).find("bad magic") != std::string::npos);

  auto shortp = good;
  shortp.resize(good.size() - 4);
  write_bytes(dir / "short.msft", shortp);
  const std::string msg = error_of([&] { read_features(dir / "short.msft"); });
  CHECK(msg.find("payload length mismatch: expected 288 bytes") != std::string::npos);
  CHECK_THROWS_AS(read_features(dir / "short.msft"), FormatError);

  auto version = good;
  version[4] = 9;
  write_bytes(dir / "version.msft", version);
  CHECK(error_of([&] { read_features(dir / "version.msft"); }).find("version") != std::string::npos);

  CHECK_THROWS_AS(write_features(dir / "rank2.msft", Tensor::zeros({2, 2})), ShapeError);
  CHECK_THROWS_AS(read_features(dir / "missing.msft"), FormatError);
}

TEST_CASE("model assembly") {
  ModelConfig full;
  full.msafeb = MsafebConfig{};
  CHECK(full.classifier_inputs() == 1920);
  ModelConfig without;
  without.with_msafeb = false;
  CHECK(without.classifier_inputs() == 64);

  ModelConfig bad;
  bad.msafeb = MsafebConfig::desk(32);
  CHECK_THROWS_AS(assemble_model(bad), ConfigError);

  auto a = assemble_model(fixture::small_model(true, 5));
  auto b = assemble_model(fixture::small_model(true, 5));
  CHECK(a->params().snapshot() == b->params().snapshot());
  auto c = assemble_model(fixture::small_model(true, 6));
  CHECK(a->params().snapshot() != c->params().snapshot());

  Rng rng(54);
  const Tensor images = oracle::random_tensor(rng, {2, 3, 16, 16});
  const ModelOutputs out = a->forward(images, Mode::eval);
  CHECK(out.logits.dims() == Dims{2, 3});
  CHECK(out.features.dims() == Dims{2, 16});
  CHECK(a->stage_names() == std::vector<std::string>{"I", "C1", "C2", "C3", "D1", "D2", "D3", "E"});
  CHECK(out.stage("E") != nullptr);
  CHECK_THROWS_AS(a->forward(images, Mode::train), UsageError);

  auto plain = assemble_model(fixture::small_model(false));
  const ModelOutputs po = plain->forward(images, Mode::eval);
  CHECK(po.features.dims() == Dims{2, 16});
  CHECK(plain->stage_names() == std::vector<std::string>{"I"});
  CHECK(po.stage("E") == nullptr);

  ModelConfig frozen = fixture::small_model(true);
  frozen.freeze_backbone = true;
  auto f = assemble_model(frozen);
  for (const auto& p : f->params().entries())
    CHECK(p.value.requires_grad() == (p.learnable && p.name.rfind("backbone.", 0) != 0));
}

TEST_CASE("checkpoint round trip and mismatches") {
  fixture::TempDir dir("ckpt");
  auto a = assemble_model(fixture::small_model(true, 1));
  save_checkpoint(a->params(), dir / "a.ckpt");
  auto b = assemble_model(fixture::small_model(true, 2));
  load_checkpoint(b->params(), dir / "a.ckpt");
  const auto& ea = a->params().entries();
  const auto& eb = b->params().entries();
  REQUIRE(ea.size() == eb.size());
  for (std::size_t i = 0; i < ea.size(); ++i) CHECK(same_bits(ea[i].value, eb[i].value));

  const NamedTensors raw = read_checkpoint(dir / "a.ckpt");
  REQUIRE(raw.size() == ea.size());
  for (std::size_t i = 0; i < raw.size(); ++i) CHECK(raw[i].first == ea[i].name);

  auto plain = assemble_model(fixture::small_model(false));
  const auto before = plain->params().snapshot();
  const std::string msg = error_of([&] { load_checkpoint(plain->params(), dir / "a.ckpt"); });
  CHECK(msg.find("stage") != std::string::npos);
  CHECK_THROWS_AS(load_checkpoint(plain->params(), dir / "a.ckpt"), FormatError);
  CHECK(plain->params().snapshot() == before);

  ModelConfig wider = fixture::small_model(true, 1);
  wider.n_classes = 4;
  auto w = assemble_model(wider);
  CHECK(error_of([&] { load_checkpoint(w->params(), dir / "a.ckpt"); }).find("classifier.weight") !=
        std::string::npos);

  // One float short at the end of the last stage.
  auto bytes = bytes_of(dir / "a.ckpt");
  bytes.resize(bytes.size() - 4);
  write_bytes(dir / "short.ckpt", bytes);
  const std::string bad = error_of([&] { read_checkpoint(dir / "short.ckpt"); });
  CHECK(bad.find("stage '" + ea.back().name + "'") != std::string::npos);
  CHECK(bad.find("payload length mismatch") != std::string::npos);

  auto magic = bytes_of(dir / "a.ckpt");
  magic[0] = 'X';
  write_bytes(dir / "magic.ckpt", magic);
  CHECK(error_of([&] { read_checkpoint(dir / "magic.ckpt"); }).find("bad magic") != std::string::npos);
}
