#include <doctest.h>

#include <cmath>

#include "msafeb/errors.hpp"
#include "msafeb/grad_check.hpp"
#include "msafeb/msafeb.hpp"
#include "support/fixtures.hpp"

using namespace msafeb;

namespace {

constexpr int kInstances = 20;

void fill(ParameterSet& params, float v, bool include_bn_gamma = true) {
  for (auto& p : params.entries()) {
    if (!p.learnable) continue;
    if (!include_bn_gamma && p.name.find(".bn.") != std::string::npos) continue;
    for (auto& x : p.value.mutable_data()) x = v;
  }
}

bool all_zero(const Tensor& t) {
  for (float v : t.data())
    if (v != 0.0f) return false;
  return true;
}

std::vector<double> per_channel_mean(const Tensor& t) {
  const std::size_t n = t.dim(0), c = t.dim(1), hw = t.dim(2) * t.dim(3);
  std::vector<double> out(n * c, 0.0);
  for (std::size_t p = 0; p < n * c; ++p) {
    for (std::size_t i = 0; i < hw; ++i) out[p] += t.data()[p * hw + i];
    out[p] /= double(hw);
  }
  return out;
}

}  // namespace

TEST_CASE("config invariants and derived extents") {
  const MsafebConfig d;
  CHECK(d.feature_length() == 1920);
  CHECK(d.fusion_input_channels() == 3360);
  CHECK(d.aspp_channels() == 480);
  CHECK_NOTHROW(d.validate());

  MsafebConfig bad = d;
  bad.branch_filters = 484;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = d;
  bad.aspp_rates = {6, 12};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = d;
  bad.aspp_rates = {1, 12, 6};
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  const MsafebConfig desk = MsafebConfig::desk(64);
  CHECK(desk.branch_filters == 16);
  CHECK(desk.aspp_branch_channels == 4);
  CHECK(desk.feature_length() == 64);
}

TEST_CASE("full geometry through the block") {
  Rng rng(30);
  ParameterSet params;
  MsafebBlock block(MsafebConfig{}, params, "msafeb", rng);
  const Tensor i = oracle::random_tensor(rng, {2, 1920, 7, 7});
  const MsafebTrace t = block.forward(i, Mode::train);
  REQUIRE(t.branch.size() == 3);
  for (const auto& c : t.branch) CHECK(c.dims() == Dims{2, 480, 7, 7});
  for (const auto& dd : t.aspp) CHECK(dd.dims() == Dims{2, 480, 7, 7});
  for (const auto& g : t.pooled) CHECK(g.dims() == Dims{2, 480});
  CHECK(t.attended.dims() == Dims{2, 480, 7, 7});
  CHECK(t.aggregated.dims() == Dims{2, 480});
  CHECK(t.features.dims() == Dims{2, 1920});
}

TEST_CASE("shape and ordering contracts on random configurations") {
  Rng rng(31);
  for (int inst = 0; inst < kInstances; ++inst) {
    const MsafebConfig c = fixture::random_block(rng);
    ParameterSet params;
    MsafebBlock block(c, params, "b", rng);
    const std::size_t h = oracle::extent(rng, 1, 6), w = oracle::extent(rng, 1, 6);
    const std::size_t n = h * w == 1 ? 2 : oracle::extent(rng, 1, 2);
    const MsafebTrace t = block.forward(oracle::random_tensor(rng, {n, c.input_channels, h, w}), Mode::train);
    for (const auto& x : t.branch) CHECK(x.dims() == Dims{n, c.branch_filters, h, w});
    for (const auto& x : t.aspp) CHECK(x.dims() == Dims{n, c.aspp_channels(), h, w});
    CHECK(t.attended.dims() == Dims{n, c.fusion_channels, h, w});
    REQUIRE(t.features.dims() == Dims{n, c.feature_length()});

    std::vector<Tensor> expected{t.aggregated};
    expected.insert(expected.end(), t.pooled.begin(), t.pooled.end());
    std::size_t begin = 0;
    for (const auto& part : expected) {
      const Tensor band = slice_channels(t.features, begin, part.dim(1));
      CHECK(std::equal(band.data().begin(), band.data().end(), part.data().begin()));
      begin += part.dim(1);
    }
  }
}

TEST_CASE("multi-scale branches match the conv oracle plus ReLU") {
  Rng rng(32);
  MsafebConfig c = fixture::reduced_block();
  c.branch_dilation = 1;
  ParameterSet params;
  MsafebBlock block(c, params, "b", rng);
  for (auto& b : block.branches()) {
    Tensor bias = b.bias;
    for (auto& v : bias.mutable_data()) v = float(rng.uniform(-0.3, 0.3));
  }
  const Tensor x = oracle::random_tensor(rng, {1, 8, 6, 6});
  const auto outs = multi_scale_conv(x, block.branches());
  for (std::size_t i = 0; i < outs.size(); ++i) {
    const auto& b = block.branches()[i];
    auto ref = oracle::conv_direct(x.data(), 1, 8, 6, 6, b.weight.data(), b.bias.data(), 4,
                                   {b.spec.kernel, 1, 1, 2, true});
    for (auto& v : ref) v = std::max(v, 0.0);
    CHECK(oracle::max_abs_diff(outs[i].data(), ref) <= 1e-5);
  }
}

TEST_CASE("ASPP rates, wide kernels and zero input") {
  Rng rng(33);
  MsafebConfig c = fixture::reduced_block();
  ParameterSet params;
  MsafebBlock block(c, params, "b", rng);
  const AsppStack& stack = block.aspp_stacks()[0];
  REQUIRE(stack.branches.size() == 4);
  CHECK(stack.branches[0].spec.kernel == 1);
  for (std::size_t r = 1; r < 4; ++r) CHECK(stack.branches[r].spec.kernel == 3);

  CHECK(all_zero(aspp(Tensor::zeros({1, 4, 7, 7}), stack)));

  const Tensor x = oracle::random_tensor(rng, {1, 4, 7, 7});
  const Tensor d = aspp(x, stack);
  CHECK(d.dims() == Dims{1, 8, 7, 7});
  for (std::size_t r = 0; r < 4; ++r) {
    const auto& conv = stack.branches[r];
    auto ref = oracle::conv_direct(x.data(), 1, 4, 7, 7, conv.weight.data(), conv.bias.data(), 2,
                                   {conv.spec.kernel, 1, conv.spec.dilation, 1, true});
    for (auto& v : ref) v = std::max(v, 0.0);
    const Tensor band = slice_channels(d, 2 * r, 2);
    CHECK(oracle::max_abs_diff(band.data(), ref) <= 1e-5);
  }
}

TEST_CASE("GAP branches equal per-channel means") {
  Rng rng(34);
  std::vector<Tensor> branches;
  for (int i = 0; i < 3; ++i) branches.push_back(oracle::random_tensor(rng, {2, 5, 4, 3}));
  branches.push_back(Tensor::full({1, 2, 3, 3}, 0.7f));
  const auto g = gap_branches(branches);
  for (std::size_t i = 0; i < 3; ++i) CHECK(oracle::max_abs_diff(g[i].data(), per_channel_mean(branches[i])) <= 1e-6);
  for (float v : g[3].data()) CHECK(v == doctest::Approx(0.7f));
}

TEST_CASE("fusion with identity attention matches the conv oracle") {
  Rng rng(35);
  MsafebConfig c = fixture::reduced_block();
  c.attention.variant = AttentionVariant::identity;
  ParameterSet params;
  MsafebBlock block(c, params, "b", rng);
  ConvLayer fusion = block.fusion();
  const std::size_t cin = c.fusion_input_channels();
  // Averaging stencil: every output channel is the mean of all inputs.
  for (auto& v : fusion.weight.mutable_data()) v = 1.0f / float(cin);
  const Tensor i = oracle::random_tensor(rng, {1, 8, 5, 5});
  std::vector<Tensor> ds;
  for (int k = 0; k < 3; ++k) ds.push_back(oracle::random_tensor(rng, {1, 8, 5, 5}, 0, 1));
  const Tensor e = fuse_attend(i, ds, fusion, block.attention());

  std::vector<float> cat;
  cat.insert(cat.end(), i.data().begin(), i.data().end());
  for (const auto& d : ds) cat.insert(cat.end(), d.data().begin(), d.data().end());
  auto ref = oracle::conv_direct(cat, 1, cin, 5, 5, fusion.weight.data(), fusion.bias.data(), 8,
                                 {1, 1, 1, 1, true});
  for (auto& v : ref) v = std::max(v, 0.0);
  CHECK(oracle::max_abs_diff(e.data(), ref) <= 1e-5);

  const Tensor x = oracle::random_tensor(rng, {1, 8, 3, 3});
  const Tensor same = apply_attention(x, block.attention());
  CHECK(same.impl() == x.impl());

  CHECK_THROWS_AS(fuse_attend(i, std::vector<Tensor>{ds[0], oracle::random_tensor(rng, {1, 8, 4, 5})},
                              fusion, block.attention()),
                  ShapeError);
}

TEST_CASE("attention gates never increase magnitudes") {
  Rng rng(36);
  for (int inst = 0; inst < kInstances; ++inst) {
    MsafebConfig c = fixture::random_block(rng);
    c.attention.variant = rng.bernoulli(0.5) ? AttentionVariant::channel_then_spatial
                                             : AttentionVariant::channel_gate;
    ParameterSet params;
    MsafebBlock block(c, params, "b", rng);
    const Tensor x = oracle::random_tensor(rng, {2, c.fusion_channels, 4, 4}, -5, 5);
    const Tensor y = apply_attention(x, block.attention());
    for (std::size_t i = 0; i < x.numel(); ++i) REQUIRE(std::fabs(y.data()[i]) <= std::fabs(x.data()[i]));

    const MsafebTrace t = block.forward(oracle::random_tensor(rng, {2, c.input_channels, 4, 4}), Mode::eval);
    for (std::size_t i = 0; i < t.fused.numel(); ++i)
      REQUIRE(std::fabs(t.attended.data()[i]) <= std::fabs(t.fused.data()[i]));
  }
}

TEST_CASE("aggregate: eval identity normalization and train composed oracle") {
  Rng rng(37);
  BatchNormState bn = BatchNormState::create(6);
  const Tensor e = oracle::random_tensor(rng, {4, 6, 3, 3}, -1, 3);
  const Tensor ge = aggregate(e, bn, Mode::eval);
  const auto plain = per_channel_mean(e);
  for (std::size_t i = 0; i < plain.size(); ++i) CHECK(std::fabs(ge.data()[i] - plain[i]) <= 1e-5 * std::max(1.0, std::fabs(plain[i])));

  const Tensor gt = aggregate(e, bn, Mode::train);
  for (std::size_t c = 0; c < 6; ++c) {
    double m = 0, v = 0;
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t i = 0; i < 9; ++i) m += e.data()[(n * 6 + c) * 9 + i];
    m /= 36;
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t i = 0; i < 9; ++i) v += std::pow(e.data()[(n * 6 + c) * 9 + i] - m, 2);
    v /= 36;
    for (std::size_t n = 0; n < 4; ++n) {
      double acc = 0;
      for (std::size_t i = 0; i < 9; ++i) acc += (e.data()[(n * 6 + c) * 9 + i] - m) / std::sqrt(v + 1e-5);
      CHECK(std::fabs(gt.data()[n * 6 + c] - acc / 9) <= 1e-5);
    }
  }
  BatchNormState wide = BatchNormState::create(480);
  CHECK(aggregate(Tensor::zeros({1, 480, 7, 7}), wide, Mode::eval).dims() == Dims{1, 480});
}

TEST_CASE("zero parameters give zero outputs") {
  Rng rng(38);
  ParameterSet params;
  MsafebBlock block(fixture::reduced_block(), params, "b", rng);
  fill(params, 0.0f);
  const MsafebTrace t = block.forward(oracle::random_tensor(rng, {2, 8, 5, 5}), Mode::train);
  for (const auto& c : t.branch) CHECK(all_zero(c));
  CHECK(all_zero(t.features));
}

TEST_CASE("fixed seed gives bit-identical parameters and outputs") {
  auto run = [] {
    Rng rng(39);
    ParameterSet params;
    MsafebBlock block(fixture::reduced_block(), params, "b", rng);
    Rng data(40);
    const MsafebTrace t = block.forward(oracle::random_tensor(data, {2, 8, 5, 5}), Mode::train);
    std::vector<float> all;
    for (const auto& s : params.snapshot()) all.insert(all.end(), s.begin(), s.end());
    all.insert(all.end(), t.features.data().begin(), t.features.data().end());
    return all;
  };
  CHECK(run() == run());
}

TEST_CASE("stage lookup by name") {
  Rng rng(41);
  ParameterSet params;
  MsafebBlock block(fixture::reduced_block(), params, "b", rng);
  const MsafebTrace t = block.forward(oracle::random_tensor(rng, {2, 8, 3, 3}), Mode::train);
  CHECK(block.stage_names() == std::vector<std::string>{"I", "C1", "C2", "C3", "D1", "D2", "D3", "E"});
  for (const auto& name : block.stage_names()) CHECK(t.stage(name) != nullptr);
  CHECK(t.stage("E") == &t.attended);
  CHECK(t.stage("C2") == &t.branch[1]);
  CHECK(t.stage("C4") == nullptr);
  CHECK(t.stage("bogus") == nullptr);
}

TEST_CASE("parameter count: worked example and enumeration") {
  MsafebConfig c;
  c.input_channels = 4;
  c.branch_filters = 4;
  c.branch_groups = 2;
  c.aspp_branch_channels = 1;
  c.fusion_channels = 4;
  CHECK(param_count(c).branch_convs == 292);

  Rng rng(42);
  std::vector<MsafebConfig> configs{MsafebConfig{}, MsafebConfig::desk(64), c};
  for (int i = 0; i < 10; ++i) configs.push_back(fixture::random_block(rng));
  for (const auto& cfg : configs) {
    ParameterSet params;
    MsafebBlock block(cfg, params, "msafeb", rng);
    CHECK(param_count(cfg).total() == params.learnable_scalars());
    std::size_t branch = 0;
    for (const auto& p : params.entries())
      if (p.name.find(".branch") != std::string::npos) branch += p.value.numel();
    CHECK(param_count(cfg).branch_convs == branch);
  }
}

TEST_CASE("gradient suite: attention gates") {
  Rng rng(43);
  for (int inst = 0; inst < kInstances; ++inst) {
    MsafebConfig c = fixture::reduced_block();
    c.attention.variant = inst % 2 ? AttentionVariant::channel_gate : AttentionVariant::channel_then_spatial;
    ParameterSet params;
    MsafebBlock block(c, params, "b", rng);
    const Tensor x = oracle::random_tensor(rng, {2, 8, 3, 3});
    const std::uint64_t probe = rng.next_u64();
    auto f = [&] (const Tensor& t) { return oracle::probe_sum(apply_attention(t, block.attention()), probe); };
    CHECK(grad_check(f, x) < 1e-3);
    for (auto& p : params.entries()) {
      if (p.name.find(".attention.") == std::string::npos) continue;
      CHECK(grad_check_leaf([&] { return f(x); }, p.value) < 1e-3);
    }
  }
}

TEST_CASE("gradient suite: full block on a reduced configuration") {
  Rng rng(44);
  for (int inst = 0; inst < kInstances; ++inst) {
    ParameterSet params;
    MsafebBlock block(fixture::reduced_block(), params, "b", rng);
    fixture::kink_free(params, rng);
    const Tensor x = oracle::random_tensor(rng, {2, 8, 5, 5}, 0.1, 1.0);
    const std::uint64_t probe = rng.next_u64();
    auto f = [&](const Tensor& t) { return oracle::probe_sum(block(t, Mode::train), probe); };
    CHECK(grad_check([&](const Tensor& t) { return sum(block(t, Mode::train)); }, x) < 1e-3);
    CHECK(grad_check(f, x) < 1e-3);
    // Every parameter on the first instance, two random tensors afterwards.
    auto& entries = params.entries();
    for (std::size_t k = 0; k < entries.size(); ++k) {
      if (!entries[k].learnable) continue;
      if (inst > 0 && rng.below(entries.size()) >= 2) continue;
      CAPTURE(entries[k].name);
      CHECK(grad_check_leaf([&] { return f(x); }, entries[k].value) < 1e-3);
    }
  }
}
