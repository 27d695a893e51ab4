#include <gtest/gtest.h>

#include <cmath>

#include "pargan/model.hpp"
#include "fixtures.hpp"

using namespace pargan;
using testing_support::check_gradients;
using testing_support::random_tensor;
using testing_support::small_discriminator;
using testing_support::small_generator;

namespace {

// Layer-by-layer parameter arithmetic for the bottleneck_once generator without skips.
std::int64_t hand_count(const GeneratorConfig& c) {
  // Convs feeding an instance norm carry no bias; only the head does.
  auto conv = [](std::int64_t in, std::int64_t out, std::int64_t k) { return in * out * k * k; };
  const std::int64_t w = c.base_width, e = c.p_embed_dim;
  std::int64_t n = conv(c.in_channels, w, 7) + 2 * w;
  for (int i = 1; i <= c.n_downsample; ++i) n += conv(w << (i - 1), w << i, 3) + 2 * (w << i);
  const std::int64_t ch = w << c.n_downsample;
  n += c.n_resblocks * 2 * (conv(ch, ch, 3) + 2 * ch);
  for (int j = 1; j <= c.n_downsample; ++j) {
    const std::int64_t cj = w << (c.n_downsample - j + 1);
    n += conv(cj + (j == 1 ? e : 0), cj / 2, 3) + 2 * (cj / 2);
  }
  n += conv(w, c.out_channels, 7) + c.out_channels;
  if (c.p_dim > 0) n += c.p_dim * e + e + (c.p_mlp_layers - 1) * (e * e + e);
  return n;
}

Tensor<float> p_row(std::vector<float> v) {
  const int n = static_cast<int>(v.size());
  return Tensor<float>({1, n}, std::move(v));
}

}  // namespace

TEST(Generator, OutputShapeAndRange) {
  GeneratorConfig c;
  c.p_dim = 3;
  Rng rng(1);
  Generator<float> g(c, rng);
  std::mt19937_64 r(2);
  const auto x = random_tensor<float>({1, 3, 64, 64}, r);
  const auto y = g.generate(x, p_row({0.2f, 0.5f, 0.9f}));
  EXPECT_EQ(y.shape(), x.shape());
  for (float v : y.values()) EXPECT_LE(std::abs(v), 1.0f);
}

TEST(Generator, FirstPostInjectionBlockSees320Channels) {
  GeneratorConfig c;  // base_width 64, n_downsample 2, p_embed_dim 64
  c.p_dim = 1;
  Rng rng(3);
  Generator<float> g(c, rng);
  EXPECT_EQ(g.first_decoder_in_channels(), 64 * 4 + 64);
}

TEST(Generator, ParameterCountMatchesLayerArithmetic) {
  for (int p_dim : {0, 1, 3}) {
    GeneratorConfig c = small_generator(p_dim);
    Rng rng(4);
    EXPECT_EQ(Generator<float>(c, rng).count_parameters(), hand_count(c));
  }
  GeneratorConfig big;
  big.p_dim = 3;
  Rng rng(5);
  EXPECT_EQ(Generator<float>(big, rng).count_parameters(), hand_count(big));
}

TEST(Generator, ConditioningAddsExactlyTheMlp) {
  GeneratorConfig c;
  Rng r0(6), r3(6);
  c.p_dim = 0;
  const auto n0 = Generator<float>(c, r0).count_parameters();
  c.p_dim = 3;
  Generator<float> g3(c, r3);
  // 3 -> 64 -> 64 -> 64 with biases
  const std::int64_t mlp = (3 * 64 + 64) + 2 * (64 * 64 + 64);
  EXPECT_EQ(mlp, 8576);
  EXPECT_EQ(g3.count_parameters() - n0, mlp);
  EXPECT_EQ(g3.embedding_parameter_count(), mlp);
}

TEST(Generator, SingleLayerMlpOf3To64Has256Parameters) {
  ParameterStore<float> store;
  Rng rng(7);
  const auto mlp = EmbeddingMlp<float>::make(store, "m", 3, 64, 1, rng);
  EXPECT_EQ(mlp.scalar_count(), 3 * 64 + 64);
  EXPECT_EQ(mlp.scalar_count(), 256);
}

TEST(Generator, DoublingWidthMoreThanDoublesCount) {
  GeneratorConfig a = small_generator(2), b = small_generator(2);
  b.base_width *= 2;
  Rng ra(8), rb(8);
  EXPECT_GT(Generator<float>(b, rb).count_parameters(), 2 * Generator<float>(a, ra).count_parameters());
}

TEST(Generator, UnconditionalModeHasNoEmbeddingAndRejectsP) {
  GeneratorConfig c = small_generator(0);
  Rng rng(9);
  Generator<float> g(c, rng);
  EXPECT_EQ(g.embedding_parameter_count(), 0);
  std::mt19937_64 r(10);
  const auto x = random_tensor<float>({1, 3, 16, 16}, r);
  EXPECT_EQ(g.generate(x, Tensor<float>()).shape(), x.shape());
  try {
    g.generate(x, p_row({0.5f}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::shape);
  }
}

TEST(Generator, RejectsWrongPDimension) {
  Rng rng(11);
  Generator<float> g(small_generator(2), rng);
  std::mt19937_64 r(12);
  const auto x = random_tensor<float>({1, 3, 16, 16}, r);
  EXPECT_THROW(g.generate(x, p_row({0.5f})), Error);
  EXPECT_THROW(g.generate(x, Tensor<float>()), Error);
}

TEST(Generator, InvalidConfigListsViolation) {
  GeneratorConfig c = small_generator(1);
  c.image_size = 18;  // not divisible by 4
  Rng rng(13);
  try {
    Generator<float> g(c, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::config);
    EXPECT_NE(std::string(e.what()).find("divisible"), std::string::npos);
  }
}

TEST(Generator, ZeroEmbeddingMakesOutputIndependentOfP) {
  Rng rng(14);
  Generator<float> g(small_generator(3), rng);
  g.zero_embedding_output();
  std::mt19937_64 r(15);
  const auto x = random_tensor<float>({1, 3, 16, 16}, r);
  const auto a = g.generate(x, p_row({0.0f, 0.0f, 0.0f}));
  const auto b = g.generate(x, p_row({1.0f, 0.3f, 0.7f}));
  EXPECT_EQ(a, b);
}

TEST(Generator, DistinctPAltersOnlyAppendedChannels) {
  GeneratorConfig c = small_generator(2);
  Rng rng(16);
  Generator<float> g(c, rng);
  std::mt19937_64 r(17);
  const auto x = random_tensor<float>({1, 3, 16, 16}, r);
  GeneratorTrace<float> ta, tb;
  g.generate(x, p_row({0.1f, 0.9f}), &ta);
  g.generate(x, p_row({0.8f, 0.2f}), &tb);
  EXPECT_EQ(ta.pre_injection, tb.pre_injection);
  const int feat = c.base_width << c.n_downsample;
  ASSERT_EQ(ta.injected.dim(1), feat + c.p_embed_dim);
  const std::size_t plane = ta.injected.size() / ta.injected.dim(1);
  for (std::size_t i = 0; i < feat * plane; ++i) ASSERT_EQ(ta.injected[i], tb.injected[i]);
  bool differs = false;
  for (std::size_t i = feat * plane; i < ta.injected.size(); ++i) differs = differs || ta.injected[i] != tb.injected[i];
  EXPECT_TRUE(differs);
}

TEST(Generator, BatchOfTwoEqualsTwoBatchesOfOne) {
  Rng rng(18);
  Generator<float> g(small_generator(1), rng);
  std::mt19937_64 r(19);
  const auto x1 = random_tensor<float>({1, 3, 16, 16}, r), x2 = random_tensor<float>({1, 3, 16, 16}, r);
  std::vector<Tensor<float>> xs{x1, x2}, ps{p_row({0.3f}), p_row({0.6f})};
  const auto both = g.generate(stack_batch<float>(xs), Tensor<float>({2, 1}, std::vector<float>{0.3f, 0.6f}));
  const auto y1 = g.generate(x1, ps[0]), y2 = g.generate(x2, ps[1]);
  const auto b1 = batch_item(both, 0), b2 = batch_item(both, 1);
  for (std::size_t i = 0; i < y1.size(); ++i) {
    EXPECT_NEAR(b1[i], y1[i], 1e-6);
    EXPECT_NEAR(b2[i], y2[i], 1e-6);
  }
}

TEST(Generator, SameSeedSameParameters) {
  Rng a(20), b(20), c(21);
  const auto cfg = small_generator(2);
  EXPECT_EQ(parameter_hash(Generator<float>(cfg, a).parameters()), parameter_hash(Generator<float>(cfg, b).parameters()));
  Rng a2(20);
  EXPECT_NE(parameter_hash(Generator<float>(cfg, a2).parameters()), parameter_hash(Generator<float>(cfg, c).parameters()));
}

TEST(Generator, InitialisationScheme) {
  Rng rng(22);
  Generator<float> g(GeneratorConfig{}, rng);
  double s = 0, s2 = 0;
  std::size_t n = 0;
  for (const auto& e : g.parameters().entries()) {
    const auto& name = e.name;
    const auto& v = e.var.value();
    if (name.ends_with(".bias") || name.ends_with(".beta")) {
      for (float x : v.values()) ASSERT_EQ(x, 0.0f) << name;
    } else if (name.ends_with(".gamma")) {
      for (float x : v.values()) ASSERT_EQ(x, 1.0f) << name;
    } else {
      for (float x : v.values()) {
        s += x;
        s2 += double(x) * x;
        ++n;
      }
    }
  }
  EXPECT_NEAR(s / n, 0.0, 1e-3);
  EXPECT_NEAR(std::sqrt(s2 / n), 0.02, 1e-3);
}

TEST(Generator, SkipAndInjectionVariantsKeepShape) {
  std::mt19937_64 r(23);
  const auto x = random_tensor<float>({1, 3, 16, 16}, r);
  for (auto inj : {GeneratorInjection::bottleneck_once, GeneratorInjection::encoder_all, GeneratorInjection::decoder_all})
    for (bool skips : {false, true}) {
      GeneratorConfig c = small_generator(2);
      c.injection = inj;
      c.use_skips = skips;
      Rng rng(24);
      Generator<float> g(c, rng);
      EXPECT_EQ(g.generate(x, p_row({0.5f, 0.5f})).shape(), x.shape());
    }
}

TEST(Generator, EveryParameterGroupMatchesFiniteDifferences) {
  GeneratorConfig c = small_generator(2);
  Rng rng(25);
  Generator<double> g(c, rng);
  std::mt19937_64 r(26);
  const auto x = constant(random_tensor<double>({1, 3, 16, 16}, r));
  const auto p = constant(Tensor<double>({1, 2}, std::vector<double>{0.3, 0.8}));
  const auto w = constant(random_tensor<double>({1, 3, 16, 16}, r));
  auto loss = [&] { return half_squared_error(mul(g.forward(x, p), w), 0.1); };
  for (auto& e : g.parameters().entries()) {
    const auto res = check_gradients(loss, {e.var}, 1e-6, 4);
    EXPECT_GT(res.analytic_norm, 0.0) << e.name;
    EXPECT_LE(res.relative_error, 1e-3) << e.name;
  }
}

TEST(Discriminator, ScalarPerSampleEqualToMeanOfScoreMap) {
  DiscriminatorConfig c;  // size 64, n_layers 3
  c.p_dim = 1;
  Rng rng(27);
  Discriminator<float> d(c, rng);
  std::mt19937_64 r(28);
  const auto x = random_tensor<float>({1, 3, 64, 64}, r);
  DiscriminatorTrace<float> trace;
  const auto scores = d.forward(constant(x), constant(p_row({0.5f})), &trace);
  ASSERT_EQ(scores.size(), 1u);
  EXPECT_EQ(scores[0].shape(), (Shape{1}));
  // 64 -> 32 (stem) -> 16 -> 8 -> 7 (stride 1) -> 6 (score)
  ASSERT_EQ(trace.score_maps[0].shape(), (Shape{1, 1, 6, 6}));
  EXPECT_EQ(DiscriminatorConfig::score_map_size(64, 3), 6);
  double mean = 0;
  for (float v : trace.score_maps[0].values()) mean += v;
  mean /= 36.0;
  EXPECT_NEAR(scores[0].item(), mean, 1e-6);
}

TEST(Discriminator, UnconditionalIgnoresP) {
  Rng rng(29);
  Discriminator<float> d(small_discriminator(0), rng);
  std::mt19937_64 r(30);
  const auto x = constant(random_tensor<float>({1, 3, 16, 16}, r));
  const float a = d.forward(x, constant(p_row({0.1f})))[0].item();
  const float b = d.forward(x, constant(p_row({0.9f, 0.2f})))[0].item();
  const float c = d.forward(x, constant(Tensor<float>()))[0].item();
  EXPECT_EQ(a, b);
  EXPECT_EQ(a, c);
}

TEST(Discriminator, ConditionedScoresDependOnP) {
  Rng rng(31);
  Discriminator<float> d(small_discriminator(1), rng);
  std::mt19937_64 r(32);
  const auto x = constant(random_tensor<float>({1, 3, 16, 16}, r));
  EXPECT_NE(d.forward(x, constant(p_row({0.1f})))[0].item(), d.forward(x, constant(p_row({0.9f})))[0].item());
}

TEST(Discriminator, MultiScaleRequiresVariantFlag) {
  DiscriminatorConfig c = small_discriminator(1);
  c.image_size = 32;
  c.n_scales = 2;
  Rng rng(33);
  EXPECT_THROW(Discriminator<float>(c, rng), Error);
  c.multi_scale = true;
  Discriminator<float> d(c, rng);
  std::mt19937_64 r(34);
  const auto scores = d.forward(constant(random_tensor<float>({2, 3, 32, 32}, r)),
                                constant(Tensor<float>({2, 1}, std::vector<float>{0.2f, 0.4f})));
  ASSERT_EQ(scores.size(), 2u);
  EXPECT_EQ(scores[1].shape(), (Shape{2}));
}

TEST(Discriminator, AllConvInjectionGradients) {
  DiscriminatorConfig c = small_discriminator(1);
  c.injection = DiscriminatorInjection::all_convs;
  Rng rng(35);
  Discriminator<double> d(c, rng);
  std::mt19937_64 r(36);
  const auto x = constant(random_tensor<double>({1, 3, 16, 16}, r));
  const auto p = constant(Tensor<double>({1, 1}, std::vector<double>{0.4}));
  auto loss = [&] { return half_squared_error(d.forward(x, p)[0], 1.0); };
  for (auto& e : d.parameters().entries()) {
    const auto res = check_gradients(loss, {e.var}, 1e-6, 4);
    EXPECT_LE(res.relative_error, 1e-3) << e.name;
  }
}

TEST(ModelConfig, JsonRoundTripAndStrictEnums) {
  GeneratorConfig g = small_generator(3);
  g.injection = GeneratorInjection::decoder_all;
  g.use_skips = true;
  const nlohmann::json j = g;
  const auto back = j.get<GeneratorConfig>();
  EXPECT_EQ(nlohmann::json(back), j);
  nlohmann::json bad = j;
  bad["injection"] = "sideways";
  EXPECT_THROW(bad.get<GeneratorConfig>(), Error);
}
