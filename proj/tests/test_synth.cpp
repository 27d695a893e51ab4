#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "pargan/synth.hpp"
#include "support.hpp"

using namespace pargan;
using testing_support::scratch_dir;

namespace {

float px(const Image& im, int ch, int r, int c) { return im.at(0, ch, r, c); }

// Closed form of the blend renderer for one pixel, written independently.
double beam_oracle(double b, double intensity, double r, double c, double h, double w, double cx, double cy,
                   double sigma) {
  const double sd = sigma * std::hypot(h, w);
  const double g = std::exp(-(std::pow(c + 0.5 - cx * w, 2) + std::pow(r + 0.5 - cy * h, 2)) / (2 * sd * sd));
  const double lit = std::min(1.0, std::max(-1.0, b * (0.55 + 0.9 * g)));
  return (1 - intensity) * b + intensity * lit;
}

Image random_image(int size, std::uint64_t seed, float lo = -1.0f, float hi = 1.0f) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(lo, hi);
  Image im = make_image(size, size);
  for (auto& v : im.values()) v = u(rng);
  return im;
}

}  // namespace

TEST(RenderBeam, ZeroIntensityIsIdentity) {
  const Image base = random_image(17, 1);
  for (double cx : {0.0, 0.3, 1.0}) {
    BeamSpec s{cx, 0.7, 0.0, 0.1};
    EXPECT_EQ(render_beam(base, s), base);
  }
}

TEST(RenderBeam, CenterPixelHandValues) {
  // With an odd size a pixel center sits exactly on the beam center.
  Image gray = make_image(9, 9, 0.0f), half = make_image(9, 9, 0.5f);
  const BeamSpec s{0.5, 0.5, 1.0, 0.25};
  EXPECT_EQ(px(render_beam(gray, s), 0, 4, 4), 0.0f);
  EXPECT_NEAR(px(render_beam(half, s), 1, 4, 4), 0.725, 1e-6);
  Image bright = make_image(9, 9, 0.9f);
  EXPECT_EQ(px(render_beam(bright, s), 2, 4, 4), 1.0f);  // 0.9 * 1.45 saturates
}

TEST(RenderBeam, MatchesClosedFormEverywhere) {
  for (int trial = 0; trial < 10; ++trial) {
    const int h = 12, w = 12;
    const Image base = random_image(w, 10 + trial);
    std::mt19937_64 rng(20 + trial);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const BeamSpec s{u(rng), u(rng), u(rng), 0.05 + 0.5 * u(rng)};
    const Image out = render_beam(base, s);
    for (int ch = 0; ch < 3; ++ch)
      for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
          ASSERT_NEAR(px(out, ch, r, c), beam_oracle(px(base, ch, r, c), s.intensity, r, c, h, w, s.cx, s.cy, s.sigma),
                      1e-6);
  }
}

TEST(RenderBeam, PreservesMirrorSymmetry) {
  Image base = random_image(10, 3);
  for (int ch = 0; ch < 3; ++ch)
    for (int r = 0; r < 10; ++r)
      for (int c = 0; c < 5; ++c) base.at(0, ch, r, 9 - c) = base.at(0, ch, r, c);
  const Image out = render_beam(base, {0.5, 0.5, 0.8, 0.2});
  for (int ch = 0; ch < 3; ++ch)
    for (int r = 0; r < 10; ++r)
      for (int c = 0; c < 5; ++c) EXPECT_EQ(px(out, ch, r, c), px(out, ch, r, 9 - c));
}

TEST(RenderBeam, MonotoneInIntensityTowardsTheLitImage) {
  // Pixels move monotonically from the base towards the lit value: brighter
  // where the gain exceeds 1, darker in the dimmed surround.
  const Image base = random_image(16, 4, 0.0f, 1.0f);
  const BeamSpec lit_spec{0.3, 0.6, 1.0, 0.2};
  const Image lit = render_beam(base, lit_spec);
  Image prev = base;
  for (double i = 0.1; i <= 1.0001; i += 0.1) {
    BeamSpec s = lit_spec;
    s.intensity = std::min(1.0, i);
    const Image cur = render_beam(base, s);
    for (std::size_t k = 0; k < cur.size(); ++k) {
      if (lit[k] >= base[k]) {
        EXPECT_GE(cur[k], prev[k] - 1e-7f);
      } else {
        EXPECT_LE(cur[k], prev[k] + 1e-7f);
      }
    }
    prev = cur;
  }
}

TEST(RenderBeam, BrightSpotTracksCenter) {
  const int size = 32;
  const Image flat = make_image(size, size, 0.5f);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.1, 0.9);
  for (int t = 0; t < 20; ++t) {
    const BeamSpec s{u(rng), u(rng), 1.0, 0.1};
    const Image out = render_beam(flat, s);
    int best_r = 0, best_c = 0;
    double best = -1e9;
    for (int r = 0; r < size; ++r)
      for (int c = 0; c < size; ++c) {
        const double v = px(out, 0, r, c) - 0.55 * px(flat, 0, r, c);
        if (v > best) best = v, best_r = r, best_c = c;
      }
    EXPECT_LE(std::abs(best_c + 0.5 - s.cx * size), 1.0);
    EXPECT_LE(std::abs(best_r + 0.5 - s.cy * size), 1.0);
  }
}

TEST(RenderBeam, RejectsInvalidSpec) {
  const Image base = make_image(4, 4);
  EXPECT_THROW(render_beam(base, {1.2, 0.5, 0.5, 0.2}), Error);
  EXPECT_THROW(render_beam(base, {0.5, 0.5, -0.1, 0.2}), Error);
  EXPECT_THROW(render_beam(base, {0.5, 0.5, 0.5, 0.0}), Error);
}

TEST(GenerateDataset, DeterministicAndInRange) {
  const auto dir = scratch_dir("beam_det");
  const auto bases = make_covers(3, 16, 11);
  const auto a = generate_dataset(bases, 10, 42, dir / "a");
  const auto b = generate_dataset(bases, 10, 42, dir / "b");
  ASSERT_EQ(a.size(), 10u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.records[i].p, b.records[i].p);
    EXPECT_EQ(read_png(a.records[i].image_path), read_png(b.records[i].image_path));
    EXPECT_EQ(a.records[i].p->size(), 3u);
    for (double v : *a.records[i].p) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
  EXPECT_TRUE(validate_target_manifest(a).empty());
  const auto c = generate_dataset(bases, 10, 43, dir / "c");
  EXPECT_NE(a.records[0].p, c.records[0].p);
}

TEST(GenerateDataset, IntensityIsUniform) {
  const auto dir = scratch_dir("beam_uniform");
  const auto m = generate_dataset({make_image(2, 2, 0.2f)}, 10000, 9, dir);
  double mean = 0.0;
  for (const auto& r : m.records) mean += (*r.p)[2];
  mean /= m.size();
  EXPECT_GE(mean, 0.48);
  EXPECT_LE(mean, 0.52);
}

TEST(GenerateDataset, Errors) {
  const auto dir = scratch_dir("beam_err");
  EXPECT_THROW(generate_dataset({}, 3, 1, dir), Error);
  EXPECT_THROW(generate_dataset({make_image(4, 4)}, 0, 1, dir), Error);
  std::ofstream(dir / "file") << "x";
  try {
    generate_dataset({make_image(4, 4)}, 1, 1, dir / "file" / "sub");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::io);
  }
}

TEST(Png, RoundTripWithinOneQuantum) {
  const auto dir = scratch_dir("png");
  const Image base = random_image(13, 6);
  const Image im = render_beam(base, {0.4, 0.4, 0.7, 0.3});
  write_png(dir / "a.png", im);
  const Image back = read_png(dir / "a.png");
  ASSERT_EQ(back.shape(), im.shape());
  for (std::size_t i = 0; i < im.size(); ++i) EXPECT_LE(std::abs(back[i] - im[i]), 1.0f / 255.0f + 1e-6f);
}

TEST(ToyDomains, IdentitySpecReproducesScenes) {
  const auto dir = scratch_dir("toy_identity");
  const ToyDomainSpec id{"plain", {0, 0, 0}, 1.0, 3};
  const auto m = generate_toy_domains({id}, 4, 8, 77, dir);
  const auto scenes = make_scenes(4, 8, 77, 3);
  for (std::size_t i = 0; i < 4; ++i) {
    const Image im = read_png(m.at("plain").records[i].image_path);
    for (std::size_t k = 0; k < im.size(); ++k) EXPECT_LE(std::abs(im[k] - scenes[i][k]), 1.0f / 255.0f + 1e-6f);
  }
  EXPECT_TRUE(std::filesystem::exists(dir / "plain.jsonl"));
}

TEST(ToyDomains, ZeroBrightnessIsBlack) {
  const Image out = apply_domain_transform(make_scenes(1, 8, 1, 1)[0], {"black", {0.3, -0.2, 0.1}, 0.0, 1});
  for (float v : out.values()) EXPECT_EQ(v, -1.0f);
}

TEST(ToyDomains, SharedSeedDiffersOnlyByTransform) {
  const ToyDomainSpec a{"a", {0.1, 0.0, -0.1}, 1.0, 5}, b{"b", {-0.2, -0.3, 0.1}, 0.45, 5};
  const auto scene = make_scenes(1, 8, 123, 5)[0];
  const Image ia = apply_domain_transform(scene, a), ib = apply_domain_transform(scene, b);
  const std::size_t plane = scene.size() / 3;
  for (int ch = 0; ch < 3; ++ch)
    for (std::size_t i = 0; i < plane; ++i) {
      const double s = scene[ch * plane + i];
      const double want_b = std::clamp(-1.0 + 0.45 * (std::clamp(s + b.color_shift[ch], -1.0, 1.0) + 1.0), -1.0, 1.0);
      const double want_a = std::clamp(-1.0 + 1.0 * (std::clamp(s + a.color_shift[ch], -1.0, 1.0) + 1.0), -1.0, 1.0);
      EXPECT_NEAR(ib[ch * plane + i], want_b, 1e-6);
      EXPECT_NEAR(ia[ch * plane + i], want_a, 1e-6);
    }
}

TEST(ToyDomains, RejectsBadSpecs) {
  const auto dir = scratch_dir("toy_bad");
  EXPECT_THROW(generate_toy_domains({}, 1, 8, 1, dir), Error);
  EXPECT_THROW(generate_toy_domains({{"a", {0, 0, 0}, 1, 1}, {"a", {0, 0, 0}, 1, 2}}, 1, 8, 1, dir), Error);
  EXPECT_THROW(generate_toy_domains({{"a", {1.5, 0, 0}, 1, 1}}, 1, 8, 1, dir), Error);
  EXPECT_THROW(generate_toy_domains({{"a", {0, 0, 0}, 2.5, 1}}, 1, 8, 1, dir), Error);
}

TEST(ToyDomains, JsonSpecParsing) {
  const auto s = nlohmann::json::parse(R"({"name":"d","color_shift":[0.1,0.2,0.3],"brightness_scale":0.5,"texture_seed":4})")
                     .get<ToyDomainSpec>();
  EXPECT_EQ(s.name, "d");
  EXPECT_EQ(s.color_shift[2], 0.3);
  EXPECT_EQ(s.texture_seed, 4);
  EXPECT_THROW(nlohmann::json::parse(R"({"name":"d","color_shift":[0.1]})").get<ToyDomainSpec>(), Error);
}
