#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "pargan/losses.hpp"
#include "fixtures.hpp"

using namespace pargan;
using testing_support::random_batch;
using testing_support::small_trainer;

namespace {

// Written out term by term, independent of the library loops.
double lsgan_d_oracle(const std::vector<double>& real, const std::vector<double>& fake) {
  long double s = 0;
  for (std::size_t i = 0; i < real.size(); ++i) s += (1 - real[i]) * (1 - real[i]) / 2.0L + fake[i] * fake[i] / 2.0L;
  return static_cast<double>(s / real.size());
}

double lsgan_g_oracle(const std::vector<double>& fake) {
  long double s = 0;
  for (double f : fake) s += (f - 1) * (f - 1) / 2.0L;
  return static_cast<double>(s / fake.size());
}

double l1_oracle(const Tensor<double>& a, const Tensor<double>& b) {
  long double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::fabs(a[i] - b[i]);
  return static_cast<double>(s / a.size());
}

}  // namespace

TEST(LsganLoss, HandComputedValues) {
  // D: 0.5*[(1-0.9)^2 + 0.2^2] = 0.025, 0.5*[(1-0.5)^2 + 0.3^2] = 0.17 -> mean 0.0975
  const std::vector<double> real{0.9, 0.5}, fake{0.2, 0.3};
  const auto l = lsgan_loss(real, fake);
  EXPECT_NEAR(l.discriminator, 0.0975, 1e-15);
  // G: 0.5*[(0.8)^2 + (0.7)^2] / 2 = 0.2825
  EXPECT_NEAR(l.generator, 0.2825, 1e-15);
  const std::vector<double> one_r{1.0}, one_f{0.0};
  EXPECT_EQ(lsgan_loss(one_r, one_f).discriminator, 0.0);
  EXPECT_EQ(lsgan_loss(one_r, one_f).generator, 0.5);
}

TEST(LsganLoss, SingleScoreExamples) {
  auto d = [](double r, double f) {
    const std::vector<double> rv{r}, fv{f};
    return lsgan_loss(rv, fv).discriminator;
  };
  EXPECT_NEAR(d(0.8, 0.3), 0.5 * (0.04 + 0.09), 1e-15);
  EXPECT_NEAR(d(0.5, 0.5), 0.25, 1e-15);
  EXPECT_EQ(d(1.0, 0.0), 0.0);
}

TEST(LsganLoss, MatchesOracleOnRandomCases) {
  std::mt19937_64 rng(100);
  std::uniform_real_distribution<double> u(-2.0, 3.0);
  std::uniform_int_distribution<int> len(1, 16);
  for (int c = 0; c < 50; ++c) {
    const int n = len(rng);
    std::vector<double> real(n), fake(n);
    for (auto& v : real) v = u(rng);
    for (auto& v : fake) v = u(rng);
    const auto l = lsgan_loss(real, fake);
    EXPECT_NEAR(l.discriminator, lsgan_d_oracle(real, fake), 1e-12);
    EXPECT_NEAR(l.generator, lsgan_g_oracle(fake), 1e-12);
  }
}

TEST(LsganLoss, RejectsBadInput) {
  const std::vector<double> a{1.0, 2.0}, b{1.0}, nan{std::nan("")}, one{0.0};
  EXPECT_THROW(lsgan_loss(a, b), Error);
  EXPECT_THROW(lsgan_loss({}, {}), Error);
  try {
    lsgan_loss(nan, one);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::nonfinite);
  }
}

TEST(CycleLoss, HandComputedValue) {
  const Tensor<double> x({1, 1, 1, 2}, {0.0, 1.0}), xr({1, 1, 1, 2}, {0.5, 0.5});
  const Tensor<double> y({1, 1, 1, 2}, {-1.0, 0.2}), yr({1, 1, 1, 2}, {-1.0, 0.0});
  // 0.5 * (0.5 + 0.1)
  EXPECT_NEAR(cycle_loss(x, xr, y, yr), 0.3, 1e-15);
}

TEST(CycleLoss, ConstantOffsets) {
  std::mt19937_64 rng(104);
  const auto x = testing_support::random_tensor<double>({2, 3, 4, 4}, rng);
  const auto y = testing_support::random_tensor<double>({2, 3, 4, 4}, rng);
  auto shifted = [](Tensor<double> t, double d) {
    for (auto& v : t.values()) v += d;
    return t;
  };
  EXPECT_NEAR(cycle_loss(x, shifted(x, 0.1), y, shifted(y, 0.1)), 0.1, 1e-12);
  EXPECT_NEAR(cycle_loss(x, x, y, shifted(y, -0.2)), 0.1, 1e-12);
}

TEST(CycleLoss, MatchesOracleOnRandomCases) {
  std::mt19937_64 rng(101);
  for (int c = 0; c < 25; ++c) {
    const Shape s{1 + c % 3, 3, 4 + c % 5, 4};
    const auto x = testing_support::random_tensor<double>(s, rng), xr = testing_support::random_tensor<double>(s, rng);
    const auto y = testing_support::random_tensor<double>(s, rng), yr = testing_support::random_tensor<double>(s, rng);
    const double want = 0.5 * (l1_oracle(x, xr) + l1_oracle(y, yr));
    EXPECT_NEAR(cycle_loss(x, xr, y, yr), want, 1e-12);
    EXPECT_NEAR(cycle_loss_var(constant(x), constant(xr), constant(y), constant(yr)).item(), want, 1e-12);
    EXPECT_EQ(cycle_loss(x, x, y, y), 0.0);
  }
}

TEST(CycleLoss, ShapeMismatchThrows) {
  EXPECT_THROW(cycle_loss(Tensor<double>({1, 2}), Tensor<double>({2, 1}), Tensor<double>({1}), Tensor<double>({1})),
               Error);
}

TEST(DifferentiableLosses, AgreeWithScalarForms) {
  std::mt19937_64 rng(102);
  for (int c = 0; c < 20; ++c) {
    const auto real = testing_support::random_tensor<double>({2, 1, 3, 3}, rng);
    const auto fake = testing_support::random_tensor<double>({2, 1, 3, 3}, rng);
    // Per-sample scores are score-map means.
    std::vector<double> rs(2), fs(2);
    for (int n = 0; n < 2; ++n)
      for (int i = 0; i < 9; ++i) {
        rs[n] += real[n * 9 + i] / 9.0;
        fs[n] += fake[n * 9 + i] / 9.0;
      }
    const auto want = lsgan_loss(rs, fs);
    const auto d = discriminator_loss<double>({mean_per_sample(constant(real))}, {mean_per_sample(constant(fake))});
    const auto g = generator_adversarial_loss<double>({mean_per_sample(constant(fake))});
    EXPECT_NEAR(d.item(), want.discriminator, 1e-12);
    EXPECT_NEAR(g.item(), want.generator, 1e-12);
  }
}

TEST(LossReport, TotalComposesWithLambda) {
  std::mt19937_64 rng(103);
  for (double lambda : {0.0, 1.0, 10.0, 2.5}) {
    auto trainer = small_trainer(7, lambda);
    for (int it = 0; it < 3; ++it) {
      const auto a = random_batch(rng), b = random_batch(rng);
      const LossReport r = trainer.step(a, b);
      const double want = r.gan_xy + r.gan_yx + lambda * r.cyc;
      EXPECT_LE(std::abs(r.total - want), 1e-6 * std::max(1.0, std::abs(want))) << lambda;
      EXPECT_GT(r.cyc, 0.0);
    }
  }
}
