#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "dynlat/error.hpp"
#include "dynlat/training.hpp"

using namespace dynlat;

namespace {

// KL(p || q) with p, q the softmaxes of a / T and b / T, in plain
// probability space.
double kd_by_hand(const std::vector<double>& a, const std::vector<double>& b, double t) {
  auto softmax = [t](const std::vector<double>& z) {
    std::vector<double> p(z.size());
    double s = 0;
    for (std::size_t i = 0; i < z.size(); ++i) s += p[i] = std::exp(z[i] / t);
    for (auto& v : p) v /= s;
    return p;
  };
  const auto p = softmax(a), q = softmax(b);
  double kl = 0;
  for (std::size_t i = 0; i < p.size(); ++i) kl += p[i] * std::log(p[i] / q[i]);
  return t * t * kl;
}

}  // namespace

TEST(FlopsLoss, Examples) {
  EXPECT_NEAR(flops_loss(0.5, 1.0, 0.4), 0.01, 1e-12);
  EXPECT_EQ(flops_loss(0.4, 1.0, 0.4), 0.0);
  EXPECT_NEAR(flops_loss(2.0, 2.0, 0.6), 0.16, 1e-12);
  EXPECT_THROW(flops_loss(1.0, 0.0, 0.5), Error);
}

TEST(FlopsLoss, ConvexZeroOnlyAtTarget) {
  for (int i = 1; i < 99; ++i) {
    const double x = i / 100.0, h = 0.01;
    EXPECT_GE(flops_loss(x + h, 1, 0.3) - 2 * flops_loss(x, 1, 0.3) + flops_loss(x - h, 1, 0.3), 0);
    if (std::abs(x - 0.3) > 1e-9) EXPECT_GT(flops_loss(x, 1, 0.3), 0);
  }
}

TEST(BoundsLoss, Examples) {
  const std::vector<double> inside{0.2, 0.5, 0.8};
  EXPECT_EQ(bounds_loss(inside, 0.1, 0.9), 0.0);
  const std::vector<double> one{0.9};
  EXPECT_NEAR(bounds_loss(one, 0.0, 0.8), 0.01, 1e-12);
  const std::vector<double> at{0.4};
  EXPECT_EQ(bounds_loss(at, 0.4, 0.4), 0.0);
  const std::vector<double> both{0.0, 1.0};
  EXPECT_NEAR(bounds_loss(both, 0.1, 0.8), 0.01 + 0.04, 1e-12);
  EXPECT_THROW(bounds_loss(at, 0.8, 0.2), Error);
}

TEST(KdLoss, Examples) {
  const std::vector<double> s{1, 0}, t{0, 1};
  EXPECT_NEAR(kd_loss(s, t, 1.0), 0.462117157, 1e-6);
  EXPECT_NEAR(kd_loss(s, t, 1.0), kd_by_hand({1, 0}, {0, 1}, 1.0), 1e-12);
  EXPECT_EQ(kd_loss(s, s, 4.0), 0.0);
  const std::vector<double> three{1, 2, 3};
  EXPECT_THROW(kd_loss(s, three, 1.0), Error);
}

TEST(KdLoss, MatchesProbabilitySpaceAndSelfZero) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-5, 5), temp(0.5, 8);
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> a(10), b(10);
    for (auto& v : a) v = u(rng);
    for (auto& v : b) v = u(rng);
    const double t = temp(rng);
    ASSERT_NEAR(kd_loss(a, a, t), 0.0, 1e-12);
    const double kd = kd_loss(a, b, t);
    ASSERT_GE(kd, 0.0);
    ASSERT_NEAR(kd, kd_by_hand(a, b, t), 1e-9 * std::max(1.0, kd));
  }
}

TEST(KdLoss, StableForHugeLogits) {
  const std::vector<double> s{1000, 0}, t{0, 1000};
  EXPECT_TRUE(std::isfinite(kd_loss(s, t, 1.0)));
  EXPECT_NEAR(kd_loss(s, t, 1.0), 1000.0, 1e-9);
}

TEST(TotalLoss, LinearCombination) {
  TrainingConfig cfg;
  EXPECT_EQ(total_loss(0, 0, 0, 0, cfg), 0.0);
  EXPECT_NEAR(total_loss(1.0, 0.01, 0.0, 0.462, cfg), 1.331, 1e-12);
  cfg.alpha = cfg.beta = 0;
  EXPECT_EQ(total_loss(2.5, 0.3, 0.2, 0.1, cfg), 2.5);
  cfg.alpha = 3;
  cfg.beta = 7;
  EXPECT_NEAR(total_loss(1, 2, 3, 4, cfg) - total_loss(1, 1, 3, 4, cfg), 3.0, 1e-12);
  EXPECT_NEAR(total_loss(1, 2, 3, 5, cfg) - total_loss(1, 2, 3, 4, cfg), 7.0, 1e-12);
}

TEST(TauSchedule, Endpoints) {
  TrainingConfig cfg;
  cfg.total_steps = 1000;
  EXPECT_DOUBLE_EQ(tau_schedule(0, cfg), 5.0);
  EXPECT_NEAR(tau_schedule(1000, cfg), 0.1, 1e-12);
  EXPECT_NEAR(tau_schedule(500, cfg), std::sqrt(0.5), 1e-12);
  EXPECT_THROW(tau_schedule(1001, cfg), Error);
  EXPECT_THROW(tau_schedule(-1, cfg), Error);
}

TEST(TauSchedule, StrictlyDecreasingLogLinear) {
  TrainingConfig cfg;
  cfg.total_steps = 100;
  for (int s = 0; s + 20 <= 100; ++s) {
    ASSERT_LT(tau_schedule(s + 1, cfg), tau_schedule(s, cfg));
    if (s + 20 <= 80) {
      ASSERT_NEAR(tau_schedule(s + 10, cfg) / tau_schedule(s, cfg),
                  tau_schedule(s + 20, cfg) / tau_schedule(s + 10, cfg), 1e-12);
    }
  }
}

TEST(TrainingConfig, Validation) {
  TrainingConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.tau_end = 6;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = {};
  cfg.tau_end = 0;
  EXPECT_THROW(cfg.validate(), Error);
}
