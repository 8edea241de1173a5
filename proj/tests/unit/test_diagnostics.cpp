#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "collapse/diagnostics.hpp"
#include "collapse/errors.hpp"
#include "oracles.hpp"

namespace collapse {
namespace {

PosteriorStats stats(double mu2, double s2) { return {mu2, s2, 0.0}; }

TEST(Diagnostics, StandardNormalStats) {
  const auto s = posterior_stats({{0.0, 0.0, 0.0}, {0.0, 0.0, 0.0}});
  EXPECT_EQ(s.mean_sq_mu, 0.0);
  EXPECT_EQ(s.mean_sigma_sq, 1.0);
  EXPECT_EQ(s.kl_to_standard, 0.0);
}

TEST(Diagnostics, HandEvaluatedStats) {
  const auto s = posterior_stats({{2.0, 0.0}, {0.0, 0.0}});
  EXPECT_DOUBLE_EQ(s.mean_sq_mu, 2.0);
  EXPECT_DOUBLE_EQ(s.mean_sigma_sq, 1.0);
  // Summed over dimensions: 1/2 (4 + 0).
  EXPECT_DOUBLE_EQ(s.kl_to_standard, 2.0);
}

TEST(Diagnostics, PermutationInvariant) {
  std::mt19937_64 rng(1);
  auto p = oracle::random_posterior(6, rng);
  const auto a = posterior_stats(p);
  std::reverse(p.mean.begin(), p.mean.end());
  std::reverse(p.log_variance.begin(), p.log_variance.end());
  const auto b = posterior_stats(p);
  EXPECT_NEAR(a.mean_sq_mu, b.mean_sq_mu, 1e-14);
  EXPECT_NEAR(a.mean_sigma_sq, b.mean_sigma_sq, 1e-14);
  EXPECT_NEAR(a.kl_to_standard, b.kl_to_standard, 1e-12);
}

TEST(Diagnostics, StatsRejectInvalidPosterior) {
  EXPECT_THROW(posterior_stats({{}, {}}), ValidationError);
}

TEST(Diagnostics, ClassifyExamples) {
  const auto c = classify_collapse(stats(1, 1), stats(0.01, 0.01));
  EXPECT_EQ(c.kind, CollapseKind::concentration);
  EXPECT_DOUBLE_EQ(c.mu_ratio, 0.01);
  EXPECT_DOUBLE_EQ(c.sigma_ratio, 0.01);
  EXPECT_EQ(classify_collapse(stats(1, 1), stats(5, 20)).kind, CollapseKind::diffusion);
  EXPECT_EQ(classify_collapse(stats(1, 1), stats(1, 1)).kind, CollapseKind::none);
  // Only one statistic shrank.
  EXPECT_EQ(classify_collapse(stats(1, 1), stats(0.01, 0.5)).kind, CollapseKind::none);
  EXPECT_EQ(to_string(CollapseKind::concentration), "concentration");
}

TEST(Diagnostics, ConcentrationTakesPrecedence) {
  // With shrink > grow both conditions can hold at once.
  const auto c = classify_collapse(stats(1, 1), stats(0.5, 5), 10.0, 2.0);
  EXPECT_EQ(c.kind, CollapseKind::concentration);
}

TEST(Diagnostics, ThresholdMonotone) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 0.3);
  for (int k = 0; k < 200; ++k) {
    const auto before = stats(1.0, 1.0), after = stats(u(rng), u(rng));
    const bool tight = classify_collapse(before, after, 0.1).kind == CollapseKind::concentration;
    const bool loose = classify_collapse(before, after, 0.2).kind == CollapseKind::concentration;
    EXPECT_TRUE(!tight || loose);
  }
}

TEST(Diagnostics, TrajectorySummary) {
  const auto down = trajectory_summary({5, 4, 3, 2}, Direction::minimize);
  EXPECT_EQ(down.monotonic_fraction, 1.0);
  EXPECT_EQ(down.first_loss, 5.0);
  EXPECT_EQ(down.last_loss, 2.0);
  EXPECT_DOUBLE_EQ(down.slope, -1.0);
  EXPECT_EQ(trajectory_summary({5, 4, 3, 2}, Direction::maximize).monotonic_fraction, 0.0);
  EXPECT_DOUBLE_EQ(trajectory_summary({1, 2, 1.5}, Direction::maximize).monotonic_fraction, 0.5);

  const auto single = trajectory_summary({3.0}, Direction::minimize);
  EXPECT_EQ(single.monotonic_fraction, 1.0);
  EXPECT_EQ(single.slope, 0.0);

  const auto flat = trajectory_summary({2, 2, 2}, Direction::minimize);
  EXPECT_EQ(flat.first_loss, flat.last_loss);
  EXPECT_THROW(trajectory_summary(std::vector<double>{}, Direction::minimize), ValidationError);
}

}  // namespace
}  // namespace collapse
