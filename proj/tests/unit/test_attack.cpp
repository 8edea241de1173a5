#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "collapse/attack.hpp"
#include "collapse/defenses.hpp"
#include "collapse/errors.hpp"
#include "collapse/vae.hpp"
#include "oracles.hpp"

namespace collapse {
namespace {

ImageGrid constant(std::size_t h, std::size_t w, std::size_t c, double v) {
  return ImageGrid(h, w, c, v);
}

double max_abs(const ImageGrid& a) {
  double m = 0.0;
  for (double v : a.pixels()) m = std::max(m, std::abs(v));
  return m;
}

// Returns a NaN gradient from the `fail_at`-th gradient call on.
class FaultyEncoder : public DifferentiableEncoder {
 public:
  explicit FaultyEncoder(std::size_t fail_at) : fail_at_(fail_at) {}
  PosteriorParams encode(const ImageGrid& x) const override { return inner_.encode(x); }
  ImageGrid input_gradient(const ImageGrid& x, const PosteriorLossGradient& up,
                           PosteriorParams* out) const override {
    ImageGrid g = inner_.input_gradient(x, up, out);
    if (calls_++ >= fail_at_) g[0] = std::numeric_limits<double>::quiet_NaN();
    return g;
  }

 private:
  oracle::LinearEncoder inner_ = oracle::LinearEncoder::scalar_identity();
  std::size_t fail_at_;
  mutable std::size_t calls_ = 0;
};

TEST(Attack, ProjectLinf) {
  ImageGrid d(1, 2, 1, std::vector<double>{0.1, -0.02});
  const double eps = 16.0 / 255.0;
  const auto p = project_linf(d, eps);
  EXPECT_DOUBLE_EQ(p[0], eps);
  EXPECT_DOUBLE_EQ(p[1], -0.02);
  EXPECT_EQ(project_linf(p, eps), p);
  EXPECT_EQ(project_linf(ImageGrid(2, 2, 1), eps), ImageGrid(2, 2, 1));
  EXPECT_EQ(max_abs(project_linf(d, 0.0)), 0.0);
  EXPECT_THROW(project_linf(d, -0.1), ValidationError);
}

TEST(Attack, ClipValid) {
  ImageGrid x(1, 3, 1, std::vector<double>{1.2, -0.3, 0.4});
  const auto c = clip_valid(x);
  EXPECT_EQ(c[0], 1.0);
  EXPECT_EQ(c[1], 0.0);
  EXPECT_EQ(c[2], 0.4);
  EXPECT_EQ(clip_valid(c), c);
}

TEST(Attack, ConfigValidation) {
  AttackConfig c;
  EXPECT_NO_THROW(c.validate());
  c.epsilon = -1.0;
  EXPECT_THROW(c.validate(), ValidationError);
  c = AttackConfig{};
  c.alpha = 0.0;
  EXPECT_THROW(c.validate(), ValidationError);
  c.steps = 0;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(direction_from_string("pca-"), Direction::minimize);
  EXPECT_EQ(direction_from_string("pca+"), Direction::maximize);
  EXPECT_THROW(direction_from_string("sideways"), ValidationError);
}

TEST(Attack, ZeroStepsReturnsOriginal) {
  const auto enc = oracle::LinearEncoder::random(3, 4, 1);
  const auto x = constant(2, 2, 1, 0.3);
  AttackConfig c;
  c.steps = 0;
  const auto r = pca_attack(x, enc, c);
  EXPECT_EQ(r.adversarial, x);
  EXPECT_EQ(max_abs(r.delta), 0.0);
  EXPECT_EQ(r.loss_trace.size(), 1u);
}

TEST(Attack, AnalyticScalarTrace) {
  const auto enc = oracle::LinearEncoder::scalar_identity();
  const auto x0 = constant(1, 1, 1, 0.5);
  AttackConfig c;
  c.steps = 4;
  c.variance_target = TargetPrior{1.0};
  c.direction = Direction::minimize;
  const auto lo = pca_attack(x0, enc, c);
  EXPECT_NEAR(lo.adversarial[0], 0.5 - 8.0 / 255.0, 1e-15);
  EXPECT_NEAR(lo.adversarial[0], 0.46863, 5e-6);
  c.direction = Direction::maximize;
  const auto hi = pca_attack(x0, enc, c);
  EXPECT_NEAR(hi.adversarial[0], 0.5 + 8.0 / 255.0, 1e-15);
  // loss = mu^2 / 2 along the trace.
  ASSERT_EQ(lo.loss_trace.size(), 5u);
  for (std::size_t k = 0; k < 5; ++k) {
    const double mu = 0.5 - 2.0 * k / 255.0;
    EXPECT_NEAR(lo.loss_trace[k], 0.5 * mu * mu, 1e-12);
  }
}

TEST(Attack, AnalyticScalarSaturatesAtBudget) {
  const auto enc = oracle::LinearEncoder::scalar_identity();
  AttackConfig c;
  c.variance_target = TargetPrior{1.0};
  const auto r = pca_attack(constant(1, 1, 1, 0.5), enc, c);
  EXPECT_NEAR(r.adversarial[0], 0.5 - 16.0 / 255.0, 1e-12);
}

TEST(Attack, DirectionMonotoneWhileUnprojected) {
  const auto enc = oracle::LinearEncoder::random(4, 12, 3);
  std::mt19937_64 rng(3);
  ImageGrid x = oracle::random_image(2, 2, 3, rng);
  for (double& v : x.pixels()) v = 0.25 + 0.5 * v;
  for (Criterion crit : {Criterion::reverse_kl, Criterion::forward_kl, Criterion::mse}) {
    for (Direction d : {Direction::minimize, Direction::maximize}) {
      AttackConfig c;
      c.epsilon = 1.0;
      c.alpha = 1e-3;
      c.steps = 20;
      c.variance_target = TargetPrior{0.5};
      c.criterion = crit;
      c.direction = d;
      const auto r = pca_attack(x, enc, c);
      for (std::size_t k = 1; k < r.loss_trace.size(); ++k) {
        if (d == Direction::minimize) {
          EXPECT_LT(r.loss_trace[k], r.loss_trace[k - 1]) << to_string(crit);
        } else {
          EXPECT_GT(r.loss_trace[k], r.loss_trace[k - 1]) << to_string(crit);
        }
      }
    }
  }
}

TEST(Attack, BudgetAndRangeInvariants) {
  const auto m = make_vae(VaeArchitecture{}, 11);
  const auto images = generate_shapes(4, 32, 11);
  for (Direction d : {Direction::minimize, Direction::maximize}) {
    for (bool random_start : {false, true}) {
      AttackConfig c;
      c.steps = 6;
      c.direction = d;
      c.random_start = random_start;
      c.variance_target = TargetPrior{d == Direction::minimize ? 1e-8 : 1.0};
      for (const auto& img : images) {
        const auto r = pca_attack(img, m.encoder, c);
        EXPECT_LE(max_abs(r.delta), c.epsilon + 1e-6);
        EXPECT_TRUE(r.adversarial.in_unit_range());
        EXPECT_EQ(r.loss_trace.size(), c.steps + 1);
        for (std::size_t i = 0; i < img.size(); ++i) {
          EXPECT_DOUBLE_EQ(r.adversarial[i], img[i] + r.delta[i]);
        }
      }
    }
  }
}

TEST(Attack, DeterministicForFixedSeed) {
  const auto m = make_vae(VaeArchitecture{}, 12);
  const auto img = generate_shapes(1, 32, 12).front();
  AttackConfig c;
  c.steps = 5;
  c.random_start = true;
  const auto a = pca_attack(img, m.encoder, c);
  const auto b = pca_attack(img, m.encoder, c);
  EXPECT_EQ(a.delta, b.delta);
  EXPECT_EQ(a.loss_trace, b.loss_trace);
  c.seed += 1;
  EXPECT_NE(pca_attack(img, m.encoder, c).delta, a.delta);
}

TEST(Attack, InLoopTransformFeedsEncoder) {
  const auto m = make_vae(VaeArchitecture{}, 13);
  const auto img = generate_shapes(1, 32, 13).front();
  AttackConfig c;
  c.steps = 3;
  c.in_loop_transform = std::make_shared<GaussianBlurTransform>(3, 0.8);
  const auto r = pca_attack(img, m.encoder, c);
  const auto seen = m.encoder.encode(gaussian_blur(img, 3, 0.8));
  EXPECT_EQ(r.posterior_before.mean, seen.mean);
  EXPECT_NEAR(r.loss_trace.front(), collapse_loss(seen, c.variance_target), 1e-9);
  const auto after = m.encoder.encode(gaussian_blur(r.adversarial, 3, 0.8));
  EXPECT_NEAR(r.loss_trace.back(), collapse_loss(after, c.variance_target), 1e-9);
}

TEST(Attack, NonFiniteGradientAbortsWithStep) {
  AttackConfig c;
  c.steps = 10;
  c.variance_target = TargetPrior{1.0};
  FaultyEncoder enc(3);
  try {
    pca_attack(constant(1, 1, 1, 0.5), enc, c);
    FAIL() << "expected AttackError";
  } catch (const AttackError& e) {
    EXPECT_EQ(e.step(), 3u);
  }
}

TEST(Attack, BatchMatchesSingleCallsAndContinuesPastFailures) {
  const auto enc = oracle::LinearEncoder::random(3, 4, 5);
  std::vector<ImageGrid> images;
  std::mt19937_64 rng(5);
  for (int i = 0; i < 3; ++i) images.push_back(oracle::random_image(2, 2, 1, rng));
  AttackConfig c;
  c.steps = 4;
  c.variance_target = TargetPrior{0.5};
  const auto batch = attack_batch(images, enc, c);
  ASSERT_EQ(batch.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    AttackConfig ci = c;
    ci.seed = c.seed + i;
    ASSERT_TRUE(batch[i].result.has_value());
    EXPECT_EQ(batch[i].result->delta, pca_attack(images[i], enc, ci).delta);
  }
  // Reversed order gives reversed results.
  const std::vector<ImageGrid> reversed(images.rbegin(), images.rend());
  const auto back = attack_batch(reversed, enc, c);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(back[i].result->delta, batch[2 - i].result->delta);
  }

  FaultyEncoder faulty(0);
  const auto failed =
      attack_batch({constant(1, 1, 1, 0.5), constant(1, 1, 1, 0.2)}, faulty, c);
  ASSERT_EQ(failed.size(), 2u);
  EXPECT_FALSE(failed[0].result.has_value());
  EXPECT_FALSE(failed[0].error.empty());
  EXPECT_FALSE(failed[1].result.has_value());
}

}  // namespace
}  // namespace collapse
