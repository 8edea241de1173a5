#include "collapse/attack.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>

#include "collapse/errors.hpp"

namespace collapse {

std::string_view to_string(Direction d) {
  return d == Direction::minimize ? "minimize" : "maximize";
}

Direction direction_from_string(std::string_view name) {
  if (name == "minimize" || name == "pca-" || name == "PCA-") return Direction::minimize;
  if (name == "maximize" || name == "pca+" || name == "PCA+") return Direction::maximize;
  throw ValidationError("unknown direction '" + std::string(name) + "'");
}

void AttackConfig::validate() const {
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) {
    throw ValidationError("attack: epsilon must be nonnegative");
  }
  if (steps > 0 && !(alpha > 0.0)) throw ValidationError("attack: alpha must be positive");
  variance_target.validate();
}

ImageGrid project_linf(const ImageGrid& delta, double epsilon) {
  if (!(epsilon >= 0.0)) throw ValidationError("project_linf: epsilon must be nonnegative");
  ImageGrid out = delta;
  for (double& v : out.pixels()) v = std::clamp(v, -epsilon, epsilon);
  return out;
}

ImageGrid clip_valid(const ImageGrid& image) {
  ImageGrid out = image;
  for (double& v : out.pixels()) v = std::clamp(v, 0.0, 1.0);
  return out;
}

namespace {

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// x0 + clamp(x - x0, -eps, eps)
void project_around(ImageGrid& x, const ImageGrid& origin, double epsilon) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = origin[i] + std::clamp(x[i] - origin[i], -epsilon, epsilon);
  }
}

}  // namespace

AttackResult pca_attack(const ImageGrid& image, const DifferentiableEncoder& encoder,
                        const AttackConfig& config) {
  config.validate();
  if (image.empty()) throw ValidationError("attack: empty image");
  const auto started = std::chrono::steady_clock::now();
  const DifferentiableTransform* transform = config.in_loop_transform.get();
  const double s = config.direction == Direction::minimize ? -1.0 : 1.0;

  ImageGrid x = image;
  if (config.random_start && config.epsilon > 0.0) {
    std::mt19937_64 rng(config.seed);
    std::uniform_real_distribution<double> u(-config.epsilon, config.epsilon);
    for (double& v : x.pixels()) v += u(rng);
    x = clip_valid(x);
    project_around(x, image, config.epsilon);
  }

  // Loss value, posterior and pixel gradient of the objective at x.
  double loss = 0.0;
  PosteriorParams posterior;
  auto objective_gradient = [&](const ImageGrid& at) {
    const ImageGrid fed = transform ? transform->apply(at) : at;
    ImageGrid g = encoder.input_gradient(
        fed,
        [&](const PosteriorParams& post) {
          loss = evaluate_criterion(config.criterion, post, config.variance_target);
          return criterion_gradient(config.criterion, post, config.variance_target);
        },
        &posterior);
    return transform ? transform->vjp(at, g) : g;
  };

  AttackResult result;
  result.loss_trace.reserve(config.steps + 1);
  for (std::size_t step = 0; step < config.steps; ++step) {
    const ImageGrid grad = objective_gradient(x);
    if (!std::isfinite(loss)) throw AttackError(step, "non-finite loss");
    if (!grad.all_finite()) throw AttackError(step, "non-finite gradient");
    if (step == 0) result.posterior_before = posterior;
    result.loss_trace.push_back(loss);

    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] = std::clamp(x[i] + s * config.alpha * sign(grad[i]), 0.0, 1.0);
    }
    project_around(x, image, config.epsilon);
  }

  // Trailing evaluation after the last step (or the only one when steps == 0).
  {
    const ImageGrid fed = transform ? transform->apply(x) : x;
    posterior = encoder.encode(fed);
    loss = evaluate_criterion(config.criterion, posterior, config.variance_target);
    if (!std::isfinite(loss)) throw AttackError(config.steps, "non-finite loss");
    if (config.steps == 0) result.posterior_before = posterior;
    result.posterior_after = posterior;
    result.loss_trace.push_back(loss);
  }

  result.delta = ImageGrid(image.height(), image.width(), image.channels());
  for (std::size_t i = 0; i < x.size(); ++i) result.delta[i] = x[i] - image[i];
  result.adversarial = std::move(x);
  result.elapsed_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

std::vector<BatchItem> attack_batch(const std::vector<ImageGrid>& images,
                                    const DifferentiableEncoder& encoder,
                                    const AttackConfig& config) {
  if (!images.empty()) {
    for (const auto& img : images) require_same_shape(images.front(), img, "attack_batch");
  }
  std::vector<BatchItem> out(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    AttackConfig per_image = config;
    per_image.seed = config.seed + i;
    try {
      out[i].result = pca_attack(images[i], encoder, per_image);
    } catch (const std::exception& e) {
      out[i].error = e.what();
    }
  }
  return out;
}

}  // namespace collapse
