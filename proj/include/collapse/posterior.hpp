#ifndef COLLAPSE_POSTERIOR_HPP
#define COLLAPSE_POSTERIOR_HPP

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace collapse {

/// Diagonal Gaussian q(z|x) = N(mean, diag(exp(log_variance))).
struct PosteriorParams {
  std::vector<double> mean;
  std::vector<double> log_variance;

  std::size_t dim() const { return mean.size(); }
  /// Throws ValidationError on length mismatch, d == 0, or non-finite entries.
  void validate() const;
};

/// Isotropic attack target N(0, v I).
struct TargetPrior {
  double variance_scale = 1.0;
  void validate() const;
};

enum class Criterion { reverse_kl, forward_kl, mse };

std::string_view to_string(Criterion c);
Criterion criterion_from_string(std::string_view name);

/// KL(q || N(0, vI)) = 1/2 sum((s2 + mu^2)/v - 1 + ln(v / s2)).
double kl_to_isotropic(const PosteriorParams& post, const TargetPrior& prior);

/// Reverse KL with the constant (d/2) ln v dropped:
/// 1/2 sum(-ln s2 - 1 + (mu^2 + s2)/v). This is the attack objective.
double collapse_loss(const PosteriorParams& post, const TargetPrior& prior);

/// KL(N(0, vI) || q) = 1/2 sum(ln(s2/v) - 1 + (v + mu^2)/s2).
double forward_kl_to_isotropic(const PosteriorParams& post, const TargetPrior& prior);

/// Squared distance of (mu, s2) from (0, v): sum mu^2 + sum (s2 - v)^2.
double mse_criterion(const PosteriorParams& post, const TargetPrior& prior);

/// Gradient of a criterion with respect to mean and log_variance.
struct PosteriorGradient {
  std::vector<double> d_mean;
  std::vector<double> d_log_variance;
};

/// Value of the attack objective for `c`. reverse_kl evaluates collapse_loss,
/// whose gradient equals that of kl_to_isotropic.
double evaluate_criterion(Criterion c, const PosteriorParams& post, const TargetPrior& prior);
PosteriorGradient criterion_gradient(Criterion c, const PosteriorParams& post,
                                     const TargetPrior& prior);

struct SurfaceRange {
  double lo = 0.0;
  double hi = 0.0;
};

/// Criterion evaluated on a resolution x resolution grid of scalar (mu, s2)
/// posteriors (d = 1). Row i is mu_i, column j is s2_j; both axes are evenly
/// spaced with inclusive endpoints.
struct LossSurface {
  std::vector<double> mu;
  std::vector<double> sigma2;
  std::vector<std::vector<double>> loss;
};

LossSurface loss_surface_grid(Criterion c, SurfaceRange mu_range, SurfaceRange sigma2_range,
                              std::size_t resolution, double variance_scale);

}  // namespace collapse

#endif  // COLLAPSE_POSTERIOR_HPP
