#ifndef COLLAPSE_DIAGNOSTICS_HPP
#define COLLAPSE_DIAGNOSTICS_HPP

#include <string_view>

#include "collapse/attack.hpp"
#include "collapse/posterior.hpp"

namespace collapse {

struct PosteriorStats {
  double mean_sq_mu = 0.0;     // (1/d) sum mu_i^2
  double mean_sigma_sq = 0.0;  // (1/d) sum sigma_i^2
  double kl_to_standard = 0.0; // KL(q || N(0, I))
};

PosteriorStats posterior_stats(const PosteriorParams& post);

enum class CollapseKind { none, concentration, diffusion };
std::string_view to_string(CollapseKind k);

struct CollapseVerdict {
  CollapseKind kind = CollapseKind::none;
  double mu_ratio = 0.0;     // after / before mean_sq_mu
  double sigma_ratio = 0.0;  // after / before mean_sigma_sq
};

/// Concentration: both mean_sq_mu and mean_sigma_sq fell below `shrink` times
/// their clean values. Diffusion: mean_sigma_sq rose above `grow` times.
/// Concentration is tested first. Thresholds are conventions, not limits.
CollapseVerdict classify_collapse(const PosteriorStats& before, const PosteriorStats& after,
                                  double shrink = 0.1, double grow = 10.0);

struct TrajectorySummary {
  double monotonic_fraction = 1.0;  // share of steps moving in the attack direction
  double first_loss = 0.0;
  double last_loss = 0.0;
  double slope = 0.0;  // (last - first) / steps
};

TrajectorySummary trajectory_summary(const std::vector<double>& loss_trace, Direction direction);
TrajectorySummary trajectory_summary(const AttackResult& result, Direction direction);

}  // namespace collapse

#endif  // COLLAPSE_DIAGNOSTICS_HPP
