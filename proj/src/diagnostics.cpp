#include "collapse/diagnostics.hpp"

#include <cmath>
#include <limits>

#include "collapse/errors.hpp"

namespace collapse {

PosteriorStats posterior_stats(const PosteriorParams& post) {
  post.validate();
  PosteriorStats s;
  for (std::size_t i = 0; i < post.dim(); ++i) {
    s.mean_sq_mu += post.mean[i] * post.mean[i];
    s.mean_sigma_sq += std::exp(post.log_variance[i]);
  }
  const double d = static_cast<double>(post.dim());
  s.mean_sq_mu /= d;
  s.mean_sigma_sq /= d;
  s.kl_to_standard = kl_to_isotropic(post, TargetPrior{1.0});
  return s;
}

std::string_view to_string(CollapseKind k) {
  switch (k) {
    case CollapseKind::none: return "none";
    case CollapseKind::concentration: return "concentration";
    case CollapseKind::diffusion: return "diffusion";
  }
  return "unknown";
}

namespace {

double ratio(double after, double before) {
  if (before > 0.0) return after / before;
  return after > 0.0 ? std::numeric_limits<double>::infinity() : 1.0;
}

}  // namespace

CollapseVerdict classify_collapse(const PosteriorStats& before, const PosteriorStats& after,
                                  double shrink, double grow) {
  CollapseVerdict v;
  v.mu_ratio = ratio(after.mean_sq_mu, before.mean_sq_mu);
  v.sigma_ratio = ratio(after.mean_sigma_sq, before.mean_sigma_sq);
  if (after.mean_sq_mu < shrink * before.mean_sq_mu &&
      after.mean_sigma_sq < shrink * before.mean_sigma_sq) {
    v.kind = CollapseKind::concentration;
  } else if (after.mean_sigma_sq > grow * before.mean_sigma_sq) {
    v.kind = CollapseKind::diffusion;
  }
  return v;
}

TrajectorySummary trajectory_summary(const std::vector<double>& trace, Direction direction) {
  if (trace.empty()) throw ValidationError("trajectory_summary: empty loss trace");
  TrajectorySummary s;
  s.first_loss = trace.front();
  s.last_loss = trace.back();
  const std::size_t steps = trace.size() - 1;
  if (steps == 0) return s;
  std::size_t good = 0;
  for (std::size_t i = 1; i < trace.size(); ++i) {
    const bool moved = direction == Direction::minimize ? trace[i] < trace[i - 1]
                                                        : trace[i] > trace[i - 1];
    if (moved) ++good;
  }
  s.monotonic_fraction = static_cast<double>(good) / static_cast<double>(steps);
  s.slope = (s.last_loss - s.first_loss) / static_cast<double>(steps);
  return s;
}

TrajectorySummary trajectory_summary(const AttackResult& result, Direction direction) {
  return trajectory_summary(result.loss_trace, direction);
}

}  // namespace collapse
