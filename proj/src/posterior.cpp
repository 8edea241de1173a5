#include "collapse/posterior.hpp"

#include <cmath>

#include "collapse/errors.hpp"

namespace collapse {

void PosteriorParams::validate() const {
  if (mean.empty()) throw ValidationError("posterior: dimension must be at least 1");
  if (mean.size() != log_variance.size()) {
    throw ValidationError("posterior: mean and log_variance lengths differ");
  }
  for (std::size_t i = 0; i < mean.size(); ++i) {
    if (!std::isfinite(mean[i]) || !std::isfinite(log_variance[i])) {
      throw ValidationError("posterior: non-finite entry at index " + std::to_string(i));
    }
  }
}

void TargetPrior::validate() const {
  if (!(variance_scale > 0.0) || !std::isfinite(variance_scale)) {
    throw ValidationError("target prior: variance scale must be positive and finite");
  }
}

std::string_view to_string(Criterion c) {
  switch (c) {
    case Criterion::reverse_kl: return "reverse_kl";
    case Criterion::forward_kl: return "forward_kl";
    case Criterion::mse: return "mse";
  }
  return "unknown";
}

Criterion criterion_from_string(std::string_view name) {
  if (name == "reverse_kl") return Criterion::reverse_kl;
  if (name == "forward_kl") return Criterion::forward_kl;
  if (name == "mse") return Criterion::mse;
  throw ValidationError("unknown criterion '" + std::string(name) + "'");
}

namespace {

void check(const PosteriorParams& post, const TargetPrior& prior) {
  post.validate();
  prior.validate();
}

}  // namespace

double kl_to_isotropic(const PosteriorParams& post, const TargetPrior& prior) {
  check(post, prior);
  const double v = prior.variance_scale;
  const double log_v = std::log(v);
  double sum = 0.0;
  for (std::size_t i = 0; i < post.dim(); ++i) {
    const double lv = post.log_variance[i];
    const double mu = post.mean[i];
    sum += (std::exp(lv) + mu * mu) / v - 1.0 + (log_v - lv);
  }
  return 0.5 * sum;
}

double collapse_loss(const PosteriorParams& post, const TargetPrior& prior) {
  check(post, prior);
  const double v = prior.variance_scale;
  double sum = 0.0;
  for (std::size_t i = 0; i < post.dim(); ++i) {
    const double lv = post.log_variance[i];
    const double mu = post.mean[i];
    sum += -lv - 1.0 + (mu * mu + std::exp(lv)) / v;
  }
  return 0.5 * sum;
}

double forward_kl_to_isotropic(const PosteriorParams& post, const TargetPrior& prior) {
  check(post, prior);
  const double v = prior.variance_scale;
  const double log_v = std::log(v);
  double sum = 0.0;
  for (std::size_t i = 0; i < post.dim(); ++i) {
    const double lv = post.log_variance[i];
    const double mu = post.mean[i];
    sum += (lv - log_v) - 1.0 + (v + mu * mu) * std::exp(-lv);
  }
  return 0.5 * sum;
}

double mse_criterion(const PosteriorParams& post, const TargetPrior& prior) {
  check(post, prior);
  const double v = prior.variance_scale;
  double sum = 0.0;
  for (std::size_t i = 0; i < post.dim(); ++i) {
    const double mu = post.mean[i];
    const double dv = std::exp(post.log_variance[i]) - v;
    sum += mu * mu + dv * dv;
  }
  return sum;
}

double evaluate_criterion(Criterion c, const PosteriorParams& post, const TargetPrior& prior) {
  switch (c) {
    case Criterion::reverse_kl: return collapse_loss(post, prior);
    case Criterion::forward_kl: return forward_kl_to_isotropic(post, prior);
    case Criterion::mse: return mse_criterion(post, prior);
  }
  throw ValidationError("unknown criterion");
}

PosteriorGradient criterion_gradient(Criterion c, const PosteriorParams& post,
                                     const TargetPrior& prior) {
  check(post, prior);
  const double v = prior.variance_scale;
  const std::size_t d = post.dim();
  PosteriorGradient g{std::vector<double>(d), std::vector<double>(d)};
  for (std::size_t i = 0; i < d; ++i) {
    const double mu = post.mean[i];
    const double lv = post.log_variance[i];
    switch (c) {
      case Criterion::reverse_kl:
        g.d_mean[i] = mu / v;
        g.d_log_variance[i] = 0.5 * (std::exp(lv) / v - 1.0);
        break;
      case Criterion::forward_kl: {
        const double inv_s2 = std::exp(-lv);
        g.d_mean[i] = mu * inv_s2;
        g.d_log_variance[i] = 0.5 * (1.0 - (v + mu * mu) * inv_s2);
        break;
      }
      case Criterion::mse: {
        const double s2 = std::exp(lv);
        g.d_mean[i] = 2.0 * mu;
        g.d_log_variance[i] = 2.0 * (s2 - v) * s2;
        break;
      }
    }
  }
  return g;
}

LossSurface loss_surface_grid(Criterion c, SurfaceRange mu_range, SurfaceRange sigma2_range,
                              std::size_t resolution, double variance_scale) {
  if (resolution < 2) throw ValidationError("loss surface: resolution must be at least 2");
  if (!(sigma2_range.lo > 0.0) || !(sigma2_range.hi > 0.0)) {
    throw ValidationError("loss surface: sigma^2 range must be strictly positive");
  }
  if (!(mu_range.hi >= mu_range.lo) || !(sigma2_range.hi >= sigma2_range.lo)) {
    throw ValidationError("loss surface: range upper bound below lower bound");
  }
  const TargetPrior prior{variance_scale};
  prior.validate();

  auto axis = [resolution](SurfaceRange r) {
    std::vector<double> a(resolution);
    const double step = (r.hi - r.lo) / static_cast<double>(resolution - 1);
    for (std::size_t i = 0; i < resolution; ++i) a[i] = r.lo + step * static_cast<double>(i);
    a.back() = r.hi;
    return a;
  };

  LossSurface s;
  s.mu = axis(mu_range);
  s.sigma2 = axis(sigma2_range);
  s.loss.assign(resolution, std::vector<double>(resolution));
  PosteriorParams p{{0.0}, {0.0}};
  for (std::size_t i = 0; i < resolution; ++i) {
    for (std::size_t j = 0; j < resolution; ++j) {
      p.mean[0] = s.mu[i];
      p.log_variance[0] = std::log(s.sigma2[j]);
      s.loss[i][j] = c == Criterion::reverse_kl ? kl_to_isotropic(p, prior)
                                                : evaluate_criterion(c, p, prior);
    }
  }
  return s;
}

}  // namespace collapse
