#ifndef COLLAPSE_METRICS_HPP
#define COLLAPSE_METRICS_HPP

#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "collapse/image.hpp"

namespace collapse {

/// 10 log10(1 / MSE) at data range 1. Identical images give +infinity.
double psnr(const ImageGrid& a, const ImageGrid& b);

/// Mean SSIM over Gaussian windows (sigma 1.5), reflect padding, C1 = 0.01^2,
/// C2 = 0.03^2; per-channel maps are averaged.
double ssim(const ImageGrid& a, const ImageGrid& b, std::size_t kernel_size = 11);

/// Color-consistency distance: both RGB images are Gaussian-smoothed
/// (sigma 1.5), mapped to an orthonormal opponent-color basis, and the mean
/// per-pixel Euclidean distance is returned.
double acdm(const ImageGrid& a, const ImageGrid& b, std::size_t kernel_size = 11);

using MetricFunction = std::function<double(const ImageGrid&, const ImageGrid&)>;

/// Metric ids understood by `metric_report`: psnr, ssim, acdm, plus any
/// registered backend. "fid" and "lpips" are reserved and require a backend.
void register_metric_backend(const std::string& id, MetricFunction fn);
bool is_known_metric(const std::string& id);

struct MetricAggregate {
  double mean = 0.0;    // over finite values; +inf if every value is +inf
  double stddev = 0.0;  // population standard deviation over finite values
  std::size_t count = 0;
  std::size_t infinite = 0;  // number of +inf values excluded from mean/stddev
};

struct MetricReport {
  std::vector<std::string> metric_ids;
  std::vector<std::vector<double>> values;  // [pair][metric]
  std::map<std::string, MetricAggregate> aggregates;

  std::string to_csv(const std::vector<std::string>& pair_labels = {}) const;
  std::string aggregates_json() const;
};

MetricAggregate aggregate(const std::vector<double>& values);

MetricReport metric_report(const std::vector<std::pair<ImageGrid, ImageGrid>>& pairs,
                           const std::vector<std::string>& metric_ids);

/// Formats a double with round-trip precision; infinities as "inf"/"-inf".
std::string format_number(double v);

}  // namespace collapse

#endif  // COLLAPSE_METRICS_HPP
