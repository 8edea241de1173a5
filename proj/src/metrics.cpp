#include "collapse/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <mutex>
#include <sstream>

#include <json.hpp>

#include "collapse/errors.hpp"
#include "collapse/filters.hpp"

namespace collapse {

namespace {

constexpr double kWindowSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

ImageGrid product(const ImageGrid& a, const ImageGrid& b) {
  ImageGrid out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
  return out;
}

struct Registry {
  std::mutex mutex;
  std::map<std::string, MetricFunction> backends;
};

Registry& registry() {
  static Registry r;
  return r;
}

bool is_reserved(const std::string& id) { return id == "fid" || id == "lpips"; }

}  // namespace

double psnr(const ImageGrid& a, const ImageGrid& b) {
  require_same_shape(a, b, "psnr");
  if (a.empty()) throw ValidationError("psnr: empty image");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    sum += d * d;
  }
  if (sum == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / (sum / static_cast<double>(a.size())));
}

double ssim(const ImageGrid& a, const ImageGrid& b, std::size_t kernel_size) {
  require_same_shape(a, b, "ssim");
  if (a.empty()) throw ValidationError("ssim: empty image");
  if (kernel_size % 2 == 0) throw ValidationError("ssim: kernel size must be odd");
  const auto taps = gaussian_kernel(kernel_size, kWindowSigma);

  const ImageGrid mu_a = separable_filter(a, taps);
  const ImageGrid mu_b = separable_filter(b, taps);
  const ImageGrid e_aa = separable_filter(product(a, a), taps);
  const ImageGrid e_bb = separable_filter(product(b, b), taps);
  const ImageGrid e_ab = separable_filter(product(a, b), taps);

  const std::size_t channels = a.channels();
  const std::size_t pixels = a.height() * a.width();
  double total = 0.0;
  for (std::size_t c = 0; c < channels; ++c) {
    double channel_sum = 0.0;
    for (std::size_t p = 0; p < pixels; ++p) {
      const std::size_t i = p * channels + c;
      const double ma = mu_a[i], mb = mu_b[i];
      const double va = e_aa[i] - ma * ma;
      const double vb = e_bb[i] - mb * mb;
      const double cov = e_ab[i] - ma * mb;
      channel_sum += ((2.0 * ma * mb + kC1) * (2.0 * cov + kC2)) /
                     ((ma * ma + mb * mb + kC1) * (va + vb + kC2));
    }
    total += channel_sum / static_cast<double>(pixels);
  }
  return total / static_cast<double>(channels);
}

double acdm(const ImageGrid& a, const ImageGrid& b, std::size_t kernel_size) {
  require_same_shape(a, b, "acdm");
  if (a.channels() != 3) throw ValidationError("acdm: requires RGB images");
  const auto taps = gaussian_kernel(kernel_size, kWindowSigma);
  const ImageGrid sa = separable_filter(a, taps);
  const ImageGrid sb = separable_filter(b, taps);
  const double k1 = 1.0 / std::sqrt(2.0), k2 = 1.0 / std::sqrt(6.0), k3 = 1.0 / std::sqrt(3.0);
  const std::size_t pixels = a.height() * a.width();
  double sum = 0.0;
  for (std::size_t p = 0; p < pixels; ++p) {
    const double dr = sa[3 * p] - sb[3 * p];
    const double dg = sa[3 * p + 1] - sb[3 * p + 1];
    const double db = sa[3 * p + 2] - sb[3 * p + 2];
    const double o1 = k1 * (dr - dg);
    const double o2 = k2 * (dr + dg - 2.0 * db);
    const double o3 = k3 * (dr + dg + db);
    sum += std::sqrt(o1 * o1 + o2 * o2 + o3 * o3);
  }
  return sum / static_cast<double>(pixels);
}

void register_metric_backend(const std::string& id, MetricFunction fn) {
  if (id == "psnr" || id == "ssim" || id == "acdm") {
    throw ValidationError("metric '" + id + "' is built in");
  }
  auto& r = registry();
  std::lock_guard lock(r.mutex);
  r.backends[id] = std::move(fn);
}

bool is_known_metric(const std::string& id) {
  if (id == "psnr" || id == "ssim" || id == "acdm") return true;
  auto& r = registry();
  std::lock_guard lock(r.mutex);
  return r.backends.count(id) > 0;
}

MetricAggregate aggregate(const std::vector<double>& values) {
  MetricAggregate agg;
  agg.count = values.size();
  double sum = 0.0;
  std::size_t finite = 0;
  for (double v : values) {
    if (std::isinf(v) && v > 0) {
      ++agg.infinite;
    } else {
      sum += v;
      ++finite;
    }
  }
  if (finite == 0) {
    agg.mean = agg.infinite > 0 ? std::numeric_limits<double>::infinity() : 0.0;
    return agg;
  }
  agg.mean = sum / static_cast<double>(finite);
  double sq = 0.0;
  for (double v : values) {
    if (!(std::isinf(v) && v > 0)) sq += (v - agg.mean) * (v - agg.mean);
  }
  agg.stddev = std::sqrt(sq / static_cast<double>(finite));
  return agg;
}

MetricReport metric_report(const std::vector<std::pair<ImageGrid, ImageGrid>>& pairs,
                           const std::vector<std::string>& metric_ids) {
  if (pairs.empty()) throw ValidationError("metric_report: no image pairs");
  std::vector<MetricFunction> fns;
  for (const auto& id : metric_ids) {
    if (id == "psnr") {
      fns.emplace_back([](const ImageGrid& a, const ImageGrid& b) { return psnr(a, b); });
    } else if (id == "ssim") {
      fns.emplace_back([](const ImageGrid& a, const ImageGrid& b) { return ssim(a, b); });
    } else if (id == "acdm") {
      fns.emplace_back([](const ImageGrid& a, const ImageGrid& b) { return acdm(a, b); });
    } else {
      auto& r = registry();
      std::lock_guard lock(r.mutex);
      auto it = r.backends.find(id);
      if (it == r.backends.end()) {
        if (is_reserved(id)) {
          throw ValidationError("metric '" + id + "' needs an external backend; none registered");
        }
        throw ValidationError("unknown metric id '" + id + "'");
      }
      fns.push_back(it->second);
    }
  }

  MetricReport report;
  report.metric_ids = metric_ids;
  report.values.reserve(pairs.size());
  for (const auto& [a, b] : pairs) {
    std::vector<double> row;
    row.reserve(fns.size());
    for (const auto& fn : fns) row.push_back(fn(a, b));
    report.values.push_back(std::move(row));
  }
  for (std::size_t m = 0; m < metric_ids.size(); ++m) {
    std::vector<double> column;
    for (const auto& row : report.values) column.push_back(row[m]);
    report.aggregates[metric_ids[m]] = aggregate(column);
  }
  return report;
}

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::string MetricReport::to_csv(const std::vector<std::string>& pair_labels) const {
  std::ostringstream os;
  os << "pair";
  for (const auto& id : metric_ids) os << ',' << id;
  os << '\n';
  for (std::size_t i = 0; i < values.size(); ++i) {
    os << (i < pair_labels.size() ? pair_labels[i] : std::to_string(i));
    for (double v : values[i]) os << ',' << format_number(v);
    os << '\n';
  }
  return os.str();
}

std::string MetricReport::aggregates_json() const {
  auto num = [](double v) -> nlohmann::json {
    if (std::isfinite(v)) return v;
    return format_number(v);
  };
  nlohmann::json j = nlohmann::json::object();
  for (const auto& id : metric_ids) {
    const auto& a = aggregates.at(id);
    j[id] = {{"mean", num(a.mean)},
             {"stddev", num(a.stddev)},
             {"count", a.count},
             {"infinite", a.infinite}};
  }
  return j.dump(2);
}

}  // namespace collapse
