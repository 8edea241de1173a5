#include "collapse/filters.hpp"

#include <cmath>

#include "collapse/errors.hpp"

namespace collapse {

std::vector<double> gaussian_kernel(std::size_t size, double sigma) {
  if (size == 0 || size % 2 == 0) throw ValidationError("Gaussian kernel size must be odd");
  if (!(sigma > 0.0)) throw ValidationError("Gaussian sigma must be positive");
  std::vector<double> taps(size);
  const double r = static_cast<double>(size / 2);
  double sum = 0.0;
  for (std::size_t i = 0; i < size; ++i) {
    const double x = static_cast<double>(i) - r;
    taps[i] = std::exp(-x * x / (2.0 * sigma * sigma));
    sum += taps[i];
  }
  for (double& t : taps) t /= sum;
  return taps;
}

std::size_t reflect_index(long i, std::size_t n) {
  if (n == 1) return 0;
  const long period = 2 * (static_cast<long>(n) - 1);
  long m = i % period;
  if (m < 0) m += period;
  if (m >= static_cast<long>(n)) m = period - m;
  return static_cast<std::size_t>(m);
}

namespace {

// One pass along an axis. `transpose` scatters instead of gathers.
ImageGrid filter_axis(const ImageGrid& in, const std::vector<double>& taps, bool along_x,
                      bool transpose) {
  const std::size_t h = in.height(), w = in.width(), ch = in.channels();
  const long r = static_cast<long>(taps.size() / 2);
  ImageGrid out(h, w, ch);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t k = 0; k < taps.size(); ++k) {
        const long off = static_cast<long>(k) - r;
        std::size_t sy = y, sx = x;
        if (along_x) {
          sx = reflect_index(static_cast<long>(x) + off, w);
        } else {
          sy = reflect_index(static_cast<long>(y) + off, h);
        }
        for (std::size_t c = 0; c < ch; ++c) {
          if (transpose) {
            out.at(sy, sx, c) += taps[k] * in.at(y, x, c);
          } else {
            out.at(y, x, c) += taps[k] * in.at(sy, sx, c);
          }
        }
      }
    }
  }
  return out;
}

}  // namespace

ImageGrid separable_filter(const ImageGrid& image, const std::vector<double>& taps) {
  return filter_axis(filter_axis(image, taps, true, false), taps, false, false);
}

ImageGrid separable_filter_adjoint(const ImageGrid& grad, const std::vector<double>& taps) {
  return filter_axis(filter_axis(grad, taps, false, true), taps, true, true);
}

}  // namespace collapse
