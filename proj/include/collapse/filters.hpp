#ifndef COLLAPSE_FILTERS_HPP
#define COLLAPSE_FILTERS_HPP

#include <cstddef>
#include <vector>

#include "collapse/image.hpp"

namespace collapse {

/// Normalized 1-D Gaussian taps of odd length `size`.
std::vector<double> gaussian_kernel(std::size_t size, double sigma);

/// Mirror index without edge repetition (-1 -> 1, n -> n - 2). n == 1 maps to 0.
std::size_t reflect_index(long i, std::size_t n);

/// Separable channelwise convolution with `taps` along both axes, reflect padding.
ImageGrid separable_filter(const ImageGrid& image, const std::vector<double>& taps);
/// Exact adjoint of `separable_filter` (transpose of its matrix).
ImageGrid separable_filter_adjoint(const ImageGrid& grad, const std::vector<double>& taps);

}  // namespace collapse

#endif  // COLLAPSE_FILTERS_HPP
