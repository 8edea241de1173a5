#ifndef COLLAPSE_ENCODER_HPP
#define COLLAPSE_ENCODER_HPP

#include <functional>

#include "collapse/image.hpp"
#include "collapse/posterior.hpp"

namespace collapse {

/// Maps dL/d(posterior) to itself given the posterior; supplied by the caller
/// of `DifferentiableEncoder::input_gradient`.
using PosteriorLossGradient = std::function<PosteriorGradient(const PosteriorParams&)>;

/// Any image -> diagonal-Gaussian encoder the attack can differentiate through.
/// Implementations must be safe to call concurrently on a const instance.
class DifferentiableEncoder {
 public:
  virtual ~DifferentiableEncoder() = default;

  virtual PosteriorParams encode(const ImageGrid& image) const = 0;

  /// Encodes `image`, evaluates `upstream` at the resulting posterior and
  /// back-propagates to pixel space. The posterior is written to `posterior`
  /// when non-null.
  virtual ImageGrid input_gradient(const ImageGrid& image, const PosteriorLossGradient& upstream,
                                   PosteriorParams* posterior = nullptr) const = 0;
};

}  // namespace collapse

#endif  // COLLAPSE_ENCODER_HPP
