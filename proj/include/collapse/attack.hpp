#ifndef COLLAPSE_ATTACK_HPP
#define COLLAPSE_ATTACK_HPP

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "collapse/encoder.hpp"
#include "collapse/image.hpp"
#include "collapse/posterior.hpp"

namespace collapse {

/// Image transform with a vector-Jacobian product, placed in front of the
/// encoder for defense-aware (adaptive) attacks.
class DifferentiableTransform {
 public:
  virtual ~DifferentiableTransform() = default;
  virtual ImageGrid apply(const ImageGrid& image) const = 0;
  /// J^T * grad_output, with J the Jacobian of `apply` at `image`.
  virtual ImageGrid vjp(const ImageGrid& image, const ImageGrid& grad_output) const = 0;
  virtual std::string name() const = 0;
};

enum class Direction { minimize, maximize };

std::string_view to_string(Direction d);
Direction direction_from_string(std::string_view name);

/// Pixel-unit budgets are stored on the [0,1] scale; use `from_255` for the
/// 8-bit convention (16 -> 16/255).
struct AttackConfig {
  double epsilon = 16.0 / 255.0;
  double alpha = 2.0 / 255.0;
  std::size_t steps = 40;
  TargetPrior variance_target{1e-8};
  Direction direction = Direction::minimize;
  Criterion criterion = Criterion::reverse_kl;
  std::shared_ptr<const DifferentiableTransform> in_loop_transform;
  /// Start from a seeded uniform point in the epsilon ball instead of the original.
  bool random_start = false;
  std::uint64_t seed = 3407;

  static double from_255(double v) { return v / 255.0; }
  void validate() const;
};

struct AttackResult {
  ImageGrid adversarial;
  ImageGrid delta;                  // adversarial - original
  std::vector<double> loss_trace;   // criterion before each step and after the last (T + 1)
  PosteriorParams posterior_before; // posterior seen by the objective (after any in-loop transform)
  PosteriorParams posterior_after;
  double elapsed_seconds = 0.0;
};

/// Entrywise clamp of `delta` into [-epsilon, epsilon].
ImageGrid project_linf(const ImageGrid& delta, double epsilon);
/// Entrywise clamp into [0,1].
ImageGrid clip_valid(const ImageGrid& image);

/// Projected sign-gradient attack on the encoder posterior. Each step moves
/// x by s * alpha * sign(grad L), clips to [0,1] and projects x - x0 back into
/// the epsilon ball; s = -1 minimizes, +1 maximizes. Throws AttackError if a
/// loss or gradient becomes non-finite.
AttackResult pca_attack(const ImageGrid& image, const DifferentiableEncoder& encoder,
                        const AttackConfig& config);

struct BatchItem {
  std::optional<AttackResult> result;
  std::string error;  // set when result is empty
};

/// Per-image attacks with seed = config.seed + index; failures are recorded
/// and do not stop the batch.
std::vector<BatchItem> attack_batch(const std::vector<ImageGrid>& images,
                                    const DifferentiableEncoder& encoder,
                                    const AttackConfig& config);

}  // namespace collapse

#endif  // COLLAPSE_ATTACK_HPP
