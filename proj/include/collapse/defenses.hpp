#ifndef COLLAPSE_DEFENSES_HPP
#define COLLAPSE_DEFENSES_HPP

#include <cstddef>
#include <memory>
#include <string>
#include <string_view>

#include <json.hpp>

#include "collapse/attack.hpp"
#include "collapse/image.hpp"

namespace collapse {

/// Channelwise Gaussian blur with reflect padding. Linear in the image.
ImageGrid gaussian_blur(const ImageGrid& image, std::size_t kernel_size = 3, double sigma = 0.8);

/// Encode/decode round trip through baseline JPEG at `quality` in [1, 100].
ImageGrid jpeg_compress(const ImageGrid& image, int quality);

/// Training-free purification: each iteration applies a joint bilateral
/// filter (5x5, spatial sigma 1.5, range sigma 0.1) and then soft-thresholds
/// the residual against a 5x5 Gaussian low-pass (threshold 0.03).
ImageGrid filter_clean(const ImageGrid& image, std::size_t iterations = 4);

enum class DefenseKind { identity, gaussian_blur, jpeg, filter_clean };

std::string_view to_string(DefenseKind k);
DefenseKind defense_kind_from_string(std::string_view name);

struct DefenseSpec {
  DefenseKind kind = DefenseKind::identity;
  std::size_t kernel_size = 3;  // gaussian_blur
  double sigma = 0.8;           // gaussian_blur
  int quality = 75;             // jpeg
  std::size_t iterations = 4;   // filter_clean

  void validate() const;
  /// Short label such as "gaussian_blur:3" or "jpeg:75".
  std::string label() const;
  /// Parses "identity", "gaussian_blur[:k[:sigma]]", "jpeg[:quality]", "filter_clean[:iters]".
  static DefenseSpec parse(std::string_view text);

  friend bool operator==(const DefenseSpec&, const DefenseSpec&) = default;
};

void to_json(nlohmann::json& j, const DefenseSpec& spec);
void from_json(const nlohmann::json& j, DefenseSpec& spec);

ImageGrid apply_defense(const ImageGrid& image, const DefenseSpec& spec);

/// Gaussian blur as an in-loop transform; the VJP is the exact adjoint.
class GaussianBlurTransform : public DifferentiableTransform {
 public:
  explicit GaussianBlurTransform(std::size_t kernel_size = 3, double sigma = 0.8);
  ImageGrid apply(const ImageGrid& image) const override;
  ImageGrid vjp(const ImageGrid& image, const ImageGrid& grad_output) const override;
  std::string name() const override;

 private:
  std::size_t kernel_size_;
  double sigma_;
  std::vector<double> taps_;
};

/// In-loop transform for a defense spec. Only identity and gaussian_blur are
/// differentiable; other kinds are rejected.
std::shared_ptr<const DifferentiableTransform> make_in_loop_transform(const DefenseSpec& spec);

}  // namespace collapse

#endif  // COLLAPSE_DEFENSES_HPP
