#ifndef COLLAPSE_IMAGE_HPP
#define COLLAPSE_IMAGE_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace collapse {

/// H x W x C pixel grid stored interleaved (row-major, channel fastest).
///
/// Values are nominally in [0,1]; the container itself does not enforce the
/// range so that intermediate results (unclipped steps, linear combinations)
/// can be represented. Use `in_unit_range()` to check the invariant.
class ImageGrid {
 public:
  ImageGrid() = default;
  ImageGrid(std::size_t height, std::size_t width, std::size_t channels, double fill = 0.0);
  ImageGrid(std::size_t height, std::size_t width, std::size_t channels,
            std::vector<double> pixels);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t channels() const { return channels_; }
  std::size_t size() const { return pixels_.size(); }
  bool empty() const { return pixels_.empty(); }

  double& at(std::size_t y, std::size_t x, std::size_t c) {
    return pixels_[(y * width_ + x) * channels_ + c];
  }
  double at(std::size_t y, std::size_t x, std::size_t c) const {
    return pixels_[(y * width_ + x) * channels_ + c];
  }
  double& operator[](std::size_t i) { return pixels_[i]; }
  double operator[](std::size_t i) const { return pixels_[i]; }

  std::span<double> pixels() { return pixels_; }
  std::span<const double> pixels() const { return pixels_; }

  bool same_shape(const ImageGrid& other) const {
    return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
  }
  bool in_unit_range() const;
  bool all_finite() const;

  friend bool operator==(const ImageGrid&, const ImageGrid&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::size_t channels_ = 0;
  std::vector<double> pixels_;
};

/// Throws ValidationError unless both grids share H, W and C.
void require_same_shape(const ImageGrid& a, const ImageGrid& b, const char* context);

/// Quantizes to 8 bits (round half away from zero after clamping to [0,1]).
std::vector<std::uint8_t> to_bytes(const ImageGrid& image);
ImageGrid from_bytes(std::size_t height, std::size_t width, std::size_t channels,
                     std::span<const std::uint8_t> bytes);
/// to_bytes followed by from_bytes.
ImageGrid quantize_8bit(const ImageGrid& image);

ImageGrid read_png(const std::filesystem::path& path);
void write_png(const ImageGrid& image, const std::filesystem::path& path);

struct NamedImage {
  std::string name;  // file name without directory
  ImageGrid image;
};

/// Loads every *.png in `dir` sorted by file name; all must share one shape.
std::vector<NamedImage> load_png_directory(const std::filesystem::path& dir);

/// Procedural RGB corpus: smooth backgrounds with filled circles, rectangles
/// and triangles. Deterministic in `seed`.
std::vector<ImageGrid> generate_shapes(std::size_t count, std::size_t size, std::uint64_t seed);

}  // namespace collapse

#endif  // COLLAPSE_IMAGE_HPP
