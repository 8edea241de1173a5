#include "collapse/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "collapse/errors.hpp"

namespace collapse {

ImageGrid::ImageGrid(std::size_t height, std::size_t width, std::size_t channels, double fill)
    : height_(height), width_(width), channels_(channels),
      pixels_(height * width * channels, fill) {}

ImageGrid::ImageGrid(std::size_t height, std::size_t width, std::size_t channels,
                     std::vector<double> pixels)
    : height_(height), width_(width), channels_(channels), pixels_(std::move(pixels)) {
  if (pixels_.size() != height * width * channels) {
    throw ValidationError("ImageGrid: pixel count does not match H*W*C");
  }
}

bool ImageGrid::in_unit_range() const {
  return std::all_of(pixels_.begin(), pixels_.end(),
                     [](double v) { return v >= 0.0 && v <= 1.0; });
}

bool ImageGrid::all_finite() const {
  return std::all_of(pixels_.begin(), pixels_.end(), [](double v) { return std::isfinite(v); });
}

void require_same_shape(const ImageGrid& a, const ImageGrid& b, const char* context) {
  if (!a.same_shape(b)) {
    throw ValidationError(std::string(context) + ": image shapes differ (" +
                          std::to_string(a.height()) + "x" + std::to_string(a.width()) + "x" +
                          std::to_string(a.channels()) + " vs " + std::to_string(b.height()) +
                          "x" + std::to_string(b.width()) + "x" +
                          std::to_string(b.channels()) + ")");
  }
}

std::vector<std::uint8_t> to_bytes(const ImageGrid& image) {
  std::vector<std::uint8_t> out(image.size());
  for (std::size_t i = 0; i < image.size(); ++i) {
    const double v = std::clamp(image[i], 0.0, 1.0);
    out[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  return out;
}

ImageGrid from_bytes(std::size_t height, std::size_t width, std::size_t channels,
                     std::span<const std::uint8_t> bytes) {
  if (bytes.size() != height * width * channels) {
    throw ValidationError("from_bytes: byte count does not match H*W*C");
  }
  std::vector<double> px(bytes.size());
  std::transform(bytes.begin(), bytes.end(), px.begin(),
                 [](std::uint8_t b) { return static_cast<double>(b) / 255.0; });
  return ImageGrid(height, width, channels, std::move(px));
}

ImageGrid quantize_8bit(const ImageGrid& image) {
  const auto bytes = to_bytes(image);
  return from_bytes(image.height(), image.width(), image.channels(), bytes);
}

ImageGrid read_png(const std::filesystem::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw ValidationError("cannot read PNG '" + path.string() + "': " + img.message);
  }
  const bool gray = (img.format & PNG_FORMAT_FLAG_COLOR) == 0;
  img.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  const std::size_t channels = gray ? 1 : 3;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    std::string msg = img.message;
    png_image_free(&img);
    throw ValidationError("cannot decode PNG '" + path.string() + "': " + msg);
  }
  return from_bytes(img.height, img.width, channels, buf);
}

void write_png(const ImageGrid& image, const std::filesystem::path& path) {
  if (image.channels() != 1 && image.channels() != 3) {
    throw ValidationError("write_png: only 1 or 3 channels are supported");
  }
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width());
  img.height = static_cast<png_uint_32>(image.height());
  img.format = image.channels() == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  const auto bytes = to_bytes(image);
  if (!png_image_write_to_file(&img, path.c_str(), 0, bytes.data(), 0, nullptr)) {
    throw std::runtime_error("cannot write PNG '" + path.string() + "': " + img.message);
  }
}

std::vector<NamedImage> load_png_directory(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) {
    throw ValidationError("dataset directory '" + dir.string() + "' does not exist");
  }
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  std::vector<NamedImage> out;
  out.reserve(files.size());
  for (const auto& f : files) {
    NamedImage item{f.filename().string(), read_png(f)};
    if (!out.empty() && !out.front().image.same_shape(item.image)) {
      throw ValidationError("dataset '" + dir.string() + "': image '" + item.name +
                            "' has a different shape from '" + out.front().name + "'");
    }
    out.push_back(std::move(item));
  }
  return out;
}

namespace {

struct Rgb {
  double r, g, b;
};

Rgb random_color(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.05, 0.95);
  return {u(rng), u(rng), u(rng)};
}

void paint(ImageGrid& img, std::size_t y, std::size_t x, const Rgb& c) {
  img.at(y, x, 0) = c.r;
  img.at(y, x, 1) = c.g;
  img.at(y, x, 2) = c.b;
}

// Sign of the 2-D cross product (b - a) x (p - a).
double edge(double ax, double ay, double bx, double by, double px, double py) {
  return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
}

}  // namespace

std::vector<ImageGrid> generate_shapes(std::size_t count, std::size_t size, std::uint64_t seed) {
  if (size < 4) throw ValidationError("generate_shapes: size must be at least 4");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> n_shapes(1, 4);
  std::uniform_int_distribution<int> kind(0, 2);
  const double s = static_cast<double>(size);

  std::vector<ImageGrid> out;
  out.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    ImageGrid img(size, size, 3);
    // Linear gradient background between two colors.
    const Rgb c0 = random_color(rng);
    const Rgb c1 = random_color(rng);
    const double angle = unit(rng) * 2.0 * M_PI;
    const double dx = std::cos(angle), dy = std::sin(angle);
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        const double t = 0.5 + 0.5 * ((x / s - 0.5) * dx + (y / s - 0.5) * dy) * 1.4142;
        const double w = std::clamp(t, 0.0, 1.0);
        paint(img, y, x,
              {c0.r * (1 - w) + c1.r * w, c0.g * (1 - w) + c1.g * w, c0.b * (1 - w) + c1.b * w});
      }
    }
    const int shapes = n_shapes(rng);
    for (int k = 0; k < shapes; ++k) {
      const Rgb col = random_color(rng);
      const int which = kind(rng);
      const double cx = unit(rng) * s, cy = unit(rng) * s;
      const double r = (0.1 + 0.25 * unit(rng)) * s;
      auto fill = [&](std::size_t y, std::size_t x) { paint(img, y, x, col); };
      if (which == 0) {
        for (std::size_t y = 0; y < size; ++y)
          for (std::size_t x = 0; x < size; ++x) {
            const double ddx = x + 0.5 - cx, ddy = y + 0.5 - cy;
            if (ddx * ddx + ddy * ddy <= r * r) fill(y, x);
          }
      } else if (which == 1) {
        const double hw = r, hh = (0.1 + 0.25 * unit(rng)) * s;
        for (std::size_t y = 0; y < size; ++y)
          for (std::size_t x = 0; x < size; ++x) {
            if (std::abs(x + 0.5 - cx) <= hw && std::abs(y + 0.5 - cy) <= hh) fill(y, x);
          }
      } else {
        const double a0 = unit(rng) * 2.0 * M_PI;
        double vx[3], vy[3];
        for (int v = 0; v < 3; ++v) {
          vx[v] = cx + r * std::cos(a0 + v * 2.0 * M_PI / 3.0);
          vy[v] = cy + r * std::sin(a0 + v * 2.0 * M_PI / 3.0);
        }
        for (std::size_t y = 0; y < size; ++y)
          for (std::size_t x = 0; x < size; ++x) {
            const double px = x + 0.5, py = y + 0.5;
            const double e0 = edge(vx[0], vy[0], vx[1], vy[1], px, py);
            const double e1 = edge(vx[1], vy[1], vx[2], vy[2], px, py);
            const double e2 = edge(vx[2], vy[2], vx[0], vy[0], px, py);
            if ((e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0)) fill(y, x);
          }
      }
    }
    for (double& v : img.pixels()) v = std::clamp(v, 0.0, 1.0);
    out.push_back(std::move(img));
  }
  return out;
}

}  // namespace collapse
