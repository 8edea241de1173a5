#include "collapse/defenses.hpp"

#include <jpeglib.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <vector>

#include "collapse/errors.hpp"
#include "collapse/filters.hpp"

namespace collapse {

ImageGrid gaussian_blur(const ImageGrid& image, std::size_t kernel_size, double sigma) {
  if (kernel_size % 2 == 0) throw ValidationError("gaussian_blur: kernel size must be odd");
  return separable_filter(image, gaussian_kernel(kernel_size, sigma));
}

namespace {

struct JpegError {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void on_jpeg_error(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegError*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

std::vector<unsigned char> jpeg_encode(const std::vector<std::uint8_t>& px, std::size_t h,
                                       std::size_t w, std::size_t c, int quality) {
  jpeg_compress_struct cinfo{};
  JpegError err{};
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = on_jpeg_error;
  unsigned char* out = nullptr;
  unsigned long out_size = 0;
  if (setjmp(err.jump)) {
    jpeg_destroy_compress(&cinfo);
    std::free(out);
    throw std::runtime_error(std::string("JPEG encode failed: ") + err.message);
  }
  jpeg_create_compress(&cinfo);
  jpeg_mem_dest(&cinfo, &out, &out_size);
  cinfo.image_width = static_cast<JDIMENSION>(w);
  cinfo.image_height = static_cast<JDIMENSION>(h);
  cinfo.input_components = static_cast<int>(c);
  cinfo.in_color_space = c == 1 ? JCS_GRAYSCALE : JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  while (cinfo.next_scanline < cinfo.image_height) {
    auto* row = const_cast<JSAMPLE*>(px.data() + cinfo.next_scanline * w * c);
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  jpeg_destroy_compress(&cinfo);
  std::vector<unsigned char> bytes(out, out + out_size);
  std::free(out);
  return bytes;
}

std::vector<std::uint8_t> jpeg_decode(const std::vector<unsigned char>& data, std::size_t h,
                                      std::size_t w, std::size_t c) {
  jpeg_decompress_struct cinfo{};
  JpegError err{};
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = on_jpeg_error;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw std::runtime_error(std::string("JPEG decode failed: ") + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, data.data(), static_cast<unsigned long>(data.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = c == 1 ? JCS_GRAYSCALE : JCS_RGB;
  jpeg_start_decompress(&cinfo);
  if (cinfo.output_width != w || cinfo.output_height != h ||
      static_cast<std::size_t>(cinfo.output_components) != c) {
    jpeg_destroy_decompress(&cinfo);
    throw std::runtime_error("JPEG decode produced an unexpected shape");
  }
  std::vector<std::uint8_t> px(h * w * c);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPLE* row = px.data() + cinfo.output_scanline * w * c;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return px;
}

ImageGrid bilateral(const ImageGrid& in, long radius, double sigma_s, double sigma_r) {
  const std::size_t h = in.height(), w = in.width(), ch = in.channels();
  ImageGrid out(h, w, ch);
  std::vector<double> acc(ch);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      std::fill(acc.begin(), acc.end(), 0.0);
      double norm = 0.0;
      for (long dy = -radius; dy <= radius; ++dy) {
        const std::size_t sy = reflect_index(static_cast<long>(y) + dy, h);
        for (long dx = -radius; dx <= radius; ++dx) {
          const std::size_t sx = reflect_index(static_cast<long>(x) + dx, w);
          double range = 0.0;
          for (std::size_t c = 0; c < ch; ++c) {
            const double d = in.at(sy, sx, c) - in.at(y, x, c);
            range += d * d;
          }
          const double wgt = std::exp(-static_cast<double>(dy * dy + dx * dx) /
                                          (2.0 * sigma_s * sigma_s) -
                                      range / (2.0 * sigma_r * sigma_r));
          norm += wgt;
          for (std::size_t c = 0; c < ch; ++c) acc[c] += wgt * in.at(sy, sx, c);
        }
      }
      for (std::size_t c = 0; c < ch; ++c) out.at(y, x, c) = acc[c] / norm;
    }
  }
  return out;
}

double soft_threshold(double v, double t) {
  if (v > t) return v - t;
  if (v < -t) return v + t;
  return 0.0;
}

}  // namespace

ImageGrid jpeg_compress(const ImageGrid& image, int quality) {
  if (quality < 1 || quality > 100) throw ValidationError("jpeg: quality must be in [1, 100]");
  if (image.channels() != 1 && image.channels() != 3) {
    throw ValidationError("jpeg: only 1 or 3 channels are supported");
  }
  if (image.empty()) throw ValidationError("jpeg: empty image");
  const auto encoded =
      jpeg_encode(to_bytes(image), image.height(), image.width(), image.channels(), quality);
  const auto decoded = jpeg_decode(encoded, image.height(), image.width(), image.channels());
  return from_bytes(image.height(), image.width(), image.channels(), decoded);
}

ImageGrid filter_clean(const ImageGrid& image, std::size_t iterations) {
  if (iterations == 0) throw ValidationError("filter_clean: iterations must be at least 1");
  const auto low_taps = gaussian_kernel(5, 1.0);
  ImageGrid x = image;
  for (std::size_t it = 0; it < iterations; ++it) {
    x = bilateral(x, 2, 1.5, 0.1);
    const ImageGrid low = separable_filter(x, low_taps);
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] = std::clamp(low[i] + soft_threshold(x[i] - low[i], 0.03), 0.0, 1.0);
    }
  }
  return x;
}

std::string_view to_string(DefenseKind k) {
  switch (k) {
    case DefenseKind::identity: return "identity";
    case DefenseKind::gaussian_blur: return "gaussian_blur";
    case DefenseKind::jpeg: return "jpeg";
    case DefenseKind::filter_clean: return "filter_clean";
  }
  return "unknown";
}

DefenseKind defense_kind_from_string(std::string_view name) {
  if (name == "identity") return DefenseKind::identity;
  if (name == "gaussian_blur" || name == "blur") return DefenseKind::gaussian_blur;
  if (name == "jpeg") return DefenseKind::jpeg;
  if (name == "filter_clean") return DefenseKind::filter_clean;
  throw ValidationError("unknown defense kind '" + std::string(name) + "'");
}

void DefenseSpec::validate() const {
  switch (kind) {
    case DefenseKind::identity: break;
    case DefenseKind::gaussian_blur:
      if (kernel_size % 2 == 0) throw ValidationError("defense: blur kernel size must be odd");
      if (!(sigma > 0.0)) throw ValidationError("defense: blur sigma must be positive");
      break;
    case DefenseKind::jpeg:
      if (quality < 1 || quality > 100) throw ValidationError("defense: jpeg quality in [1,100]");
      break;
    case DefenseKind::filter_clean:
      if (iterations == 0) throw ValidationError("defense: filter_clean needs iterations >= 1");
      break;
  }
}

std::string DefenseSpec::label() const {
  switch (kind) {
    case DefenseKind::identity: return "identity";
    case DefenseKind::gaussian_blur: return "gaussian_blur:" + std::to_string(kernel_size);
    case DefenseKind::jpeg: return "jpeg:" + std::to_string(quality);
    case DefenseKind::filter_clean: return "filter_clean:" + std::to_string(iterations);
  }
  return "unknown";
}

DefenseSpec DefenseSpec::parse(std::string_view text) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const std::size_t colon = text.find(':', start);
    parts.emplace_back(text.substr(start, colon - start));
    if (colon == std::string_view::npos) break;
    start = colon + 1;
  }
  DefenseSpec spec;
  spec.kind = defense_kind_from_string(parts[0]);
  try {
    switch (spec.kind) {
      case DefenseKind::identity:
        if (parts.size() > 1) throw ValidationError("identity takes no parameters");
        break;
      case DefenseKind::gaussian_blur:
        if (parts.size() > 3) throw ValidationError("too many blur parameters");
        if (parts.size() > 1) spec.kernel_size = std::stoul(parts[1]);
        if (parts.size() > 2) spec.sigma = std::stod(parts[2]);
        break;
      case DefenseKind::jpeg:
        if (parts.size() > 2) throw ValidationError("too many jpeg parameters");
        if (parts.size() > 1) spec.quality = std::stoi(parts[1]);
        break;
      case DefenseKind::filter_clean:
        if (parts.size() > 2) throw ValidationError("too many filter_clean parameters");
        if (parts.size() > 1) spec.iterations = std::stoul(parts[1]);
        break;
    }
  } catch (const std::logic_error& e) {
    if (dynamic_cast<const ValidationError*>(&e)) throw;
    throw ValidationError("cannot parse defense '" + std::string(text) + "'");
  }
  spec.validate();
  return spec;
}

void to_json(nlohmann::json& j, const DefenseSpec& spec) {
  j = nlohmann::json{{"kind", std::string(to_string(spec.kind))}};
  switch (spec.kind) {
    case DefenseKind::identity: break;
    case DefenseKind::gaussian_blur:
      j["kernel_size"] = spec.kernel_size;
      j["sigma"] = spec.sigma;
      break;
    case DefenseKind::jpeg: j["quality"] = spec.quality; break;
    case DefenseKind::filter_clean: j["iterations"] = spec.iterations; break;
  }
}

void from_json(const nlohmann::json& j, DefenseSpec& spec) {
  if (!j.is_object()) throw ValidationError("defense spec must be a JSON object");
  spec = DefenseSpec{};
  for (const auto& [key, value] : j.items()) {
    if (key == "kind") {
      spec.kind = defense_kind_from_string(value.get<std::string>());
    } else if (key == "kernel_size") {
      spec.kernel_size = value.get<std::size_t>();
    } else if (key == "sigma") {
      spec.sigma = value.get<double>();
    } else if (key == "quality") {
      spec.quality = value.get<int>();
    } else if (key == "iterations") {
      spec.iterations = value.get<std::size_t>();
    } else {
      throw ValidationError("unknown defense key '" + key + "'");
    }
  }
  if (!j.contains("kind")) throw ValidationError("defense spec is missing 'kind'");
  spec.validate();
}

ImageGrid apply_defense(const ImageGrid& image, const DefenseSpec& spec) {
  spec.validate();
  switch (spec.kind) {
    case DefenseKind::identity: return image;
    case DefenseKind::gaussian_blur: return gaussian_blur(image, spec.kernel_size, spec.sigma);
    case DefenseKind::jpeg: return jpeg_compress(image, spec.quality);
    case DefenseKind::filter_clean: return filter_clean(image, spec.iterations);
  }
  throw ValidationError("unknown defense kind");
}

GaussianBlurTransform::GaussianBlurTransform(std::size_t kernel_size, double sigma)
    : kernel_size_(kernel_size), sigma_(sigma), taps_(gaussian_kernel(kernel_size, sigma)) {}

ImageGrid GaussianBlurTransform::apply(const ImageGrid& image) const {
  return separable_filter(image, taps_);
}

ImageGrid GaussianBlurTransform::vjp(const ImageGrid&, const ImageGrid& grad_output) const {
  return separable_filter_adjoint(grad_output, taps_);
}

std::string GaussianBlurTransform::name() const {
  return "gaussian_blur:" + std::to_string(kernel_size_);
}

std::shared_ptr<const DifferentiableTransform> make_in_loop_transform(const DefenseSpec& spec) {
  spec.validate();
  switch (spec.kind) {
    case DefenseKind::identity: return nullptr;
    case DefenseKind::gaussian_blur:
      return std::make_shared<GaussianBlurTransform>(spec.kernel_size, spec.sigma);
    default:
      throw ValidationError("defense '" + spec.label() + "' is not differentiable in-loop");
  }
}

}  // namespace collapse
